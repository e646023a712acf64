use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::types::Address;

use super::NormalizedSource;

/// Contracts whose canonical text is byte-identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub group_id: String,
    pub representative: Address,
    pub members: BTreeSet<Address>,
}

/// Partitions sources by content hash. The representative is the earliest
/// deployment, ties broken by lowest address. Groups come back sorted by id.
pub fn group_duplicates(sources: &[NormalizedSource]) -> Vec<DuplicateGroup> {
    let mut by_hash: BTreeMap<&str, Vec<&NormalizedSource>> = BTreeMap::new();
    for source in sources {
        by_hash.entry(source.content_hash.as_str()).or_default().push(source);
    }
    by_hash
        .into_iter()
        .map(|(hash, members)| {
            let representative = members
                .iter()
                .min_by_key(|s| (s.deployed_at, s.address))
                .map(|s| s.address)
                .expect("group has at least one member");
            DuplicateGroup {
                group_id: hash.to_string(),
                representative,
                members: members.iter().map(|s| s.address).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::normalize_text;

    fn src(n: u64, deployed: i64, raw: &str) -> NormalizedSource {
        NormalizedSource::from_canonical(Address::from_low_u64(n), deployed, &normalize_text(raw).unwrap())
    }

    #[test]
    fn two_of_three_identical() {
        let groups = group_duplicates(&[
            src(1, 10, "contract A {}"),
            src(2, 5, "contract  A {}\n"),
            src(3, 1, "contract B {}"),
        ]);
        assert_eq!(groups.len(), 2);
        let pair = groups.iter().find(|g| g.members.len() == 2).unwrap();
        assert_eq!(pair.representative, Address::from_low_u64(2));
    }

    #[test]
    fn distinct_sources_are_singletons() {
        let groups = group_duplicates(&[src(1, 0, "a"), src(2, 0, "b"), src(3, 0, "c")]);
        assert_eq!(groups.len(), 3);
        assert!(groups.iter().all(|g| g.members.len() == 1));
    }

    #[test]
    fn comment_only_difference_groups_together() {
        let groups = group_duplicates(&[
            src(1, 0, "contract A { uint x; } // v1"),
            src(2, 0, "/* header */\ncontract A {\n  uint x;\n}"),
        ]);
        // The second splits across lines, so it is not a duplicate of the first.
        assert_eq!(groups.len(), 2);
        let groups = group_duplicates(&[
            src(1, 0, "contract A { uint x; } // v1"),
            src(2, 0, "/* header */\ncontract A { uint x; }"),
        ]);
        assert_eq!(groups.len(), 1);
    }

    #[test]
    fn tie_on_time_picks_lowest_address() {
        let groups = group_duplicates(&[src(9, 7, "x"), src(4, 7, "x")]);
        assert_eq!(groups[0].representative, Address::from_low_u64(4));
    }
}
