use serde::{Deserialize, Serialize};

use crate::ingest::Word;
use crate::keccak::event_topic;
use crate::types::Address;

/// Where an upgrade event carries the new implementation address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgLayout {
    /// First indexed argument.
    Topic1,
    /// First data word.
    Data0,
    /// ABI-encoded facet cuts; the first Add or Replace cut names the facet.
    DiamondCut,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSpec {
    pub signature: String,
    pub new_impl_arg: ArgLayout,
    pub topic: Word,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(default)]
    event: Vec<EntryFile>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    signature: String,
    new_impl_arg: ArgLayout,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("upgrade event registry: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("upgrade event registry lists `{0}` twice")]
    Duplicate(String),
    #[error("upgrade event registry is empty")]
    Empty,
}

pub const UPGRADED_SIGNATURE: &str = "Upgraded(address)";
pub const DIAMOND_CUT_SIGNATURE: &str = "DiamondCut((address,uint8,bytes4[])[],address,bytes)";

/// Registered upgrade-event signatures. Read-only after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRegistry {
    events: Vec<EventSpec>,
}

impl Default for EventRegistry {
    fn default() -> Self {
        EventRegistry::from_entries(&[
            (UPGRADED_SIGNATURE, ArgLayout::Topic1),
            (DIAMOND_CUT_SIGNATURE, ArgLayout::DiamondCut),
        ])
        .expect("default registry is valid")
    }
}

impl EventRegistry {
    fn from_entries(entries: &[(&str, ArgLayout)]) -> Result<Self, RegistryError> {
        let mut events: Vec<EventSpec> = Vec::new();
        for &(signature, layout) in entries {
            let signature: String = signature.chars().filter(|c| !c.is_whitespace()).collect();
            if events.iter().any(|e| e.signature == signature) {
                return Err(RegistryError::Duplicate(signature));
            }
            events.push(EventSpec { topic: event_topic(&signature), signature, new_impl_arg: layout });
        }
        if events.is_empty() {
            return Err(RegistryError::Empty);
        }
        Ok(EventRegistry { events })
    }

    /// Parses `[[event]] signature = "..."  new_impl_arg = "topic1" | "data0" | "diamond_cut"`.
    pub fn from_toml(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile = toml::from_str(text)?;
        let entries: Vec<(&str, ArgLayout)> = file.event.iter().map(|e| (e.signature.as_str(), e.new_impl_arg)).collect();
        EventRegistry::from_entries(&entries)
    }

    pub fn to_toml(&self) -> String {
        let file = RegistryFile {
            event: self
                .events
                .iter()
                .map(|e| EntryFile { signature: e.signature.clone(), new_impl_arg: e.new_impl_arg })
                .collect(),
        };
        toml::to_string(&file).expect("registry serializes")
    }

    pub fn events(&self) -> &[EventSpec] {
        &self.events
    }

    pub fn lookup(&self, topic0: &Word) -> Option<&EventSpec> {
        self.events.iter().find(|e| &e.topic == topic0)
    }
}

/// An address held in a 32-byte word; the upper 12 bytes must be zero.
pub fn word_address(word: &[u8]) -> Option<Address> {
    if word.len() != 32 || word[..12].iter().any(|&b| b != 0) {
        return None;
    }
    let mut bytes = [0u8; 20];
    bytes.copy_from_slice(&word[12..]);
    Some(Address::from_bytes(bytes))
}

fn read_usize(data: &[u8], offset: usize) -> Option<usize> {
    let word = data.get(offset..offset.checked_add(32)?)?;
    if word[..24].iter().any(|&b| b != 0) {
        return None;
    }
    Some(u64::from_be_bytes(word[24..].try_into().ok()?) as usize)
}

/// Result of decoding a diamond cut: the facet of the first Add/Replace cut, if any.
pub fn decode_diamond_cut(data: &[u8]) -> Result<Option<Address>, String> {
    let array = read_usize(data, 0).ok_or("cut array offset")?;
    let len = read_usize(data, array).ok_or("cut array length")?;
    let items = array + 32;
    for i in 0..len {
        let tuple = items + read_usize(data, items + 32 * i).ok_or("cut tuple offset")?;
        let facet = data.get(tuple..tuple + 32).and_then(word_address).ok_or("facet address")?;
        let action = read_usize(data, tuple + 32).ok_or("cut action")?;
        match action {
            0 | 1 => return Ok(Some(facet)),
            2 => continue,
            other => return Err(format!("unknown cut action {other}")),
        }
    }
    Ok(None)
}

/// ABI-encodes one diamond cut per `(facet, action, selectors)`; the inverse of [`decode_diamond_cut`].
pub fn encode_diamond_cut(cuts: &[(Address, u8, Vec<[u8; 4]>)], init: Address) -> Vec<u8> {
    fn word_usize(n: usize) -> [u8; 32] {
        let mut w = [0u8; 32];
        w[24..].copy_from_slice(&(n as u64).to_be_bytes());
        w
    }
    fn word_addr(a: Address) -> [u8; 32] {
        let mut w = [0u8; 32];
        w[12..].copy_from_slice(a.as_bytes());
        w
    }
    let tuples: Vec<Vec<u8>> = cuts
        .iter()
        .map(|(facet, action, selectors)| {
            let mut t = Vec::new();
            t.extend(word_addr(*facet));
            t.extend(word_usize(*action as usize));
            t.extend(word_usize(96));
            t.extend(word_usize(selectors.len()));
            for s in selectors {
                let mut w = [0u8; 32];
                w[..4].copy_from_slice(s);
                t.extend(w);
            }
            t
        })
        .collect();
    let mut array = word_usize(cuts.len()).to_vec();
    let mut offset = 32 * cuts.len();
    for t in &tuples {
        array.extend(word_usize(offset));
        offset += t.len();
    }
    for t in &tuples {
        array.extend(t);
    }
    let mut data = Vec::new();
    data.extend(word_usize(96));
    data.extend(word_addr(init));
    data.extend(word_usize(96 + array.len()));
    data.extend(&array);
    data.extend(word_usize(0));
    data
}
