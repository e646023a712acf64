//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! non-zero when any criterion fails. Oracles here are independent of the
//! library code they check.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{corpus_dir, fixture_config, truth};
use upgradescope::activity::{analyze_activity, ols};
use upgradescope::detect::classify_with;
use upgradescope::ingest::{load_local_source, LocalSource};
use upgradescope::lineage::{build_lineage, upgrade_rate, Provenance, UpgradeEvent, Version, VersionLineage};
use upgradescope::normalize::{group_duplicates, normalize_bundle, normalize_text, NormalizedSource};
use upgradescope::rootcause::diff::{diff_lines, VersionDiff};
use upgradescope::rootcause::{
    classify_root_causes, estimate_deploy_gas, estimate_from_bytecode, estimate_from_source_length, run_detectors,
    DetectorSet, RootCause, UpgradeId,
};
use upgradescope::store::MANIFEST_FILE;
use upgradescope::{classify_pattern, run_pipeline, Address, RuleSet, UpgradeKind};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { name: "reference proxies", budget: Some(Duration::from_secs(1)), run: reference_proxies },
        Criterion { name: "fixture-corpus detection", budget: Some(Duration::from_secs(5)), run: fixture_detection },
        Criterion { name: "duplicate grouping", budget: None, run: duplicate_grouping },
        Criterion { name: "lifetime telescoping", budget: None, run: lifetime_properties },
        Criterion { name: "root-cause truth table", budget: None, run: truth_table },
        Criterion { name: "diff oracle", budget: None, run: diff_oracle },
        Criterion { name: "gas estimator", budget: None, run: gas_estimator },
        Criterion { name: "ols correctness", budget: Some(Duration::from_secs(10)), run: ols_correctness },
        Criterion { name: "upgrade-rate synthetic", budget: None, run: upgrade_rate_synthetic },
        Criterion { name: "pipeline idempotence", budget: Some(Duration::from_secs(60)), run: pipeline_idempotence },
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = started.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS {:<26} {detail} [{:.0} ms]", c.name, elapsed.as_secs_f64() * 1000.0),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:<26} {reason} [{:.0} ms]", c.name, elapsed.as_secs_f64() * 1000.0);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn canonical(address: Address, deployed_at: i64, raw: &str) -> NormalizedSource {
    NormalizedSource::from_canonical(address, deployed_at, &normalize_text(raw).expect("fixture normalizes"))
}

fn reference_proxies() -> Check {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/solidity");
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).expect("proxy fixture");
    let upgradeable = classify_pattern(&canonical(Address::from_low_u64(1), 0, &read("upgradeable_proxy.sol")));
    let forward = classify_pattern(&canonical(Address::from_low_u64(2), 0, &read("forward_proxy.sol")));
    ensure!(upgradeable.is_upgradeable, "upgradeable proxy classified {:?}", upgradeable.kind);
    ensure!(forward.kind == UpgradeKind::ForwardProxy, "forward proxy classified {:?}", forward.kind);
    Ok(format!("{:?} / {:?}", upgradeable.kind, forward.kind))
}

fn corpus_sources() -> Vec<NormalizedSource> {
    let dir = corpus_dir().join("sources");
    let truth = truth();
    let addresses: BTreeSet<Address> = truth.kinds.values().flatten().copied().collect();
    addresses
        .into_iter()
        .enumerate()
        .map(|(i, a)| match load_local_source(&dir, a).expect("fixture source loads") {
            LocalSource::Verified { bundle, .. } => normalize_bundle(a, i as i64, &bundle).expect("fixture normalizes"),
            other => panic!("{a}: {other:?}"),
        })
        .collect()
}

fn fixture_detection() -> Check {
    let truth = truth();
    let rules = RuleSet::from_toml(&std::fs::read_to_string(corpus_dir().join("../../../../../config/rules.toml")).unwrap())
        .map_err(|e| e.to_string())?;
    let sources = corpus_sources();
    let mut correct = 0;
    let mut wrong = Vec::new();
    for (kind, addresses) in &truth.kinds {
        ensure!(addresses.len() >= 2, "{kind} has fewer than two fixtures");
        for a in addresses {
            let src = sources.iter().find(|s| &s.address == a).unwrap();
            let got = format!("{:?}", classify_with(src, &rules).kind);
            if &got == kind {
                correct += 1;
            } else {
                wrong.push(format!("{a}: {got} != {kind}"));
            }
        }
    }
    ensure!(truth.kinds.len() == UpgradeKind::ALL.len(), "manifest covers {} kinds", truth.kinds.len());
    ensure!(sources.len() >= 20, "only {} fixtures", sources.len());
    ensure!(wrong.is_empty(), "{}", wrong.join("; "));
    Ok(format!("{correct}/{} correct", sources.len()))
}

fn duplicate_grouping() -> Check {
    let mut sources = corpus_sources();
    let templates = [
        "contract A { uint x; function f() public { x = 1; } }",
        "contract B { function g() external pure returns (uint) { return 2; } }",
        "contract C { address owner; constructor() { owner = msg.sender; } }",
        "contract D { event E(uint v); function h(uint v) public { emit E(v); } }",
        "contract A { uint x; function f() public { x = 2; } }",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = sources.len();
    for i in 0..(100 - base) {
        let t = templates.choose(&mut rng).unwrap();
        // Formatting noise; the oracle decides which variants coincide.
        let noisy = t.replace("{ ", &format!("{{{}", ["\n    ", "  ", " // note\n", "\t/* c */ "][rng.gen_range(0..4)]));
        sources.push(canonical(Address::from_low_u64(0x5000 + i as u64), rng.gen_range(0..1000), &noisy));
    }
    let groups = group_duplicates(&sources);

    let mut oracle: Vec<BTreeSet<Address>> = Vec::new();
    let mut assigned = vec![false; sources.len()];
    for i in 0..sources.len() {
        if assigned[i] {
            continue;
        }
        let mut members = BTreeSet::new();
        for j in i..sources.len() {
            if sources[j].canonical_text == sources[i].canonical_text {
                assigned[j] = true;
                members.insert(sources[j].address);
            }
        }
        oracle.push(members);
    }
    let got: BTreeSet<BTreeSet<Address>> = groups.iter().map(|g| g.members.clone()).collect();
    let want: BTreeSet<BTreeSet<Address>> = oracle.into_iter().collect();
    ensure!(got == want, "partition differs: {} groups vs {} oracle groups", got.len(), want.len());
    for g in &groups {
        let earliest = sources
            .iter()
            .filter(|s| g.members.contains(&s.address))
            .min_by_key(|s| (s.deployed_at, s.address))
            .unwrap();
        ensure!(g.representative == earliest.address, "group {} representative", g.group_id);
    }
    Ok(format!("{} sources, {} groups", sources.len(), groups.len()))
}

fn event(proxy: Address, implementation: Address, timestamp: i64, log_index: u64) -> UpgradeEvent {
    UpgradeEvent {
        proxy_address: proxy,
        new_implementation: implementation,
        block_number: timestamp as u64 / 12,
        timestamp,
        log_index,
        provenance: Provenance::SignatureTopic,
    }
}

fn lifetime_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let none = BTreeMap::new();
    for n in 0..1000u64 {
        let proxy = Address::from_low_u64(n + 1);
        let mut t = rng.gen_range(1_500_000_000..1_600_000_000i64);
        let mut events = Vec::new();
        for k in 0..rng.gen_range(1..10u64) {
            events.push(event(proxy, Address::from_low_u64(0x100 + rng.gen_range(0..4)), t, k));
            t += [0, 12, 3600, 86_400, 86_400 * 30][rng.gen_range(0..5)];
        }
        let collection = t + rng.gen_range(0..86_400 * 365);
        events.shuffle(&mut rng);
        let l = build_lineage(&events, collection, &none).map_err(|e| e.to_string())?;
        ensure!(
            l.total_lifetime() == collection - l.versions[0].deployed_at,
            "lineage {n}: sum {} != {}",
            l.total_lifetime(),
            collection - l.versions[0].deployed_at
        );
        ensure!(l.versions.windows(2).all(|w| w[0].implementation != w[1].implementation), "lineage {n}: repeated implementation");
        ensure!(l.versions.iter().all(|v| v.lifetime_seconds >= 0), "lineage {n}: negative lifetime");
        let last = l.versions.last().unwrap();
        ensure!(last.lifetime_seconds == collection - last.deployed_at, "lineage {n}: final version rule");
    }

    let p = Address::from_low_u64(1);
    let (a, b) = (Address::from_low_u64(0xa), Address::from_low_u64(0xb));
    let single = build_lineage(&[event(p, a, 100, 0)], 400, &none).unwrap();
    ensure!(single.versions.len() == 1 && single.versions[0].lifetime_seconds == 300, "single version");
    ensure!(!single.was_upgraded(), "single version counted as upgraded");
    let day = 1_600_000_000 - 1_600_000_000 % 86_400;
    let same_day = build_lineage(&[event(p, a, day + 600, 0), event(p, b, day + 7200, 1)], day + 10 * 86_400, &none).unwrap();
    let lifetimes: Vec<i64> = same_day.versions.iter().map(|v| v.lifetime_seconds).collect();
    ensure!(lifetimes == vec![6600, 10 * 86_400 - 7200], "same-day upgrade lifetimes {lifetimes:?}");
    let same_block = build_lineage(&[event(p, a, 500, 0), event(p, b, 500, 1)], 900, &none).unwrap();
    let lifetimes: Vec<i64> = same_block.versions.iter().map(|v| v.lifetime_seconds).collect();
    ensure!(lifetimes == vec![0, 400], "same-block upgrade lifetimes {lifetimes:?}");
    let at_collection = build_lineage(&[event(p, a, 100, 0), event(p, b, 400, 0)], 400, &none).unwrap();
    ensure!(at_collection.versions[1].lifetime_seconds == 0, "upgrade at collection date");
    ensure!(build_lineage(&[event(p, a, 500, 0)], 499, &none).is_err(), "collection before last event accepted");
    Ok("1000 random lineages, 5 boundary cases".into())
}

fn truth_table() -> Check {
    let vulnerable = "function mint() external {\nrequire(tx.origin == owner);\ncount += 1;\n}";
    let fixed = "function mint() external {\nrequire(msg.sender == owner);\ncount += 1;\n}";
    let legacy = "function legacy() external {\ncount = 0;\n}";
    let feature = "function ping() external pure returns (uint) {\nreturn 1;\n}";
    let set = DetectorSet::builtin();
    let gas = |bytes: usize| Some(estimate_deploy_gas(&"01".repeat(bytes), "").unwrap());
    let mut cases = 0;
    for mask in 0u8..16 {
        let (resolved, added, removed, cheaper) = (mask & 1 != 0, mask & 2 != 0, mask & 4 != 0, mask & 8 != 0);
        let mut v1 = vec!["contract T {", "address owner;", "uint count;", vulnerable];
        let mut v2 = vec!["contract T {", "address owner;", "uint count;", if resolved { fixed } else { vulnerable }];
        if removed {
            v1.push(legacy);
        }
        if added {
            v2.push(feature);
        }
        v1.push("}");
        v2.push("}");
        let a = canonical(Address::from_low_u64(1), 0, &v1.join("\n"));
        let b = canonical(Address::from_low_u64(2), 0, &v2.join("\n"));
        let fa = run_detectors(&a, &set).map_err(|e| e.to_string())?;
        let fb = run_detectors(&b, &set).map_err(|e| e.to_string())?;
        let id = UpgradeId { proxy_address: Address::from_low_u64(9), from_version: 1, to_version: 2 };
        let report = classify_root_causes(id, &a, &b, &fa, &fb, gas(100), gas(if cheaper { 90 } else { 100 + mask as usize }));
        let mut want = Vec::new();
        for (on, label) in [
            (resolved, RootCause::BugFix),
            (added, RootCause::NewFeature),
            (cheaper, RootCause::GasOptimization),
            (removed, RootCause::Other),
        ] {
            if on {
                want.push(label);
            }
        }
        ensure!(
            report.labels == want,
            "resolved={resolved} added={added} removed={removed} cheaper={cheaper}: got {:?}",
            report.labels
        );
        cases += 1;
    }
    Ok(format!("{cases}/16 combinations"))
}

/// Textbook dynamic-programming LCS length.
fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            dp[i][j] = if a[i] == b[j] { dp[i + 1][j + 1] + 1 } else { dp[i + 1][j].max(dp[i][j + 1]) };
        }
    }
    dp[0][0]
}

fn check_diff(a: &[&str], b: &[&str]) -> Result<(), String> {
    let ops = diff_lines(a, b);
    let diff = VersionDiff::from_ops(a, b, &ops);
    let want = lcs_len(a, b);
    ensure!(diff.unchanged_count == want, "{a:?} -> {b:?}: {} unchanged, LCS {want}", diff.unchanged_count);
    ensure!(diff.removed_lines.len() == a.len() - want && diff.added_lines.len() == b.len() - want, "{a:?} -> {b:?}: edit counts");
    let rebuilt = diff.apply(a).map_err(|e| format!("{a:?} -> {b:?}: {e}"))?;
    ensure!(rebuilt == b, "{a:?} -> {b:?}: apply gave {rebuilt:?}");
    Ok(())
}

fn diff_oracle() -> Check {
    let words = ["a", "b", "c", "d", "}"];
    // Every pair of sequences over two symbols up to length 4.
    let mut small: Vec<Vec<&str>> = vec![vec![]];
    for len in 1..=4 {
        for bits in 0..(1u32 << len) {
            small.push((0..len).map(|i| if bits >> i & 1 == 1 { "x" } else { "y" }).collect());
        }
    }
    for a in &small {
        for b in &small {
            check_diff(a, b)?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let random_pairs = 500;
    for _ in 0..random_pairs {
        let alphabet = &words[..rng.gen_range(1..=words.len())];
        let a: Vec<&str> = (0..rng.gen_range(0..=15)).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
        let b: Vec<&str> = (0..rng.gen_range(0..=15)).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
        check_diff(&a, &b)?;
    }
    let sources = corpus_sources();
    let mut fixture_pairs = 0;
    for x in &sources {
        for y in &sources {
            check_diff(&x.lines(), &y.lines())?;
            fixture_pairs += 1;
        }
    }
    Ok(format!("{} exhaustive pairs, {random_pairs} random pairs, {fixture_pairs} fixture pairs", small.len() * small.len()))
}

fn gas_estimator() -> Check {
    // (deployed code, init code, expected): 53000 + 200 per code byte + 16 per nonzero / 4 per zero init byte.
    let hand = [
        ("", "", 53_000),
        ("00", "", 53_200),
        ("", "00", 53_004),
        ("", "01", 53_016),
        ("6080", "6080", 53_432),
        (&"ff".repeat(10), &"ff".repeat(10), 55_160),
        ("0000", "0001", 53_420),
        (&"00".repeat(100), &format!("{}{}", "00".repeat(50), "01".repeat(50)), 74_000),
    ];
    for (code, init, want) in hand {
        let got = estimate_deploy_gas(code, init).map_err(|e| e.to_string())?.deploy_gas;
        ensure!(got == want, "code={code:.8} init={init:.8}: {got} != {want}");
    }
    let got = estimate_from_bytecode("60806040").unwrap().deploy_gas;
    ensure!(got == 53_864, "runtime-only estimate {got}");
    let got = estimate_from_source_length(400).deploy_gas;
    ensure!(got == 74_600, "source-length estimate {got}");
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..200 {
        let len = rng.gen_range(0..300);
        let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let longer: Vec<u8> = bytes.iter().copied().chain([rng.gen()]).collect();
        let small = estimate_from_bytecode(&hex::encode(&bytes)).unwrap().deploy_gas;
        let big = estimate_from_bytecode(&hex::encode(&longer)).unwrap().deploy_gas;
        ensure!(big > small, "not monotone at {len} bytes");
        let s = rng.gen_range(0..10_000);
        ensure!(estimate_from_source_length(s + 4).deploy_gas > estimate_from_source_length(s).deploy_gas, "source length {s}");
    }
    Ok(format!("{} hand cases, monotone over 200 random sizes", hand.len() + 2))
}

/// Normal equations for `y ~ 1 + x1 + x2` solved by Cramer's rule on raw sums.
fn normal_equations(x1: &[f64], x2: &[f64], y: &[f64]) -> [f64; 3] {
    let n = y.len() as f64;
    let s = |f: &dyn Fn(usize) -> f64| (0..y.len()).map(f).sum::<f64>();
    let m = [
        [n, s(&|i| x1[i]), s(&|i| x2[i])],
        [s(&|i| x1[i]), s(&|i| x1[i] * x1[i]), s(&|i| x1[i] * x2[i])],
        [s(&|i| x2[i]), s(&|i| x1[i] * x2[i]), s(&|i| x2[i] * x2[i])],
    ];
    let r = [s(&|i| y[i]), s(&|i| x1[i] * y[i]), s(&|i| x2[i] * y[i])];
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    let mut out = [0.0; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut mk = m;
        for row in 0..3 {
            mk[row][k] = r[row];
        }
        *slot = det(&mk) / d;
    }
    out
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn ols_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for d in 0..100 {
        let n = rng.gen_range(10..60);
        let x1: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..50.0)).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.gen_range(1..6) as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| 5.0 + 1.5 * x1[i] - 3.0 * x2[i] + rng.gen_range(-5.0..5.0)).collect();
        let fit = ols(&[&x1, &x2], &y).map_err(|e| e.to_string())?;
        let want = normal_equations(&x1, &x2, &y);
        for (got, want) in [fit.intercept, fit.slopes[0], fit.slopes[1]].into_iter().zip(want) {
            worst = worst.max(rel(got, want));
            ensure!(rel(got, want) <= 1e-9, "dataset {d}: {got} vs {want}");
        }
    }

    let x: Vec<f64> = (0..20).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|v| 4.0 - 0.5 * v).collect();
    let line = ols(&[&x], &y).unwrap();
    ensure!(rel(line.intercept, 4.0) <= 1e-12 && rel(line.slopes[0], -0.5) <= 1e-12, "exact line");
    ensure!(line.residuals.iter().all(|r| r.abs() <= 1e-12), "exact line residuals");

    for c in [1e-3, 0.5, 86_400.0] {
        let x1: Vec<f64> = (0..30).map(|_| rng.gen_range(1.0..100.0)).collect();
        let x2: Vec<f64> = (0..30).map(|_| rng.gen_range(1..5) as f64).collect();
        let y: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..100.0)).collect();
        let scaled: Vec<f64> = x1.iter().map(|v| v * c).collect();
        let a = ols(&[&x1, &x2], &y).unwrap();
        let b = ols(&[&scaled, &x2], &y).unwrap();
        ensure!(rel(b.slopes[0] * c, a.slopes[0]) <= 1e-9, "scale {c}: slope");
        ensure!(rel(b.slopes[1], a.slopes[1]) <= 1e-9 && rel(b.intercept, a.intercept) <= 1e-9, "scale {c}: others");
    }

    let r = 25.0;
    let lineages: Vec<VersionLineage> = (0..100)
        .map(|p| {
            let mut t = 0;
            let versions = (1..=5)
                .map(|v| {
                    let days: i64 = rng.gen_range(1..150);
                    let tx = 300.0 + 2.0 * days as f64 - r * v as f64 + rng.gen_range(-30.0..30.0);
                    let version = Version {
                        version_index: v,
                        implementation: Address::from_low_u64(10_000 + v as u64),
                        deployed_at: t,
                        lifetime_seconds: days * 86_400,
                        tx_received: tx.round().max(0.0) as u64,
                    };
                    t += days * 86_400;
                    version
                })
                .collect();
            VersionLineage { proxy_address: Address::from_low_u64(p + 1), versions, collection_date: t }
        })
        .collect();
    let report = analyze_activity(&lineages, false);
    ensure!(report.n_observations == 500, "n = {}", report.n_observations);
    let b = report.impact.version_effect.ok_or("no version effect")?;
    ensure!((b + r).abs() <= 0.1 * r, "planted -{r}, recovered {b}");
    Ok(format!("worst relative error {worst:.1e}, planted -{r} recovered {b:.3}"))
}

fn upgrade_rate_synthetic() -> Check {
    // 32 upgraded lineages with 76 versions between them, 68 never upgraded.
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut sizes = vec![2usize; 32];
    for _ in 0..(76 - 64) {
        let i = rng.gen_range(0..32);
        sizes[i] += 1;
    }
    sizes.extend(std::iter::repeat_n(1, 68));
    sizes.shuffle(&mut rng);
    let none = BTreeMap::new();
    let lineages: Vec<VersionLineage> = sizes
        .iter()
        .enumerate()
        .map(|(p, &k)| {
            let proxy = Address::from_low_u64(p as u64 + 1);
            let events: Vec<_> =
                (0..k).map(|v| event(proxy, Address::from_low_u64(0x1000 + v as u64), 1_000 + 100 * v as i64, 0)).collect();
            build_lineage(&events, 1_000_000, &none).unwrap()
        })
        .collect();
    let rate = upgrade_rate(&lineages);
    ensure!((rate.upgraded, rate.total) == (32, 100), "({}, {})", rate.upgraded, rate.total);
    ensure!(rate.proportion == 0.32, "proportion {}", rate.proportion);
    ensure!(rate.upgraded_versions == 76, "upgraded versions {}", rate.upgraded_versions);
    ensure!(rate.versions == 76 + 68, "all versions {}", rate.versions);
    Ok(format!("({}, {}, {}), {} versions in upgraded contracts", rate.upgraded, rate.total, rate.proportion, rate.upgraded_versions))
}

fn store_files(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != MANIFEST_FILE)
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn pipeline_idempotence() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("store");
    let config = fixture_config(&dir);
    run_pipeline(&config).map_err(|e| e.to_string())?;
    let first = store_files(&dir);
    run_pipeline(&config).map_err(|e| e.to_string())?;
    let second = store_files(&dir);
    ensure!(first == second, "store files changed between runs");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    ensure!(manifest["status"]["state"] == "completed", "run status {}", manifest["status"]);
    Ok(format!("{} store files identical", first.len()))
}
