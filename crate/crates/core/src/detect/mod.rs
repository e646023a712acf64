//! Upgrade-pattern classification.
//!
//! Each [`PolicyRule`] pairs a regular expression over canonical text with a
//! structural check over the token stream. Rules are evaluated in a fixed
//! order and the first one that fires decides the [`UpgradeKind`]; every rule
//! that fired contributes evidence to the verdict.

mod analysis;

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::lexer::{string_literal_ranges, tokenize};
use crate::normalize::NormalizedSource;
use crate::outline::{ContainerKind, FunctionKind};
use crate::types::{Address, UpgradeKind};

use analysis::{Analysis, Target, EIP1967_ADMIN_SLOT, EIP1967_IMPLEMENTATION_SLOT, PROXIABLE_SLOT};

/// Zero-based line range in canonical text, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineSpan {
    pub start: usize,
    pub end: usize,
}

impl LineSpan {
    pub fn line(line: usize) -> Self {
        LineSpan { start: line, end: line }
    }

    pub fn contains(&self, line: usize) -> bool {
        self.start <= line && line <= self.end
    }
}

/// A regex match located in canonical text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSpan {
    pub line: usize,
    /// Byte columns within the line.
    pub start_col: usize,
    pub end_col: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub rule_id: String,
    pub span: LineSpan,
    pub matched: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternVerdict {
    pub address: Address,
    pub kind: UpgradeKind,
    pub is_upgradeable: bool,
    pub evidence: Vec<Evidence>,
    /// All rules that fired, in evaluation order.
    pub fired_rules: Vec<String>,
}

impl PatternVerdict {
    /// Copies a representative's verdict onto another member of its duplicate group.
    pub fn for_member(&self, address: Address) -> PatternVerdict {
        PatternVerdict { address, ..self.clone() }
    }
}

/// Named predicates over the token stream backing each rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuralCheck {
    /// A `mapping(bytes4 => ...)` facet-selector table.
    SelectorMapping,
    /// An externally callable function rewrites the implementation slot or variable.
    ProxiableMutator,
    /// A delegatecall receiver is rewritable from outside the constructor.
    DelegateMutator,
    /// Delegatecall with no way to change its receiver.
    FixedDelegateTarget,
    /// Storage contract whose setters are restricted to an authorized, replaceable caller set.
    AuthorizedStorage,
    /// Contract-typed state variable, reassignable and called directly.
    SwappableReference,
}

#[derive(Debug, Clone)]
pub struct PolicyRule {
    pub id: &'static str,
    pub kind: UpgradeKind,
    pub pattern: Regex,
    pub check: StructuralCheck,
    /// Heuristic with no settled definition yet.
    pub provisional: bool,
}

/// Rule ids reserved for patterns not classified yet.
pub const RESERVED_RULE_IDS: [&str; 2] = ["proxy.beacon", "proxy.metaproxy-eip3448"];

pub const DEFAULT_DATA_SEPARATION_THRESHOLD: f64 = 0.8;

fn default_rules() -> Vec<PolicyRule> {
    let rule = |id, kind, pattern: &str, check, provisional| PolicyRule {
        id,
        kind,
        pattern: Regex::new(pattern).expect("built-in rule pattern"),
        check,
        provisional,
    };
    vec![
        rule("diamond.cut", UpgradeKind::UpgradeableProxyDiamond, r"\bdiamondCut\s*\(", StructuralCheck::SelectorMapping, false),
        rule(
            "uups.proxiable",
            UpgradeKind::UpgradeableProxyUUPS,
            &format!(r"\bproxiableUUID\b|(?i:{PROXIABLE_SLOT})"),
            StructuralCheck::ProxiableMutator,
            false,
        ),
        rule("proxy.upgradeable", UpgradeKind::UpgradeableProxyTransparent, r"\bdelegatecall\b", StructuralCheck::DelegateMutator, false),
        rule("proxy.forward", UpgradeKind::ForwardProxy, r"\bdelegatecall\b", StructuralCheck::FixedDelegateTarget, false),
        rule("data-separation.storage", UpgradeKind::DataSeparation, r"\bmsg\.sender\b", StructuralCheck::AuthorizedStorage, false),
        rule(
            "strategy.swappable-reference",
            UpgradeKind::Strategy,
            r"\b[A-Za-z_]\w*\s*\.\s*[A-Za-z_]\w*\s*[({]",
            StructuralCheck::SwappableReference,
            true,
        ),
    ]
}

#[derive(Debug, thiserror::Error)]
pub enum RulesError {
    #[error("rules file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("rules file names unknown rule id `{0}`")]
    UnknownRule(String),
    #[error("data separation threshold must be in [0, 1], got {0}")]
    Threshold(f64),
}

/// On-disk rules configuration.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RulesFile {
    #[serde(default)]
    pub disabled: Vec<String>,
    #[serde(default)]
    pub data_separation_threshold: Option<f64>,
}

/// The active rule set.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<PolicyRule>,
    disabled: BTreeSet<&'static str>,
    pub data_separation_threshold: f64,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            rules: default_rules(),
            disabled: BTreeSet::new(),
            data_separation_threshold: DEFAULT_DATA_SEPARATION_THRESHOLD,
        }
    }
}

impl RuleSet {
    pub fn from_toml(text: &str) -> Result<Self, RulesError> {
        let file: RulesFile = toml::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn from_file(file: &RulesFile) -> Result<Self, RulesError> {
        let mut set = RuleSet::default();
        for id in &file.disabled {
            if RESERVED_RULE_IDS.contains(&id.as_str()) {
                continue;
            }
            let rule = set.rules.iter().find(|r| r.id == id).ok_or_else(|| RulesError::UnknownRule(id.clone()))?;
            set.disabled.insert(rule.id);
        }
        if let Some(t) = file.data_separation_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(RulesError::Threshold(t));
            }
            set.data_separation_threshold = t;
        }
        Ok(set)
    }

    pub fn rules(&self) -> &[PolicyRule] {
        &self.rules
    }

    pub fn is_enabled(&self, id: &str) -> bool {
        !self.disabled.contains(id)
    }
}

/// Regex matches outside string literals, by line.
fn regex_matches(text: &str, pattern: &Regex, strings: &[(usize, usize)]) -> Vec<MatchSpan> {
    let line_starts: Vec<usize> = std::iter::once(0).chain(text.match_indices('\n').map(|(i, _)| i + 1)).collect();
    pattern
        .find_iter(text)
        .filter(|m| !strings.iter().any(|&(s, e)| s <= m.start() && m.start() < e))
        .map(|m| {
            let line = line_starts.partition_point(|&s| s <= m.start()) - 1;
            MatchSpan {
                line,
                start_col: m.start() - line_starts[line],
                end_col: m.end() - line_starts[line],
                text: m.as_str().to_string(),
            }
        })
        .collect()
}

/// Word-boundary `delegatecall` occurrences outside string literals.
pub fn contains_delegatecall(source: &NormalizedSource) -> Vec<MatchSpan> {
    let text = &source.canonical_text;
    let strings = string_literal_ranges(&tokenize(text));
    let pattern = Regex::new(r"\bdelegatecall\b").expect("static pattern");
    regex_matches(text, &pattern, &strings)
}

/// The function that can repoint a proxy's delegatecall target, and that target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImplementationMutator {
    pub function: String,
    pub target: String,
}

pub fn find_implementation_mutator(source: &NormalizedSource) -> Option<ImplementationMutator> {
    let analysis = Analysis::new(&source.canonical_text);
    let writes = analysis.transitive_writes();
    let targets = delegate_targets(&analysis);
    analysis.find_mutator(&targets, &writes).map(|m| ImplementationMutator {
        function: analysis.outline.functions[m.function].name.clone(),
        target: describe_target(&analysis, &m.target),
    })
}

fn describe_target(analysis: &Analysis<'_>, target: &Target) -> String {
    match target {
        Target::Var(name) => name.clone(),
        Target::Slot(key) => analysis.slot_label(key),
    }
}

fn delegate_targets(analysis: &Analysis<'_>) -> BTreeSet<Target> {
    analysis.delegatecall_sites().into_iter().flat_map(|site| analysis.receiver_targets(site)).collect()
}

struct RuleOutcome {
    fired: bool,
    evidence: Vec<Evidence>,
}

struct Classifier<'a> {
    analysis: Analysis<'a>,
    text: &'a str,
    strings: Vec<(usize, usize)>,
    writes: Vec<BTreeSet<Target>>,
    delegate_targets: BTreeSet<Target>,
    threshold: f64,
}

impl<'a> Classifier<'a> {
    fn new(text: &'a str, threshold: f64) -> Self {
        let analysis = Analysis::new(text);
        let strings = string_literal_ranges(&analysis.outline.tokens);
        let writes = analysis.transitive_writes();
        let delegate_targets = delegate_targets(&analysis);
        Classifier { analysis, text, strings, writes, delegate_targets, threshold }
    }

    fn evidence_line(&self, rule: &str, line: usize, matched: impl Into<String>) -> Evidence {
        Evidence { rule_id: rule.to_string(), span: LineSpan::line(line), matched: matched.into() }
    }

    fn function_evidence(&self, rule: &str, func: usize) -> Evidence {
        let f = &self.analysis.outline.functions[func];
        self.evidence_line(rule, f.line, self.analysis.outline.line_text(f.line))
    }

    fn evaluate(&self, rule: &PolicyRule) -> RuleOutcome {
        let matches = regex_matches(self.text, &rule.pattern, &self.strings);
        let miss = RuleOutcome { fired: false, evidence: Vec::new() };
        if matches.is_empty() {
            return miss;
        }
        let pattern_evidence = |limit: usize| -> Vec<Evidence> {
            matches.iter().take(limit).map(|m| self.evidence_line(rule.id, m.line, m.text.clone())).collect()
        };
        match rule.check {
            StructuralCheck::SelectorMapping => {
                let selector_maps: Vec<_> = self
                    .analysis
                    .outline
                    .tokens
                    .windows(4)
                    .filter(|w| w[0].is("mapping") && w[1].is("(") && w[2].is("bytes4") && w[3].is("=>"))
                    .map(|w| w[0].line)
                    .collect();
                if selector_maps.is_empty() {
                    return miss;
                }
                let mut evidence = pattern_evidence(1);
                evidence.push(self.evidence_line(rule.id, selector_maps[0], self.analysis.outline.line_text(selector_maps[0])));
                RuleOutcome { fired: true, evidence }
            }
            StructuralCheck::ProxiableMutator => {
                let mut targets = self.delegate_targets.clone();
                targets.insert(Target::Slot(EIP1967_IMPLEMENTATION_SLOT.to_string()));
                targets.insert(Target::Slot(PROXIABLE_SLOT.to_string()));
                match self.analysis.find_mutator(&targets, &self.writes) {
                    Some(m) => {
                        let mut evidence = pattern_evidence(1);
                        evidence.push(self.function_evidence(rule.id, m.function));
                        RuleOutcome { fired: true, evidence }
                    }
                    None => miss,
                }
            }
            StructuralCheck::DelegateMutator => match self.analysis.find_mutator(&self.delegate_targets, &self.writes) {
                Some(m) => {
                    let mut evidence = pattern_evidence(usize::MAX);
                    evidence.push(self.function_evidence(rule.id, m.function));
                    for slot in [EIP1967_IMPLEMENTATION_SLOT, EIP1967_ADMIN_SLOT] {
                        if let Some(line) = self.text.lines().position(|l| l.to_ascii_lowercase().contains(slot)) {
                            evidence.push(self.evidence_line(rule.id, line, slot));
                        }
                    }
                    if let Target::Var(name) = &m.target {
                        if let Some(var) = self.analysis.outline.state_var(name) {
                            evidence.push(self.evidence_line(rule.id, var.line, self.analysis.outline.line_text(var.line)));
                        }
                    }
                    RuleOutcome { fired: true, evidence }
                }
                None => miss,
            },
            StructuralCheck::FixedDelegateTarget => {
                if self.analysis.find_mutator(&self.delegate_targets, &self.writes).is_some() {
                    miss
                } else {
                    RuleOutcome { fired: true, evidence: pattern_evidence(usize::MAX) }
                }
            }
            StructuralCheck::AuthorizedStorage => {
                if !self.analysis.delegatecall_sites().is_empty() {
                    return miss;
                }
                match self.authorized_storage() {
                    Some(evidence) => RuleOutcome { fired: true, evidence },
                    None => miss,
                }
            }
            StructuralCheck::SwappableReference => match self.swappable_reference() {
                Some(evidence) => RuleOutcome { fired: true, evidence },
                None => miss,
            },
        }
    }

    fn authorized_storage(&self) -> Option<Vec<Evidence>> {
        let rule = "data-separation.storage";
        let outline = &self.analysis.outline;
        for (ci, contract) in outline.contracts.iter().enumerate() {
            if !matches!(contract.kind, ContainerKind::Contract | ContainerKind::Abstract) {
                continue;
            }
            let public: Vec<usize> = outline
                .functions
                .iter()
                .enumerate()
                .filter(|(_, f)| f.contract == Some(ci) && f.kind == FunctionKind::Function && f.is_externally_callable())
                .map(|(i, _)| i)
                .collect();
            if public.is_empty() {
                continue;
            }
            let accessors = public
                .iter()
                .filter(|&&f| self.analysis.is_plain_getter(f) || self.analysis.is_plain_setter(f))
                .count();
            if (accessors as f64) / (public.len() as f64) < self.threshold {
                continue;
            }
            for &setter in &public {
                if !self.analysis.is_plain_setter(setter) {
                    continue;
                }
                let guards = self.analysis.guard_vars(setter);
                if guards.is_empty() {
                    continue;
                }
                let writes_data = self.writes[setter]
                    .iter()
                    .any(|t| matches!(t, Target::Var(v) if !guards.contains(v)));
                if !writes_data {
                    continue;
                }
                // The authorized set must be replaceable by a separate administrator.
                let admin = guards.iter().find_map(|guard| {
                    outline.functions.iter().enumerate().find(|(gi, g)| {
                        g.is_externally_callable()
                            && self.writes[*gi].contains(&Target::Var(guard.clone()))
                            && {
                                let admin_guards = self.analysis.guard_vars(*gi);
                                !admin_guards.is_empty() && !admin_guards.contains(guard)
                            }
                    })
                });
                if let Some((admin_fn, _)) = admin {
                    return Some(vec![
                        self.function_evidence(rule, setter),
                        self.function_evidence(rule, admin_fn),
                    ]);
                }
            }
        }
        None
    }

    fn swappable_reference(&self) -> Option<Vec<Evidence>> {
        let rule = "strategy.swappable-reference";
        let outline = &self.analysis.outline;
        for var in &outline.state_vars {
            if var.constant || var.immutable || var.is_array || var.mapping_key.is_some() {
                continue;
            }
            if !self.analysis.is_contract_type(&var.type_name) {
                continue;
            }
            let target = BTreeSet::from([Target::Var(var.name.clone())]);
            let Some(setter) = self.analysis.find_mutator(&target, &self.writes) else { continue };
            let calls = self.analysis.direct_calls_through(&var.name);
            let Some(&call) = calls.first() else { continue };
            let call_line = outline.tokens[call].line;
            return Some(vec![
                self.evidence_line(rule, var.line, outline.line_text(var.line)),
                self.function_evidence(rule, setter.function),
                self.evidence_line(rule, call_line, outline.line_text(call_line)),
            ]);
        }
        None
    }
}

/// Classifies one normalized contract under the default rule set.
pub fn classify_pattern(source: &NormalizedSource) -> PatternVerdict {
    classify_with(source, &RuleSet::default())
}

pub fn classify_with(source: &NormalizedSource, rules: &RuleSet) -> PatternVerdict {
    let classifier = Classifier::new(&source.canonical_text, rules.data_separation_threshold);
    let mut kind = UpgradeKind::NotUpgradeable;
    let mut evidence = Vec::new();
    let mut fired_rules = Vec::new();
    for rule in rules.rules() {
        if !rules.is_enabled(rule.id) {
            continue;
        }
        let outcome = classifier.evaluate(rule);
        if !outcome.fired {
            continue;
        }
        if fired_rules.is_empty() {
            kind = rule.kind;
        }
        fired_rules.push(rule.id.to_string());
        evidence.extend(outcome.evidence);
    }
    PatternVerdict { address: source.address, kind, is_upgradeable: kind.is_upgradeable(), evidence, fired_rules }
}

/// Counts per kind and upgradeable shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceSummary {
    pub total: usize,
    pub counts: BTreeMap<UpgradeKind, usize>,
    pub upgradeable: usize,
    /// Upgradeable share of all contracts; absent when there are none.
    pub upgradeable_proportion: Option<f64>,
    /// Contracts built on delegatecall forwarding.
    pub proxies: usize,
    /// Upgradeable share among proxies; absent when there are none.
    pub proxy_upgradeable_proportion: Option<f64>,
}

pub fn prevalence_summary(verdicts: &[PatternVerdict]) -> PrevalenceSummary {
    let mut counts: BTreeMap<UpgradeKind, usize> = UpgradeKind::ALL.iter().map(|&k| (k, 0)).collect();
    for v in verdicts {
        *counts.entry(v.kind).or_default() += 1;
    }
    let total = verdicts.len();
    let upgradeable = verdicts.iter().filter(|v| v.kind.is_upgradeable()).count();
    let proxies = verdicts.iter().filter(|v| v.kind.is_proxy()).count();
    let upgradeable_proxies = verdicts.iter().filter(|v| v.kind.is_proxy() && v.kind.is_upgradeable()).count();
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    PrevalenceSummary {
        total,
        counts,
        upgradeable,
        upgradeable_proportion: ratio(upgradeable, total),
        proxies,
        proxy_upgradeable_proportion: ratio(upgradeable_proxies, proxies),
    }
}
