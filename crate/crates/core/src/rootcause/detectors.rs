//! Lightweight vulnerability heuristics over normalized source, plus import of
//! findings produced by external analysis tools.
//!
//! Findings carry a fingerprint of their category and code slice so the same
//! weakness can be matched across versions whose line numbers differ.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lexer::{matching_close, Token};
use crate::normalize::NormalizedSource;
use crate::outline::{FunctionDef, FunctionKind, Outline};
use crate::types::Address;

/// Zero-based inclusive line range in canonical text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineSpan {
    pub start: usize,
    pub end: usize,
}

impl LineSpan {
    pub fn contains(&self, line: usize) -> bool {
        self.start <= line && line <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VulnerabilityFinding {
    pub category: String,
    pub span: LineSpan,
    pub detector_id: String,
    /// Originating tool for imported findings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    pub fingerprint: String,
}

impl VulnerabilityFinding {
    /// Builds a finding; the span must lie within `lines`.
    pub fn new(detector_id: &str, category: &str, span: LineSpan, lines: &[&str]) -> Self {
        let slice = lines[span.start..=span.end].join("\n");
        VulnerabilityFinding {
            category: category.to_string(),
            span,
            detector_id: detector_id.to_string(),
            tool: None,
            fingerprint: fingerprint(category, &slice),
        }
    }
}

pub fn fingerprint(category: &str, slice: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(category.as_bytes());
    hasher.update(b"\n");
    hasher.update(slice.as_bytes());
    hex::encode(hasher.finalize())
}

pub const REENTRANCY: &str = "reentrancy";
pub const TX_ORIGIN_AUTH: &str = "tx-origin-auth";
pub const UNCHECKED_CALL: &str = "unchecked-call";
pub const UNPROTECTED_SELFDESTRUCT: &str = "unprotected-selfdestruct";
pub const EXTERNAL_DETECTOR_ID: &str = "external";

/// A source-level detector. Implementations must be deterministic.
pub trait Detector: Send + Sync {
    fn id(&self) -> &'static str;
    fn category(&self) -> &'static str;
    /// Spans of suspected weaknesses.
    fn spans(&self, outline: &Outline<'_>) -> Vec<LineSpan>;
}

/// Statement token ranges inside a body: split at `;`, `{` and `}` except the
/// braces of call options such as `call{value: v}`.
fn statements(tokens: &[Token<'_>], start: usize, end: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut begin = start;
    let mut j = start;
    while j < end {
        let t = &tokens[j];
        if t.is("{") && j >= 2 && tokens[j - 1].is_ident() && tokens[j - 2].is(".") {
            j = matching_close(tokens, j).map_or(end, |c| c + 1);
            continue;
        }
        if t.is(";") || t.is("{") || t.is("}") {
            if begin < j {
                out.push((begin, j));
            }
            begin = j + 1;
        }
        j += 1;
    }
    if begin < end {
        out.push((begin, end));
    }
    out
}

fn has_msg_sender(tokens: &[Token<'_>], start: usize, end: usize) -> bool {
    (start..end.saturating_sub(2)).any(|j| tokens[j].is("msg") && tokens[j + 1].is(".") && tokens[j + 2].is("sender"))
}

fn line_span(outline: &Outline<'_>, start: usize, end: usize) -> LineSpan {
    let (s, e) = outline.line_span(start, end);
    LineSpan { start: s, end: e }
}

fn bodies<'o>(outline: &'o Outline<'_>) -> impl Iterator<Item = (&'o FunctionDef, usize, usize)> {
    outline.functions.iter().filter_map(|f| f.body_range().map(|(s, e)| (f, s, e)))
}

/// `. name` followed by `(` or `{` at token `j`.
fn member_call(tokens: &[Token<'_>], j: usize, names: &[&str]) -> bool {
    j >= 1
        && tokens[j - 1].is(".")
        && tokens[j].is_ident()
        && names.contains(&tokens[j].text)
        && tokens.get(j + 1).is_some_and(|n| n.is("(") || n.is("{"))
}

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "|=", "&=", "^=", "<<=", ">>="];

/// State write after an external call in the same function body.
pub struct Reentrancy;

impl Detector for Reentrancy {
    fn id(&self) -> &'static str {
        "builtin.reentrancy"
    }

    fn category(&self) -> &'static str {
        REENTRANCY
    }

    fn spans(&self, outline: &Outline<'_>) -> Vec<LineSpan> {
        let tokens = &outline.tokens;
        let mut spans = Vec::new();
        for (function, start, end) in bodies(outline) {
            let locals = outline.locals(function);
            let stmts = statements(tokens, start, end);
            let is_state = |name: &str| !locals.contains(name) && outline.state_var(name).is_some_and(|v| !v.constant && !v.immutable);
            for (k, &(s, e)) in stmts.iter().enumerate() {
                let Some(call) = (s..e).find(|&j| member_call(tokens, j, &["call", "send", "transfer"])) else {
                    continue;
                };
                let write = stmts[k + 1..].iter().find(|&&(ws, we)| {
                    let first = &tokens[ws];
                    if first.is("delete") {
                        return tokens.get(ws + 1).is_some_and(|n| is_state(n.text));
                    }
                    if first.is("++") || first.is("--") {
                        return tokens.get(ws + 1).is_some_and(|n| is_state(n.text));
                    }
                    first.is_ident()
                        && is_state(first.text)
                        && tokens[ws + 1..we].iter().any(|t| ASSIGN_OPS.iter().any(|op| t.is(op)) || t.is("++") || t.is("--"))
                });
                if let Some(&(_, we)) = write {
                    spans.push(line_span(outline, call, we));
                }
            }
        }
        spans
    }
}

/// `tx.origin` compared in a `require`, `assert` or `if` condition.
pub struct TxOriginAuth;

impl Detector for TxOriginAuth {
    fn id(&self) -> &'static str {
        "builtin.tx-origin-auth"
    }

    fn category(&self) -> &'static str {
        TX_ORIGIN_AUTH
    }

    fn spans(&self, outline: &Outline<'_>) -> Vec<LineSpan> {
        let tokens = &outline.tokens;
        let mut spans = Vec::new();
        for j in 0..tokens.len() {
            if !(tokens[j].is("require") || tokens[j].is("assert") || tokens[j].is("if")) {
                continue;
            }
            if !tokens.get(j + 1).is_some_and(|t| t.is("(")) {
                continue;
            }
            let Some(close) = matching_close(tokens, j + 1) else { continue };
            let cond = &tokens[j + 2..close];
            let origin = cond.windows(3).any(|w| w[0].is("tx") && w[1].is(".") && w[2].is("origin"));
            let compared = cond.iter().any(|t| t.is("==") || t.is("!="));
            if origin && compared && !has_msg_sender(tokens, j + 2, close) {
                spans.push(line_span(outline, j, close + 1));
            }
        }
        spans
    }
}

/// Low-level call whose success flag is discarded or never read.
pub struct UncheckedCall;

impl Detector for UncheckedCall {
    fn id(&self) -> &'static str {
        "builtin.unchecked-call"
    }

    fn category(&self) -> &'static str {
        UNCHECKED_CALL
    }

    fn spans(&self, outline: &Outline<'_>) -> Vec<LineSpan> {
        let tokens = &outline.tokens;
        let mut spans = Vec::new();
        for (_, start, end) in bodies(outline) {
            for (s, e) in statements(tokens, start, end) {
                let Some(call) = (s..e).find(|&j| member_call(tokens, j, &["call", "send", "delegatecall"])) else {
                    continue;
                };
                let first = &tokens[s];
                if ["require", "assert", "if", "return", "while", "else"].iter().any(|k| first.is(k)) {
                    continue;
                }
                let assign = (s..call).find(|&j| tokens[j].is("="));
                let unchecked = match assign {
                    None => true,
                    Some(eq) => {
                        let flag = tokens[s..eq]
                            .iter()
                            .filter(|t| t.is_ident() && !t.is("bool") && !t.is("memory"))
                            .map(|t| t.text)
                            .next();
                        match flag {
                            Some(name) => !tokens[e..end].iter().any(|t| t.is_ident() && t.text == name),
                            None => true,
                        }
                    }
                };
                if unchecked {
                    spans.push(line_span(outline, s, e));
                }
            }
        }
        spans
    }
}

/// `selfdestruct` in an externally callable function without a caller check.
pub struct UnprotectedSelfdestruct;

impl Detector for UnprotectedSelfdestruct {
    fn id(&self) -> &'static str {
        "builtin.unprotected-selfdestruct"
    }

    fn category(&self) -> &'static str {
        UNPROTECTED_SELFDESTRUCT
    }

    fn spans(&self, outline: &Outline<'_>) -> Vec<LineSpan> {
        let tokens = &outline.tokens;
        let mut spans = Vec::new();
        for (function, start, end) in bodies(outline) {
            if function.kind == FunctionKind::Modifier || !function.is_externally_callable() {
                continue;
            }
            // Unknown modifiers are assumed to guard.
            let guarded_by_modifier = function.modifiers.iter().any(|m| match outline.modifier(m) {
                Some(def) => def.body_range().is_some_and(|(s, e)| has_msg_sender(tokens, s, e)),
                None => !matches!(m.as_str(), "payable" | "virtual" | "override"),
            });
            if guarded_by_modifier || has_msg_sender(tokens, start, end) {
                continue;
            }
            for j in start..end {
                if (tokens[j].is("selfdestruct") || tokens[j].is("suicide")) && tokens.get(j + 1).is_some_and(|t| t.is("(")) {
                    let close = matching_close(tokens, j + 1).unwrap_or(j + 1);
                    spans.push(line_span(outline, j, close + 1));
                }
            }
        }
        spans
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FindingsError {
    #[error("external findings: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("external findings: key `{0}` is not an address")]
    Address(String),
    #[error("external findings for {address}: lines {line_start}..={line_end} outside 1..={line_count}")]
    Bounds { address: Address, line_start: usize, line_end: usize, line_count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalFinding {
    pub detector: String,
    pub category: String,
    /// One-based, inclusive.
    pub line_start: usize,
    pub line_end: usize,
}

/// Findings imported from a JSON file keyed by contract address.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExternalFindings {
    by_address: BTreeMap<Address, Vec<ExternalFinding>>,
}

impl ExternalFindings {
    pub fn from_json(text: &str) -> Result<Self, FindingsError> {
        let raw: BTreeMap<String, Vec<ExternalFinding>> = serde_json::from_str(text)?;
        let mut by_address = BTreeMap::new();
        for (key, findings) in raw {
            let address = Address::parse(&key).map_err(|_| FindingsError::Address(key.clone()))?;
            for f in &findings {
                if f.line_start == 0 || f.line_end < f.line_start {
                    return Err(FindingsError::Bounds {
                        address,
                        line_start: f.line_start,
                        line_end: f.line_end,
                        line_count: 0,
                    });
                }
            }
            by_address.entry(address).or_insert_with(Vec::new).extend(findings);
        }
        Ok(ExternalFindings { by_address })
    }

    pub fn len(&self) -> usize {
        self.by_address.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn addresses(&self) -> impl Iterator<Item = &Address> {
        self.by_address.keys()
    }

    /// Imported findings for one source; spans must fit its canonical text.
    pub fn for_source(&self, source: &NormalizedSource) -> Result<Vec<VulnerabilityFinding>, FindingsError> {
        let Some(entries) = self.by_address.get(&source.address) else {
            return Ok(Vec::new());
        };
        let lines = source.lines();
        entries
            .iter()
            .map(|f| {
                if f.line_end > lines.len() {
                    return Err(FindingsError::Bounds {
                        address: source.address,
                        line_start: f.line_start,
                        line_end: f.line_end,
                        line_count: lines.len(),
                    });
                }
                let span = LineSpan { start: f.line_start - 1, end: f.line_end - 1 };
                let mut finding = VulnerabilityFinding::new(EXTERNAL_DETECTOR_ID, &f.category, span, &lines);
                finding.tool = Some(f.detector.clone());
                Ok(finding)
            })
            .collect()
    }
}

/// Immutable set of enabled detectors and imported findings.
pub struct DetectorSet {
    detectors: Vec<Box<dyn Detector>>,
    external: ExternalFindings,
}

impl Default for DetectorSet {
    fn default() -> Self {
        DetectorSet::builtin()
    }
}

impl DetectorSet {
    pub fn builtin() -> Self {
        DetectorSet {
            detectors: vec![Box::new(Reentrancy), Box::new(TxOriginAuth), Box::new(UncheckedCall), Box::new(UnprotectedSelfdestruct)],
            external: ExternalFindings::default(),
        }
    }

    pub fn empty() -> Self {
        DetectorSet { detectors: Vec::new(), external: ExternalFindings::default() }
    }

    pub fn with_detector(mut self, detector: Box<dyn Detector>) -> Self {
        self.detectors.push(detector);
        self
    }

    pub fn with_external(mut self, external: ExternalFindings) -> Self {
        self.external = external;
        self
    }

    pub fn detector_ids(&self) -> Vec<&'static str> {
        self.detectors.iter().map(|d| d.id()).collect()
    }
}

/// Union of built-in and imported findings, sorted and deduplicated.
pub fn run_detectors(source: &NormalizedSource, set: &DetectorSet) -> Result<Vec<VulnerabilityFinding>, FindingsError> {
    let outline = Outline::parse(&source.canonical_text);
    let lines = source.lines();
    let mut findings = set.external.for_source(source)?;
    for detector in &set.detectors {
        for span in detector.spans(&outline) {
            if span.end < lines.len() {
                findings.push(VulnerabilityFinding::new(detector.id(), detector.category(), span, &lines));
            }
        }
    }
    findings.sort();
    findings.dedup();
    Ok(findings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::normalize_text;

    fn source(text: &str) -> NormalizedSource {
        NormalizedSource::from_canonical(Address::from_low_u64(1), 0, &normalize_text(text).unwrap())
    }

    fn categories(text: &str) -> Vec<String> {
        run_detectors(&source(text), &DetectorSet::builtin()).unwrap().into_iter().map(|f| f.category).collect()
    }

    #[test]
    fn tx_origin_in_require() {
        let src = "contract T { address owner; function mint() external { require(tx.origin == owner, \"no\"); } }";
        assert_eq!(categories(src), vec![TX_ORIGIN_AUTH]);
        let ok = "contract T { function f() external { require(tx.origin == msg.sender); } }";
        assert!(categories(ok).is_empty());
        let not_auth = "contract T { address last; function f() external { last = tx.origin; } }";
        assert!(categories(not_auth).is_empty());
    }

    #[test]
    fn empty_contract_has_no_findings() {
        assert!(categories("contract Empty {}").is_empty());
        assert!(categories("").is_empty());
    }

    #[test]
    fn reentrancy_write_after_call() {
        let src = "contract Bank {
            mapping(address => uint) balances;
            function withdraw() external {
                uint amount = balances[msg.sender];
                (bool ok, ) = msg.sender.call{value: amount}(\"\");
                require(ok);
                balances[msg.sender] = 0;
            }
        }";
        assert_eq!(categories(src), vec![REENTRANCY]);
        let safe = "contract Bank {
            mapping(address => uint) balances;
            function withdraw() external {
                uint amount = balances[msg.sender];
                balances[msg.sender] = 0;
                (bool ok, ) = msg.sender.call{value: amount}(\"\");
                require(ok);
            }
        }";
        assert!(categories(safe).is_empty());
    }

    #[test]
    fn unchecked_low_level_calls() {
        let bare = "contract C { function f(address a) external { a.call(\"\"); } }";
        assert_eq!(categories(bare), vec![UNCHECKED_CALL]);
        let unused = "contract C { function f(address payable a) external { bool sent = a.send(1); } }";
        assert_eq!(categories(unused), vec![UNCHECKED_CALL]);
        let checked = "contract C { function f(address a) external { (bool ok, ) = a.call(\"\"); require(ok); } }";
        assert!(categories(checked).is_empty());
        let wrapped = "contract C { function f(address payable a) external { if (!a.send(1)) { revert(); } } }";
        assert!(categories(wrapped).is_empty());
    }

    #[test]
    fn selfdestruct_guarding() {
        let open = "contract K { function kill() public { selfdestruct(payable(msg.sender)); } }";
        // The argument mentions msg.sender, which counts as a caller reference.
        assert!(categories(open).is_empty());
        let open = "contract K { address payable sink; function kill() public { selfdestruct(sink); } }";
        assert_eq!(categories(open), vec![UNPROTECTED_SELFDESTRUCT]);
        let guarded = "contract K { address owner; address payable sink;
            modifier onlyOwner() { require(msg.sender == owner); _; }
            function kill() public onlyOwner { selfdestruct(sink); } }";
        assert!(categories(guarded).is_empty());
        let internal = "contract K { address payable sink; function kill() internal { selfdestruct(sink); } }";
        assert!(categories(internal).is_empty());
    }

    #[test]
    fn fingerprint_survives_line_shift() {
        let a = source("contract T { address owner;\nfunction mint() external {\nrequire(tx.origin == owner);\n}\n}");
        let b = source("contract T { address owner;\nuint extra;\nuint more;\nfunction mint() external {\nrequire(tx.origin == owner);\n}\n}");
        let fa = run_detectors(&a, &DetectorSet::builtin()).unwrap();
        let fb = run_detectors(&b, &DetectorSet::builtin()).unwrap();
        assert_eq!(fa.len(), 1);
        assert_ne!(fa[0].span, fb[0].span);
        assert_eq!(fa[0].fingerprint, fb[0].fingerprint);
        assert_eq!(fa, run_detectors(&a, &DetectorSet::builtin()).unwrap());
    }

    #[test]
    fn external_import_round_trip() {
        let src = source("contract A {\nuint x;\nfunction f() external {\nx = 1;\n}\n}");
        let json = format!(
            r#"{{"{}": [
                {{"detector": "slither", "category": "reentrancy", "line_start": 3, "line_end": 5}},
                {{"detector": "mythril", "category": "arithmetic", "line_start": 4, "line_end": 4}}
            ]}}"#,
            src.address
        );
        let external = ExternalFindings::from_json(&json).unwrap();
        let findings = run_detectors(&src, &DetectorSet::empty().with_external(external)).unwrap();
        assert_eq!(findings.len(), 2);
        assert!(findings.iter().all(|f| f.detector_id == EXTERNAL_DETECTOR_ID));
        let spans: Vec<_> = findings.iter().map(|f| (f.category.as_str(), f.span.start, f.span.end)).collect();
        assert_eq!(spans, vec![("arithmetic", 3, 3), ("reentrancy", 2, 4)]);
    }

    #[test]
    fn malformed_external_files() {
        assert!(matches!(ExternalFindings::from_json("[1,2]"), Err(FindingsError::Parse(_))));
        assert!(matches!(ExternalFindings::from_json(r#"{"xyz": []}"#), Err(FindingsError::Address(_))));
        let addr = Address::from_low_u64(1);
        let zero = format!(r#"{{"{addr}": [{{"detector":"d","category":"c","line_start":0,"line_end":1}}]}}"#);
        assert!(matches!(ExternalFindings::from_json(&zero), Err(FindingsError::Bounds { .. })));
        let far = format!(r#"{{"{addr}": [{{"detector":"d","category":"c","line_start":1,"line_end":99}}]}}"#);
        let external = ExternalFindings::from_json(&far).unwrap();
        assert!(matches!(external.for_source(&source("contract A {}")), Err(FindingsError::Bounds { .. })));
    }
}
