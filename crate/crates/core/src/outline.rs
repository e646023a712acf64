//! Structural outline of Solidity source built from the token stream.
//!
//! Recognizes contract-level members (state variables, functions, modifiers)
//! and exposes helpers for walking function bodies. It tolerates code that
//! would not compile; anything unrecognized is skipped.

use std::collections::{BTreeSet, HashMap};

use crate::lexer::{matching_close, tokenize, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Contract,
    Abstract,
    Interface,
    Library,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionKind {
    Function,
    Constructor,
    Fallback,
    Receive,
    Modifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Public,
    External,
    Internal,
    Private,
    /// Legacy code without an explicit specifier; functions then default to public.
    Unspecified,
}

#[derive(Debug, Clone)]
pub struct StateVar {
    pub name: String,
    /// First token of the declared type (`mapping`, `address`, `IERC20`, ...).
    pub type_name: String,
    /// Key type when the variable is a mapping.
    pub mapping_key: Option<String>,
    /// Value type of a single-level mapping.
    pub mapping_value: Option<String>,
    pub is_array: bool,
    pub constant: bool,
    pub immutable: bool,
    /// Token range of the initializer expression, exclusive end.
    pub init: Option<(usize, usize)>,
    pub line: usize,
    pub contract: usize,
}

#[derive(Debug, Clone)]
pub struct FunctionDef {
    pub name: String,
    pub kind: FunctionKind,
    pub visibility: Visibility,
    pub view_or_pure: bool,
    /// Names of modifiers applied in the header.
    pub modifiers: Vec<String>,
    pub params: Vec<String>,
    /// Named return parameters.
    pub returns: Vec<String>,
    /// Token indices of the body braces, if the function has a body.
    pub body: Option<(usize, usize)>,
    pub line: usize,
    pub contract: Option<usize>,
}

impl FunctionDef {
    pub fn is_externally_callable(&self) -> bool {
        match self.kind {
            FunctionKind::Function => matches!(
                self.visibility,
                Visibility::Public | Visibility::External | Visibility::Unspecified
            ),
            FunctionKind::Fallback | FunctionKind::Receive => true,
            FunctionKind::Constructor | FunctionKind::Modifier => false,
        }
    }

    /// Token index range strictly inside the body braces.
    pub fn body_range(&self) -> Option<(usize, usize)> {
        self.body.map(|(open, close)| (open + 1, close))
    }
}

#[derive(Debug, Clone)]
pub struct ContractDef {
    pub name: String,
    pub kind: ContainerKind,
    pub bases: Vec<String>,
    pub body: (usize, usize),
    pub line: usize,
}

#[derive(Debug)]
pub struct Outline<'a> {
    pub text: &'a str,
    pub tokens: Vec<Token<'a>>,
    pub contracts: Vec<ContractDef>,
    pub state_vars: Vec<StateVar>,
    pub functions: Vec<FunctionDef>,
    /// Struct, enum and user-defined value type names.
    pub value_types: BTreeSet<String>,
}

const ELEMENTARY: &[&str] = &[
    "address", "bool", "string", "bytes", "byte", "int", "uint", "fixed", "ufixed", "mapping", "function",
];

const DECL_KEYWORDS: &[&str] = &[
    "public", "private", "internal", "external", "constant", "immutable", "override", "transient", "payable",
];

pub fn is_elementary_type(name: &str) -> bool {
    if ELEMENTARY.contains(&name) {
        return true;
    }
    for prefix in ["uint", "int", "bytes", "fixed", "ufixed"] {
        if let Some(rest) = name.strip_prefix(prefix) {
            if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit() || c == 'x') {
                return true;
            }
        }
    }
    false
}

impl<'a> Outline<'a> {
    pub fn parse(text: &'a str) -> Self {
        let tokens = tokenize(text);
        let mut outline = Outline {
            text,
            tokens,
            contracts: Vec::new(),
            state_vars: Vec::new(),
            functions: Vec::new(),
            value_types: BTreeSet::new(),
        };
        outline.scan_top_level();
        outline
    }

    fn scan_top_level(&mut self) {
        let mut i = 0;
        while i < self.tokens.len() {
            let tok = &self.tokens[i];
            let container = match tok.text {
                "contract" if tok.is_ident() => Some(ContainerKind::Contract),
                "interface" if tok.is_ident() => Some(ContainerKind::Interface),
                "library" if tok.is_ident() => Some(ContainerKind::Library),
                _ => None,
            };
            if let Some(mut kind) = container {
                if kind == ContainerKind::Contract && i > 0 && self.tokens[i - 1].is("abstract") {
                    kind = ContainerKind::Abstract;
                }
                let Some(open) = (i..self.tokens.len()).find(|&j| self.tokens[j].is("{")) else {
                    break;
                };
                let close = matching_close(&self.tokens, open).unwrap_or(self.tokens.len() - 1);
                let name = self.tokens.get(i + 1).map(|t| t.text.to_string()).unwrap_or_default();
                let bases = self.tokens[i + 2..open]
                    .iter()
                    .filter(|t| t.is_ident() && !t.is("is"))
                    .map(|t| t.text.to_string())
                    .collect();
                let index = self.contracts.len();
                self.contracts.push(ContractDef { name, kind, bases, body: (open, close), line: tok.line });
                self.scan_members(open + 1, close, Some(index));
                i = close + 1;
                continue;
            }
            match tok.text {
                "function" if tok.is_ident() => {
                    i = self.scan_function(i, None);
                    continue;
                }
                "struct" | "enum" if tok.is_ident() => {
                    i = self.skip_type_definition(i);
                    continue;
                }
                "type" if tok.is_ident() && self.tokens.get(i + 2).is_some_and(|t| t.is("is")) => {
                    if let Some(name) = self.tokens.get(i + 1) {
                        self.value_types.insert(name.text.to_string());
                    }
                }
                _ => {}
            }
            i += 1;
        }
    }

    fn skip_type_definition(&mut self, at: usize) -> usize {
        if let Some(name) = self.tokens.get(at + 1) {
            self.value_types.insert(name.text.to_string());
        }
        match (at..self.tokens.len()).find(|&j| self.tokens[j].is("{")) {
            Some(open) => matching_close(&self.tokens, open).map_or(self.tokens.len(), |c| c + 1),
            None => self.tokens.len(),
        }
    }

    fn skip_statement(&self, at: usize, end: usize) -> usize {
        let mut j = at;
        while j < end {
            let t = &self.tokens[j];
            if t.is(";") {
                return j + 1;
            }
            if t.is("{") || t.is("(") || t.is("[") {
                j = matching_close(&self.tokens, j).map_or(end, |c| c + 1);
                continue;
            }
            j += 1;
        }
        end
    }

    fn scan_members(&mut self, start: usize, end: usize, contract: Option<usize>) {
        let mut i = start;
        while i < end {
            let tok = &self.tokens[i];
            match tok.text {
                "function" | "constructor" | "fallback" | "receive" | "modifier" if tok.is_ident() => {
                    // `fallback`/`receive` are ordinary identifiers unless followed by `(`.
                    if matches!(tok.text, "fallback" | "receive") && !self.tokens.get(i + 1).is_some_and(|t| t.is("(")) {
                        i = self.scan_state_var(i, end, contract);
                        continue;
                    }
                    i = self.scan_function(i, contract);
                }
                "struct" | "enum" => i = self.skip_type_definition(i),
                "event" | "error" | "using" => i = self.skip_statement(i, end),
                "type" if self.tokens.get(i + 2).is_some_and(|t| t.is("is")) => {
                    if let Some(name) = self.tokens.get(i + 1) {
                        self.value_types.insert(name.text.to_string());
                    }
                    i = self.skip_statement(i, end);
                }
                ";" => i += 1,
                _ => i = self.scan_state_var(i, end, contract),
            }
        }
    }

    fn scan_state_var(&mut self, start: usize, end: usize, contract: Option<usize>) -> usize {
        let stop = self.skip_statement(start, end);
        let Some(contract) = contract else {
            return stop;
        };
        let decl_end = if stop > start && self.tokens[stop - 1].is(";") { stop - 1 } else { stop };
        let eq = (start..decl_end).find(|&j| self.tokens[j].is("=") && self.depth_zero(start, j));
        let head_end = eq.unwrap_or(decl_end);
        let first = &self.tokens[start];
        if !first.is_ident() {
            return stop;
        }
        let mut mapping_key = None;
        let mut mapping_value = None;
        let mut type_end = start + 1;
        if first.is("mapping") {
            if let Some(close) = matching_close(&self.tokens, start + 1) {
                mapping_key = self.tokens.get(start + 2).map(|t| t.text.to_string());
                if let Some(arrow) = (start + 2..close).find(|&j| self.tokens[j].is("=>")) {
                    let value = &self.tokens[arrow + 1];
                    if !value.is("mapping") {
                        mapping_value = Some(value.text.to_string());
                    }
                }
                type_end = close + 1;
            }
        } else {
            // Qualified names such as `Lib.Struct`.
            while type_end + 1 < head_end && self.tokens[type_end].is(".") {
                type_end += 2;
            }
        }
        let mut is_array = false;
        while type_end < head_end && self.tokens[type_end].is("[") {
            is_array = true;
            type_end = matching_close(&self.tokens, type_end).map_or(head_end, |c| c + 1);
        }
        let mut constant = false;
        let mut immutable = false;
        let mut name = None;
        let mut j = type_end;
        while j < head_end {
            let t = &self.tokens[j];
            if t.is("(") {
                j = matching_close(&self.tokens, j).map_or(head_end, |c| c + 1);
                continue;
            }
            if t.is("constant") {
                constant = true;
            } else if t.is("immutable") {
                immutable = true;
            } else if t.is_ident() && !DECL_KEYWORDS.contains(&t.text) {
                name = Some(t.text.to_string());
            }
            j += 1;
        }
        if let Some(name) = name {
            self.state_vars.push(StateVar {
                name,
                type_name: first.text.to_string(),
                mapping_key,
                mapping_value,
                is_array,
                constant,
                immutable,
                init: eq.map(|e| (e + 1, decl_end)),
                line: first.line,
                contract,
            });
        }
        stop
    }

    fn depth_zero(&self, start: usize, at: usize) -> bool {
        let mut depth = 0i32;
        for t in &self.tokens[start..at] {
            if t.kind == TokenKind::Punct {
                match t.text {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => depth -= 1,
                    _ => {}
                }
            }
        }
        depth == 0
    }

    fn scan_function(&mut self, at: usize, contract: Option<usize>) -> usize {
        let tok = &self.tokens[at];
        let line = tok.line;
        let mut kind = match tok.text {
            "constructor" => FunctionKind::Constructor,
            "fallback" => FunctionKind::Fallback,
            "receive" => FunctionKind::Receive,
            "modifier" => FunctionKind::Modifier,
            _ => FunctionKind::Function,
        };
        let mut cursor = at + 1;
        let mut name = tok.text.to_string();
        if matches!(kind, FunctionKind::Function | FunctionKind::Modifier) {
            match self.tokens.get(cursor) {
                Some(t) if t.is_ident() => {
                    name = t.text.to_string();
                    cursor += 1;
                    // Pre-0.4.22 constructors share the contract's name.
                    if kind == FunctionKind::Function
                        && contract.is_some_and(|c| self.contracts[c].name == name)
                    {
                        kind = FunctionKind::Constructor;
                    }
                }
                _ => {
                    if kind == FunctionKind::Function {
                        kind = FunctionKind::Fallback;
                        name = "fallback".into();
                    }
                }
            }
        }
        let mut params = Vec::new();
        if self.tokens.get(cursor).is_some_and(|t| t.is("(")) {
            let close = matching_close(&self.tokens, cursor).unwrap_or(self.tokens.len() - 1);
            params = self.param_names(cursor + 1, close);
            cursor = close + 1;
        }
        let mut visibility = Visibility::Unspecified;
        let mut view_or_pure = false;
        let mut modifiers = Vec::new();
        let mut returns = Vec::new();
        let mut body = None;
        let mut end = self.tokens.len();
        let mut j = cursor;
        while j < self.tokens.len() {
            let t = &self.tokens[j];
            if t.is(";") {
                end = j + 1;
                break;
            }
            if t.is("{") {
                let close = matching_close(&self.tokens, j).unwrap_or(self.tokens.len() - 1);
                body = Some((j, close));
                end = close + 1;
                break;
            }
            match t.text {
                "public" => visibility = Visibility::Public,
                "external" => visibility = Visibility::External,
                "internal" => visibility = Visibility::Internal,
                "private" => visibility = Visibility::Private,
                "view" | "pure" | "constant" => view_or_pure = true,
                "returns" | "override" => {
                    if self.tokens.get(j + 1).is_some_and(|n| n.is("(")) {
                        if t.text == "returns" {
                            let close = matching_close(&self.tokens, j + 1).unwrap_or(self.tokens.len() - 1);
                            returns = self.param_names(j + 2, close);
                        }
                        j = matching_close(&self.tokens, j + 1).map_or(self.tokens.len(), |c| c + 1);
                        continue;
                    }
                }
                "payable" | "virtual" | "nonpayable" => {}
                _ if t.is_ident() => modifiers.push(t.text.to_string()),
                _ => {}
            }
            if t.is("(") {
                j = matching_close(&self.tokens, j).map_or(self.tokens.len(), |c| c + 1);
                continue;
            }
            j += 1;
        }
        self.functions.push(FunctionDef {
            name,
            kind,
            visibility,
            view_or_pure,
            modifiers,
            params,
            returns,
            body,
            line,
            contract,
        });
        end
    }

    /// Parameter names: the last identifier of each comma-separated declaration.
    fn param_names(&self, start: usize, end: usize) -> Vec<String> {
        let mut names = Vec::new();
        let mut last_ident: Option<&str> = None;
        let mut count = 0;
        let mut depth = 0i32;
        for t in &self.tokens[start..end] {
            if t.kind == TokenKind::Punct {
                match t.text {
                    "(" | "[" => depth += 1,
                    ")" | "]" => depth -= 1,
                    "," if depth == 0 => {
                        if count > 1 {
                            names.extend(last_ident.map(String::from));
                        }
                        last_ident = None;
                        count = 0;
                        continue;
                    }
                    _ => {}
                }
            }
            if depth == 0 && t.is_ident() && !matches!(t.text, "memory" | "calldata" | "storage" | "payable" | "indexed") {
                last_ident = Some(t.text);
                count += 1;
            }
        }
        if count > 1 {
            names.extend(last_ident.map(String::from));
        }
        names
    }

    pub fn state_var(&self, name: &str) -> Option<&StateVar> {
        self.state_vars.iter().find(|v| v.name == name)
    }

    pub fn functions_named<'s>(&'s self, name: &'s str) -> impl Iterator<Item = (usize, &'s FunctionDef)> + 's {
        self.functions.iter().enumerate().filter(move |(_, f)| f.name == name && f.kind == FunctionKind::Function)
    }

    pub fn modifier(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.kind == FunctionKind::Modifier && f.name == name)
    }

    pub fn contract_names(&self, kinds: &[ContainerKind]) -> BTreeSet<&str> {
        self.contracts.iter().filter(|c| kinds.contains(&c.kind)).map(|c| c.name.as_str()).collect()
    }

    /// Local variable names declared in a function body (`T name` followed by `=`, `;` or `,`, plus `let name`).
    pub fn locals(&self, function: &FunctionDef) -> BTreeSet<String> {
        let mut locals: BTreeSet<String> = function.params.iter().chain(&function.returns).cloned().collect();
        let Some((start, end)) = function.body_range() else {
            return locals;
        };
        for j in start..end {
            let t = &self.tokens[j];
            if t.is("let") {
                if let Some(n) = self.tokens.get(j + 1).filter(|n| n.is_ident()) {
                    locals.insert(n.text.to_string());
                }
                continue;
            }
            if !t.is_ident() || j + 2 > end {
                continue;
            }
            let next = &self.tokens[j + 1];
            let after = self.tokens.get(j + 2);
            let prev_is_type = j > start && {
                let p = &self.tokens[j - 1];
                (p.is_ident() && !matches!(p.text, "return" | "emit" | "delete" | "new" | "else" | "returns"))
                    || p.is("]")
                    || p.is(")") && self.tokens[start..j].iter().rev().take(8).any(|x| x.is("mapping"))
            };
            let ends_decl = next.is("=") || next.is(";") || (next.is(",") && after.is_some_and(|a| a.is_ident()));
            if prev_is_type && ends_decl && !is_elementary_type(t.text) {
                locals.insert(t.text.to_string());
            }
        }
        locals
    }

    /// Identifier tokens `name (` in a range that call a function defined in this source.
    pub fn internal_calls(&self, start: usize, end: usize) -> Vec<&str> {
        let defined: BTreeSet<&str> = self
            .functions
            .iter()
            .filter(|f| f.kind == FunctionKind::Function)
            .map(|f| f.name.as_str())
            .collect();
        let mut calls = Vec::new();
        for j in start..end {
            let t = &self.tokens[j];
            if !t.is_ident() || !defined.contains(t.text) {
                continue;
            }
            if !self.tokens.get(j + 1).is_some_and(|n| n.is("(")) {
                continue;
            }
            let qualified_by_other = j > 0
                && self.tokens[j - 1].is(".")
                && !(j > 1 && (self.tokens[j - 2].is("super") || self.tokens[j - 2].is("this")));
            if j > 0 && self.tokens[j - 1].is("function") {
                continue;
            }
            if !qualified_by_other {
                calls.push(t.text);
            }
        }
        calls
    }

    /// Line span (first, last) of a token range.
    pub fn line_span(&self, start: usize, end: usize) -> (usize, usize) {
        let first = self.tokens.get(start).map_or(0, |t| t.line);
        let last = self.tokens.get(end.saturating_sub(1)).map_or(first, |t| t.line);
        (first, last.max(first))
    }

    /// Source text of a line (zero-based).
    pub fn line_text(&self, line: usize) -> &'a str {
        self.text.split('\n').nth(line).unwrap_or("")
    }

    /// Functions reachable through internal calls, keyed by name.
    pub fn call_graph(&self) -> HashMap<&str, BTreeSet<&str>> {
        let mut graph: HashMap<&str, BTreeSet<&str>> = HashMap::new();
        for f in &self.functions {
            let entry = graph.entry(f.name.as_str()).or_default();
            if let Some((s, e)) = f.body_range() {
                entry.extend(self.internal_calls(s, e));
            }
        }
        graph
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "pragma solidity ^0.8.0;
struct Cfg { uint a; }
interface IStrategy { function run() external; }
contract Vault is Base, Other {
address public implementation;
mapping(address => bool) public authorized;
bytes32 internal constant SLOT = 0x01;
IStrategy strategy;
uint256[] public list;
event Changed(address x);
modifier onlyOwner() { require(msg.sender == owner); _; }
constructor(address _impl) { implementation = _impl; }
function upgradeTo(address newImpl, uint256 v) public onlyOwner returns (bool) { implementation = newImpl; return true; }
function peek() external view returns (address) { return implementation; }
fallback() external payable { }
}";

    #[test]
    fn outlines_members() {
        let o = Outline::parse(SAMPLE);
        assert_eq!(o.contracts.len(), 2);
        assert_eq!(o.contracts[1].name, "Vault");
        assert_eq!(o.contracts[1].bases, vec!["Base", "Other"]);
        let names: Vec<_> = o.state_vars.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, vec!["implementation", "authorized", "SLOT", "strategy", "list"]);
        let slot = o.state_var("SLOT").unwrap();
        assert!(slot.constant);
        assert_eq!(o.state_var("authorized").unwrap().mapping_key.as_deref(), Some("address"));
        assert!(o.state_var("list").unwrap().is_array);
        assert!(o.value_types.contains("Cfg"));

        let kinds: Vec<_> = o.functions.iter().map(|f| (f.name.as_str(), f.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                ("run", FunctionKind::Function),
                ("onlyOwner", FunctionKind::Modifier),
                ("constructor", FunctionKind::Constructor),
                ("upgradeTo", FunctionKind::Function),
                ("peek", FunctionKind::Function),
                ("fallback", FunctionKind::Fallback),
            ]
        );
        let up = &o.functions[3];
        assert_eq!(up.params, vec!["newImpl", "v"]);
        assert_eq!(up.modifiers, vec!["onlyOwner"]);
        assert_eq!(up.visibility, Visibility::Public);
        assert!(o.functions[4].view_or_pure);
    }

    #[test]
    fn legacy_constructor_and_fallback() {
        let o = Outline::parse("contract Old { function Old() { } function () payable { } }");
        assert_eq!(o.functions[0].kind, FunctionKind::Constructor);
        assert_eq!(o.functions[1].kind, FunctionKind::Fallback);
    }

    #[test]
    fn locals_include_declarations_and_params() {
        let o = Outline::parse("contract C { function f(address a) public { address impl = a; uint x; assembly { let r := 1 } impl = a; } }");
        let locals = o.locals(&o.functions[0]);
        assert!(locals.contains("a"));
        assert!(locals.contains("impl"));
        assert!(locals.contains("x"));
        assert!(locals.contains("r"));
    }
}
