//! Code-structure checks behind the policy rules.

use std::collections::{BTreeMap, BTreeSet};

use crate::keccak::{eip1967_slot, keccak256, to_hex_word};
use crate::lexer::TokenKind;
use crate::outline::{ContainerKind, FunctionDef, FunctionKind, Outline};

pub(crate) const EIP1967_IMPLEMENTATION_SLOT: &str =
    "0x360894a13ba1a3210667c828492db98dca3e2076cc3735a920a3ca505d382bbc";
pub(crate) const EIP1967_ADMIN_SLOT: &str = "0xb53127684a568b3173ae13b9f8a6016e243e63b6e8ee1178d6a717850b5d6103";
/// `keccak256("PROXIABLE")`, the EIP-1822 (UUPS) code slot.
pub(crate) const PROXIABLE_SLOT: &str = "0xc5f16f0fcc639fa48a6947836d9850f504798523bf8c9a3a87d5876cf622bcf7";

const MAX_RESOLVE_DEPTH: usize = 6;

/// A storage location that a proxy reads its implementation from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Target {
    /// A named state variable.
    Var(String),
    /// A raw storage slot, keyed by its hex value when known, else by constant name.
    Slot(String),
}

pub(crate) struct Analysis<'a> {
    pub outline: Outline<'a>,
    /// Slot key to the constant name it came from, for reporting.
    slot_names: BTreeMap<String, String>,
}

/// An externally callable function that (transitively) rewrites a target.
#[derive(Debug, Clone)]
pub(crate) struct Mutator {
    pub function: usize,
    pub target: Target,
}

impl<'a> Analysis<'a> {
    pub fn new(text: &'a str) -> Self {
        let outline = Outline::parse(text);
        let mut analysis = Analysis { outline, slot_names: BTreeMap::new() };
        let names: Vec<(String, String)> = analysis
            .outline
            .state_vars
            .iter()
            .filter(|v| v.constant)
            .filter_map(|v| analysis.constant_slot_value(&v.name).map(|key| (key, v.name.clone())))
            .collect();
        analysis.slot_names.extend(names);
        analysis
    }

    fn tok(&self, i: usize) -> Option<&crate::lexer::Token<'a>> {
        self.outline.tokens.get(i)
    }

    /// Token indices of every `delegatecall` identifier.
    pub fn delegatecall_sites(&self) -> Vec<usize> {
        self.outline
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_ident() && t.text == "delegatecall")
            .map(|(i, _)| i)
            .collect()
    }

    pub fn function_at(&self, token: usize) -> Option<usize> {
        self.outline
            .functions
            .iter()
            .position(|f| f.body.is_some_and(|(open, close)| open < token && token < close))
    }

    /// Value of a 32-byte constant: a hex literal, or a keccak expression over a string.
    fn constant_slot_value(&self, name: &str) -> Option<String> {
        let var = self.outline.state_var(name)?;
        let (start, end) = var.init?;
        let toks = &self.outline.tokens[start..end];
        if let Some(lit) = toks.iter().find(|t| is_word_literal(t.text)) {
            return Some(lit.text.to_ascii_lowercase());
        }
        let keccak_at = toks.iter().position(|t| t.is("keccak256"))?;
        let label = toks[keccak_at..].iter().find(|t| t.kind == TokenKind::Str)?;
        let label = label.text.trim_matches(|c| c == '"' || c == '\'');
        let minus_one = toks.windows(2).any(|w| w[0].is("-") && w[1].text == "1");
        Some(if minus_one { to_hex_word(&eip1967_slot(label)) } else { to_hex_word(&keccak256(label.as_bytes())) })
    }

    fn slot_key_for_ident(&self, name: &str) -> String {
        self.constant_slot_value(name).unwrap_or_else(|| name.to_string())
    }

    pub fn slot_label(&self, key: &str) -> String {
        self.slot_names.get(key).cloned().unwrap_or_else(|| key.to_string())
    }

    /// Storage targets a delegatecall at token `site` reads its receiver from.
    pub fn receiver_targets(&self, site: usize) -> BTreeSet<Target> {
        let func = self.function_at(site);
        let range = if site > 0 && self.tok(site - 1).is_some_and(|t| t.is(".")) {
            self.receiver_expression(site - 1)
        } else {
            // Assembly form: delegatecall(gas, target, ...).
            self.call_argument(site + 1, 1)
        };
        match range {
            Some((start, end)) => self.resolve(start, end, func, 0),
            None => BTreeSet::new(),
        }
    }

    /// Token range of the expression ending just before token `dot`.
    fn receiver_expression(&self, dot: usize) -> Option<(usize, usize)> {
        let mut j = dot;
        loop {
            if j == 0 {
                return Some((0, dot));
            }
            let prev = &self.outline.tokens[j - 1];
            if prev.is(")") || prev.is("]") {
                let open = self.matching_open(j - 1)?;
                j = open;
                continue;
            }
            if prev.is_ident() {
                j -= 1;
                if j > 0 && self.outline.tokens[j - 1].is(".") {
                    j -= 1;
                    continue;
                }
                return Some((j, dot));
            }
            return Some((j, dot));
        }
    }

    fn matching_open(&self, close: usize) -> Option<usize> {
        let closer = self.outline.tokens[close].text;
        let opener = match closer {
            ")" => "(",
            "]" => "[",
            "}" => "{",
            _ => return None,
        };
        let mut depth = 0usize;
        for j in (0..=close).rev() {
            let t = &self.outline.tokens[j];
            if t.kind != TokenKind::Punct {
                continue;
            }
            if t.text == closer {
                depth += 1;
            } else if t.text == opener {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
            }
        }
        None
    }

    /// Token range of the `index`-th top-level argument of the call whose `(` is at `open`.
    fn call_argument(&self, open: usize, index: usize) -> Option<(usize, usize)> {
        if !self.tok(open)?.is("(") {
            return None;
        }
        let close = crate::lexer::matching_close(&self.outline.tokens, open)?;
        let args = self.split_args(open + 1, close);
        args.get(index).copied()
    }

    fn split_args(&self, start: usize, end: usize) -> Vec<(usize, usize)> {
        let mut args = Vec::new();
        let mut depth = 0i32;
        let mut arg_start = start;
        for j in start..end {
            let t = &self.outline.tokens[j];
            if t.kind != TokenKind::Punct {
                continue;
            }
            match t.text {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                "," if depth == 0 => {
                    args.push((arg_start, j));
                    arg_start = j + 1;
                }
                _ => {}
            }
        }
        if arg_start < end {
            args.push((arg_start, end));
        }
        args
    }

    /// Resolves the storage targets an expression reads, following locals,
    /// parameters (via call sites) and getter functions.
    fn resolve(&self, start: usize, end: usize, func: Option<usize>, depth: usize) -> BTreeSet<Target> {
        let mut targets = BTreeSet::new();
        if depth > MAX_RESOLVE_DEPTH {
            return targets;
        }
        let locals = func.map(|f| self.outline.locals(&self.outline.functions[f])).unwrap_or_default();
        let mut j = start;
        while j < end {
            let t = &self.outline.tokens[j];
            if t.kind == TokenKind::Number && is_word_literal(t.text) {
                targets.insert(Target::Slot(t.text.to_ascii_lowercase()));
                j += 1;
                continue;
            }
            if !t.is_ident() {
                j += 1;
                continue;
            }
            let after_dot = j > 0 && self.outline.tokens[j - 1].is(".");
            let next = self.tok(j + 1);
            let is_call = next.is_some_and(|n| n.is("("));
            if matches!(t.text, "sload" | "getAddressSlot") && is_call {
                if let Some((a, b)) = self.call_argument(j + 1, 0) {
                    targets.extend(self.resolve_slot(a, b, func, depth + 1));
                }
                j = crate::lexer::matching_close(&self.outline.tokens, j + 1).map_or(end, |c| c + 1);
                continue;
            }
            if after_dot {
                j += 1;
                continue;
            }
            if locals.contains(t.text) {
                if let Some(f) = func {
                    targets.extend(self.resolve_local(f, t.text, depth + 1));
                }
            } else if let Some(var) = self.outline.state_var(t.text) {
                if var.constant {
                    targets.insert(Target::Slot(self.slot_key_for_ident(t.text)));
                } else {
                    targets.insert(Target::Var(var.name.clone()));
                }
            } else if is_call {
                for (idx, getter) in self.outline.functions_named(t.text) {
                    targets.extend(self.resolve_returns(idx, getter, depth + 1));
                }
            }
            j += 1;
        }
        targets
    }

    fn resolve_slot(&self, start: usize, end: usize, func: Option<usize>, depth: usize) -> BTreeSet<Target> {
        let mut out = BTreeSet::new();
        for target in self.resolve(start, end, func, depth) {
            match target {
                Target::Var(name) => {
                    // A mutable variable used as a slot pointer: `sload(slot)` reads whatever it names.
                    out.insert(Target::Slot(name));
                }
                slot => {
                    out.insert(slot);
                }
            }
        }
        // `x.slot` in assembly reads the variable itself.
        let toks = &self.outline.tokens[start..end];
        if toks.len() == 3 && toks[1].is(".") && toks[2].is("slot") {
            out.clear();
            if self.outline.state_var(toks[0].text).is_some() {
                out.insert(Target::Var(toks[0].text.to_string()));
            }
        }
        out
    }

    fn resolve_returns(&self, idx: usize, getter: &FunctionDef, depth: usize) -> BTreeSet<Target> {
        let mut targets = BTreeSet::new();
        let Some((start, end)) = getter.body_range() else {
            return targets;
        };
        for j in start..end {
            if self.outline.tokens[j].is("return") {
                let stop = (j + 1..end).find(|&k| self.outline.tokens[k].is(";")).unwrap_or(end);
                targets.extend(self.resolve(j + 1, stop, Some(idx), depth));
            }
        }
        for name in &getter.returns {
            targets.extend(self.resolve_local(idx, name, depth));
        }
        targets
    }

    /// Everything assigned to a local, or passed for a parameter by internal callers.
    fn resolve_local(&self, func: usize, name: &str, depth: usize) -> BTreeSet<Target> {
        let mut targets = BTreeSet::new();
        if depth > MAX_RESOLVE_DEPTH {
            return targets;
        }
        let f = &self.outline.functions[func];
        if let Some((start, end)) = f.body_range() {
            for j in start..end.saturating_sub(1) {
                let t = &self.outline.tokens[j];
                if t.text != name || !t.is_ident() || (j > 0 && self.outline.tokens[j - 1].is(".")) {
                    continue;
                }
                let op = &self.outline.tokens[j + 1];
                if op.is("=") || op.is(":=") {
                    let stop = self.rhs_end(j + 2, end);
                    targets.extend(self.resolve(j + 2, stop, Some(func), depth));
                }
            }
        }
        if let Some(position) = f.params.iter().position(|p| p == name) {
            for (caller_idx, caller) in self.outline.functions.iter().enumerate() {
                let Some((start, end)) = caller.body_range() else { continue };
                for j in start..end {
                    let t = &self.outline.tokens[j];
                    if t.text != f.name || !t.is_ident() || !self.tok(j + 1).is_some_and(|n| n.is("(")) {
                        continue;
                    }
                    if j > 0 && self.outline.tokens[j - 1].is(".") && !(j > 1 && self.outline.tokens[j - 2].is("super")) {
                        continue;
                    }
                    if let Some((a, b)) = self.call_argument(j + 1, position) {
                        targets.extend(self.resolve(a, b, Some(caller_idx), depth + 1));
                    }
                }
            }
        }
        targets
    }

    /// End of an assignment right-hand side: `;`, or the end of the line in assembly.
    fn rhs_end(&self, start: usize, end: usize) -> usize {
        let line = self.tok(start).map_or(0, |t| t.line);
        let mut depth = 0i32;
        for j in start..end {
            let t = &self.outline.tokens[j];
            if t.kind == TokenKind::Punct {
                match t.text {
                    "(" | "[" => depth += 1,
                    ")" | "]" => depth -= 1,
                    ";" | "}" if depth <= 0 => return j,
                    _ => {}
                }
            }
            if depth <= 0 && t.line != line {
                return j;
            }
            if depth < 0 {
                return j;
            }
        }
        end
    }

    /// Storage targets a function writes directly.
    pub fn direct_writes(&self, func: usize) -> BTreeSet<Target> {
        let f = &self.outline.functions[func];
        let mut writes = BTreeSet::new();
        let Some((start, end)) = f.body_range() else {
            return writes;
        };
        let locals = self.outline.locals(f);
        for j in start..end {
            let t = &self.outline.tokens[j];
            if t.is_ident() && t.text == "sstore" && self.tok(j + 1).is_some_and(|n| n.is("(")) {
                if let Some((a, b)) = self.call_argument(j + 1, 0) {
                    writes.extend(self.resolve_slot(a, b, Some(func), 1));
                }
                continue;
            }
            if t.is_ident() && t.text == "delete" {
                if let Some(target) = self.lvalue_base(j + 1, end, func, &locals) {
                    writes.extend(target);
                }
                continue;
            }
            let is_assign = t.kind == TokenKind::Punct
                && matches!(t.text, "=" | "+=" | "-=" | "*=" | "/=" | "%=" | "|=" | "&=" | "^=" | "<<=" | ">>=" | "++" | "--");
            if !is_assign || j == start {
                continue;
            }
            if let Some(lhs_start) = self.lvalue_start(j) {
                if lhs_start < start {
                    continue;
                }
                if let Some(target) = self.lvalue_targets(lhs_start, j, func, &locals) {
                    writes.extend(target);
                }
            }
        }
        writes
    }

    /// Walks back from an assignment operator to the start of its left-hand side.
    fn lvalue_start(&self, op: usize) -> Option<usize> {
        let mut j = op;
        loop {
            let prev = self.tok(j.checked_sub(1)?)?;
            if prev.is("]") || prev.is(")") {
                j = self.matching_open(j - 1)?;
                continue;
            }
            if prev.is_ident() {
                j -= 1;
                if j > 0 && self.outline.tokens[j - 1].is(".") {
                    j -= 1;
                    continue;
                }
                return Some(j);
            }
            return None;
        }
    }

    fn lvalue_base(&self, start: usize, end: usize, func: usize, locals: &BTreeSet<String>) -> Option<BTreeSet<Target>> {
        let stop = (start..end).find(|&k| self.outline.tokens[k].is(";")).unwrap_or(end);
        self.lvalue_targets(start, stop, func, locals)
    }

    fn lvalue_targets(&self, start: usize, end: usize, func: usize, locals: &BTreeSet<String>) -> Option<BTreeSet<Target>> {
        let base = self.tok(start)?;
        if !base.is_ident() {
            return None;
        }
        // `Type name = ...` is a declaration, not a write.
        if start + 1 == end && start > 0 {
            let prev = &self.outline.tokens[start - 1];
            let declares = (prev.is_ident() && !matches!(prev.text, "else" | "return" | "do" | "delete"))
                || prev.is("]");
            if declares {
                return None;
            }
        }
        let toks = &self.outline.tokens[start..end];
        if let Some(pos) = toks.iter().position(|t| t.is("getAddressSlot")) {
            let open = start + pos + 1;
            let (a, b) = self.call_argument(open, 0)?;
            return Some(self.resolve_slot(a, b, Some(func), 1));
        }
        if locals.contains(base.text) {
            if start + 1 == end {
                return None;
            }
            // Writes through a storage pointer resolve to wherever the pointer came from.
            let slots = self.resolve_local(func, base.text, 1);
            return Some(slots.into_iter().filter(|t| matches!(t, Target::Slot(_))).collect());
        }
        let var = self.outline.state_var(base.text)?;
        if var.constant {
            return None;
        }
        Some(BTreeSet::from([Target::Var(var.name.clone())]))
    }

    /// Writes reachable from each function through internal calls.
    pub fn transitive_writes(&self) -> Vec<BTreeSet<Target>> {
        let direct: Vec<BTreeSet<Target>> = (0..self.outline.functions.len()).map(|i| self.direct_writes(i)).collect();
        let mut by_name: BTreeMap<&str, BTreeSet<Target>> = BTreeMap::new();
        for (f, writes) in self.outline.functions.iter().zip(&direct) {
            if f.kind == FunctionKind::Function {
                by_name.entry(f.name.as_str()).or_default().extend(writes.iter().cloned());
            }
        }
        let callees: Vec<Vec<&str>> = self
            .outline
            .functions
            .iter()
            .map(|f| f.body_range().map(|(s, e)| self.outline.internal_calls(s, e)).unwrap_or_default())
            .collect();
        loop {
            let mut changed = false;
            for (f, calls) in self.outline.functions.iter().zip(&callees) {
                if f.kind != FunctionKind::Function {
                    continue;
                }
                let mut gathered: BTreeSet<Target> = BTreeSet::new();
                for callee in calls {
                    if let Some(w) = by_name.get(callee) {
                        gathered.extend(w.iter().cloned());
                    }
                }
                let entry = by_name.entry(f.name.as_str()).or_default();
                let before = entry.len();
                entry.extend(gathered);
                changed |= entry.len() != before;
            }
            if !changed {
                break;
            }
        }
        self.outline
            .functions
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let mut all = direct[i].clone();
                for callee in &callees[i] {
                    if let Some(w) = by_name.get(callee) {
                        all.extend(w.iter().cloned());
                    }
                }
                all
            })
            .collect()
    }

    /// First externally callable, non-constructor function that rewrites one of `targets`.
    pub fn find_mutator(&self, targets: &BTreeSet<Target>, writes: &[BTreeSet<Target>]) -> Option<Mutator> {
        if targets.is_empty() {
            return None;
        }
        for (i, f) in self.outline.functions.iter().enumerate() {
            if !f.is_externally_callable() {
                continue;
            }
            if let Some(target) = writes[i].iter().find(|w| targets.contains(w)) {
                return Some(Mutator { function: i, target: target.clone() });
            }
        }
        None
    }

    /// State variables that gate `msg.sender` in a function's modifiers or body conditions.
    pub fn guard_vars(&self, func: usize) -> BTreeSet<String> {
        let f = &self.outline.functions[func];
        let mut vars = BTreeSet::new();
        for m in &f.modifiers {
            if let Some(modifier) = self.outline.modifier(m) {
                if let Some((s, e)) = modifier.body_range() {
                    vars.extend(self.sender_checks(s, e));
                }
            }
        }
        if let Some((s, e)) = f.body_range() {
            vars.extend(self.sender_checks(s, e));
        }
        vars
    }

    fn sender_checks(&self, start: usize, end: usize) -> BTreeSet<String> {
        let mut vars = BTreeSet::new();
        for j in start..end {
            let t = &self.outline.tokens[j];
            if !(t.is("require") || t.is("if") || t.is("assert")) {
                continue;
            }
            let Some(open) = (j + 1 < end).then_some(j + 1) else { continue };
            if !self.outline.tokens[open].is("(") {
                continue;
            }
            let Some(close) = crate::lexer::matching_close(&self.outline.tokens, open) else { continue };
            let cond = &self.outline.tokens[open + 1..close];
            let mentions_sender = cond.windows(3).any(|w| w[0].is("msg") && w[1].is(".") && w[2].is("sender"));
            if !mentions_sender {
                continue;
            }
            for (k, c) in cond.iter().enumerate() {
                if !c.is_ident() || (k > 0 && cond[k - 1].is(".")) {
                    continue;
                }
                if let Some(var) = self.outline.state_var(c.text) {
                    if !var.constant {
                        vars.insert(var.name.clone());
                    }
                }
            }
        }
        vars
    }

    /// Statement token ranges at the top level of a function body.
    fn statements(&self, func: usize) -> Vec<(usize, usize)> {
        let Some((start, end)) = self.outline.functions[func].body_range() else {
            return Vec::new();
        };
        let mut statements = Vec::new();
        let mut j = start;
        let mut stmt_start = start;
        while j < end {
            let t = &self.outline.tokens[j];
            if t.is("(") || t.is("[") {
                j = crate::lexer::matching_close(&self.outline.tokens, j).map_or(end, |c| c + 1);
                continue;
            }
            if t.is("{") {
                let close = crate::lexer::matching_close(&self.outline.tokens, j).map_or(end, |c| c + 1);
                statements.push((stmt_start, close));
                j = close;
                stmt_start = j;
                continue;
            }
            if t.is(";") {
                statements.push((stmt_start, j));
                j += 1;
                stmt_start = j;
                continue;
            }
            j += 1;
        }
        if stmt_start < end {
            statements.push((stmt_start, end));
        }
        statements
    }

    /// A setter only checks conditions, stores parameters and emits events.
    pub fn is_plain_setter(&self, func: usize) -> bool {
        let f = &self.outline.functions[func];
        if f.view_or_pure || f.body.is_none() {
            return false;
        }
        let params: BTreeSet<&str> = f.params.iter().map(String::as_str).collect();
        let mut stores = 0;
        for (s, e) in self.statements(func) {
            let toks = &self.outline.tokens[s..e];
            let Some(first) = toks.first() else { continue };
            if first.is("require") || first.is("assert") || first.is("emit") || first.is("revert") {
                continue;
            }
            if first.is("delete") {
                stores += 1;
                continue;
            }
            let Some(eq) = toks.iter().position(|t| t.is("=")) else {
                return false;
            };
            let Some(lhs) = self.lvalue_start(s + eq) else { return false };
            if lhs != s || self.outline.state_var(first.text).is_none_or(|v| v.constant) {
                return false;
            }
            let rhs_ok = toks[eq + 1..].iter().all(|t| match t.kind {
                TokenKind::Number | TokenKind::Str => true,
                TokenKind::Ident => {
                    params.contains(t.text) || matches!(t.text, "true" | "false" | "msg" | "sender" | "address")
                }
                TokenKind::Punct => matches!(t.text, "." | "(" | ")"),
            });
            if !rhs_ok {
                return false;
            }
            stores += 1;
        }
        stores > 0
    }

    /// A getter is a view function that only returns a state read.
    pub fn is_plain_getter(&self, func: usize) -> bool {
        let f = &self.outline.functions[func];
        if !f.view_or_pure || f.body.is_none() {
            return false;
        }
        let statements = self.statements(func);
        if statements.len() != 1 {
            return false;
        }
        let (s, e) = statements[0];
        let toks = &self.outline.tokens[s..e];
        toks.first().is_some_and(|t| t.is("return"))
            && toks[1..].iter().all(|t| t.kind != TokenKind::Punct || matches!(t.text, "[" | "]" | "."))
    }

    /// Contract-like type names: declared contracts and interfaces, plus
    /// capitalized user types that are not structs, enums or libraries.
    pub fn is_contract_type(&self, type_name: &str) -> bool {
        if self
            .outline
            .contract_names(&[ContainerKind::Contract, ContainerKind::Abstract, ContainerKind::Interface])
            .contains(type_name)
        {
            return true;
        }
        let library = self.outline.contract_names(&[ContainerKind::Library]).contains(type_name);
        !library
            && !self.outline.value_types.contains(type_name)
            && !crate::outline::is_elementary_type(type_name)
            && type_name.chars().next().is_some_and(|c| c.is_ascii_uppercase())
    }

    /// Token indices of `var.member(` / `var.member{` calls, excluding delegatecall.
    pub fn direct_calls_through(&self, var: &str) -> Vec<usize> {
        let toks = &self.outline.tokens;
        (0..toks.len().saturating_sub(3))
            .filter(|&j| {
                toks[j].is_ident()
                    && toks[j].text == var
                    && !(j > 0 && toks[j - 1].is("."))
                    && toks[j + 1].is(".")
                    && toks[j + 2].is_ident()
                    && toks[j + 2].text != "delegatecall"
                    && (toks[j + 3].is("(") || toks[j + 3].is("{"))
            })
            .collect()
    }
}

/// Hex literal wide enough to be a storage slot.
fn is_word_literal(text: &str) -> bool {
    text.strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .is_some_and(|d| d.len() == 64 && d.chars().all(|c| c.is_ascii_hexdigit()))
}
