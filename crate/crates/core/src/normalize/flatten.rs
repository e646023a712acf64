use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use crate::lexer::{tokenize, TokenKind};
use crate::types::SourceBundle;

use super::{canonical_lines_with_origin, strip_comments_in, LineOrigin, NormalizeError};

/// A bundle merged into one canonical file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flattened {
    pub text: String,
    pub origins: Vec<LineOrigin>,
    /// Imports that did not resolve to a file in the bundle.
    pub warnings: Vec<String>,
}

struct ImportStatement {
    start: usize,
    end: usize,
    target: Option<String>,
}

/// Top-level `import ...;` statements in comment-free text.
fn find_imports(stripped: &str) -> Vec<ImportStatement> {
    let tokens = tokenize(stripped);
    let mut imports = Vec::new();
    let mut depth = 0i32;
    let mut at_statement_start = true;
    let mut i = 0;
    while i < tokens.len() {
        let tok = &tokens[i];
        if tok.kind == TokenKind::Punct {
            match tok.text {
                "{" => depth += 1,
                "}" => depth -= 1,
                _ => {}
            }
        }
        if depth == 0 && at_statement_start && tok.is("import") {
            let mut j = i + 1;
            let mut target = None;
            while j < tokens.len() && !tokens[j].is(";") {
                if target.is_none() && tokens[j].kind == TokenKind::Str {
                    let lit = tokens[j].text;
                    target = Some(lit[1..lit.len().saturating_sub(1).max(1)].to_string());
                }
                j += 1;
            }
            let end = tokens.get(j).map_or(stripped.len(), |t| t.end);
            imports.push(ImportStatement { start: tok.start, end, target });
            i = j + 1;
            at_statement_start = true;
            continue;
        }
        at_statement_start = tok.kind == TokenKind::Punct && matches!(tok.text, ";" | "{" | "}");
        i += 1;
    }
    imports
}

/// Blanks byte ranges while leaving newlines, so line numbers stay valid.
fn blank_ranges(text: &str, ranges: &[(usize, usize)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for &(start, end) in ranges {
        out.push_str(&text[cursor..start]);
        out.extend(text[start..end].chars().map(|c| if c == '\n' { '\n' } else { ' ' }));
        cursor = end;
    }
    out.push_str(&text[cursor..]);
    out
}

fn parent_dir(path: &str) -> &str {
    path.rfind('/').map_or("", |idx| &path[..idx])
}

fn normalize_path(path: &str) -> String {
    let mut parts: Vec<&str> = Vec::new();
    for part in path.split('/') {
        match part {
            "" | "." => {}
            ".." => {
                parts.pop();
            }
            other => parts.push(other),
        }
    }
    parts.join("/")
}

fn resolve_import(importer: &str, target: &str, index: &HashMap<String, usize>) -> Option<usize> {
    if target.starts_with("./") || target.starts_with("../") {
        let dir = parent_dir(importer);
        let joined = if dir.is_empty() { target.to_string() } else { format!("{dir}/{target}") };
        return index.get(&normalize_path(&joined)).copied();
    }
    index.get(&normalize_path(target)).copied()
}

/// Merges the files of a bundle into one canonical text.
///
/// Local imports order the files (imported before importer, otherwise original
/// order); every `import` statement is removed. Only the first
/// `pragma solidity` line survives and other repeated pragmas are collapsed.
pub fn flatten_bundle(bundle: &SourceBundle) -> Result<Flattened, NormalizeError> {
    if bundle.files.is_empty() {
        return Err(NormalizeError::EmptyBundle);
    }
    let index: HashMap<String, usize> = bundle
        .files
        .iter()
        .enumerate()
        .map(|(i, f)| (normalize_path(&f.path), i))
        .collect();

    let mut warnings = Vec::new();
    let mut deps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); bundle.files.len()];
    let mut per_file_lines = Vec::with_capacity(bundle.files.len());
    for (i, file) in bundle.files.iter().enumerate() {
        let stripped = strip_comments_in(&file.content, &file.path)?;
        let imports = find_imports(&stripped);
        for import in &imports {
            match import.target.as_deref() {
                Some(target) => match resolve_import(&file.path, target, &index) {
                    Some(dep) if dep != i => {
                        deps[i].insert(dep);
                    }
                    Some(_) => {}
                    None => warnings.push(format!("{}: removed unresolved import \"{target}\"", file.path)),
                },
                None => warnings.push(format!("{}: removed malformed import statement", file.path)),
            }
        }
        let ranges: Vec<(usize, usize)> = imports.iter().map(|imp| (imp.start, imp.end)).collect();
        let without_imports = blank_ranges(&stripped, &ranges);
        per_file_lines.push(canonical_lines_with_origin(&without_imports));
    }

    let order = dependency_order(bundle, &deps)?;

    let mut text_lines: Vec<String> = Vec::new();
    let mut origins = Vec::new();
    let mut seen_solidity_pragma = false;
    let mut seen_pragmas: BTreeSet<String> = BTreeSet::new();
    for file_idx in order {
        let path = &bundle.files[file_idx].path;
        for (line_no, line) in std::mem::take(&mut per_file_lines[file_idx]) {
            if line.starts_with("pragma ") {
                if line.starts_with("pragma solidity") {
                    if seen_solidity_pragma {
                        continue;
                    }
                    seen_solidity_pragma = true;
                } else if !seen_pragmas.insert(line.clone()) {
                    continue;
                }
            }
            origins.push(LineOrigin { path: path.clone(), line: line_no });
            text_lines.push(line);
        }
    }
    Ok(Flattened { text: text_lines.join("\n"), origins, warnings })
}

/// Kahn's algorithm, always releasing the lowest-indexed ready file.
fn dependency_order(bundle: &SourceBundle, deps: &[BTreeSet<usize>]) -> Result<Vec<usize>, NormalizeError> {
    let n = deps.len();
    let mut remaining: Vec<usize> = deps.iter().map(BTreeSet::len).collect();
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (file, file_deps) in deps.iter().enumerate() {
        for &dep in file_deps {
            dependents[dep].push(file);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| remaining[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(file)) = ready.pop() {
        order.push(file);
        for &dependent in &dependents[file] {
            remaining[dependent] -= 1;
            if remaining[dependent] == 0 {
                ready.push(Reverse(dependent));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    let stuck: BTreeSet<usize> = (0..n).filter(|&i| remaining[i] > 0).collect();
    let cycle = find_cycle(deps, &stuck);
    Err(NormalizeError::ImportCycle {
        cycle: cycle.into_iter().map(|i| bundle.files[i].path.clone()).collect(),
    })
}

fn find_cycle(deps: &[BTreeSet<usize>], stuck: &BTreeSet<usize>) -> Vec<usize> {
    // Every stuck node has at least one stuck dependency, so walking always closes a loop.
    let Some(&start) = stuck.iter().next() else {
        return Vec::new();
    };
    let mut path = vec![start];
    let mut position: HashMap<usize, usize> = HashMap::from([(start, 0)]);
    let mut current = start;
    loop {
        let next = *deps[current]
            .iter()
            .find(|d| stuck.contains(d))
            .expect("stuck node without stuck dependency");
        if let Some(&pos) = position.get(&next) {
            let mut cycle = path[pos..].to_vec();
            cycle.push(next);
            return cycle;
        }
        position.insert(next, path.len());
        path.push(next);
        current = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SourceFile;

    fn bundle(files: &[(&str, &str)]) -> SourceBundle {
        SourceBundle {
            files: files
                .iter()
                .map(|(p, c)| SourceFile { path: p.to_string(), content: c.to_string() })
                .collect(),
            entry_contract: None,
        }
    }

    #[test]
    fn imported_file_comes_first() {
        let b = bundle(&[
            ("A.sol", "pragma solidity ^0.8.0;\nimport \"./B.sol\";\ncontract A is B {}"),
            ("B.sol", "pragma solidity ^0.8.0;\ncontract B {}"),
        ]);
        let flat = flatten_bundle(&b).unwrap();
        assert_eq!(flat.text, "pragma solidity ^0.8.0;\ncontract B {}\ncontract A is B {}");
        assert_eq!(flat.origins[1], LineOrigin { path: "B.sol".into(), line: 2 });
        assert_eq!(flat.origins[2], LineOrigin { path: "A.sol".into(), line: 3 });
        assert!(flat.warnings.is_empty());
    }

    #[test]
    fn single_file_loses_its_imports() {
        let b = bundle(&[("X.sol", "import {Ownable} from \"@oz/Ownable.sol\";\ncontract X {}")]);
        let flat = flatten_bundle(&b).unwrap();
        assert_eq!(flat.text, "contract X {}");
        assert_eq!(flat.warnings.len(), 1);
        assert!(flat.warnings[0].contains("@oz/Ownable.sol"));
    }

    #[test]
    fn multi_line_import_is_removed() {
        let b = bundle(&[("X.sol", "import {\n  A,\n  B\n} from \"./lib/AB.sol\";\ncontract X {}"), ("lib/AB.sol", "contract A {}")]);
        let flat = flatten_bundle(&b).unwrap();
        assert_eq!(flat.text, "contract A {}\ncontract X {}");
    }

    #[test]
    fn relative_paths_resolve_through_parent_dirs() {
        let b = bundle(&[
            ("contracts/proxy/P.sol", "import \"../utils/U.sol\";\ncontract P {}"),
            ("contracts/utils/U.sol", "library U {}"),
        ]);
        assert_eq!(flatten_bundle(&b).unwrap().text, "library U {}\ncontract P {}");
    }

    #[test]
    fn cycle_is_reported() {
        let b = bundle(&[("A.sol", "import \"./B.sol\";"), ("B.sol", "import \"./A.sol\";")]);
        assert_eq!(
            flatten_bundle(&b),
            Err(NormalizeError::ImportCycle { cycle: vec!["A.sol".into(), "B.sol".into(), "A.sol".into()] })
        );
    }

    #[test]
    fn import_inside_string_or_comment_is_kept() {
        let b = bundle(&[("X.sol", "// import \"./Y.sol\";\ncontract X { string s = \"import x;\"; }")]);
        let flat = flatten_bundle(&b).unwrap();
        assert_eq!(flat.text, "contract X { string s = \"import x;\"; }");
    }

    #[test]
    fn duplicate_pragmas_collapse() {
        let b = bundle(&[
            ("A.sol", "pragma solidity ^0.8.0;\npragma abicoder v2;\ncontract A {}"),
            ("B.sol", "pragma solidity >=0.7.0;\npragma abicoder v2;\ncontract B {}"),
        ]);
        assert_eq!(
            flatten_bundle(&b).unwrap().text,
            "pragma solidity ^0.8.0;\npragma abicoder v2;\ncontract A {}\ncontract B {}"
        );
    }

    #[test]
    fn empty_bundle_is_an_error() {
        assert_eq!(flatten_bundle(&bundle(&[])), Err(NormalizeError::EmptyBundle));
    }
}
