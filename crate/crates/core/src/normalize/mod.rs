//! Source preprocessing: comment and whitespace removal, multi-file flattening
//! and exact-duplicate grouping.

mod dedup;
mod flatten;

pub use dedup::{group_duplicates, DuplicateGroup};
pub use flatten::{flatten_bundle, Flattened};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::types::{Address, SourceBundle, UnixSeconds};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NormalizeError {
    #[error("{path}: unterminated block comment starting at line {line}")]
    UnterminatedComment { path: String, line: usize },
    #[error("cyclic local imports: {}", .cycle.join(" -> "))]
    ImportCycle { cycle: Vec<String> },
    #[error("source bundle has no files")]
    EmptyBundle,
}

/// Where a canonical line came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineOrigin {
    pub path: String,
    /// One-based line number in the original file.
    pub line: usize,
}

/// A flattened, comment-free, whitespace-canonical contract source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedSource {
    pub address: Address,
    pub deployed_at: UnixSeconds,
    pub canonical_text: String,
    /// Hex SHA-256 of `canonical_text`; doubles as the duplicate-group id.
    pub content_hash: String,
    /// Entry `i` locates canonical line `i`.
    pub line_map: Vec<LineOrigin>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl NormalizedSource {
    /// Builds a source directly from already-canonical text, e.g. in tests.
    pub fn from_canonical(address: Address, deployed_at: UnixSeconds, canonical_text: &str) -> Self {
        let line_map = canonical_text
            .lines()
            .enumerate()
            .map(|(i, _)| LineOrigin { path: "<inline>".into(), line: i + 1 })
            .collect();
        NormalizedSource {
            address,
            deployed_at,
            content_hash: content_digest(canonical_text),
            canonical_text: canonical_text.to_string(),
            line_map,
            warnings: Vec::new(),
        }
    }

    pub fn lines(&self) -> Vec<&str> {
        if self.canonical_text.is_empty() {
            Vec::new()
        } else {
            self.canonical_text.split('\n').collect()
        }
    }

    pub fn line_count(&self) -> usize {
        if self.canonical_text.is_empty() {
            0
        } else {
            self.canonical_text.matches('\n').count() + 1
        }
    }
}

pub fn content_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Flattens and canonicalizes a bundle into a [`NormalizedSource`].
pub fn normalize_bundle(
    address: Address,
    deployed_at: UnixSeconds,
    bundle: &SourceBundle,
) -> Result<NormalizedSource, NormalizeError> {
    let flat = flatten_bundle(bundle)?;
    Ok(NormalizedSource {
        address,
        deployed_at,
        content_hash: content_digest(&flat.text),
        canonical_text: flat.text,
        line_map: flat.origins,
        warnings: flat.warnings,
    })
}

/// Removes `//` and `/* */` comments (NatSpec included) outside string literals.
///
/// Line structure is preserved: a block comment spanning lines leaves its
/// newlines behind, a single-line one becomes a space. Trailing whitespace is
/// trimmed from every line.
pub fn strip_comments(text: &str) -> Result<String, NormalizeError> {
    strip_comments_in(text, "<input>")
}

pub(crate) fn strip_comments_in(text: &str, path: &str) -> Result<String, NormalizeError> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    let mut line = 1;
    while let Some(c) = chars.next() {
        match c {
            '"' | '\'' => {
                out.push(c);
                while let Some(&next) = chars.peek() {
                    if next == '\n' {
                        break;
                    }
                    chars.next();
                    out.push(next);
                    if next == '\\' {
                        if let Some(&escaped) = chars.peek() {
                            if escaped != '\n' {
                                chars.next();
                                out.push(escaped);
                            }
                        }
                    } else if next == c {
                        break;
                    }
                }
            }
            '/' if chars.peek() == Some(&'/') => {
                while let Some(&next) = chars.peek() {
                    if next == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '/' if chars.peek() == Some(&'*') => {
                chars.next();
                let start_line = line;
                let mut newlines = 0;
                let mut closed = false;
                while let Some(next) = chars.next() {
                    if next == '*' && chars.peek() == Some(&'/') {
                        chars.next();
                        closed = true;
                        break;
                    }
                    if next == '\n' {
                        newlines += 1;
                    }
                }
                if !closed {
                    return Err(NormalizeError::UnterminatedComment { path: path.to_string(), line: start_line });
                }
                if newlines == 0 {
                    out.push(' ');
                }
                for _ in 0..newlines {
                    out.push('\n');
                }
                line += newlines;
            }
            '\n' => {
                out.push('\n');
                line += 1;
            }
            _ => out.push(c),
        }
    }
    let trimmed: Vec<&str> = out.split('\n').map(str::trim_end).collect();
    Ok(trimmed.join("\n"))
}

/// CRLF to LF, tabs to spaces, space runs collapsed, lines trimmed and blank lines dropped.
pub fn canonicalize_whitespace(text: &str) -> String {
    let mut lines = Vec::new();
    for raw in text.split(['\n', '\r']) {
        let line = canonical_line(raw);
        if !line.is_empty() {
            lines.push(line);
        }
    }
    lines.join("\n")
}

fn canonical_line(raw: &str) -> String {
    let mut line = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars() {
        if c.is_whitespace() {
            pending_space = true;
        } else {
            if pending_space && !line.is_empty() {
                line.push(' ');
            }
            pending_space = false;
            line.push(c);
        }
    }
    line
}

/// Comment removal and whitespace canonicalization in one scan.
///
/// Always equal to `canonicalize_whitespace(&strip_comments(text)?)`.
pub fn normalize_text(text: &str) -> Result<String, NormalizeError> {
    let mut lines: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut pending_space = false;
    let mut line = 1;

    fn push_char(current: &mut String, pending_space: &mut bool, c: char) {
        if c.is_whitespace() {
            *pending_space = true;
        } else {
            if *pending_space && !current.is_empty() {
                current.push(' ');
            }
            *pending_space = false;
            current.push(c);
        }
    }
    fn end_line(lines: &mut Vec<String>, current: &mut String, pending_space: &mut bool) {
        if !current.is_empty() {
            lines.push(std::mem::take(current));
        }
        *pending_space = false;
    }

    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' | '\'' => {
                push_char(&mut current, &mut pending_space, c);
                while let Some(&next) = chars.peek() {
                    if next == '\n' {
                        break;
                    }
                    chars.next();
                    if next == '\r' {
                        end_line(&mut lines, &mut current, &mut pending_space);
                    } else {
                        push_char(&mut current, &mut pending_space, next);
                    }
                    if next == '\\' {
                        if let Some(&escaped) = chars.peek() {
                            if escaped != '\n' {
                                chars.next();
                                if escaped == '\r' {
                                    end_line(&mut lines, &mut current, &mut pending_space);
                                } else {
                                    push_char(&mut current, &mut pending_space, escaped);
                                }
                            }
                        }
                    } else if next == c {
                        break;
                    }
                }
            }
            '/' if chars.peek() == Some(&'/') => {
                while let Some(&next) = chars.peek() {
                    if next == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '/' if chars.peek() == Some(&'*') => {
                chars.next();
                let start_line = line;
                let mut closed = false;
                let mut newlines = 0;
                while let Some(next) = chars.next() {
                    if next == '*' && chars.peek() == Some(&'/') {
                        chars.next();
                        closed = true;
                        break;
                    }
                    if next == '\n' {
                        newlines += 1;
                    }
                }
                if !closed {
                    return Err(NormalizeError::UnterminatedComment { path: "<input>".into(), line: start_line });
                }
                if newlines == 0 {
                    pending_space = true;
                } else {
                    end_line(&mut lines, &mut current, &mut pending_space);
                }
                line += newlines;
            }
            '\n' | '\r' => {
                if c == '\n' {
                    line += 1;
                }
                end_line(&mut lines, &mut current, &mut pending_space);
            }
            _ => push_char(&mut current, &mut pending_space, c),
        }
    }
    end_line(&mut lines, &mut current, &mut pending_space);
    Ok(lines.join("\n"))
}

/// Canonical lines of one file with their one-based original line numbers.
pub(crate) fn canonical_lines_with_origin(stripped: &str) -> Vec<(usize, String)> {
    let mut result = Vec::new();
    for (idx, raw) in stripped.split('\n').enumerate() {
        for piece in raw.split('\r') {
            let line = canonical_line(piece);
            if !line.is_empty() {
                result.push((idx + 1, line));
            }
        }
    }
    result
}
