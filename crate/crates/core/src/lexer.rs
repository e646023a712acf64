//! A lexical scanner for Solidity-like source text.
//!
//! No parsing happens here. Detection and vulnerability heuristics work on the
//! token stream so that string literals and comments never produce matches.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    /// Byte offset of the first character.
    pub start: usize,
    /// Byte offset one past the last character.
    pub end: usize,
    /// Zero-based line index.
    pub line: usize,
}

impl Token<'_> {
    pub fn is(&self, text: &str) -> bool {
        self.text == text && self.kind != TokenKind::Str
    }

    pub fn is_ident(&self) -> bool {
        self.kind == TokenKind::Ident
    }
}

const THREE_CHAR_OPS: [&str; 4] = [">>=", "<<=", "**=", ">>>"];
const TWO_CHAR_OPS: [&str; 21] = [
    "==", "!=", "=>", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "*=", "/=", "%=", "|=", "&=",
    "^=", ":=", "->", "<<", ">>",
];

/// Tokenizes `text`, skipping whitespace and comments.
///
/// Unterminated strings and block comments run to the end of their line or the
/// input respectively; the scanner never fails.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'\n' {
            line += 1;
            i += 1;
            continue;
        }
        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if b == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if b == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                if bytes[i] == b'\n' {
                    line += 1;
                }
                i += 1;
            }
            i = (i + 2).min(bytes.len());
            continue;
        }
        let start = i;
        let kind = if b == b'"' || b == b'\'' {
            i += 1;
            while i < bytes.len() && bytes[i] != b && bytes[i] != b'\n' {
                if bytes[i] == b'\\' && i + 1 < bytes.len() && bytes[i + 1] != b'\n' {
                    i += 1;
                }
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b {
                i += 1;
            }
            TokenKind::Str
        } else if b.is_ascii_alphabetic() || b == b'_' || b == b'$' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$') {
                i += 1;
            }
            TokenKind::Ident
        } else if b.is_ascii_digit() {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.') {
                i += 1;
            }
            TokenKind::Number
        } else if !b.is_ascii() {
            // Multi-byte characters outside strings: treat as a single opaque token.
            let ch_len = text[i..].chars().next().map(char::len_utf8).unwrap_or(1);
            i += ch_len;
            TokenKind::Punct
        } else {
            let rest = &text[i..];
            let width = if THREE_CHAR_OPS.iter().any(|op| rest.starts_with(op)) {
                3
            } else if TWO_CHAR_OPS.iter().any(|op| rest.starts_with(op)) {
                2
            } else {
                1
            };
            i += width;
            TokenKind::Punct
        };
        tokens.push(Token { kind, text: &text[start..i], start, end: i, line });
    }
    tokens
}

/// Byte ranges covered by string literals.
pub fn string_literal_ranges(tokens: &[Token<'_>]) -> Vec<(usize, usize)> {
    tokens
        .iter()
        .filter(|t| t.kind == TokenKind::Str)
        .map(|t| (t.start, t.end))
        .collect()
}

/// Index of the token that closes the bracket opened at `open`, if balanced.
pub fn matching_close(tokens: &[Token<'_>], open: usize) -> Option<usize> {
    let (opener, closer) = match tokens.get(open)?.text {
        "(" => ("(", ")"),
        "{" => ("{", "}"),
        "[" => ("[", "]"),
        _ => return None,
    };
    let mut depth = 0usize;
    for (idx, tok) in tokens.iter().enumerate().skip(open) {
        if tok.kind != TokenKind::Punct {
            continue;
        }
        if tok.text == opener {
            depth += 1;
        } else if tok.text == closer {
            depth -= 1;
            if depth == 0 {
                return Some(idx);
            }
        }
    }
    None
}
