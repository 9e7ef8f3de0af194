//! Line-structured token sequences for C-like source text.
//!
//! The lexer is total: malformed input never fails, it just produces odd
//! tokens. Line breaks are kept as tokens so that the environment can move
//! the cursor line by line, and [`render`] followed by [`lex`] reproduces the
//! same sequence.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Tokens the agent is allowed to insert or delete.
pub const MUTABLE_TOKENS: [&str; 7] = [";", "(", ")", "{", "}", ".", ","];

pub(crate) const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "const", "continue", "default", "do", "else", "enum", "extern",
    "for", "goto", "if", "register", "return", "sizeof", "static", "struct", "switch",
    "typedef", "union", "volatile", "while",
];

pub(crate) const TYPE_NAMES: &[&str] = &[
    "char", "double", "float", "int", "long", "short", "signed", "unsigned", "void",
];

/// Library functions that keep their own vocabulary entry instead of
/// collapsing to the identifier class.
pub const LIBRARY_FUNCTIONS: &[&str] = &[
    "printf", "scanf", "puts", "gets", "getchar", "putchar", "malloc", "calloc", "free",
    "strlen", "strcpy", "strcmp", "strcat", "sqrt", "pow", "abs", "exit", "memset",
];

// Longest first within each length class; matching tries 3, then 2, then 1.
const OPERATORS_3: &[&str] = &[">>=", "<<=", "..."];
const OPERATORS_2: &[&str] = &[
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=",
    "%=", "&=", "^=", "|=",
];
const OPERATOR_CHARS: &[u8] = b"+-*/%=<>!&|^~?:";
const PUNCT_CHARS: &[u8] = b";,.(){}[]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Keyword,
    Operator,
    Punctuation,
    TypeName,
    LibraryFunction,
    Identifier,
    NumberLiteral,
    StringLiteral,
    CharLiteral,
    /// A whole preprocessor line such as `#include <stdio.h>`.
    Directive,
    LineBreak,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub lexeme: String,
    pub kind: TokenKind,
    /// 1-based line index.
    pub line: u32,
    /// 1-based index of the token within its line.
    pub col: u32,
}

impl Token {
    /// An unpositioned token; [`TokenSeq`] assigns line and column.
    pub fn new(lexeme: impl Into<String>, kind: TokenKind) -> Self {
        Token {
            lexeme: lexeme.into(),
            kind,
            line: 0,
            col: 0,
        }
    }

    pub fn punct(lexeme: &str) -> Self {
        Token::new(lexeme, TokenKind::Punctuation)
    }

    pub fn is_line_break(&self) -> bool {
        self.kind == TokenKind::LineBreak
    }

    pub fn is_mutable(&self) -> bool {
        self.kind == TokenKind::Punctuation && MUTABLE_TOKENS.contains(&self.lexeme.as_str())
    }
}

/// A program as a flat list of tokens with line breaks kept in place.
///
/// Code tokens (everything but line breaks) are addressed by a 0-based index,
/// which is what the environment's cursor holds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq {
    tokens: Vec<Token>,
    // flat position of every code token
    code: Vec<usize>,
}

impl TokenSeq {
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        let mut seq = TokenSeq {
            tokens,
            code: Vec::new(),
        };
        seq.reindex();
        seq
    }

    fn reindex(&mut self) {
        self.code.clear();
        let (mut line, mut col) = (1u32, 0u32);
        for (i, tok) in self.tokens.iter_mut().enumerate() {
            col += 1;
            tok.line = line;
            tok.col = col;
            if tok.is_line_break() {
                line += 1;
                col = 0;
            } else {
                self.code.push(i);
            }
        }
    }

    /// Number of code tokens.
    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    /// All tokens, line breaks included.
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// The `i`-th code token.
    pub fn get(&self, i: usize) -> Option<&Token> {
        self.code.get(i).map(|&flat| &self.tokens[flat])
    }

    pub fn code_tokens(&self) -> impl Iterator<Item = &Token> + '_ {
        self.code.iter().map(move |&flat| &self.tokens[flat])
    }

    /// Flat position (into [`tokens`](Self::tokens)) of the `i`-th code token.
    pub fn flat_index(&self, i: usize) -> usize {
        self.code[i]
    }

    /// Number of physical lines, counting a trailing line without a newline.
    pub fn line_count(&self) -> usize {
        self.tokens.last().map_or(0, |t| t.line as usize)
    }

    /// Code-token index range occupied by each line (empty lines included).
    pub fn line_spans(&self) -> Vec<std::ops::Range<usize>> {
        let mut spans = Vec::new();
        let mut start = 0;
        let mut next = 0;
        for tok in &self.tokens {
            if tok.is_line_break() {
                spans.push(start..next);
                start = next;
            } else {
                next += 1;
            }
        }
        if self.tokens.last().is_some_and(|t| !t.is_line_break()) {
            spans.push(start..next);
        }
        spans
    }

    /// Inserts `token` immediately before the `i`-th code token. `i == len()`
    /// appends after the final token.
    pub fn insert(&mut self, i: usize, token: Token) {
        let flat = if i == self.code.len() {
            self.code.last().map_or(0, |&f| f + 1)
        } else {
            self.code[i]
        };
        self.tokens.insert(flat, token);
        self.reindex();
    }

    pub fn remove(&mut self, i: usize) -> Token {
        let tok = self.tokens.remove(self.code[i]);
        self.reindex();
        tok
    }

    pub fn replace(&mut self, i: usize, token: Token) -> Token {
        let flat = self.code[i];
        let old = std::mem::replace(&mut self.tokens[flat], token);
        self.reindex();
        old
    }

    pub fn swap(&mut self, i: usize, j: usize) {
        let (a, b) = (self.code[i], self.code[j]);
        self.tokens.swap(a, b);
        self.reindex();
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self))
    }
}

/// Joins the original lexemes with single spaces, one output line per source
/// line.
pub fn render(seq: &TokenSeq) -> String {
    let mut out = String::new();
    let mut first = true;
    for tok in &seq.tokens {
        if tok.is_line_break() {
            out.push('\n');
            first = true;
        } else {
            if !first {
                out.push(' ');
            }
            out.push_str(&tok.lexeme);
            first = false;
        }
    }
    out
}

pub fn lex(source: &str) -> TokenSeq {
    TokenSeq::from_tokens(Lexer::new(source).run())
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    out: Vec<Token>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            out: Vec::new(),
        }
    }

    fn peek(&self, off: usize) -> Option<u8> {
        self.bytes.get(self.pos + off).copied()
    }

    fn emit(&mut self, start: usize, kind: TokenKind) {
        let lexeme = &self.src[start..self.pos];
        self.out.push(Token::new(lexeme, kind));
    }

    fn run(mut self) -> Vec<Token> {
        while let Some(b) = self.peek(0) {
            let start = self.pos;
            match b {
                b'\n' => {
                    self.pos += 1;
                    self.out.push(Token::new("\n", TokenKind::LineBreak));
                }
                b' ' | b'\t' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'/' if self.peek(1) == Some(b'/') => self.skip_to_eol(),
                b'/' if self.peek(1) == Some(b'*') => self.block_comment(),
                b'#' => {
                    self.skip_to_eol();
                    let raw = &self.src[start..self.pos];
                    let raw = raw.split("//").next().unwrap_or(raw).trim_end();
                    self.out.push(Token::new(raw, TokenKind::Directive));
                }
                b'"' | b'\'' => {
                    self.quoted(b);
                    let kind = if b == b'"' {
                        TokenKind::StringLiteral
                    } else {
                        TokenKind::CharLiteral
                    };
                    self.emit(start, kind);
                }
                b'0'..=b'9' => self.number(start),
                b'.' if self.peek(1).is_some_and(|c| c.is_ascii_digit()) => self.number(start),
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    while self
                        .peek(0)
                        .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
                    {
                        self.pos += 1;
                    }
                    let word = &self.src[start..self.pos];
                    let kind = classify_word(word);
                    self.emit(start, kind);
                }
                _ if PUNCT_CHARS.contains(&b) && !self.at_operator(3) && !self.at_operator(2) => {
                    self.pos += 1;
                    self.emit(start, TokenKind::Punctuation);
                }
                _ if self.at_operator(3) => {
                    self.pos += 3;
                    self.emit(start, TokenKind::Operator);
                }
                _ if self.at_operator(2) => {
                    self.pos += 2;
                    self.emit(start, TokenKind::Operator);
                }
                _ if OPERATOR_CHARS.contains(&b) => {
                    self.pos += 1;
                    self.emit(start, TokenKind::Operator);
                }
                _ => {
                    while self.peek(0).is_some_and(is_unknown_byte) {
                        self.pos += 1;
                    }
                    self.emit(start, TokenKind::Identifier);
                }
            }
        }
        self.out
    }

    fn at_operator(&self, width: usize) -> bool {
        let Some(s) = self.src.get(self.pos..self.pos + width) else {
            return false;
        };
        match width {
            3 => OPERATORS_3.contains(&s),
            2 => OPERATORS_2.contains(&s),
            _ => false,
        }
    }

    fn skip_to_eol(&mut self) {
        while self.peek(0).is_some_and(|c| c != b'\n') {
            self.pos += 1;
        }
    }

    fn block_comment(&mut self) {
        self.pos += 2;
        while let Some(c) = self.peek(0) {
            if c == b'*' && self.peek(1) == Some(b'/') {
                self.pos += 2;
                return;
            }
            if c == b'\n' {
                self.out.push(Token::new("\n", TokenKind::LineBreak));
            }
            self.pos += 1;
        }
    }

    // Unterminated literals stop at the end of the line.
    fn quoted(&mut self, quote: u8) {
        self.pos += 1;
        while let Some(c) = self.peek(0) {
            match c {
                b'\n' => return,
                b'\\' if self.peek(1).is_some_and(|n| n != b'\n') => self.pos += 2,
                _ if c == quote => {
                    self.pos += 1;
                    return;
                }
                _ => self.pos += 1,
            }
        }
    }

    fn number(&mut self, start: usize) {
        self.pos += 1;
        while let Some(c) = self.peek(0) {
            let exp_sign = (c == b'+' || c == b'-')
                && matches!(self.bytes[self.pos - 1], b'e' | b'E' | b'p' | b'P');
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.emit(start, TokenKind::NumberLiteral);
    }
}

fn is_unknown_byte(c: u8) -> bool {
    !(c.is_ascii_whitespace()
        || c.is_ascii_alphanumeric()
        || c == b'_'
        || c == b'"'
        || c == b'\''
        || c == b'#'
        || OPERATOR_CHARS.contains(&c)
        || PUNCT_CHARS.contains(&c))
}

fn classify_word(word: &str) -> TokenKind {
    if TYPE_NAMES.contains(&word) {
        TokenKind::TypeName
    } else if KEYWORDS.contains(&word) {
        TokenKind::Keyword
    } else if LIBRARY_FUNCTIONS.contains(&word) {
        TokenKind::LibraryFunction
    } else {
        TokenKind::Identifier
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexemes(seq: &TokenSeq) -> Vec<&str> {
        seq.tokens().iter().map(|t| t.lexeme.as_str()).collect()
    }

    #[test]
    fn lexes_figure_line() {
        let seq = lex("int main()(\n");
        assert_eq!(lexemes(&seq), ["int", "main", "(", ")", "(", "\n"]);
        let kinds: Vec<_> = seq.tokens().iter().map(|t| t.kind).collect();
        use TokenKind::*;
        assert_eq!(
            kinds,
            [TypeName, Identifier, Punctuation, Punctuation, Punctuation, LineBreak]
        );
        assert_eq!(seq.len(), 5);
    }

    #[test]
    fn empty_input() {
        let seq = lex("");
        assert!(seq.is_empty());
        assert_eq!(render(&seq), "");
    }

    #[test]
    fn comments_dropped_and_round_trip() {
        let seq = lex("x = 12; /*c*/");
        assert_eq!(lexemes(&seq), ["x", "=", "12", ";"]);
        assert_eq!(render(&seq), "x = 12 ;");
        assert_eq!(lex(&render(&seq)), seq);
    }

    #[test]
    fn block_comment_keeps_line_numbers() {
        let seq = lex("a /* one\ntwo */ b\nc");
        let b = seq.get(1).unwrap();
        assert_eq!((b.lexeme.as_str(), b.line), ("b", 2));
        assert_eq!(seq.get(2).unwrap().line, 3);
    }

    #[test]
    fn directive_is_one_token() {
        let seq = lex("#include<stdio.h> // hi\nint x;");
        assert_eq!(seq.get(0).unwrap().lexeme, "#include<stdio.h>");
        assert_eq!(seq.get(0).unwrap().kind, TokenKind::Directive);
        assert_eq!(seq.get(1).unwrap().line, 2);
    }

    #[test]
    fn literals_and_operators() {
        let seq = lex(r#"printf("a;b\"", 'x', 1.5e-3, .5, a->b >>= 2);"#);
        let lx = lexemes(&seq);
        assert_eq!(
            lx,
            [
                "printf", "(", r#""a;b\"""#, ",", "'x'", ",", "1.5e-3", ",", ".5", ",", "a",
                "->", "b", ">>=", "2", ")", ";"
            ]
        );
        assert_eq!(seq.get(0).unwrap().kind, TokenKind::LibraryFunction);
        assert_eq!(seq.get(4).unwrap().kind, TokenKind::CharLiteral);
    }

    #[test]
    fn unknown_bytes_become_identifiers() {
        let seq = lex("a @$ b é");
        assert_eq!(lexemes(&seq), ["a", "@$", "b", "é"]);
        assert_eq!(seq.get(1).unwrap().kind, TokenKind::Identifier);
        assert_eq!(lex(&render(&seq)), seq);
    }

    #[test]
    fn unterminated_string_stops_at_newline() {
        let seq = lex("s = \"abc\nx;");
        assert_eq!(lexemes(&seq), ["s", "=", "\"abc", "\n", "x", ";"]);
        assert_eq!(lex(&render(&seq)), seq);
    }

    #[test]
    fn edits_reposition_tokens() {
        let mut seq = lex("a b\nc");
        seq.insert(2, Token::punct(";"));
        assert_eq!(render(&seq), "a b\n; c");
        assert_eq!(seq.get(2).unwrap().line, 2);
        seq.remove(0);
        assert_eq!(render(&seq), "b\n; c");
        seq.insert(seq.len(), Token::punct("}"));
        assert_eq!(render(&seq), "b\n; c }");
        assert_eq!(seq.line_spans(), vec![0..1, 1..4]);
    }
}
