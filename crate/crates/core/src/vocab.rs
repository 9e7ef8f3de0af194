//! Shared vocabulary and the integer encoding fed to the network.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::token::{TokenKind, TokenSeq};

const BUILTIN: &str = include_str!("../data/vocab.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Specials {
    pub ident: u32,
    pub number: u32,
    pub string: u32,
    pub chr: u32,
    pub line_break: u32,
    pub cursor: u32,
    pub unknown: u32,
    pub directive: u32,
}

/// Bijection between token surfaces and dense integer ids.
///
/// File format: one surface per line, ids assigned in order from 0. Lines
/// starting with `#` are header lines; one of them must read
/// `# entries: N` and match the number of surfaces.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    index: HashMap<String, u32>,
    specials: Specials,
}

impl Vocabulary {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("builtin vocabulary is well-formed")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut declared = None;
        let mut surfaces = Vec::new();
        for line in text.lines() {
            if let Some(header) = line.strip_prefix('#') {
                if let Some(n) = header.trim().strip_prefix("entries:") {
                    let n = n
                        .trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad entry count {n:?}")))?;
                    declared = Some(n);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            surfaces.push(line.to_string());
        }
        match declared {
            Some(n) if n == surfaces.len() => {}
            Some(n) => {
                return Err(Error::Config(format!(
                    "vocabulary header declares {n} entries, found {}",
                    surfaces.len()
                )))
            }
            None => return Err(Error::Config("vocabulary header lacks entry count".into())),
        }
        let mut index = HashMap::with_capacity(surfaces.len());
        for (i, s) in surfaces.iter().enumerate() {
            if index.insert(s.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {s:?}")));
            }
        }
        let special = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocabulary lacks special {s}")))
        };
        let specials = Specials {
            ident: special("<ID>")?,
            number: special("<NUM>")?,
            string: special("<STR>")?,
            chr: special("<CHR>")?,
            line_break: special("<LB>")?,
            cursor: special("<CURSOR>")?,
            unknown: special("<UNK>")?,
            directive: special("<PRE>")?,
        };
        Ok(Vocabulary {
            surfaces,
            index,
            specials,
        })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn id(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    /// Maps every token (line breaks included) to its vocabulary id.
    /// Identifiers and literals collapse to their class ids; whitelisted
    /// library functions keep their own entry.
    pub fn normalize(&self, seq: &TokenSeq) -> Vec<u32> {
        seq.tokens()
            .iter()
            .map(|tok| {
                let sp = &self.specials;
                match tok.kind {
                    TokenKind::LineBreak => sp.line_break,
                    TokenKind::Identifier => sp.ident,
                    TokenKind::NumberLiteral => sp.number,
                    TokenKind::StringLiteral => sp.string,
                    TokenKind::CharLiteral => sp.chr,
                    TokenKind::Directive => sp.directive,
                    _ => self.id(&tok.lexeme).unwrap_or(sp.unknown),
                }
            })
            .collect()
    }

    /// [`normalize`](Self::normalize) with the cursor marker inserted right
    /// after the code token at 0-based index `cursor`.
    pub fn encode_state(&self, seq: &TokenSeq, cursor: usize) -> Result<Vec<u32>> {
        if cursor >= seq.len() {
            return Err(Error::contract(format!(
                "cursor {cursor} out of range for {} code tokens",
                seq.len()
            )));
        }
        let mut ids = self.normalize(seq);
        ids.insert(seq.flat_index(cursor) + 1, self.specials.cursor);
        Ok(ids)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::{lex, MUTABLE_TOKENS};

    #[test]
    fn builtin_is_a_bijection_with_mutable_ids() {
        let v = Vocabulary::builtin();
        for i in 0..v.len() as u32 {
            assert_eq!(v.id(v.surface(i).unwrap()), Some(i));
        }
        let mut ids: Vec<_> = MUTABLE_TOKENS.iter().map(|t| v.id(t).unwrap()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 7);
    }

    #[test]
    fn identifiers_collapse() {
        let v = Vocabulary::builtin();
        let sp = v.specials();
        let got = v.normalize(&lex("float ti, tax;"));
        assert_eq!(
            got,
            [v.id("float").unwrap(), sp.ident, v.id(",").unwrap(), sp.ident, v.id(";").unwrap()]
        );
        assert_eq!(v.normalize(&lex("a = b;")), v.normalize(&lex("zz = q;")));
    }

    #[test]
    fn library_functions_keep_ids() {
        let v = Vocabulary::builtin();
        let got = v.normalize(&lex("printf(\"x\")"));
        assert_eq!(
            got,
            [v.id("printf").unwrap(), v.id("(").unwrap(), v.specials().string, v.id(")").unwrap()]
        );
    }

    #[test]
    fn plain_punctuation_maps_through() {
        let v = Vocabulary::builtin();
        let got = v.normalize(&lex("( ) ;"));
        assert_eq!(got, [v.id("(").unwrap(), v.id(")").unwrap(), v.id(";").unwrap()]);
    }

    #[test]
    fn cursor_placement() {
        let v = Vocabulary::builtin();
        let seq = lex("int main()");
        let enc = v.encode_state(&seq, 0).unwrap();
        let sp = v.specials();
        assert_eq!(
            enc,
            [v.id("int").unwrap(), sp.cursor, sp.ident, v.id("(").unwrap(), v.id(")").unwrap()]
        );
        let last = v.encode_state(&seq, seq.len() - 1).unwrap();
        assert_eq!(*last.last().unwrap(), sp.cursor);
        assert!(v.encode_state(&seq, seq.len()).is_err());
    }

    #[test]
    fn header_count_is_checked() {
        assert!(Vocabulary::parse("# entries: 2\n<ID>\n").is_err());
        assert!(Vocabulary::parse("<ID>\n").is_err());
    }
}
