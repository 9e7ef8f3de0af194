//! Deterministic stand-in for a C compiler's syntax errors.
//!
//! The checker works on logical lines. A physical line whose first tokens
//! are `;` `)` `,` or `.` has that leading run attached to the end of the
//! previous line, so a terminator inserted at the start of the next line
//! still terminates the statement above it. Errors are counted as:
//!
//! * each unmatched `{` or `}` (braces match across the whole program);
//! * each unmatched `(` or `)` within a logical line;
//! * on lines whose parentheses balance, at most one statement error per
//!   statement: a `;` inside parentheses (a `for` header must have exactly
//!   two), otherwise a statement that reaches `}` or the end of the line
//!   without `;`. Control heads (`if (..)`, `else`, `while (..)`, ...) and
//!   function signatures may end a line without `;`;
//! * each `.` outside a literal, except one that ends an unterminated
//!   statement (that statement's error already covers it).

use crate::token::{TokenKind, TokenSeq};

use super::ErrorReport;

const ATTACHING: [&str; 4] = [";", ")", ",", "."];
const CONTROL_HEADS: [&str; 6] = ["if", "else", "while", "for", "switch", "do"];

pub fn surrogate_check(seq: &TokenSeq) -> ErrorReport {
    let toks: Vec<(&str, TokenKind, u32)> = seq
        .code_tokens()
        .map(|t| (t.lexeme.as_str(), t.kind, t.line))
        .collect();
    let is_punct = |i: usize, s: &str| toks[i].1 == TokenKind::Punctuation && toks[i].0 == s;

    let mut messages = Vec::new();

    let mut open_braces: Vec<u32> = Vec::new();
    for (i, &(_, _, line)) in toks.iter().enumerate() {
        if is_punct(i, "{") {
            open_braces.push(line);
        } else if is_punct(i, "}") && open_braces.pop().is_none() {
            messages.push(format!("line {line}: error: unmatched '}}'"));
        }
    }
    for line in open_braces {
        messages.push(format!("line {line}: error: unclosed '{{'"));
    }

    for logical in logical_lines(seq, &is_punct) {
        let line = toks[logical[0]].2;
        let mut depth = 0usize;
        let mut unbalanced = false;
        for &i in &logical {
            if is_punct(i, "(") {
                depth += 1;
            } else if is_punct(i, ")") {
                if depth == 0 {
                    unbalanced = true;
                    messages.push(format!("line {line}: error: unmatched ')'"));
                } else {
                    depth -= 1;
                }
            }
        }
        for _ in 0..depth {
            unbalanced = true;
            messages.push(format!("line {line}: error: unclosed '('"));
        }

        let mut exempt_dot = None;
        if !unbalanced {
            let mut depth = 0usize;
            let mut start = 0usize;
            let mut semis_inside = 0usize;
            for (pos, &i) in logical.iter().enumerate() {
                let boundary = if is_punct(i, "(") {
                    depth += 1;
                    None
                } else if is_punct(i, ")") {
                    depth -= 1;
                    None
                } else if is_punct(i, ";") {
                    if depth == 0 {
                        Some(Terminator::Semi)
                    } else {
                        semis_inside += 1;
                        None
                    }
                } else if is_punct(i, "{") {
                    Some(Terminator::Open)
                } else if is_punct(i, "}") {
                    Some(Terminator::Close)
                } else {
                    None
                };
                let end_of_line = pos + 1 == logical.len();
                if boundary.is_some() || end_of_line {
                    let (segment, term) = match boundary {
                        Some(Terminator::Semi) => (&logical[start..=pos], Terminator::Semi),
                        Some(brace) => (&logical[start..pos], brace),
                        None => (&logical[start..=pos], Terminator::EndOfLine),
                    };
                    if let Some(msg) = check_statement(segment, term, semis_inside, &toks) {
                        if msg == UNTERMINATED && is_punct(*segment.last().unwrap(), ".") {
                            exempt_dot = Some(*segment.last().unwrap());
                        }
                        messages.push(format!("line {line}: error: {msg}"));
                    }
                    start = pos + 1;
                    semis_inside = 0;
                }
            }
        }
        for &i in &logical {
            if is_punct(i, ".") && exempt_dot != Some(i) {
                messages.push(format!("line {line}: error: stray '.'"));
            }
        }
    }

    ErrorReport { messages }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Terminator {
    Semi,
    Open,
    Close,
    EndOfLine,
}

const UNTERMINATED: &str = "expected ';' at end of statement";

fn check_statement(
    segment: &[usize],
    term: Terminator,
    semis_inside: usize,
    toks: &[(&str, TokenKind, u32)],
) -> Option<&'static str> {
    let Some(&first) = segment.first() else {
        return None;
    };
    let head = toks[first];
    let is_for = head.1 == TokenKind::Keyword && head.0 == "for";
    if is_for && semis_inside != 2 {
        return Some("expected two ';' in for header");
    }
    if !is_for && semis_inside > 0 {
        return Some("expected ')' before ';'");
    }
    // anything before `{` is a block head
    if matches!(term, Terminator::Semi | Terminator::Open) {
        return None;
    }
    let excused = (head.1 == TokenKind::Keyword && CONTROL_HEADS.contains(&head.0))
        || head.1 == TokenKind::Directive
        || looks_like_signature(segment, toks);
    if excused {
        None
    } else {
        Some(UNTERMINATED)
    }
}

// `type name ( ... )` with nothing after the closing parenthesis.
fn looks_like_signature(segment: &[usize], toks: &[(&str, TokenKind, u32)]) -> bool {
    if segment.len() < 4 {
        return false;
    }
    let kind = |k: usize| toks[segment[k]].1;
    let text = |k: usize| toks[segment[k]].0;
    kind(0) == TokenKind::TypeName
        && kind(1) == TokenKind::Identifier
        && text(2) == "("
        && text(segment.len() - 1) == ")"
}

fn logical_lines(seq: &TokenSeq, is_punct: &impl Fn(usize, &str) -> bool) -> Vec<Vec<usize>> {
    let mut lines: Vec<Vec<usize>> = Vec::new();
    for span in seq.line_spans() {
        let mut rest = span.clone();
        if !lines.is_empty() {
            while rest.start < rest.end && ATTACHING.iter().any(|s| is_punct(rest.start, s)) {
                lines.last_mut().unwrap().push(rest.start);
                rest.start += 1;
            }
        }
        if !rest.is_empty() {
            lines.push(rest.collect());
        }
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::lex;

    fn count(src: &str) -> usize {
        surrogate_check(&lex(src)).count()
    }

    const CLEAN: &str = "int main ( ) {\n  int a , b ;\n  scanf ( \"%d\" , & a ) ;\n  \
                         for ( b = 0 ; b < a ; b ++ ) {\n    printf ( \"%d\" , b ) ;\n  }\n  \
                         if ( a > 1 ) {\n    a = a - 1 ;\n  } else {\n    a = 0 ;\n  }\n  \
                         return 0 ;\n}\n";

    #[test]
    fn clean_program_has_no_errors() {
        assert_eq!(count(CLEAN), 0, "{:?}", surrogate_check(&lex(CLEAN)));
    }

    #[test]
    fn missing_semicolon_before_brace() {
        assert_eq!(count("int main ( ) { return 0 }"), 1);
    }

    #[test]
    fn extra_closing_brace() {
        assert_eq!(count("int main ( ) {\n return 0 ;\n}\n}"), 1);
    }

    #[test]
    fn single_faults_count_once() {
        let cases = [
            ("  int a , b ;", "  int a , b"),
            ("  int a , b ;", "  int a , b ,"),
            ("  int a , b ;", "  int a , b ."),
            ("  scanf ( \"%d\" , & a ) ;", "  scanf ( \"%d\" ; & a ) ;"),
            ("  scanf ( \"%d\" , & a ) ;", "  scanf ( \"%d\" , & a ; ) "),
            ("  scanf ( \"%d\" , & a ) ;", "  scanf \"%d\" , & a ) ;"),
            ("  scanf ( \"%d\" , & a ) ;", "  scanf ( \"%d\" , & a ;"),
            ("  scanf ( \"%d\" , & a ) ;", "  scanf ( \"%d\" . , & a ) ;"),
            ("  scanf ( \"%d\" , & a ) ;", "  scanf ( ( \"%d\" , & a ) ;"),
            ("for ( b = 0 ; b < a ; b ++ ) {", "for ( b = 0 , b < a ; b ++ ) {"),
            ("for ( b = 0 ; b < a ; b ++ ) {", "for ( b = 0 ; b < a ; b ++ ) "),
            ("if ( a > 1 ) {", "if ( a > 1 ) { {"),
            ("    a = a - 1 ;", "  } a = a - 1 ;"),
        ];
        for (from, to) in cases {
            assert!(CLEAN.contains(from), "{from}");
            let broken = CLEAN.replacen(from, to, 1);
            assert_eq!(count(&broken), 1, "{to}: {:?}", surrogate_check(&lex(&broken)));
        }
    }

    #[test]
    fn terminator_on_next_line_attaches() {
        assert_eq!(count("int main ( ) {\n x = 1\n ; y = 2 ;\n}"), 0);
        assert_eq!(count("int main ( ) {\n x = 1\n y = 2 ;\n}"), 1);
    }

    #[test]
    fn figure_program_has_two_errors() {
        let src = crate::fixtures::FIGURE_PROGRAM;
        let rep = surrogate_check(&lex(src));
        assert_eq!(rep.count(), 2, "{rep:?}");
        assert_eq!(count(crate::fixtures::FIGURE_PROGRAM_FIXED), 0);
    }
}
