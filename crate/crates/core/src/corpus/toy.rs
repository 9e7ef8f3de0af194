//! A generator of small, clean C programs grouped into "problems".
//!
//! A problem fixes the statement skeleton (and hence the token count);
//! variants of a problem differ in identifiers, literals, operators and
//! format strings, much like different students' solutions to one exercise.

use std::ops::{Range, RangeInclusive};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{seed_errors, CorpusRecord};
use crate::error::Result;
use crate::token::{lex, render, TokenSeq};

const NAMES: &[&str] = &[
    "a", "b", "c", "n", "x", "y", "m", "k", "sum", "count", "total", "num", "val", "res", "tmp",
    "age", "len", "max", "min", "avg",
];
const LOOP_NAMES: &[&str] = &["i", "j", "t"];
const FORMATS: &[&str] = &["\"%d\"", "\"%d\\n\"", "\"%d \"", "\"ans=%d\\n\""];
const MESSAGES: &[&str] = &["\"hello\\n\"", "\"done\"", "\"Enter n\"", "\"no\\n\"", "\"yes\\n\""];
const ARITH: &[&str] = &["+", "-", "*", "/", "%"];
const CMP: &[&str] = &["<", ">", "<=", ">=", "==", "!="];

#[derive(Debug, Clone, Copy)]
enum Simple {
    Scanf,
    Printf,
    PrintfPlain,
    Assign,
    AssignConst,
    Incr,
}

impl Simple {
    const ALL: [Simple; 6] = [
        Simple::Scanf,
        Simple::Printf,
        Simple::PrintfPlain,
        Simple::Assign,
        Simple::AssignConst,
        Simple::Incr,
    ];

    fn tokens(self) -> usize {
        match self {
            Simple::Scanf => 8,
            Simple::Printf => 7,
            Simple::PrintfPlain => 5,
            Simple::Assign => 6,
            Simple::AssignConst => 4,
            Simple::Incr => 3,
        }
    }
}

#[derive(Debug, Clone)]
enum Stmt {
    Simple(Simple),
    If(Vec<Simple>),
    IfElse(Vec<Simple>, Vec<Simple>),
    While(Vec<Simple>),
    For(Vec<Simple>),
}

impl Stmt {
    fn tokens(&self) -> usize {
        let body = |b: &[Simple]| b.iter().map(|s| s.tokens()).sum::<usize>();
        match self {
            Stmt::Simple(s) => s.tokens(),
            Stmt::If(b) | Stmt::While(b) => 8 + body(b),
            Stmt::IfElse(b, e) => 8 + body(b) + 3 + body(e),
            Stmt::For(b) => 15 + body(b),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyGenerator {
    seed: u64,
    max_tokens: usize,
}

impl ToyGenerator {
    /// Programs of at most 58 tokens, leaving room for inserted faults.
    pub fn new(seed: u64) -> Self {
        ToyGenerator {
            seed,
            max_tokens: 58,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens.max(20);
        self
    }

    fn skeleton(&self, problem: usize) -> (usize, Vec<Stmt>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (problem as u64).wrapping_mul(0x9e37_79b9));
        let n_vars = rng.gen_range(1..=3);
        // int main ( ) {  int v , v ;  ...  return 0 ;  }
        let fixed = 5 + (2 + 2 * n_vars) + 3 + 1;
        let budget = rng.gen_range(fixed + 12..=self.max_tokens);
        let mut used = fixed;
        let mut stmts = Vec::new();
        let simple = |rng: &mut ChaCha8Rng| *Simple::ALL.choose(rng).unwrap();
        for _ in 0..12 {
            let stmt = match rng.gen_range(0..10) {
                0..=4 => Stmt::Simple(simple(&mut rng)),
                5 | 6 => Stmt::If((0..rng.gen_range(1..=2)).map(|_| simple(&mut rng)).collect()),
                7 => Stmt::IfElse(vec![simple(&mut rng)], vec![simple(&mut rng)]),
                8 => Stmt::While(vec![simple(&mut rng), Simple::Incr]),
                _ => Stmt::For(vec![simple(&mut rng)]),
            };
            if used + stmt.tokens() <= budget {
                used += stmt.tokens();
                stmts.push(stmt);
            }
        }
        if stmts.is_empty() {
            stmts.push(Stmt::Simple(Simple::PrintfPlain));
        }
        (n_vars, stmts)
    }

    /// Variant `variant` of problem `problem`; deterministic in both.
    pub fn program(&self, problem: usize, variant: usize) -> TokenSeq {
        let (n_vars, stmts) = self.skeleton(problem);
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed
                .wrapping_add((problem as u64) << 32)
                .wrapping_add(variant as u64 + 1),
        );
        let vars: Vec<&str> = NAMES.choose_multiple(&mut rng, n_vars).copied().collect();
        let lv = *LOOP_NAMES.choose(&mut rng).unwrap();
        let mut w = Writer {
            rng,
            vars,
            lines: Vec::new(),
            depth: 1,
        };
        w.lines.push("int main ( ) {".to_string());
        let mut decl = w.vars.join(" , ");
        if stmts.iter().any(|s| matches!(s, Stmt::For(_))) {
            // the loop variable replaces the last declared name
            let mut names = w.vars.clone();
            names.pop();
            names.push(lv);
            w.vars = names.clone();
            decl = names.join(" , ");
        }
        w.line(format!("int {decl} ;"));
        for stmt in &stmts {
            w.stmt(stmt, lv);
        }
        w.line("return 0 ;".into());
        w.lines.push("}".into());
        lex(&(w.lines.join("\n") + "\n"))
    }

    /// Seeds `faults` errors (drawn uniformly from the range) into every
    /// variant of every problem in `problems`.
    pub fn seeded_corpus(
        &self,
        problems: Range<usize>,
        per_problem: usize,
        faults: RangeInclusive<usize>,
    ) -> Result<Vec<CorpusRecord>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let mut out = Vec::new();
        for p in problems {
            for v in 0..per_problem {
                let clean = self.program(p, v);
                let k = rng.gen_range(faults.clone());
                let (broken, _) = seed_errors(&clean, k, &mut rng)?;
                out.push(CorpusRecord {
                    id: format!("p{p}-v{v}"),
                    problem_id: format!("p{p}"),
                    source: render(&broken),
                    fixed_source: Some(render(&clean)),
                    n_errors: Some(k),
                    fold: None,
                });
            }
        }
        Ok(out)
    }
}

struct Writer<'a> {
    rng: ChaCha8Rng,
    vars: Vec<&'a str>,
    lines: Vec<String>,
    depth: usize,
}

impl Writer<'_> {
    fn line(&mut self, text: String) {
        self.lines.push(format!("{}{text}", "  ".repeat(self.depth)));
    }

    fn var(&mut self) -> &str {
        self.vars.choose(&mut self.rng).unwrap()
    }

    fn operand(&mut self) -> String {
        if self.rng.gen_bool(0.5) {
            self.var().to_string()
        } else {
            self.rng.gen_range(0..100).to_string()
        }
    }

    fn cond(&mut self) -> String {
        let a = self.var().to_string();
        let op = *CMP.choose(&mut self.rng).unwrap();
        let b = self.operand();
        format!("{a} {op} {b}")
    }

    fn simple(&mut self, s: Simple) {
        let text = match s {
            Simple::Scanf => format!("scanf ( \"%d\" , & {} ) ;", self.var()),
            Simple::Printf => {
                let f = *FORMATS.choose(&mut self.rng).unwrap();
                format!("printf ( {f} , {} ) ;", self.var())
            }
            Simple::PrintfPlain => {
                format!("printf ( {} ) ;", MESSAGES.choose(&mut self.rng).unwrap())
            }
            Simple::Assign => {
                let v = self.var().to_string();
                let a = self.operand();
                let op = *ARITH.choose(&mut self.rng).unwrap();
                let b = self.operand();
                format!("{v} = {a} {op} {b} ;")
            }
            Simple::AssignConst => {
                let v = self.var().to_string();
                format!("{v} = {} ;", self.rng.gen_range(0..1000))
            }
            Simple::Incr => {
                let op = if self.rng.gen_bool(0.5) { "++" } else { "--" };
                format!("{} {op} ;", self.var())
            }
        };
        self.line(text);
    }

    fn block(&mut self, body: &[Simple]) {
        self.depth += 1;
        for &s in body {
            self.simple(s);
        }
        self.depth -= 1;
    }

    fn stmt(&mut self, stmt: &Stmt, lv: &str) {
        match stmt {
            Stmt::Simple(s) => self.simple(*s),
            Stmt::If(body) => {
                let c = self.cond();
                self.line(format!("if ( {c} ) {{"));
                self.block(body);
                self.line("}".into());
            }
            Stmt::IfElse(body, other) => {
                let c = self.cond();
                self.line(format!("if ( {c} ) {{"));
                self.block(body);
                self.line("} else {".into());
                self.block(other);
                self.line("}".into());
            }
            Stmt::While(body) => {
                let c = self.cond();
                self.line(format!("while ( {c} ) {{"));
                self.block(body);
                self.line("}".into());
            }
            Stmt::For(body) => {
                let bound = self.operand();
                self.line(format!("for ( {lv} = 0 ; {lv} < {bound} ; {lv} ++ ) {{"));
                self.block(body);
                self.line("}".into());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::surrogate_check;

    #[test]
    fn programs_are_clean_and_small() {
        let gen = ToyGenerator::new(1);
        for p in 0..60 {
            let first = gen.program(p, 0);
            for v in 0..5 {
                let prog = gen.program(p, v);
                assert_eq!(surrogate_check(&prog).count(), 0, "{}", render(&prog));
                assert!(prog.len() <= 58, "{} tokens", prog.len());
                assert_eq!(prog.len(), first.len(), "variants share a skeleton");
                assert_eq!(lex(&render(&prog)), prog);
            }
        }
        assert_eq!(gen.program(3, 4), ToyGenerator::new(1).program(3, 4));
    }

    #[test]
    fn seeded_corpus_shape() {
        let recs = ToyGenerator::new(2).seeded_corpus(0..4, 3, 1..=2).unwrap();
        assert_eq!(recs.len(), 12);
        for r in &recs {
            let k = r.n_errors.unwrap();
            assert!((1..=2).contains(&k));
            assert_eq!(surrogate_check(&lex(&r.source)).count(), k);
            assert!(lex(&r.source).len() <= 60);
        }
    }
}
