//! Typographic fault injection. Every fault class is undone by exactly one
//! edit action of the environment.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::surrogate_check;
use crate::token::{Token, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Drops a `;` `(` `)` `{` or `}`; fixed by an insert.
    DeleteMutable,
    /// Adds a stray mutable token; fixed by delete.
    InsertMutable,
    /// A `,` inside parentheses became `;`; fixed by replace `;` with `,`.
    SwapSemiComma,
    /// A terminating `;` became `,`; fixed by replace `,` with `;`.
    SwapCommaSemi,
    /// A terminating `;` became `.`; fixed by replace `.` with `;`.
    PeriodForSemi,
    /// `) ;` became `; )`; fixed by the transposing replace.
    SemiparenTranspose,
}

impl FaultKind {
    pub const ALL: [FaultKind; 6] = [
        FaultKind::DeleteMutable,
        FaultKind::InsertMutable,
        FaultKind::SwapSemiComma,
        FaultKind::SwapCommaSemi,
        FaultKind::PeriodForSemi,
        FaultKind::SemiparenTranspose,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededFault {
    pub kind: FaultKind,
    /// Line of the affected token in the clean program.
    pub line: u32,
    /// Code-token index in the clean program.
    pub token_index: usize,
    /// The token deleted, inserted or written.
    pub lexeme: String,
}

impl SeededFault {
    fn touches_braces(&self) -> bool {
        self.lexeme == "{" || self.lexeme == "}"
    }
}

const ATTEMPTS: usize = 64;

/// Injects `k` faults on distinct lines of a clean program (at most one of
/// them involving a brace, since brace errors are matched program-wide).
/// The surrogate reports exactly `k` errors for the result.
pub fn seed_errors(
    clean: &TokenSeq,
    k: usize,
    rng: &mut impl Rng,
) -> Result<(TokenSeq, Vec<SeededFault>)> {
    if k == 0 {
        return Err(Error::contract("fault count must be at least 1"));
    }
    if surrogate_check(clean).count() != 0 {
        return Err(Error::contract("seed_errors needs a program without errors"));
    }
    let sites = enumerate_sites(clean);
    for _ in 0..ATTEMPTS {
        let Some(faults) = pick(&sites, k, rng) else {
            continue;
        };
        let broken = apply(clean, &faults);
        if surrogate_check(&broken).count() == k {
            let mut faults = faults;
            faults.sort_by_key(|f| f.token_index);
            return Ok((broken, faults));
        }
    }
    Err(Error::contract(format!(
        "program too short for {k} distinct faults ({} tokens)",
        clean.len()
    )))
}

fn pick(sites: &[SeededFault], k: usize, rng: &mut impl Rng) -> Option<Vec<SeededFault>> {
    let mut chosen: Vec<SeededFault> = Vec::with_capacity(k);
    let mut kinds: Vec<FaultKind> = FaultKind::ALL
        .into_iter()
        .filter(|kind| sites.iter().any(|s| s.kind == *kind))
        .collect();
    for _ in 0..k {
        let mut placed = false;
        kinds.shuffle(rng);
        for &kind in &kinds {
            let candidates: Vec<&SeededFault> = sites
                .iter()
                .filter(|s| s.kind == kind)
                .filter(|s| chosen.iter().all(|c| c.line != s.line))
                .filter(|s| !(s.touches_braces() && chosen.iter().any(|c| c.touches_braces())))
                .collect();
            if let Some(site) = candidates.choose(rng) {
                chosen.push((*site).clone());
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(chosen)
}

fn apply(clean: &TokenSeq, faults: &[SeededFault]) -> TokenSeq {
    let mut order: Vec<&SeededFault> = faults.iter().collect();
    order.sort_by_key(|f| std::cmp::Reverse(f.token_index));
    let mut seq = clean.clone();
    for f in order {
        let i = f.token_index;
        match f.kind {
            FaultKind::DeleteMutable => {
                seq.remove(i);
            }
            FaultKind::InsertMutable => seq.insert(i, Token::punct(&f.lexeme)),
            FaultKind::SwapSemiComma | FaultKind::SwapCommaSemi | FaultKind::PeriodForSemi => {
                seq.replace(i, Token::punct(&f.lexeme));
            }
            FaultKind::SemiparenTranspose => seq.swap(i, i + 1),
        }
    }
    seq
}

fn enumerate_sites(seq: &TokenSeq) -> Vec<SeededFault> {
    let toks: Vec<&Token> = seq.code_tokens().collect();
    let n = toks.len();
    let is = |i: usize, s: &str| toks.get(i).is_some_and(|t| t.is_mutable() && t.lexeme == s);

    // parenthesis depth before each token, reset per line
    let mut depth = vec![0usize; n];
    let mut line_start = vec![false; n];
    let mut for_line = vec![false; n];
    let mut d = 0usize;
    let mut in_for = false;
    for i in 0..n {
        let first = i == 0 || toks[i - 1].line != toks[i].line;
        if first {
            d = 0;
            in_for = toks[i].lexeme == "for";
        }
        line_start[i] = first;
        depth[i] = d;
        for_line[i] = in_for;
        if is(i, "(") {
            d += 1;
        } else if is(i, ")") {
            d = d.saturating_sub(1);
        }
    }

    let mut sites = Vec::new();
    let mut push = |kind, i: usize, lexeme: &str| {
        sites.push(SeededFault {
            kind,
            line: toks[i].line,
            token_index: i,
            lexeme: lexeme.to_string(),
        })
    };
    for i in 0..n {
        let tok = toks[i].lexeme.as_str();
        let mutable = toks[i].is_mutable();

        if mutable && matches!(tok, ";" | "(" | ")" | "{" | "}") && i + 1 < n {
            push(FaultKind::DeleteMutable, i, tok);
        }
        if !line_start[i] {
            for t in ["(", ")", "."] {
                push(FaultKind::InsertMutable, i, t);
            }
            if depth[i] > 0 {
                push(FaultKind::InsertMutable, i, ";");
            }
        } else if i > 0 {
            for t in ["{", "}"] {
                push(FaultKind::InsertMutable, i, t);
            }
        }
        if is(i, ",") && depth[i] > 0 {
            push(FaultKind::SwapSemiComma, i, ";");
        }
        if is(i, ";") {
            if depth[i] == 0 {
                push(FaultKind::SwapCommaSemi, i, ",");
                push(FaultKind::PeriodForSemi, i, ".");
            } else if for_line[i] && depth[i] == 1 {
                push(FaultKind::SwapCommaSemi, i, ",");
            }
        }
        if is(i, ")") && is(i + 1, ";") && depth[i] == 1 && toks[i + 1].line == toks[i].line {
            push(FaultKind::SemiparenTranspose, i, ";");
        }
    }
    sites
}
