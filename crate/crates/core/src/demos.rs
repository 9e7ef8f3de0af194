//! Expert demonstrations derived from (broken, fixed) program pairs.
//!
//! The two programs are aligned by a minimum-cost edit script over code
//! tokens in which only the environment's own edits are allowed. The script
//! is then walked left to right: `move_down` while the next edit sits on a
//! later line, `move_right` along the line, then the edit itself. Every step
//! is replayed through the environment so a demonstration is known to reach
//! the goal before it is returned.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionMnemonic, Env, MutableToken, Termination};
use crate::error::{Error, Result};
use crate::token::{lex, render, TokenSeq};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstration {
    pub program_id: String,
    pub actions: Vec<Action>,
    /// The program as the environment leaves it at the goal.
    pub expected_final: TokenSeq,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DemoOutcome {
    Demo(Demonstration),
    NotExpressible(String),
}

impl DemoOutcome {
    pub fn demo(self) -> Option<Demonstration> {
        match self {
            DemoOutcome::Demo(d) => Some(d),
            DemoOutcome::NotExpressible(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Keep,
    Delete,
    Insert(MutableToken),
    Replace(Action),
    Transpose,
}

const INF: u32 = u32::MAX / 2;

fn replace_action(from: &str, to: &str) -> Option<Action> {
    match (from, to) {
        (";", ",") => Some(Action::ReplaceSemiWithComma),
        (",", ";") => Some(Action::ReplaceCommaWithSemi),
        (".", ";") => Some(Action::ReplacePeriodWithSemi),
        _ => None,
    }
}

/// Cheapest script turning `a` into `b`, as ops anchored to positions in `a`.
fn edit_script(a: &TokenSeq, b: &TokenSeq) -> Option<Vec<(usize, Op)>> {
    let a: Vec<(&str, bool)> = a.code_tokens().map(|t| (t.lexeme.as_str(), t.is_mutable())).collect();
    let b: Vec<(&str, bool)> = b.code_tokens().map(|t| (t.lexeme.as_str(), t.is_mutable())).collect();
    let (n, m) = (a.len(), b.len());
    // cost[i][j]: cheapest way to turn a[i..] into b[j..]
    let mut cost = vec![vec![INF; m + 1]; n + 1];
    let mut choice = vec![vec![Op::Keep; m + 1]; n + 1];
    cost[n][m] = 0;
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            if i == n && j == m {
                continue;
            }
            let mut best = (INF, Op::Keep);
            let mut consider = |c: u32, op: Op| {
                if c < best.0 {
                    best = (c, op);
                }
            };
            if i < n && j < m && a[i] == b[j] {
                consider(cost[i + 1][j + 1], Op::Keep);
            }
            if i + 1 < n && j + 1 < m && a[i] == (";", true) && a[i + 1] == (")", true)
                && b[j] == (")", true) && b[j + 1] == (";", true)
            {
                consider(cost[i + 2][j + 2] + 1, Op::Transpose);
            }
            if i < n && j < m && a[i].1 && b[j].1 {
                if let Some(act) = replace_action(a[i].0, b[j].0) {
                    consider(cost[i + 1][j + 1] + 1, Op::Replace(act));
                }
            }
            if i < n && a[i].1 {
                consider(cost[i + 1][j] + 1, Op::Delete);
            }
            // an insert needs a token to sit in front of
            if i < n && j < m && b[j].1 {
                let t = MutableToken::from_lexeme(b[j].0).expect("mutable lexeme");
                consider(cost[i][j + 1] + 1, Op::Insert(t));
            }
            cost[i][j] = best.0;
            choice[i][j] = best.1;
        }
    }
    if cost[0][0] >= INF {
        return None;
    }
    let (mut i, mut j) = (0, 0);
    let mut ops = Vec::new();
    while i < n || j < m {
        let op = choice[i][j];
        match op {
            Op::Keep => {
                i += 1;
                j += 1;
                continue;
            }
            Op::Delete => i += 1,
            Op::Insert(_) => j += 1,
            Op::Replace(_) => {
                i += 1;
                j += 1;
            }
            Op::Transpose => {
                i += 2;
                j += 2;
            }
        }
        let anchor = match op {
            Op::Insert(_) => i,
            Op::Delete | Op::Replace(_) => i - 1,
            Op::Transpose => i - 2,
            Op::Keep => unreachable!(),
        };
        ops.push((anchor, op));
    }
    Some(ops)
}

/// Builds and replays a demonstration for `p`. Inputs where `p` has no
/// errors or `p_fixed` has some are contract errors.
pub fn generate_demonstration(
    env: &Env<'_>,
    program_id: &str,
    p: &TokenSeq,
    p_fixed: &TokenSeq,
) -> Result<DemoOutcome> {
    let oracle = env.oracle();
    if oracle.check(p_fixed)?.count() != 0 {
        return Err(Error::contract(format!("{program_id}: fixed program has errors")));
    }
    let mut state = env
        .reset(p)
        .map_err(|e| Error::contract(format!("{program_id}: {e}")))?;
    let Some(ops) = edit_script(p, p_fixed) else {
        return Ok(DemoOutcome::NotExpressible(
            "difference involves tokens no action can edit".into(),
        ));
    };

    let mut actions = Vec::new();
    // current position = anchor in p + shift from edits already applied
    let mut shift: isize = 0;
    for (anchor, op) in ops {
        let target = (anchor as isize + shift) as usize;
        let mut plan = Vec::new();
        let mut c = state.cursor;
        let seq = &state.seq;
        if target < c {
            return Ok(DemoOutcome::NotExpressible(
                "edits cannot be made in one left-to-right pass".into(),
            ));
        }
        while seq.get(target).unwrap().line > seq.get(c).unwrap().line {
            plan.push(Action::MoveDown);
            let line = seq.get(c).unwrap().line;
            c = (c + 1..seq.len()).find(|&i| seq.get(i).unwrap().line > line).unwrap();
        }
        plan.extend(std::iter::repeat(Action::MoveRight).take(target - c));
        plan.push(match op {
            Op::Delete => Action::Delete,
            Op::Insert(t) => Action::Insert(t),
            Op::Replace(a) => a,
            Op::Transpose => Action::ReplaceSemiParenWithParenSemi,
            Op::Keep => unreachable!(),
        });
        shift += match op {
            Op::Delete => -1,
            Op::Insert(_) => 1,
            _ => 0,
        };

        for action in plan {
            if state.is_terminal() {
                return Ok(DemoOutcome::NotExpressible(format!(
                    "episode ended ({:?}) before the fix was complete",
                    state.termination
                )));
            }
            let res = env.step(&mut state, action)?;
            if res.edit_accepted == Some(false) {
                return Ok(DemoOutcome::NotExpressible(format!(
                    "{action} rejected at step {}",
                    state.steps_taken
                )));
            }
            actions.push(action);
        }
    }
    if state.termination != Termination::Goal {
        return Ok(DemoOutcome::NotExpressible(format!(
            "script applied but {} errors remain",
            state.error_count
        )));
    }
    Ok(DemoOutcome::Demo(Demonstration {
        program_id: program_id.to_string(),
        actions,
        expected_final: state.seq,
    }))
}

/// Replays `demo` on `p`: true iff every edit is accepted, the goal is hit on
/// the last action and the final program matches.
pub fn verify(env: &Env<'_>, demo: &Demonstration, p: &TokenSeq) -> bool {
    let Ok(mut state) = env.reset(p) else {
        return false;
    };
    for &action in &demo.actions {
        if state.is_terminal() {
            return false;
        }
        match env.step(&mut state, action) {
            Ok(res) if res.edit_accepted != Some(false) => {}
            _ => return false,
        }
    }
    state.termination == Termination::Goal && state.seq == demo.expected_final
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoLine {
    program_id: String,
    actions: Vec<ActionMnemonic>,
    expected_final: String,
}

pub fn save_demos(demos: &[Demonstration], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for d in demos {
        let line = DemoLine {
            program_id: d.program_id.clone(),
            actions: d.actions.iter().copied().map(ActionMnemonic).collect(),
            expected_final: render(&d.expected_final),
        };
        serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_demos(path: &Path) -> Result<Vec<Demonstration>> {
    let reader = BufReader::new(File::open(path)?);
    let mut demos = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DemoLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        demos.push(Demonstration {
            program_id: rec.program_id,
            actions: rec.actions.into_iter().map(|a| a.0).collect(),
            expected_final: lex(&rec.expected_final),
        });
    }
    Ok(demos)
}
