//! The repair MDP: a cursor walks a program once, top to bottom, and may
//! insert, delete or swap punctuation along the way.
//!
//! Edits are checked by the oracle before they take effect. An edit that
//! would raise the error count is rejected and leaves the program untouched
//! (it still costs a step and the edit penalty).

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::token::{render, Token, TokenSeq};

/// Number of discrete actions.
pub const NUM_ACTIONS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutableToken {
    Semi,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Period,
    Comma,
}

impl MutableToken {
    pub const ALL: [MutableToken; 7] = [
        MutableToken::Semi,
        MutableToken::LParen,
        MutableToken::RParen,
        MutableToken::LBrace,
        MutableToken::RBrace,
        MutableToken::Period,
        MutableToken::Comma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MutableToken::Semi => ";",
            MutableToken::LParen => "(",
            MutableToken::RParen => ")",
            MutableToken::LBrace => "{",
            MutableToken::RBrace => "}",
            MutableToken::Period => ".",
            MutableToken::Comma => ",",
        }
    }

    pub fn from_lexeme(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveRight,
    MoveDown,
    Insert(MutableToken),
    Delete,
    ReplaceSemiWithComma,
    ReplaceCommaWithSemi,
    ReplacePeriodWithSemi,
    /// `; )` becomes `) ;`.
    ReplaceSemiParenWithParenSemi,
}

impl Action {
    /// Every action, in network output order.
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::MoveRight,
        Action::MoveDown,
        Action::Insert(MutableToken::Semi),
        Action::Insert(MutableToken::LParen),
        Action::Insert(MutableToken::RParen),
        Action::Insert(MutableToken::LBrace),
        Action::Insert(MutableToken::RBrace),
        Action::Insert(MutableToken::Period),
        Action::Insert(MutableToken::Comma),
        Action::Delete,
        Action::ReplaceSemiWithComma,
        Action::ReplaceCommaWithSemi,
        Action::ReplacePeriodWithSemi,
        Action::ReplaceSemiParenWithParenSemi,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&a| a == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn is_navigation(self) -> bool {
        matches!(self, Action::MoveRight | Action::MoveDown)
    }

    pub fn is_edit(self) -> bool {
        !self.is_navigation()
    }

    pub fn mnemonic(self) -> String {
        match self {
            Action::MoveRight => "move_right".into(),
            Action::MoveDown => "move_down".into(),
            Action::Insert(t) => format!("insert({})", t.as_str()),
            Action::Delete => "delete".into(),
            Action::ReplaceSemiWithComma => "replace(;,,)".into(),
            Action::ReplaceCommaWithSemi => "replace(,,;)".into(),
            Action::ReplacePeriodWithSemi => "replace(.,;)".into(),
            Action::ReplaceSemiParenWithParenSemi => "replace(;),);)".into(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.mnemonic())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.mnemonic() == s)
            .ok_or_else(|| Error::DataCorruption(format!("unknown action mnemonic {s:?}")))
    }
}

impl Serialize for ActionMnemonic {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.mnemonic())
    }
}

impl<'de> Deserialize<'de> for ActionMnemonic {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map(ActionMnemonic).map_err(serde::de::Error::custom)
    }
}

/// Serializes an [`Action`] as its mnemonic string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionMnemonic(pub Action);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSpec {
    pub step_penalty: f64,
    pub edit_penalty: f64,
    pub maximum_reward: f64,
    pub intermediate_reward: f64,
    pub max_episode_len: usize,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            step_penalty: -0.005,
            edit_penalty: -0.025,
            maximum_reward: 1.0,
            intermediate_reward: 0.045,
            max_episode_len: 100,
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step_penalty <= 0.0
            && self.edit_penalty <= 0.0
            && self.maximum_reward > self.intermediate_reward
            && self.intermediate_reward > 0.0
            && self.max_episode_len > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent reward spec {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub rewards: RewardSpec,
    /// Also reject edits that leave the error count unchanged.
    pub strict_rejection: bool,
    /// Charge the step penalty on edit steps as well.
    pub step_penalty_on_edits: bool,
    /// Add the intermediate reward on the edit that reaches the goal.
    pub intermediate_on_goal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    None,
    Goal,
    OutOfSteps,
    PastEnd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub seq: TokenSeq,
    /// 0-based index of the code token under the cursor.
    pub cursor: usize,
    pub error_count: usize,
    pub steps_taken: usize,
    pub termination: Termination,
}

impl State {
    pub fn is_terminal(&self) -> bool {
        self.termination != Termination::None
    }

    /// Line (1-based) of the cursor token.
    pub fn cursor_line(&self) -> u32 {
        self.seq.get(self.cursor).map_or(0, |t| t.line)
    }

    /// Stable 64-bit FNV-1a hash of the program text and cursor.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let text = render(&self.seq);
        for b in text.bytes().chain((self.cursor as u64).to_le_bytes()) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
    pub termination: Termination,
    /// `None` for navigation.
    pub edit_accepted: Option<bool>,
    pub errors_before: usize,
    pub errors_after: usize,
}

pub struct Env<'o> {
    oracle: &'o Oracle,
    cfg: EnvConfig,
}

impl<'o> Env<'o> {
    pub fn new(oracle: &'o Oracle, cfg: EnvConfig) -> Self {
        Env { oracle, cfg }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn oracle(&self) -> &'o Oracle {
        self.oracle
    }

    pub fn reset(&self, program: &TokenSeq) -> Result<State> {
        if program.is_empty() {
            return Err(Error::InvalidEpisode("program has no tokens".into()));
        }
        let error_count = self.oracle.check(program)?.count();
        if error_count == 0 {
            return Err(Error::InvalidEpisode("program already compiles".into()));
        }
        Ok(State {
            seq: program.clone(),
            cursor: 0,
            error_count,
            steps_taken: 0,
            termination: Termination::None,
        })
    }

    pub fn step(&self, state: &mut State, action: Action) -> Result<StepResult> {
        if state.is_terminal() {
            return Err(Error::contract(format!(
                "{action} on terminal state ({:?})",
                state.termination
            )));
        }
        let rw = &self.cfg.rewards;
        let errors_before = state.error_count;
        state.steps_taken += 1;

        let mut termination = Termination::None;
        let mut edit_accepted = None;
        let reward = if action.is_navigation() {
            if !self.navigate(state, action) {
                termination = Termination::PastEnd;
            }
            rw.step_penalty
        } else {
            let base = rw.edit_penalty
                + if self.cfg.step_penalty_on_edits {
                    rw.step_penalty
                } else {
                    0.0
                };
            match self.try_edit(state, action)? {
                None => {
                    edit_accepted = Some(false);
                    base
                }
                Some((seq, cursor, count)) => {
                    edit_accepted = Some(true);
                    state.seq = seq;
                    state.cursor = cursor;
                    state.error_count = count;
                    if count == 0 {
                        termination = Termination::Goal;
                        rw.maximum_reward
                            + if self.cfg.intermediate_on_goal {
                                rw.intermediate_reward
                            } else {
                                0.0
                            }
                    } else if count < errors_before {
                        base + rw.intermediate_reward
                    } else {
                        base
                    }
                }
            }
        };
        if termination == Termination::None && state.steps_taken >= rw.max_episode_len {
            termination = Termination::OutOfSteps;
        }
        state.termination = termination;
        Ok(StepResult {
            reward,
            done: termination != Termination::None,
            termination,
            edit_accepted,
            errors_before,
            errors_after: state.error_count,
        })
    }

    /// Moves the cursor; `false` when the move leaves the program.
    fn navigate(&self, state: &mut State, action: Action) -> bool {
        let seq = &state.seq;
        let c = state.cursor;
        let line = seq.get(c).map_or(0, |t| t.line);
        match action {
            Action::MoveRight => {
                if c + 1 == seq.len() {
                    return false;
                }
                if seq.get(c + 1).is_some_and(|t| t.line == line) {
                    state.cursor = c + 1;
                }
                true
            }
            Action::MoveDown => {
                // first token on a later line, skipping empty lines
                match (c + 1..seq.len()).find(|&i| seq.get(i).is_some_and(|t| t.line > line)) {
                    Some(i) => {
                        state.cursor = i;
                        true
                    }
                    None => false,
                }
            }
            _ => unreachable!("not a navigation action"),
        }
    }

    /// Builds and checks the edited program. `None` means rejected.
    fn try_edit(
        &self,
        state: &State,
        action: Action,
    ) -> Result<Option<(TokenSeq, usize, usize)>> {
        let c = state.cursor;
        let seq = &state.seq;
        let at = |i: usize, s: &str| seq.get(i).is_some_and(|t| t.is_mutable() && t.lexeme == s);
        let mut cand = seq.clone();
        let mut cursor = c;
        match action {
            Action::Insert(t) => cand.insert(c, Token::punct(t.as_str())),
            Action::Delete => {
                if !seq.get(c).is_some_and(Token::is_mutable) || seq.len() == 1 {
                    return Ok(None);
                }
                cand.remove(c);
                cursor = c.min(cand.len() - 1);
            }
            Action::ReplaceSemiWithComma | Action::ReplaceCommaWithSemi
            | Action::ReplacePeriodWithSemi => {
                let (from, to) = match action {
                    Action::ReplaceSemiWithComma => (";", ","),
                    Action::ReplaceCommaWithSemi => (",", ";"),
                    _ => (".", ";"),
                };
                if !at(c, from) {
                    return Ok(None);
                }
                cand.replace(c, Token::punct(to));
            }
            Action::ReplaceSemiParenWithParenSemi => {
                if !(at(c, ";") && at(c + 1, ")")) {
                    return Ok(None);
                }
                cand.swap(c, c + 1);
            }
            Action::MoveRight | Action::MoveDown => unreachable!("not an edit"),
        }
        let count = self.oracle.check(&cand)?.count();
        let rejected = if self.cfg.strict_rejection {
            count >= state.error_count
        } else {
            count > state.error_count
        };
        Ok(if rejected { None } else { Some((cand, cursor, count)) })
    }
}

/// Per-episode event counts, enough to recompute the summed reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EpisodeTally {
    pub navigation_steps: usize,
    /// Edit steps other than a goal-reaching one, accepted or rejected.
    pub edit_steps: usize,
    pub rejected_edits: usize,
    /// Accepted edits that lowered the error count without reaching the goal.
    pub reducing_edits: usize,
    pub goal: bool,
}

impl EpisodeTally {
    pub fn record(&mut self, action: Action, result: &StepResult) {
        if action.is_navigation() {
            self.navigation_steps += 1;
        } else if result.termination == Termination::Goal {
            self.goal = true;
        } else {
            self.edit_steps += 1;
            if result.edit_accepted == Some(false) {
                self.rejected_edits += 1;
            } else if result.errors_after < result.errors_before {
                self.reducing_edits += 1;
            }
        }
    }

    pub fn steps(&self) -> usize {
        self.navigation_steps + self.edit_steps + self.goal as usize
    }

    /// Total edit actions taken, the goal-reaching one included.
    pub fn edits(&self) -> usize {
        self.edit_steps + self.goal as usize
    }

    /// Summed episode reward in closed form.
    pub fn closed_form_reward(&self, cfg: &EnvConfig) -> f64 {
        let rw = &cfg.rewards;
        let edit_cost = rw.edit_penalty
            + if cfg.step_penalty_on_edits {
                rw.step_penalty
            } else {
                0.0
            };
        let goal_bonus = rw.maximum_reward
            + if cfg.intermediate_on_goal {
                rw.intermediate_reward
            } else {
                0.0
            };
        rw.step_penalty * self.navigation_steps as f64
            + edit_cost * self.edit_steps as f64
            + rw.intermediate_reward * self.reducing_edits as f64
            + if self.goal { goal_bonus } else { 0.0 }
    }
}

/// One line of a trajectory trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub state_hash: u64,
    pub line: u32,
    /// 1-based cursor position before the action.
    pub cursor: usize,
    pub action: ActionMnemonic,
    pub reward: f64,
    pub accepted: Option<bool>,
    pub errors_before: usize,
    pub errors_after: usize,
    pub termination: Termination,
}

impl TraceRecord {
    pub fn new(step: usize, before: &State, action: Action, result: &StepResult) -> Self {
        TraceRecord {
            step,
            state_hash: before.fingerprint(),
            line: before.cursor_line(),
            cursor: before.cursor + 1,
            action: ActionMnemonic(action),
            reward: result.reward,
            accepted: result.edit_accepted,
            errors_before: result.errors_before,
            errors_after: result.errors_after,
            termination: result.termination,
        }
    }
}

pub fn write_trace(mut out: impl Write, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace(input: impl BufRead) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::DataCorruption(format!("trace line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::FIGURE_PROGRAM;
    use crate::token::lex;
    use approx::assert_abs_diff_eq;

    fn env(oracle: &Oracle) -> Env<'_> {
        Env::new(oracle, EnvConfig::default())
    }

    #[test]
    fn fourteen_distinct_actions() {
        assert_eq!(Action::ALL.len(), 14);
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(a.mnemonic().parse::<Action>().unwrap(), *a);
        }
        assert_eq!(Action::ALL.iter().filter(|a| a.is_navigation()).count(), 2);
    }

    #[test]
    fn reset_contract() {
        let oracle = Oracle::surrogate();
        let env = env(&oracle);
        let s = env.reset(&lex(FIGURE_PROGRAM)).unwrap();
        assert_eq!(s.cursor, 0);
        assert_eq!(s.seq.get(0).unwrap().lexeme, "#include<stdio.h>");
        assert!(s.error_count >= 2);
        assert!(matches!(
            env.reset(&lex("int main ( ) { return 0 ; }")),
            Err(Error::InvalidEpisode(_))
        ));
        assert!(env.reset(&lex("")).is_err());
        let tiny = env.reset(&lex("}")).unwrap();
        assert_eq!((tiny.cursor, tiny.seq.len()), (0, 1));
    }

    fn move_to(env: &Env, s: &mut State, line: u32, lexeme: &str) {
        while s.cursor_line() < line {
            env.step(s, Action::MoveDown).unwrap();
        }
        while s.seq.get(s.cursor).unwrap().lexeme != lexeme {
            env.step(s, Action::MoveRight).unwrap();
        }
    }

    #[test]
    fn figure_edits() {
        let oracle = Oracle::surrogate();
        let env = env(&oracle);
        let mut s = env.reset(&lex(FIGURE_PROGRAM)).unwrap();
        move_to(&env, &mut s, 4, ";");
        let before = s.error_count;
        let r = env.step(&mut s, Action::ReplaceSemiWithComma).unwrap();
        assert_eq!(r.edit_accepted, Some(true));
        assert!(r.errors_after < before);
        assert_abs_diff_eq!(r.reward, 0.02, epsilon = 1e-12);
        assert!(!r.done);

        move_to(&env, &mut s, 13, "else");
        let r = env.step(&mut s, Action::Insert(MutableToken::RBrace)).unwrap();
        assert_eq!((r.errors_before, r.errors_after), (1, 0));
        assert_eq!(r.reward, 1.0);
        assert_eq!(r.termination, Termination::Goal);
        assert!(env.step(&mut s, Action::MoveRight).is_err());
    }

    #[test]
    fn delete_on_keyword_is_rejected_without_change() {
        let oracle = Oracle::surrogate();
        let env = env(&oracle);
        let mut s = env.reset(&lex("int main ( ) { return 0 }")).unwrap();
        let seq = s.seq.clone();
        let (_, misses) = oracle.cache_stats();
        let r = env.step(&mut s, Action::Delete).unwrap();
        assert_eq!(r.edit_accepted, Some(false));
        assert_eq!(r.reward, -0.025);
        assert_eq!(s.seq, seq);
        assert_eq!(oracle.cache_stats().1, misses, "no compile for a non-mutable delete");
    }

    #[test]
    fn boundary_navigation() {
        let oracle = Oracle::surrogate();
        let env = env(&oracle);
        let mut s = env.reset(&lex("a b\nc d ;\n\nx (")).unwrap();
        env.step(&mut s, Action::MoveRight).unwrap();
        assert_eq!(s.cursor, 1);
        let r = env.step(&mut s, Action::MoveRight).unwrap();
        assert_eq!((s.cursor, r.done, r.reward), (1, false, -0.005));
        env.step(&mut s, Action::MoveDown).unwrap();
        assert_eq!(s.seq.get(s.cursor).unwrap().lexeme, "c");
        env.step(&mut s, Action::MoveDown).unwrap();
        assert_eq!(s.seq.get(s.cursor).unwrap().lexeme, "x", "empty line skipped");
        env.step(&mut s, Action::MoveRight).unwrap();
        let r = env.step(&mut s, Action::MoveRight).unwrap();
        assert_eq!(r.termination, Termination::PastEnd);

        let mut s = env.reset(&lex("a b\nc (")).unwrap();
        env.step(&mut s, Action::MoveDown).unwrap();
        let r = env.step(&mut s, Action::MoveDown).unwrap();
        assert_eq!(r.termination, Termination::PastEnd);
    }

    #[test]
    fn out_of_steps() {
        let oracle = Oracle::surrogate();
        let cfg = EnvConfig {
            rewards: RewardSpec {
                max_episode_len: 3,
                ..RewardSpec::default()
            },
            ..EnvConfig::default()
        };
        let env = Env::new(&oracle, cfg);
        let mut s = env.reset(&lex("a b c d (")).unwrap();
        for _ in 0..2 {
            assert!(!env.step(&mut s, Action::Delete).unwrap().done);
        }
        let r = env.step(&mut s, Action::Delete).unwrap();
        assert_eq!(r.termination, Termination::OutOfSteps);
    }

    #[test]
    fn rejection_modes() {
        let oracle = Oracle::surrogate();
        // inserting `;` at statement level leaves the count unchanged
        let prog = lex("int main ( ) {\n x = 1\n}");
        let lenient = Env::new(&oracle, EnvConfig::default());
        let mut s = lenient.reset(&prog).unwrap();
        let r = lenient.step(&mut s, Action::Insert(MutableToken::Semi)).unwrap();
        assert_eq!(r.edit_accepted, Some(true));
        assert_eq!(r.errors_after, r.errors_before);

        let strict = Env::new(
            &oracle,
            EnvConfig {
                strict_rejection: true,
                ..EnvConfig::default()
            },
        );
        let mut s = strict.reset(&prog).unwrap();
        let r = strict.step(&mut s, Action::Insert(MutableToken::Semi)).unwrap();
        assert_eq!(r.edit_accepted, Some(false));
    }

    #[test]
    fn semiparen_swap_needs_exact_window() {
        let oracle = Oracle::surrogate();
        let env = env(&oracle);
        let mut s = env.reset(&lex("int main ( ) {\nf ( x ; )\n}")).unwrap();
        env.step(&mut s, Action::MoveDown).unwrap();
        let r = env.step(&mut s, Action::ReplaceSemiParenWithParenSemi).unwrap();
        assert_eq!(r.edit_accepted, Some(false));
        env.step(&mut s, Action::MoveRight).unwrap();
        env.step(&mut s, Action::MoveRight).unwrap();
        env.step(&mut s, Action::MoveRight).unwrap();
        let r = env.step(&mut s, Action::ReplaceSemiParenWithParenSemi).unwrap();
        assert_eq!(r.termination, Termination::Goal);
        assert_eq!(render(&s.seq), "int main ( ) {\nf ( x ) ;\n}");
    }

    #[test]
    fn trace_round_trip() {
        let oracle = Oracle::surrogate();
        let env = env(&oracle);
        let mut s = env.reset(&lex(FIGURE_PROGRAM)).unwrap();
        let mut recs = Vec::new();
        for (i, a) in [Action::MoveDown, Action::Delete, Action::MoveRight].into_iter().enumerate() {
            let before = s.clone();
            let r = env.step(&mut s, a).unwrap();
            recs.push(TraceRecord::new(i, &before, a, &r));
        }
        let mut buf = Vec::new();
        write_trace(&mut buf, &recs).unwrap();
        assert_eq!(read_trace(&buf[..]).unwrap(), recs);
    }
}
