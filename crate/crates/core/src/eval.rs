//! Repairing programs with a trained policy, corpus metrics, and state
//! embeddings.

use std::fmt;
use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::demos::generate_demonstration;
use crate::env::{Action, Env, EpisodeTally, State, Termination, TraceRecord};
use crate::error::{Error, Result};
use crate::net::{forward, ModelParams, Scalar};
use crate::par::par_map;
use crate::token::{render, TokenSeq};
use crate::vocab::Vocabulary;

/// Ranks actions in a state.
pub trait Policy: Sync {
    /// Probabilities indexed like [`Action::ALL`].
    fn distribution(&self, state: &State) -> Result<Vec<f64>>;
}

/// The trained network as a policy.
pub struct NetPolicy<'a, T> {
    pub params: &'a ModelParams<T>,
    pub vocab: &'a Vocabulary,
}

impl<T: Scalar> Policy for NetPolicy<'_, T> {
    fn distribution(&self, state: &State) -> Result<Vec<f64>> {
        let ids = self.vocab.encode_state(&state.seq, state.cursor)?;
        let fwd = forward(self.params, &ids)?;
        Ok(fwd.policy().iter().map(|p| p.as_f64()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Complete,
    Partial,
    Unfixed,
}

impl Outcome {
    pub fn classify(errors_before: usize, errors_after: usize) -> Outcome {
        if errors_after == 0 {
            Outcome::Complete
        } else if errors_after < errors_before {
            Outcome::Partial
        } else {
            Outcome::Unfixed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixResult {
    pub program_id: String,
    pub final_text: String,
    pub trace: Vec<TraceRecord>,
    pub errors_before: usize,
    pub errors_after: usize,
    pub outcome: Outcome,
    pub termination: Termination,
    pub tally: EpisodeTally,
}

impl FixResult {
    pub fn resolved(&self) -> usize {
        self.errors_before.saturating_sub(self.errors_after)
    }

    pub fn actions(&self) -> Vec<Action> {
        self.trace.iter().map(|r| r.action.0).collect()
    }
}

/// Attempts allowed in one state: every action once.
pub const MAX_ATTEMPTS: usize = Action::ALL.len();

/// Greedy repair. In each state the most probable action is tried first; a
/// rejected edit falls through to the next most probable action for the same
/// state, so no action is tried twice there.
pub fn fix_program(
    policy: &impl Policy,
    env: &Env<'_>,
    program_id: &str,
    program: &TokenSeq,
) -> Result<FixResult> {
    let mut state = env.reset(program).map_err(|e| match e {
        Error::InvalidEpisode(why) => Error::contract(format!("cannot repair {program_id}: {why}")),
        e => e,
    })?;
    let errors_before = state.error_count;
    let mut trace = Vec::new();
    let mut tally = EpisodeTally::default();
    while !state.is_terminal() {
        let probs = policy.distribution(&state)?;
        if probs.len() != Action::ALL.len() {
            return Err(Error::contract(format!(
                "policy ranked {} actions, expected {}",
                probs.len(),
                Action::ALL.len()
            )));
        }
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
        for &a in order.iter().take(MAX_ATTEMPTS) {
            let action = Action::ALL[a];
            let before = state.clone();
            let res = env.step(&mut state, action)?;
            tally.record(action, &res);
            trace.push(TraceRecord::new(trace.len() + 1, &before, action, &res));
            if res.done || res.edit_accepted != Some(false) {
                break;
            }
        }
    }
    Ok(FixResult {
        program_id: program_id.to_string(),
        final_text: render(&state.seq),
        trace,
        errors_before,
        errors_after: state.error_count,
        outcome: Outcome::classify(errors_before, state.error_count),
        termination: state.termination,
        tally,
    })
}

/// Re-runs a recorded action sequence from the start of `program`.
pub fn replay(env: &Env<'_>, program_id: &str, program: &TokenSeq, actions: &[Action]) -> Result<FixResult> {
    let mut state = env.reset(program)?;
    let errors_before = state.error_count;
    let mut trace = Vec::with_capacity(actions.len());
    let mut tally = EpisodeTally::default();
    for (i, &action) in actions.iter().enumerate() {
        let before = state.clone();
        let res = env.step(&mut state, action)?;
        tally.record(action, &res);
        trace.push(TraceRecord::new(i + 1, &before, action, &res));
    }
    Ok(FixResult {
        program_id: program_id.to_string(),
        final_text: render(&state.seq),
        trace,
        errors_before,
        errors_after: state.error_count,
        outcome: Outcome::classify(errors_before, state.error_count),
        termination: state.termination,
        tally,
    })
}

/// Corpus-level repair statistics. Percentages are of all programs, or of
/// all error messages for `msgs_resolved_pct`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_programs: usize,
    pub n_error_msgs: usize,
    pub completely_fixed: usize,
    pub completely_fixed_pct: f64,
    pub partially_fixed: usize,
    pub partially_fixed_pct: f64,
    pub msgs_resolved: usize,
    pub msgs_resolved_pct: f64,
    pub mean_episode_length: f64,
    pub mean_edits: f64,
    pub mean_rejected_edits: f64,
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

impl Metrics {
    pub fn from_results(results: &[FixResult]) -> Metrics {
        let n = results.len();
        let count = |o: Outcome| results.iter().filter(|r| r.outcome == o).count();
        let (complete, partial) = (count(Outcome::Complete), count(Outcome::Partial));
        let n_msgs: usize = results.iter().map(|r| r.errors_before).sum();
        let resolved: usize = results.iter().map(FixResult::resolved).sum();
        let mean = |f: &dyn Fn(&FixResult) -> usize| {
            if n == 0 {
                0.0
            } else {
                results.iter().map(f).sum::<usize>() as f64 / n as f64
            }
        };
        Metrics {
            n_programs: n,
            n_error_msgs: n_msgs,
            completely_fixed: complete,
            completely_fixed_pct: pct(complete, n),
            partially_fixed: partial,
            partially_fixed_pct: pct(partial, n),
            msgs_resolved: resolved,
            msgs_resolved_pct: pct(resolved, n_msgs),
            mean_episode_length: mean(&|r| r.tally.steps()),
            mean_edits: mean(&|r| r.tally.edits()),
            mean_rejected_edits: mean(&|r| r.tally.rejected_edits),
        }
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.serialize(self)?;
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "programs              {:>8}", self.n_programs)?;
        writeln!(f, "error messages        {:>8}", self.n_error_msgs)?;
        writeln!(
            f,
            "completely fixed      {:>8} ({:.1}%)",
            self.completely_fixed, self.completely_fixed_pct
        )?;
        writeln!(
            f,
            "partially fixed       {:>8} ({:.1}%)",
            self.partially_fixed, self.partially_fixed_pct
        )?;
        writeln!(
            f,
            "messages resolved     {:>8} ({:.1}%)",
            self.msgs_resolved, self.msgs_resolved_pct
        )?;
        writeln!(f, "mean episode length   {:>8.2}", self.mean_episode_length)?;
        writeln!(f, "mean edits            {:>8.2}", self.mean_edits)?;
        write!(f, "mean rejected edits   {:>8.2}", self.mean_rejected_edits)
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub results: Vec<FixResult>,
    /// Programs left out because they already compile.
    pub skipped: Vec<String>,
}

/// Repairs every program (in parallel where available) and aggregates.
pub fn evaluate_corpus(
    policy: &impl Policy,
    env: &Env<'_>,
    programs: &[(String, TokenSeq)],
) -> Result<Evaluation> {
    if programs.is_empty() {
        return Err(Error::contract("evaluation corpus is empty"));
    }
    let outcomes = par_map(programs, |(id, p)| -> Result<Option<FixResult>> {
        if env.oracle().check(p)?.count() == 0 {
            return Ok(None);
        }
        fix_program(policy, env, id, p).map(Some)
    });
    let mut results = Vec::with_capacity(programs.len());
    let mut skipped = Vec::new();
    for ((id, _), out) in programs.iter().zip(outcomes) {
        match out? {
            Some(r) => results.push(r),
            None => {
                log::warn!("{id} already compiles; left out of the metrics");
                skipped.push(id.clone());
            }
        }
    }
    Ok(Evaluation {
        metrics: Metrics::from_results(&results),
        results,
        skipped,
    })
}

/// Stores results, traces included, one JSON object per line.
pub fn write_results(results: &[FixResult], mut out: impl Write) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_results(input: impl std::io::BufRead) -> Result<Vec<FixResult>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::DataCorruption(format!("result line {}: {e}", n + 1))
        })?);
    }
    Ok(out)
}

/// The three states probed per single-error program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeLabel {
    /// Cursor on the first token of the line before the erroneous one.
    PrecedingLine,
    /// Cursor on the first token of the erroneous line.
    ErrorLine,
    /// Program repaired, cursor where the repair happened.
    Fixed,
}

impl ProbeLabel {
    pub const ALL: [ProbeLabel; 3] = [ProbeLabel::PrecedingLine, ProbeLabel::ErrorLine, ProbeLabel::Fixed];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeLabel::PrecedingLine => "preceding_line",
            ProbeLabel::ErrorLine => "error_line",
            ProbeLabel::Fixed => "fixed",
        }
    }
}

/// Probe states for `broken`, located through its demonstration. The
/// erroneous line is the one holding the cursor at the first demonstrated
/// edit. `None` when the program does not have exactly one error, has no
/// demonstration, or the error sits on its first line.
pub fn probe_states(
    env: &Env<'_>,
    program_id: &str,
    broken: &TokenSeq,
    fixed: &TokenSeq,
) -> Result<Option<[(ProbeLabel, TokenSeq, usize); 3]>> {
    if env.oracle().check(broken)?.count() != 1 {
        return Ok(None);
    }
    let Some(demo) = generate_demonstration(env, program_id, broken, fixed)?.demo() else {
        return Ok(None);
    };
    let mut state = env.reset(broken)?;
    for &a in &demo.actions {
        if a.is_edit() {
            break;
        }
        env.step(&mut state, a)?;
    }
    let edit_at = state.cursor;
    let line = state.cursor_line();
    let first_of = |l: u32| (0..broken.len()).find(|&i| broken.get(i).is_some_and(|t| t.line == l));
    let Some(line_start) = first_of(line) else {
        return Ok(None);
    };
    if line_start == 0 {
        return Ok(None);
    }
    let prev_line = broken.get(line_start - 1).map_or(0, |t| t.line);
    let Some(prev_start) = first_of(prev_line) else {
        return Ok(None);
    };
    let fixed_cursor = edit_at.min(demo.expected_final.len().saturating_sub(1));
    Ok(Some([
        (ProbeLabel::PrecedingLine, broken.clone(), prev_start),
        (ProbeLabel::ErrorLine, broken.clone(), line_start),
        (ProbeLabel::Fixed, demo.expected_final, fixed_cursor),
    ]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub program_id: String,
    pub label: ProbeLabel,
    pub embedding: Vec<f64>,
}

/// Principal components of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-length directions, largest variance first.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl Pca {
    /// The top `k` components of `points` from the eigendecomposition of
    /// their covariance matrix.
    pub fn fit(points: &[Vec<f64>], k: usize) -> Result<Pca> {
        let n = points.len();
        let d = points.first().map_or(0, Vec::len);
        if n == 0 || d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::contract("PCA needs equally sized, non-empty points"));
        }
        if k > d {
            return Err(Error::contract(format!("{k} components from {d} dimensions")));
        }
        let mut mean = vec![0.0; d];
        for p in points {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x / n as f64;
            }
        }
        let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        let cov = (centered.transpose() * &centered) / denom;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let components = order[..k]
            .iter()
            .map(|&c| eig.eigenvectors.column(c).iter().copied().collect())
            .collect();
        let variances = order[..k].iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect();
        Ok(Pca {
            mean,
            components,
            variances,
        })
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }
}

pub struct EmbeddingExport {
    pub rows: Vec<EmbeddingRow>,
    pub pca: Pca,
    /// Programs without usable probe states.
    pub skipped: usize,
}

impl EmbeddingExport {
    /// `x,y,z,label`, one line per probe state.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "z", "label"])?;
        for row in &self.rows {
            let p = self.pca.project(&row.embedding);
            w.write_record([
                p[0].to_string(),
                p[1].to_string(),
                p[2].to_string(),
                row.label.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Embeds the probe states of every single-error program and fits a
/// 3-component PCA to them.
pub fn export_embeddings<T: Scalar>(
    params: &ModelParams<T>,
    vocab: &Vocabulary,
    env: &Env<'_>,
    programs: &[(String, TokenSeq, TokenSeq)],
) -> Result<EmbeddingExport> {
    let per_program = par_map(programs, |(id, broken, fixed)| -> Result<Option<Vec<EmbeddingRow>>> {
        let Some(probes) = probe_states(env, id, broken, fixed)? else {
            return Ok(None);
        };
        probes
            .into_iter()
            .map(|(label, seq, cursor)| {
                let fwd = forward(params, &vocab.encode_state(&seq, cursor)?)?;
                Ok(EmbeddingRow {
                    program_id: id.clone(),
                    label,
                    embedding: fwd.embedding().iter().map(|x| x.as_f64()).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    });
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (out, (id, _, _)) in per_program.into_iter().zip(programs) {
        match out? {
            Some(r) => rows.extend(r),
            None => {
                log::info!("{id}: no single-error probe states; skipped");
                skipped += 1;
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::contract("no program yielded probe states"));
    }
    let points: Vec<Vec<f64>> = rows.iter().map(|r| r.embedding.clone()).collect();
    let pca = Pca::fit(&points, 3)?;
    Ok(EmbeddingExport { rows, pca, skipped })
}

/// Reads an `x,y,z,label` file back.
pub fn read_embedding_csv(input: impl Read) -> Result<Vec<([f64; 3], String)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::DataCorruption(format!("bad coordinate in {rec:?}")))
        };
        let label = rec
            .get(3)
            .ok_or_else(|| Error::DataCorruption(format!("missing label in {rec:?}")))?;
        out.push(([num(0)?, num(1)?, num(2)?], label.to_string()));
    }
    Ok(out)
}

/// Mean silhouette coefficient under Euclidean distance. Points alone in
/// their cluster score 0.
pub fn silhouette<P: AsRef<[f64]>>(points: &[P], labels: &[usize]) -> f64 {
    assert_eq!(points.len(), labels.len());
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let k = labels.iter().copied().max().unwrap_or(0) + 1;
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sum[labels[j]] += dist(points[i].as_ref(), points[j].as_ref());
                count[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if count[own] == 0 {
            continue;
        }
        let a = sum[own] / count[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && count[c] > 0)
            .map(|c| sum[c] / count[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() && a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::fixtures::{FIGURE_PROGRAM, FIGURE_PROGRAM_FIXED};
    use crate::net::NetShape;
    use crate::oracle::Oracle;
    use crate::token::lex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Follows a fixed action list; anything else ranks by index.
    struct Scripted(Vec<Action>);

    impl Policy for Scripted {
        fn distribution(&self, state: &State) -> Result<Vec<f64>> {
            let mut p = vec![0.001; Action::ALL.len()];
            if let Some(a) = self.0.get(state.steps_taken) {
                p[a.index()] = 1.0;
            }
            Ok(p)
        }
    }

    fn result(before: usize, after: usize) -> FixResult {
        FixResult {
            program_id: "p".into(),
            final_text: String::new(),
            trace: vec![],
            errors_before: before,
            errors_after: after,
            outcome: Outcome::classify(before, after),
            termination: Termination::PastEnd,
            tally: EpisodeTally::default(),
        }
    }

    #[test]
    fn metric_definitions() {
        let m = Metrics::from_results(&[result(2, 0), result(3, 1)]);
        assert_eq!((m.completely_fixed, m.partially_fixed, m.msgs_resolved), (1, 1, 4));
        assert_eq!(m.completely_fixed_pct, 50.0);
        assert_eq!(m.partially_fixed_pct, 50.0);
        assert!((m.msgs_resolved_pct - 80.0).abs() < 1e-12);
        let none = Metrics::from_results(&[result(2, 2), result(1, 1)]);
        assert_eq!((none.completely_fixed, none.partially_fixed, none.msgs_resolved), (0, 0, 0));
        assert_eq!(none.msgs_resolved_pct, 0.0);
        assert_eq!(Outcome::classify(3, 1), Outcome::Partial);
    }

    #[test]
    fn scripted_figure_fix_and_replay() {
        let oracle = Oracle::surrogate();
        let env = Env::new(&oracle, EnvConfig::default());
        let p = lex(FIGURE_PROGRAM);
        let demo = generate_demonstration(&env, "fig", &p, &lex(FIGURE_PROGRAM_FIXED))
            .unwrap()
            .demo()
            .unwrap();
        let r = fix_program(&Scripted(demo.actions.clone()), &env, "fig", &p).unwrap();
        assert_eq!(r.outcome, Outcome::Complete);
        let edits: Vec<Action> = r.actions().into_iter().filter(|a| a.is_edit()).collect();
        assert_eq!(edits, vec![Action::ReplaceSemiWithComma, Action::Insert(crate::env::MutableToken::RBrace)]);
        let again = replay(&env, "fig", &p, &r.actions()).unwrap();
        assert_eq!(again, r);

        let mut buf = Vec::new();
        write_results(&[r.clone()], &mut buf).unwrap();
        assert_eq!(read_results(&buf[..]).unwrap(), vec![r]);
    }

    #[test]
    fn untrained_policy_terminates_and_never_worsens() {
        let oracle = Oracle::surrogate();
        let env = Env::new(&oracle, EnvConfig::default());
        let vocab = Vocabulary::builtin();
        let params: ModelParams<f32> =
            ModelParams::init(NetShape::paper(vocab.len()), &mut ChaCha8Rng::seed_from_u64(3));
        let policy = NetPolicy { params: &params, vocab: &vocab };
        let progs: Vec<(String, TokenSeq)> = crate::corpus::ToyGenerator::new(2)
            .seeded_corpus(0..5, 2, 1..=2)
            .unwrap()
            .into_iter()
            .map(|r| (r.id, lex(&r.source)))
            .collect();
        let ev = evaluate_corpus(&policy, &env, &progs).unwrap();
        assert_eq!(ev.metrics.n_programs + ev.skipped.len(), progs.len());
        for r in &ev.results {
            assert!(r.errors_after <= r.errors_before);
            assert!(r.trace.len() <= env.config().rewards.max_episode_len);
            // never the same action twice in one state
            let mut seen = std::collections::HashSet::new();
            for t in &r.trace {
                if t.accepted == Some(false) {
                    assert!(seen.insert((t.state_hash, t.action.0.index())));
                }
            }
        }
        // identical inputs, identical results
        let ev2 = evaluate_corpus(&policy, &env, &progs).unwrap();
        assert_eq!(ev.metrics, ev2.metrics);
        assert!(evaluate_corpus(&policy, &env, &[]).is_err());
    }

    #[test]
    fn pca_of_one_hot_points() {
        let pts = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let pca = Pca::fit(&pts, 3).unwrap();
        for (i, a) in pca.components.iter().enumerate() {
            for (j, b) in pca.components.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-9);
            }
        }
        assert!(pca.variances.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn silhouette_extremes() {
        let pts = [[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]];
        assert!(silhouette(&pts, &[0, 0, 1, 1]) > 0.9);
        assert!(silhouette(&pts, &[0, 1, 0, 1]) < 0.0);
    }

    #[test]
    fn embedding_export_round_trip() {
        let oracle = Oracle::surrogate();
        let env = Env::new(&oracle, EnvConfig::default());
        let vocab = Vocabulary::builtin();
        let params: ModelParams<f64> =
            ModelParams::init(NetShape::paper(vocab.len()), &mut ChaCha8Rng::seed_from_u64(4));
        let progs: Vec<(String, TokenSeq, TokenSeq)> = crate::corpus::ToyGenerator::new(5)
            .seeded_corpus(0..6, 2, 1..=1)
            .unwrap()
            .into_iter()
            .map(|r| (r.id, lex(&r.source), lex(r.fixed_source.as_ref().unwrap())))
            .collect();
        let mut doubled = progs.clone();
        doubled.push(progs[0].clone());
        let ex = export_embeddings(&params, &vocab, &env, &doubled).unwrap();
        assert_eq!(ex.rows.len() % 3, 0);
        assert!(ex.rows.len() >= 3 * 5);
        let first: Vec<_> = ex.rows.iter().filter(|r| r.program_id == progs[0].0).collect();
        if first.len() == 6 {
            assert_eq!(first[0], first[3]);
        }
        let mut buf = Vec::new();
        ex.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("x,y,z,label\n"));
        let back = read_embedding_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), ex.rows.len());
    }
}
