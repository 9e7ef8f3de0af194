//! Program corpora: the on-disk record format, cross-validation folds by
//! problem, and a synthetic source of (broken, fixed) pairs.

mod seed;
mod toy;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use seed::{seed_errors, FaultKind, SeededFault};
pub use toy::ToyGenerator;

/// One program. Stored as a single JSON object per line; JSON string
/// escaping takes care of newlines inside `source`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub problem_id: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_errors: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<u8>,
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        if rec.fold.is_some_and(|f| f > 4) {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: n + 1,
                msg: format!("fold {} outside 0..=4", rec.fold.unwrap()),
            });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn save_corpus(records: &[CorpusRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut out, rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Assigns whole problems to folds so that no problem straddles two folds.
/// Returns problem id -> fold.
pub fn split_folds(
    records: &[CorpusRecord],
    n_folds: usize,
    seed: u64,
) -> Result<BTreeMap<String, u8>> {
    let problems: BTreeSet<&str> = records.iter().map(|r| r.problem_id.as_str()).collect();
    if n_folds == 0 || problems.len() < n_folds {
        return Err(Error::contract(format!(
            "{} problems cannot fill {n_folds} folds",
            problems.len()
        )));
    }
    let mut problems: Vec<&str> = problems.into_iter().collect();
    problems.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(problems
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p.to_string(), (i % n_folds) as u8))
        .collect())
}

/// Writes the fold of each record's problem into the record.
pub fn assign_folds(records: &mut [CorpusRecord], folds: &BTreeMap<String, u8>) {
    for rec in records {
        rec.fold = folds.get(&rec.problem_id).copied();
    }
}

/// `(train, test)` for a held-out fold.
pub fn fold_split(
    records: &[CorpusRecord],
    held_out: u8,
) -> (Vec<CorpusRecord>, Vec<CorpusRecord>) {
    records
        .iter()
        .cloned()
        .partition(|r| r.fold != Some(held_out))
}
