use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::EpisodeRecord;
use crate::error::Result;

/// Training statistics over a window of consecutive episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    /// Episodes finished before and including this window.
    pub episodes_total: usize,
    pub episodes: usize,
    pub demo_episodes: usize,
    /// Share of the initial error messages gone at episode end.
    pub resolved_pct: f64,
    /// Share of episodes that reached zero errors.
    pub fixed_pct: f64,
    pub mean_length: f64,
    pub mean_edits: f64,
    /// 100 × mean summed episode reward.
    pub scaled_reward: f64,
    pub rejected_edits: usize,
}

impl LogRow {
    /// Summarizes `window`, which follows `before` earlier episodes.
    pub fn summarize(window: &[EpisodeRecord], before: usize) -> LogRow {
        let n = window.len().max(1) as f64;
        let initial: usize = window.iter().map(|r| r.initial_errors).sum();
        let resolved: usize = window.iter().map(EpisodeRecord::resolved).sum();
        LogRow {
            epoch: window.last().map_or(0, |r| r.epoch),
            episodes_total: before,
            episodes: window.len(),
            demo_episodes: window.iter().filter(|r| r.demo).count(),
            resolved_pct: if initial == 0 {
                0.0
            } else {
                100.0 * resolved as f64 / initial as f64
            },
            fixed_pct: 100.0 * window.iter().filter(|r| r.final_errors == 0).count() as f64 / n,
            mean_length: window.iter().map(|r| r.tally.steps() as f64).sum::<f64>() / n,
            mean_edits: window.iter().map(|r| r.tally.edits() as f64).sum::<f64>() / n,
            scaled_reward: 100.0 * window.iter().map(|r| r.reward).sum::<f64>() / n,
            rejected_edits: window.iter().map(|r| r.tally.rejected_edits).sum(),
        }
    }
}

impl fmt::Display for LogRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} | episodes {} | resolved {:.1}% | fixed {:.1}% | len {:.1} | edits {:.2} | reward×100 {:.1} | rejected {}",
            self.epoch,
            self.episodes_total,
            self.resolved_pct,
            self.fixed_pct,
            self.mean_length,
            self.mean_edits,
            self.scaled_reward,
            self.rejected_edits
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub episodes: Vec<EpisodeRecord>,
}

impl TrainLog {
    /// Windows of `log_every` episodes (0: whole epochs), never spanning an
    /// epoch boundary. Episodes are grouped by the epoch they were drawn in,
    /// not the order they finished.
    pub fn from_records(mut records: Vec<EpisodeRecord>, log_every: usize) -> TrainLog {
        records.sort_by_key(|r| r.epoch);
        let mut rows = Vec::new();
        let mut start = 0;
        for i in 1..=records.len() {
            let boundary = i == records.len()
                || records[i].epoch != records[i - 1].epoch
                || (log_every > 0 && i - start == log_every);
            if boundary {
                rows.push(LogRow::summarize(&records[start..i], i));
                start = i;
            }
        }
        TrainLog {
            rows,
            episodes: records,
        }
    }

    /// One row per epoch.
    pub fn per_epoch(&self) -> Vec<LogRow> {
        TrainLog::from_records(self.episodes.clone(), 0).rows
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EpisodeTally, Termination};

    fn rec(epoch: usize, initial: usize, fin: usize, reward: f64) -> EpisodeRecord {
        EpisodeRecord {
            program_id: "p".into(),
            epoch,
            demo: false,
            initial_errors: initial,
            final_errors: fin,
            reward,
            termination: Termination::PastEnd,
            tally: EpisodeTally {
                navigation_steps: 10,
                ..EpisodeTally::default()
            },
        }
    }

    #[test]
    fn windows_and_scaling() {
        let records = vec![rec(0, 2, 1, 0.5), rec(0, 2, 2, -0.1), rec(1, 1, 0, 1.0)];
        let log = TrainLog::from_records(records, 0);
        assert_eq!(log.rows.len(), 2);
        assert!((log.rows[0].resolved_pct - 25.0).abs() < 1e-12);
        assert!((log.rows[0].scaled_reward - 20.0).abs() < 1e-12);
        assert_eq!(log.rows[1].episodes_total, 3);
        assert_eq!(log.rows[1].fixed_pct, 100.0);

        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,episodes_total,episodes,"));
        assert_eq!(text.lines().count(), 3);
    }
}
