//! Syntax-error counting: an external compiler, or the built-in surrogate.

mod external;
mod surrogate;

use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use lru::LruCache;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::token::{lex, render, TokenSeq};

pub use surrogate::surrogate_check;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    pub messages: Vec<String>,
}

impl ErrorReport {
    /// Number of error messages; zero means the program compiles.
    pub fn count(&self) -> usize {
        self.messages.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    External,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub mode: OracleMode,
    /// Whitespace-separated command; `{src}` is replaced by the path of the
    /// temporary source file.
    pub command_template: String,
    pub timeout_secs: f64,
    pub cache_capacity: usize,
    /// Where temporary source files go; the system temp dir when unset.
    pub scratch_dir: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            mode: OracleMode::Surrogate,
            command_template: "gcc -fsyntax-only -x c {src}".into(),
            timeout_secs: 10.0,
            cache_capacity: 100_000,
            scratch_dir: None,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config(format!(
                "oracle timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        if self.mode == OracleMode::External && !self.command_template.contains("{src}") {
            return Err(Error::Config(
                "oracle command_template must contain {src}".into(),
            ));
        }
        Ok(())
    }
}

/// Counts compiler errors with a bounded LRU memo keyed by program text.
///
/// Shared by reference between actor-learners; lookups and inserts take a
/// short lock, compilations run outside it.
pub struct Oracle {
    cfg: OracleConfig,
    cache: Option<Mutex<LruCache<String, ErrorReport>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Oracle {
    pub fn new(cfg: OracleConfig) -> Result<Self> {
        cfg.validate()?;
        let cache = NonZeroUsize::new(cfg.cache_capacity).map(|n| Mutex::new(LruCache::new(n)));
        Ok(Oracle {
            cfg,
            cache,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn surrogate() -> Self {
        Oracle::new(OracleConfig::default()).expect("default config is valid")
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    /// `(hits, misses)` of the memo so far.
    pub fn cache_stats(&self) -> (u64, u64) {
        (
            self.hits.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
        )
    }

    pub fn count_errors(&self, source: &str) -> Result<ErrorReport> {
        self.memoized(source, || match self.cfg.mode {
            OracleMode::Surrogate => Ok(surrogate_check(&lex(source))),
            OracleMode::External => self.compile(source),
        })
    }

    /// Same as [`count_errors`](Self::count_errors) on the rendered text, but
    /// skips re-lexing in surrogate mode.
    pub fn check(&self, seq: &TokenSeq) -> Result<ErrorReport> {
        let source = render(seq);
        self.memoized(&source, || match self.cfg.mode {
            OracleMode::Surrogate => Ok(surrogate_check(seq)),
            OracleMode::External => self.compile(&source),
        })
    }

    fn memoized(
        &self,
        source: &str,
        compute: impl FnOnce() -> Result<ErrorReport>,
    ) -> Result<ErrorReport> {
        let Some(cache) = &self.cache else {
            return compute();
        };
        if let Some(hit) = cache.lock().unwrap().get(source) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let report = compute()?;
        cache
            .lock()
            .unwrap()
            .put(source.to_string(), report.clone());
        Ok(report)
    }

    fn compile(&self, source: &str) -> Result<ErrorReport> {
        external::compile(
            source,
            &self.cfg.command_template,
            Duration::from_secs_f64(self.cfg.timeout_secs),
            self.cfg.scratch_dir.as_deref(),
        )
    }
}

impl std::fmt::Debug for Oracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Oracle")
            .field("cfg", &self.cfg)
            .field("stats", &self.cache_stats())
            .finish()
    }
}
