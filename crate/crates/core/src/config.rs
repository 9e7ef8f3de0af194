//! The effective configuration of a run: training, environment, oracle and
//! file locations, layered as defaults < config file < environment < flags.
//!
//! Layers are merged as TOML tables and only then deserialized, so a key that
//! no setting knows about is an error wherever it comes from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::oracle::OracleConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Vocabulary file; the built-in one when unset.
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub oracle: OracleConfig,
    pub paths: Paths,
}

/// Prefix of the environment variables that override settings.
pub const ENV_PREFIX: &str = "TOKENFIX_";

/// Settings that have a dedicated flag and environment variable, as
/// `(flag, key path)`. The variable is the flag upper-cased with `-` turned
/// into `_` behind [`ENV_PREFIX`], e.g. `TOKENFIX_EDIT_PENALTY`.
pub const SHORTCUTS: &[(&str, &str)] = &[
    ("seed", "train.seed"),
    ("serial", "train.serial"),
    ("demo-fraction", "train.demo_fraction"),
    ("edit-penalty", "train.env.rewards.edit_penalty"),
    ("learning-rate", "train.learning_rate"),
    ("learners", "train.n_actor_learners"),
    ("epochs", "train.epochs"),
    ("max-episodes", "train.max_episodes"),
    ("precision", "train.precision"),
    ("log-every", "train.log_every"),
    ("checkpoint-every", "train.checkpoint_every"),
    ("checkpoint-dir", "train.checkpoint_dir"),
    ("oracle", "oracle.mode"),
    ("oracle-command", "oracle.command_template"),
    ("oracle-timeout", "oracle.timeout_secs"),
    ("vocab", "paths.vocab"),
];

pub fn env_var_for(flag: &str) -> String {
    format!("{ENV_PREFIX}{}", flag.to_uppercase().replace('-', "_"))
}

/// A layer of `key.path = value` overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides(Vec<(String, String)>);

impl Overrides {
    pub fn new() -> Self {
        Overrides::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.0.push((key.into(), value.into()));
    }

    /// Parses `key.path=value`.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    /// The shortcut variables present in `vars`.
    pub fn from_env(vars: impl IntoIterator<Item = (String, String)>) -> Self {
        let vars: Vec<(String, String)> = vars.into_iter().collect();
        let mut out = Overrides::new();
        for (flag, key) in SHORTCUTS {
            let name = env_var_for(flag);
            if let Some((_, v)) = vars.iter().find(|(k, _)| *k == name) {
                out.set(*key, v.clone());
            }
        }
        out
    }

    fn apply(&self, root: &mut Table) -> Result<()> {
        for (key, raw) in &self.0 {
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| {
                Error::Config(format!("empty key in `{key}`"))
            })?;
            let mut table = &mut *root;
            for part in parts {
                let entry = table
                    .entry(part.to_string())
                    .or_insert_with(|| Value::Table(Table::new()));
                table = entry
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
            }
            table.insert(leaf.to_string(), parse_scalar(raw));
        }
        Ok(())
    }
}

/// A TOML literal if `raw` is one, otherwise the string itself.
fn parse_scalar(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl CliConfig {
    /// Builds the effective configuration.
    pub fn resolve(file: Option<&Path>, env: &Overrides, flags: &Overrides) -> Result<CliConfig> {
        let mut root = Table::try_from(CliConfig::default())
            .map_err(|e| Error::Config(format!("defaults: {e}")))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            let table: Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut root, table);
        }
        env.apply(&mut root)?;
        flags.apply(&mut root)?;
        let cfg: CliConfig = Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        cfg.oracle.validate()?;
        Ok(cfg)
    }

    /// TOML that [`CliConfig::resolve`] turns back into `self`.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn precedence() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "[train]\nseed = 5\nepochs = 3\n[train.env.rewards]\nedit_penalty = -0.5").unwrap();
        let env = Overrides::from_env([
            ("TOKENFIX_SEED".to_string(), "6".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ]);
        let mut flags = Overrides::new();
        flags.set("train.env.rewards.edit_penalty", "0");
        let cfg = CliConfig::resolve(Some(file.path()), &env, &flags).unwrap();
        assert_eq!(cfg.train.seed, 6);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.env.rewards.edit_penalty, 0.0);
        assert_eq!(cfg.train.gamma, 0.99);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut flags = Overrides::new();
        flags.set("train.learnig_rate", "0.1");
        assert!(CliConfig::resolve(None, &Overrides::new(), &flags).is_err());
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "[surrogate]\nx = 1").unwrap();
        assert!(CliConfig::resolve(Some(file.path()), &Overrides::new(), &Overrides::new()).is_err());
    }

    #[test]
    fn printed_config_reproduces_itself() {
        let mut flags = Overrides::new();
        flags.set_assignment("train.max_episodes=1234").unwrap();
        flags.set("oracle.mode", "external");
        flags.set("train.checkpoint_dir", "/tmp/ckpt");
        let cfg = CliConfig::resolve(None, &Overrides::new(), &flags).unwrap();
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(cfg.to_toml().unwrap().as_bytes()).unwrap();
        let again = CliConfig::resolve(Some(file.path()), &Overrides::new(), &Overrides::new()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.train.max_episodes, Some(1234));
    }

    #[test]
    fn invalid_values_rejected() {
        let mut flags = Overrides::new();
        flags.set("train.demo_fraction", "2.0");
        assert!(CliConfig::resolve(None, &Overrides::new(), &flags).is_err());
        assert!(Overrides::new().set_assignment("no equals sign").is_err());
    }
}
