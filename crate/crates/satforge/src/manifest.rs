//! Run manifests: a `[run]` table naming the command and its inputs,
//! followed by the fully resolved experiment configuration. Rerunning the
//! recorded command with the recorded configuration reproduces the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    TrainSi,
    TrainSat,
    EvalAsr,
    EvalSpk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub command: Command,
    pub experiment: String,
    pub corpus_dir: PathBuf,
    /// Run directory of the model this run starts from or evaluates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_run: Option<PathBuf>,
    /// Corpus generation: configuration and seed, before normalization.
    pub corpus_fingerprint: String,
    /// Features as trained on, including normalization.
    pub features_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_fingerprint: Option<String>,
    /// Embedding width consumed by the conditioning, after any reduction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub run: RunInfo,
    pub config: ExperimentConfig,
}

#[derive(Serialize)]
struct RunTable<'a> {
    run: &'a RunInfo,
}

pub fn hex(fp: u64) -> String {
    format!("{fp:016x}")
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let head = toml::to_string(&RunTable { run: &self.run }).expect("run table is representable");
        format!("{head}\n{}", self.config.to_text())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let run = table
            .remove("run")
            .ok_or_else(|| Error::Config("manifest has no [run] table".into()))?;
        let run: RunInfo = run
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let config: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(RunManifest { run, config })
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
        Self::parse(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text()).map_err(Error::io(&path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let mut config = ExperimentConfig::default();
        config.seeds.training = 3;
        let m = RunManifest {
            run: RunInfo {
                command: Command::TrainSat,
                experiment: "a,b".into(),
                corpus_dir: "data/c".into(),
                model_run: Some("runs/si".into()),
                corpus_fingerprint: hex(u64::MAX),
                features_fingerprint: hex(1),
                model_fingerprint: Some(hex(2)),
                embed_dim: Some(20),
            },
            config,
        };
        assert_eq!(RunManifest::parse(&m.to_text()).unwrap(), m);
        assert!(RunManifest::parse(&m.config.to_text()).is_err());
    }
}
