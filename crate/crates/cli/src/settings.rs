//! Tuning values merged from flags, an optional JSON config file and defaults,
//! plus the reproducibility stamp written next to every output.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Tuning flags. Every value is optional so that unset flags fall back to the config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tuning {
    /// Paths kept per sharing triple.
    #[arg(long, global = true)]
    pub k1: Option<usize>,
    /// Sharing triples selected.
    #[arg(long, global = true)]
    pub k2: Option<usize>,
    /// Relation signatures kept by the relation-only first stage.
    #[arg(long = "k-rel", global = true)]
    pub k_rel: Option<usize>,
    /// Rank relation signatures before path selection.
    #[arg(long = "relation-only", global = true, num_args = 0..=1, default_missing_value = "true")]
    pub relation_only: Option<bool>,
    /// Re-ask False claims without context.
    #[arg(long = "claim-recheck", global = true, num_args = 0..=1, default_missing_value = "true")]
    pub claim_recheck: Option<bool>,
    /// Path scorer: builtin-hash[:H], encoder:<file>, random[:seed] or an http(s) URL.
    #[arg(long, global = true)]
    pub provider: Option<String>,
    /// Scorer for relation-only sentences; defaults to --provider.
    #[arg(long = "relation-provider", global = true)]
    pub relation_provider: Option<String>,
    /// Language model: mock:<rules.json> or an http(s) URL.
    #[arg(long, global = true)]
    pub llm: Option<String>,
    /// Number of demonstrations taken from --few-shot (0, 4, 8 or 12).
    #[arg(long, global = true)]
    pub shots: Option<usize>,
    /// Line-delimited JSON demonstrations.
    #[arg(long = "few-shot", global = true)]
    pub few_shot: Option<PathBuf>,
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    #[arg(long = "learning-rate", global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Half-width of the uniform weight initialisation.
    #[arg(long = "init-scale", global = true)]
    pub init_scale: Option<f64>,
    /// Encoder output dimension.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Hashed feature dimension (power of two).
    #[arg(long = "hash-dim", global = true)]
    pub hash_dim: Option<usize>,
    /// Training pairs kept per question.
    #[arg(long = "pair-cap", global = true)]
    pub pair_cap: Option<usize>,
    /// Fraction of questions screened when building a training set.
    #[arg(long = "sample-fraction", global = true)]
    pub sample_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

impl Tuning {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Flags win over `config`.
    pub fn over(self, config: Tuning) -> Tuning {
        Tuning {
            k1: self.k1.or(config.k1),
            k2: self.k2.or(config.k2),
            k_rel: self.k_rel.or(config.k_rel),
            relation_only: self.relation_only.or(config.relation_only),
            claim_recheck: self.claim_recheck.or(config.claim_recheck),
            provider: self.provider.or(config.provider),
            relation_provider: self.relation_provider.or(config.relation_provider),
            llm: self.llm.or(config.llm),
            shots: self.shots.or(config.shots),
            few_shot: self.few_shot.or(config.few_shot),
            margin: self.margin.or(config.margin),
            learning_rate: self.learning_rate.or(config.learning_rate),
            epochs: self.epochs.or(config.epochs),
            init_scale: self.init_scale.or(config.init_scale),
            dim: self.dim.or(config.dim),
            hash_dim: self.hash_dim.or(config.hash_dim),
            pair_cap: self.pair_cap.or(config.pair_cap),
            sample_fraction: self.sample_fraction.or(config.sample_fraction),
            seed: self.seed.or(config.seed),
            jobs: self.jobs.or(config.jobs),
        }
    }

    pub fn resolve(self) -> Settings {
        let provider = self.provider.unwrap_or_else(|| "builtin-hash".to_owned());
        Settings {
            k1: self.k1.unwrap_or(4),
            k2: self.k2.unwrap_or(4),
            k_rel: self.k_rel.unwrap_or(16),
            relation_only: self.relation_only.unwrap_or(false),
            claim_recheck: self.claim_recheck.unwrap_or(false),
            relation_provider: self.relation_provider.unwrap_or_else(|| provider.clone()),
            provider,
            llm: self.llm,
            shots: self.shots.unwrap_or(0),
            few_shot: self.few_shot,
            margin: self.margin.unwrap_or(0.1),
            learning_rate: self.learning_rate.unwrap_or(0.1),
            epochs: self.epochs.unwrap_or(100),
            init_scale: self.init_scale.unwrap_or(0.5),
            dim: self.dim.unwrap_or(16),
            hash_dim: self.hash_dim.unwrap_or(kelp_core::embedding::DEFAULT_HASH_DIM),
            pair_cap: self.pair_cap.unwrap_or(kelp_core::trainset::DEFAULT_PAIR_CAP),
            sample_fraction: self.sample_fraction.unwrap_or(1.0),
            seed: self.seed.unwrap_or(0),
            jobs: self.jobs.unwrap_or(1).max(1),
        }
    }
}

/// Fully resolved run configuration. Field order is the serialisation order used for hashing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub k1: usize,
    pub k2: usize,
    pub k_rel: usize,
    pub relation_only: bool,
    pub claim_recheck: bool,
    pub provider: String,
    pub relation_provider: String,
    pub llm: Option<String>,
    pub shots: usize,
    pub few_shot: Option<PathBuf>,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_scale: f64,
    pub dim: usize,
    pub hash_dim: usize,
    pub pair_cap: usize,
    pub sample_fraction: f64,
    pub seed: u64,
    /// Thread count does not change outputs, so it stays out of the hash.
    #[serde(skip)]
    pub jobs: usize,
}

#[derive(Debug, Serialize)]
pub struct Stamp<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_hash: String,
    pub config: &'a Settings,
}

impl Settings {
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("settings serialise");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn stamp<'a>(&'a self, command: &'a str) -> Stamp<'a> {
        Stamp {
            tool: "kelp",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: self.hash(),
            config: self,
        }
    }

    /// One-line comment for text outputs that allow one.
    pub fn header_comment(&self, command: &str) -> String {
        format!("# kelp {} {command} config_hash={}", env!("CARGO_PKG_VERSION"), self.hash())
    }
}

pub fn meta_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    output.with_file_name(name)
}

pub fn write_meta(output: &Path, settings: &Settings, command: &str) -> Result<()> {
    let path = meta_path(output);
    let mut text = serde_json::to_string_pretty(&settings.stamp(command))?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_config_beat_defaults() {
        let flags = Tuning {
            k1: Some(2),
            ..Default::default()
        };
        let config: Tuning = serde_json::from_str(r#"{"k1": 3, "k2": 1, "margin": 0.3}"#).unwrap();
        let s = flags.over(config).resolve();
        assert_eq!((s.k1, s.k2, s.k_rel), (2, 1, 16));
        assert_eq!(s.margin, 0.3);
        assert_eq!(s.relation_provider, "builtin-hash");
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<Tuning>(r#"{"k3": 1}"#).is_err());
    }

    #[test]
    fn hash_ignores_jobs_only() {
        let a = Tuning::default().resolve();
        let b = Tuning { jobs: Some(8), ..Default::default() }.resolve();
        let c = Tuning { seed: Some(1), ..Default::default() }.resolve();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn meta_sits_next_to_the_output() {
        assert_eq!(meta_path(Path::new("out/sel.jsonl")), Path::new("out/sel.jsonl.meta.json"));
    }
}
