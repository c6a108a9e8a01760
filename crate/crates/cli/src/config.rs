//! Run configuration: a versioned TOML schema with strict key checking.
//! A handful of flags can override the file; the resolved result is
//! written next to the run's outputs so every artifact is traceable to
//! the exact configuration that produced it.

use crate::error::{CliError, Result};
use attwarp_core::attention::ArchConfig;
use attwarp_core::encoder::EncoderConfig;
use attwarp_core::train::{ContrastiveConfig, PluginConfig, PretrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Schema version this binary reads and writes.
pub const CONFIG_VERSION: u32 = 1;

/// Environment variable naming the default parent of run directories.
pub const OUT_DIR_ENV: &str = "ATTWARP_OUT_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    /// Output directory; when absent, `$ATTWARP_OUT_DIR/<name>` or
    /// `runs/<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub contrastive: ContrastiveSection,
    #[serde(default)]
    pub plugin: PluginSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset file: UCR TSV or multivariate JSON by extension.
    pub path: PathBuf,
    /// Explicit validation file; when absent the main file is split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_path: Option<PathBuf>,
    /// Explicit held-out test file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_true")]
    pub stratified: bool,
    #[serde(default)]
    pub normalize: Normalize,
    /// Resample every series to this length; 0 keeps lengths as-is.
    #[serde(default)]
    pub resample: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalize {
    #[default]
    None,
    /// Per-sample, per-channel standardization (UCR convention).
    Zscore,
    /// Dataset-pooled per-channel standardization.
    ZscorePooled,
    /// Per-sample, per-channel map onto [-1, 1].
    Range,
}

/// Attention architecture; the channel dimension comes from the data
/// (or the encoder) at run time, so it is not part of the file schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub levels: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for ArchSection {
    fn default() -> Self {
        let d = ArchConfig::desk_default(1);
        Self {
            levels: d.levels,
            channels: d.channels,
            kernel: d.kernel,
        }
    }
}

impl ArchSection {
    pub fn to_arch(&self, dim: usize) -> ArchConfig {
        ArchConfig {
            dim,
            levels: self.levels,
            channels: self.channels.clone(),
            kernel: self.kernel,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::desk_default(1);
        Self {
            channels: d.channels,
            kernel: d.kernel,
        }
    }
}

impl EncoderSection {
    pub fn to_config(&self, dim: usize) -> EncoderConfig {
        EncoderConfig {
            dim,
            channels: self.channels.clone(),
            kernel: self.kernel,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub batch_size: usize,
    pub max_iters: usize,
    pub eval_every: usize,
    pub lr: f64,
    pub val_pairs: usize,
    /// Warping-window width for the mimic targets; 0 means unlimited.
    pub window: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let d = PretrainConfig::default();
        Self {
            batch_size: d.batch_size,
            max_iters: d.max_iters,
            eval_every: d.eval_every,
            lr: d.lr,
            val_pairs: d.val_pairs,
            window: d.window.unwrap_or(0),
        }
    }
}

impl PretrainSection {
    pub fn to_config(&self) -> PretrainConfig {
        PretrainConfig {
            batch_size: self.batch_size,
            max_iters: self.max_iters,
            eval_every: self.eval_every,
            lr: self.lr,
            val_pairs: self.val_pairs,
            window: (self.window > 0).then_some(self.window),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveSection {
    pub tau: f64,
    pub ratio: [usize; 2],
    pub batch_size: usize,
    pub max_iters: usize,
    pub eval_every: usize,
    pub lr: f64,
    pub knn_k: usize,
}

impl Default for ContrastiveSection {
    fn default() -> Self {
        let d = ContrastiveConfig::default();
        Self {
            tau: d.tau,
            ratio: [d.ratio.0, d.ratio.1],
            batch_size: d.batch_size,
            max_iters: d.max_iters,
            eval_every: d.eval_every,
            lr: d.lr,
            knn_k: d.knn_k,
        }
    }
}

impl ContrastiveSection {
    pub fn to_config(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            tau: self.tau,
            ratio: (self.ratio[0], self.ratio[1]),
            batch_size: self.batch_size,
            max_iters: self.max_iters,
            eval_every: self.eval_every,
            lr: self.lr,
            knn_k: self.knn_k,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginSection {
    pub tau: f64,
    pub ratio: [usize; 2],
    pub batch_size: usize,
    pub iters: [usize; 3],
    pub eval_every: usize,
    pub lrs: [f64; 3],
    /// When non-empty, the schedule runs once per grid value `g` with
    /// learning rates `[g, lrs[1], g]` and keeps the run whose final
    /// validation EER is lowest.
    #[serde(default)]
    pub lr_grid: Vec<f64>,
    pub refs_per_subject: usize,
    pub val_pairs: usize,
    /// Warping window for step-1 alignment targets; 0 means unlimited.
    pub window: usize,
}

impl Default for PluginSection {
    fn default() -> Self {
        let d = PluginConfig::default();
        Self {
            tau: d.tau,
            ratio: [d.ratio.0, d.ratio.1],
            batch_size: d.batch_size,
            iters: d.iters,
            eval_every: d.eval_every,
            lrs: d.lrs,
            lr_grid: Vec::new(),
            refs_per_subject: d.refs_per_subject,
            val_pairs: d.val_pairs,
            window: d.window.unwrap_or(0),
        }
    }
}

impl PluginSection {
    pub fn to_config(&self) -> PluginConfig {
        PluginConfig {
            tau: self.tau,
            ratio: (self.ratio[0], self.ratio[1]),
            batch_size: self.batch_size,
            iters: self.iters,
            eval_every: self.eval_every,
            lrs: self.lrs,
            refs_per_subject: self.refs_per_subject,
            val_pairs: self.val_pairs,
            window: (self.window > 0).then_some(self.window),
        }
    }
}

/// Flag-level overrides; every field beats the file when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub max_iter: Option<usize>,
    pub lr: Option<f64>,
    pub data: Option<PathBuf>,
}

/// Which phase section `--max-iter`/`--lr` overrides apply to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Pretrain,
    Contrastive,
    Plugin,
}

impl RunConfig {
    /// Reads and validates a config file, then applies flag overrides.
    pub fn load(path: &Path, overrides: &Overrides, phase: PhaseKind) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::data(format!(
                "{}: config version {} not supported (this build reads version {CONFIG_VERSION})",
                path.display(),
                cfg.version
            )));
        }
        cfg.apply(overrides, phase);
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides, phase: PhaseKind) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = Some(dir.clone());
        }
        if let Some(path) = &o.data {
            self.data.path = path.clone();
        }
        if let Some(n) = o.max_iter {
            match phase {
                PhaseKind::Pretrain => self.pretrain.max_iters = n,
                PhaseKind::Contrastive => self.contrastive.max_iters = n,
                PhaseKind::Plugin => self.plugin.iters = [n, n, n],
            }
        }
        if let Some(lr) = o.lr {
            match phase {
                PhaseKind::Pretrain => self.pretrain.lr = lr,
                PhaseKind::Contrastive => self.contrastive.lr = lr,
                PhaseKind::Plugin => {
                    // An explicit rate replaces the sweep entirely.
                    self.plugin.lrs = [lr, lr, lr];
                    self.plugin.lr_grid.clear();
                }
            }
        }
    }

    /// The directory all of this run's artifacts go to.
    pub fn resolved_out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_dir {
            return dir.clone();
        }
        if let Ok(base) = std::env::var(OUT_DIR_ENV) {
            return PathBuf::from(base).join(&self.name);
        }
        PathBuf::from("runs").join(&self.name)
    }

    /// Canonical serialized form; written beside outputs and digested.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::data(e.to_string()))
    }

    /// Hex SHA-256 of the canonical form, recorded in the manifest.
    pub fn digest(&self) -> Result<String> {
        let text = self.canonical_toml()?;
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        let out = h.finalize();
        let mut hex = String::with_capacity(64);
        for b in out {
            use std::fmt::Write;
            write!(hex, "{b:02x}").unwrap();
        }
        Ok(hex)
    }

    /// Writes the resolved config into the run directory.
    pub fn write_resolved(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join("config.resolved.toml");
        fs::write(&path, self.canonical_toml()?)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_val_fraction() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_config(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    const MINIMAL: &str = r#"
version = 1
name = "toy"
seed = 7

[data]
path = "toy.tsv"
"#;

    #[test]
    fn minimal_config_fills_defaults_from_the_library() {
        let f = write_config(MINIMAL);
        let cfg = RunConfig::load(f.path(), &Overrides::default(), PhaseKind::Pretrain).unwrap();
        let core = PretrainConfig::default();
        assert_eq!(cfg.pretrain.to_config(), core);
        assert_eq!(cfg.contrastive.to_config(), ContrastiveConfig::default());
        assert_eq!(cfg.plugin.to_config(), PluginConfig::default());
        assert_eq!(cfg.arch.to_arch(1), ArchConfig::desk_default(1));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write_config("version = 1\nname = \"x\"\nseed = 1\nbogus = 3\n[data]\npath = \"d\"\n");
        let err = RunConfig::load(f.path(), &Overrides::default(), PhaseKind::Pretrain)
            .unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let f = write_config("version = 9\nname = \"x\"\nseed = 1\n[data]\npath = \"d\"\n");
        let err = RunConfig::load(f.path(), &Overrides::default(), PhaseKind::Pretrain)
            .unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }

    #[test]
    fn overrides_beat_the_file_per_phase() {
        let f = write_config(MINIMAL);
        let o = Overrides {
            seed: Some(99),
            max_iter: Some(5),
            lr: Some(0.5),
            ..Overrides::default()
        };
        let cfg = RunConfig::load(f.path(), &o, PhaseKind::Contrastive).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.contrastive.max_iters, 5);
        assert_eq!(cfg.contrastive.lr, 0.5);
        // Other phases keep their file/default values.
        assert_eq!(cfg.pretrain.max_iters, PretrainConfig::default().max_iters);
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let f = write_config(MINIMAL);
        let a = RunConfig::load(f.path(), &Overrides::default(), PhaseKind::Pretrain).unwrap();
        let b = RunConfig::load(f.path(), &Overrides::default(), PhaseKind::Pretrain).unwrap();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        let o = Overrides { seed: Some(123), ..Overrides::default() };
        let c = RunConfig::load(f.path(), &o, PhaseKind::Pretrain).unwrap();
        assert_ne!(a.digest().unwrap(), c.digest().unwrap());
    }
}
