//! Run configuration: TOML file, `--preset`, dotted `--key value`
//! overrides, validation, and the echoed `run_manifest.toml`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{AugmentConfig, BalanceAxis, SynthSpec};
use crate::error::{Error, Result};
use crate::memory::BlockMode;
use crate::train::ScheduleSet;
use crate::vit::ViTConfig;

pub const RUN_MANIFEST: &str = "run_manifest.toml";
/// Honoured when `--out` is absent.
pub const OUT_DIR_ENV: &str = "MEMSSL_OUT";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Synth,
    #[default]
    Pretrain,
    Finetune,
    Evaluate,
    Stats,
    Ablate,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    /// Capacity `K`.
    pub k: usize,
    /// Block size `N_b`; must divide `k`.
    pub block: usize,
    pub mode: BlockMode,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self { k: 512, block: 128, mode: BlockMode::Random }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub epochs: u64,
    /// Stop after this many steps when non-zero (schedules still span the
    /// truncated run).
    pub max_steps: u64,
    pub checkpoint_every: u64,
    pub balance: BalanceAxis,
    /// Also pass the local views through the teacher (ablation).
    pub teacher_locals: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 30,
            max_steps: 0,
            checkpoint_every: 5,
            balance: BalanceAxis::Modality,
            teacher_locals: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub epochs: u64,
    pub warmup_epochs: u64,
    pub lr_peak: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    /// Train only the classifier on frozen `[CLS]` features.
    pub freeze_encoder: bool,
    pub task: String,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 50,
            warmup_epochs: 10,
            lr_peak: 5e-4,
            lr_end: 1e-6,
            weight_decay: 0.05,
            label_smoothing: 0.1,
            freeze_encoder: false,
            task: "task".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub bootstrap: usize,
    pub alpha: f64,
    pub fractions: Vec<f64>,
    pub runs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { bootstrap: 1000, alpha: 0.05, fractions: vec![0.1, 0.3, 0.5, 1.0], runs: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub threads: usize,
    pub paths: Paths,
    pub encoder: ViTConfig,
    pub augment: AugmentConfig,
    pub schedule: ScheduleSet,
    pub memory: MemoryConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// CPU-sized defaults.
    pub fn desk() -> Self {
        Self {
            mode: Mode::default(),
            seed: 0,
            threads: 1,
            paths: Paths::default(),
            encoder: ViTConfig::desk(),
            augment: AugmentConfig::default(),
            schedule: ScheduleSet::default(),
            memory: MemoryConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthSpec::default(),
        }
    }

    /// Full-scale constants: ViT-B/16, batch 1024, K = 65536, N_b = 16384.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.encoder = ViTConfig::paper();
        c.memory = MemoryConfig { k: 65536, block: 16384, mode: BlockMode::Random };
        c.pretrain.batch_size = 1024;
        c.pretrain.epochs = 100;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::Config(format!("unknown preset `{name}` (expected desk or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.augment.validate()?;
        self.schedule.validate()?;
        let m = &self.memory;
        if m.k == 0 || m.block == 0 || m.k % m.block != 0 {
            return Err(Error::Config(format!("memory.block ({}) must divide memory.k ({})", m.block, m.k)));
        }
        if self.pretrain.batch_size == 0 || self.finetune.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.pretrain.batch_size > m.k {
            return Err(Error::Config("pretrain.batch_size exceeds memory.k".into()));
        }
        let f = &self.finetune;
        if !(0.0..1.0).contains(&f.label_smoothing) {
            return Err(Error::Config("finetune.label_smoothing must lie in [0, 1)".into()));
        }
        if f.warmup_epochs > f.epochs {
            return Err(Error::Config("finetune.warmup_epochs exceeds finetune.epochs".into()));
        }
        if self.eval.bootstrap < 100 {
            return Err(Error::Config("eval.bootstrap must be at least 100".into()));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(Error::Config("eval.alpha must lie in (0, 1)".into()));
        }
        if self.eval.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config("eval.fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the encoder geometry; stored in checkpoints.
    pub fn config_hash(&self) -> u64 {
        encoder_hash(&self.encoder)
    }

    /// Writes the resolved configuration to `dir/run_manifest.toml`.
    pub fn write_manifest(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RUN_MANIFEST);
        crate::io::write_atomic(&path, self.to_toml().as_bytes())?;
        Ok(path)
    }
}

pub fn encoder_hash(cfg: &ViTConfig) -> u64 {
    let text = toml::to_string(cfg).expect("encoder config serializes");
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Resolves a configuration: preset (default desk), then the TOML file,
/// then `key=value` overrides, then validation.
pub fn parse_config(file: Option<&Path>, preset: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let base = RunConfig::preset(preset.unwrap_or("desk"))?;
    let mut doc = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
        merge(&mut doc, table, "")?;
    }
    for (key, raw) in overrides {
        set_dotted(&mut doc, key, raw)?;
    }
    let cfg: RunConfig = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a previously echoed manifest exactly.
pub fn load_run_manifest(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(dst: &mut toml::Table, src: toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in src {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (dst.get_mut(&k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s, &key)?,
            (Some(slot), v) => *slot = v,
            // Optional fields are absent from the serialized defaults.
            (None, v) if is_optional_key(&key) => {
                dst.insert(k, v);
            }
            (None, _) => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }
    Ok(())
}

fn is_optional_key(key: &str) -> bool {
    matches!(key, "paths.manifest" | "paths.out_dir" | "paths.checkpoint")
}

/// Applies `key = raw`, parsing `raw` as a TOML value and falling back to a
/// bare string.
fn set_dotted(doc: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut table = doc;
    for (i, p) in path.iter().enumerate() {
        table = match table.get_mut(*p) {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("unknown key `{}`", parts[..=i].join(".")))),
        };
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    match table.get_mut(*last) {
        Some(slot) => {
            if std::mem::discriminant(slot) != std::mem::discriminant(&value)
                && !(matches!(slot, toml::Value::Float(_)) && matches!(value, toml::Value::Integer(_)))
            {
                return Err(Error::Config(format!("`{key}`: expected {}, got `{raw}`", slot.type_str())));
            }
            *slot = match (&*slot, value) {
                (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                (_, v) => v,
            };
        }
        None if is_optional_key(key) => {
            table.insert(last.to_string(), toml::Value::String(raw.to_string()));
        }
        None => return Err(Error::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}
