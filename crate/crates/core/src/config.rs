//! Run configuration: one sectioned `key = value` file (TOML) drives a whole
//! experiment, with command-line overrides applied on top.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{default_class_names, GeneratorSpec, PatchTaskSpec};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind};
use crate::metrics::BootstrapSpec;
use crate::model::Architecture;
use crate::train::TrainConfig;

/// Split sizes used when `data.split` is unset and the sample count allows.
pub const REFERENCE_SPLIT: [usize; 3] = [3550, 744, 777];
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

/// Class name that marks the exclusive "nothing found" label.
pub const NO_FINDING_NAME: &str = "No finding";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream is a named substream of it.
    pub seed: u64,
    pub paths: PathsSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub bootstrap: BootstrapSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Synthetic,
    Patches,
}

/// Either exact part sizes or fractions of the sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    Counts([usize; 3]),
    Fractions([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_samples: Option<usize>,
    pub feature_dim: usize,
    pub signal_strength: f64,
    /// Custom prevalences give independent classes with generic names.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prevalence: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    pub image_size: usize,
    pub patch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub arch: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle_steps: Option<usize>,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub variant: String,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Falls back to the class named "No finding" when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_finding_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub replications: usize,
    pub confidence: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: GeneratorSpec::reference_default().seed,
            paths: PathsSection::default(),
            data: DataSection::default(),
            train: TrainSection::default(),
            loss: LossSection::default(),
            bootstrap: BootstrapSection::default(),
        }
    }
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            data: PathBuf::from("data"),
            out: PathBuf::from("out"),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        let g = GeneratorSpec::reference_default();
        let p = PatchTaskSpec::default();
        DataSection {
            kind: DataKind::Synthetic,
            num_samples: None,
            feature_dim: g.feature_dim,
            signal_strength: g.signal_strength,
            prevalence: None,
            split: None,
            image_size: p.size,
            patch_size: p.patch,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            arch: Architecture::Linear.name().into(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            base_lr: t.base_lr,
            max_lr: t.max_lr,
            cycle_steps: t.cycle_steps,
            momentum: t.momentum,
        }
    }
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossConfig::default();
        LossSection {
            variant: LossKind::ModifiedDb.name().into(),
            alpha: l.alpha,
            beta: l.beta,
            mu: l.mu,
            kappa: l.kappa,
            lambda: l.lambda,
            gamma: l.gamma,
            no_finding_index: None,
        }
    }
}

impl Default for BootstrapSection {
    fn default() -> Self {
        let b = BootstrapSpec::default();
        BootstrapSection {
            replications: b.replications,
            confidence: b.confidence,
        }
    }
}

impl RunConfig {
    /// Parses config text; keys absent from the text keep their defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        RunConfig::from_table(table)
    }

    /// Reads an optional file, then applies `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        RunConfig::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<RunConfig> {
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture()?;
        self.loss_kind()?;
        self.bootstrap_spec().validate()?;
        self.train_config(LossKind::Bce, &[]).validate()?;
        // class count is unknown until a dataset is loaded
        self.loss_config(LossKind::Bce, &[]).validate(usize::MAX)?;
        match self.data.kind {
            DataKind::Synthetic => self.generator_spec().validate(),
            DataKind::Patches => Ok(()),
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.train.arch.parse()
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        self.loss.variant.parse()
    }

    pub fn num_samples(&self) -> usize {
        self.data.num_samples.unwrap_or(match self.data.kind {
            DataKind::Synthetic => GeneratorSpec::reference_default().num_samples,
            DataKind::Patches => PatchTaskSpec::default().num_samples,
        })
    }

    /// Explicit split, else the reference sizes when they add up, else
    /// 70/15/15 fractions.
    pub fn split(&self) -> SplitSpec {
        match self.data.split {
            Some(s) => s,
            None if REFERENCE_SPLIT.iter().sum::<usize>() == self.num_samples() => SplitSpec::Counts(REFERENCE_SPLIT),
            None => SplitSpec::Fractions(DEFAULT_FRACTIONS),
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        let n = self.num_samples();
        let mut g = match &self.data.prevalence {
            Some(p) => GeneratorSpec::independent(n, p.clone(), self.data.feature_dim, self.seed),
            None => GeneratorSpec::reference_default(),
        };
        g.num_samples = n;
        g.feature_dim = self.data.feature_dim;
        g.signal_strength = self.data.signal_strength;
        g.seed = self.seed;
        if g.class_names.len() != g.num_classes {
            g.class_names = default_class_names(g.num_classes);
        }
        g
    }

    pub fn patch_spec(&self) -> PatchTaskSpec {
        PatchTaskSpec {
            num_samples: self.num_samples(),
            size: self.data.image_size,
            patch: self.data.patch_size,
            seed: self.seed,
            ..PatchTaskSpec::default()
        }
    }

    /// Loss settings for `variant`; the "No finding" index comes from the
    /// config or else from `class_names`.
    pub fn loss_config(&self, variant: LossKind, class_names: &[String]) -> LossConfig {
        let l = &self.loss;
        let by_name = class_names.iter().position(|n| n.eq_ignore_ascii_case(NO_FINDING_NAME));
        LossConfig {
            alpha: l.alpha,
            beta: l.beta,
            mu: l.mu,
            kappa: l.kappa,
            lambda: l.lambda,
            gamma: l.gamma,
            no_finding_index: l.no_finding_index.or(by_name),
            variant,
        }
    }

    pub fn train_config(&self, variant: LossKind, class_names: &[String]) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            base_lr: t.base_lr,
            max_lr: t.max_lr,
            cycle_steps: t.cycle_steps,
            momentum: t.momentum,
            seed: self.seed,
            loss: self.loss_config(variant, class_names),
        }
    }

    pub fn bootstrap_spec(&self) -> BootstrapSpec {
        BootstrapSpec {
            replications: self.bootstrap.replications,
            seed: self.seed,
            confidence: self.bootstrap.confidence,
        }
    }
}

/// Sets `section.key` (or a top-level `key`) from `key=value`. The value is
/// read as a TOML value when possible and as a bare string otherwise.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{s}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
