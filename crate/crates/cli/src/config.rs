//! Configuration resolution: built-in defaults, then a JSON config file,
//! then command-line flags, with the later layers winning. Unknown file
//! keys are rejected by name.

use crate::output::config_error;
use crate::DATA_DIR_ENV;
use anyhow::{Context, Result};
use clap::ValueEnum;
use mdlreg_core::bounds::LogBase;
use mdlreg_core::prior::PriorMode;
use mdlreg_core::trainer::RegKind;
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    None,
    Vib,
    Cdvib,
    GmLossless,
    GmLossy,
}

impl RegArg {
    pub fn kind(self) -> RegKind {
        match self {
            RegArg::None => RegKind::None,
            RegArg::Vib => RegKind::Vib,
            RegArg::Cdvib => RegKind::Cdvib,
            RegArg::GmLossless => RegKind::GmLossless,
            RegArg::GmLossy => RegKind::GmLossy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegArg::None => "none",
            RegArg::Vib => "vib",
            RegArg::Cdvib => "cdvib",
            RegArg::GmLossless => "gm-lossless",
            RegArg::GmLossy => "gm-lossy",
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RegArg::None),
            "vib" => Ok(RegArg::Vib),
            "cdvib" => Ok(RegArg::Cdvib),
            "gm-lossless" => Ok(RegArg::GmLossless),
            "gm-lossy" => Ok(RegArg::GmLossy),
            other => Err(config_error(format!("unknown reg {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaseArg {
    Bits,
    Nats,
}

impl BaseArg {
    pub fn base(self) -> LogBase {
        match self {
            BaseArg::Bits => LogBase::Bits,
            BaseArg::Nats => LogBase::Nats,
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        match s {
            "bits" => Ok(BaseArg::Bits),
            "nats" => Ok(BaseArg::Nats),
            other => Err(config_error(format!("unknown base {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Usps,
    Synth,
}

impl DatasetArg {
    fn from_name(s: &str) -> Result<Self> {
        match s {
            "usps" => Ok(DatasetArg::Usps),
            "synth" => Ok(DatasetArg::Synth),
            other => Err(config_error(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FitModeArg {
    LosslessVar,
    LosslessEst,
    Lossy,
}

impl FitModeArg {
    pub fn mode(self) -> PriorMode {
        match self {
            FitModeArg::LosslessVar => PriorMode::LosslessVar,
            FitModeArg::LosslessEst => PriorMode::LosslessEst,
            FitModeArg::Lossy => PriorMode::Lossy,
        }
    }

    fn from_name(s: &str) -> Result<Self> {
        match s {
            "lossless-var" => Ok(FitModeArg::LosslessVar),
            "lossless-est" => Ok(FitModeArg::LosslessEst),
            "lossy" => Ok(FitModeArg::Lossy),
            other => Err(config_error(format!("unknown mode {other:?}"))),
        }
    }
}

/// JSON config file schema. Every key is optional; unknown keys are
/// rejected with the offending name.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub seed: Option<Vec<u64>>,
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub reg: Option<String>,
    pub beta: Option<Vec<f64>>,
    pub components: Option<usize>,
    pub latent_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub k_train: Option<usize>,
    pub k_eval: Option<usize>,
    pub eta_mean: Option<f64>,
    pub eta_var: Option<f64>,
    pub eta_weight: Option<f64>,
    pub noise_mean: Option<f64>,
    pub noise_var: Option<f64>,
    pub var_floor: Option<f64>,
    pub eps: Option<f64>,
    pub init_batch: Option<usize>,
    pub base: Option<String>,
    pub cache: Option<bool>,
    pub n: Option<u64>,
    pub classes: Option<u32>,
    pub emp_risk: Option<f64>,
    pub emp_risks: Option<Vec<f64>>,
    pub mdl_min: Option<f64>,
    pub mdl_max: Option<f64>,
    pub mdl_step: Option<f64>,
    pub gen_min: Option<f64>,
    pub gen_max: Option<f64>,
    pub gen_step: Option<f64>,
    pub trials: Option<usize>,
    pub mc_samples: Option<usize>,
    pub max_dim: Option<usize>,
    pub max_components: Option<usize>,
    pub synth_classes: Option<usize>,
    pub synth_dim: Option<usize>,
    pub synth_per_class: Option<usize>,
    pub synth_separation: Option<f64>,
    pub synth_noise: Option<f64>,
    pub synth_seed: Option<u64>,
    pub input: Option<PathBuf>,
    pub mode: Option<String>,
    pub fit_epochs: Option<usize>,
    pub gradcheck_seeds: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| config_error(format!("config file: {e}")))
    }
}

/// Command-line flags (all optional; see [`Settings`] for the defaults).
#[derive(Debug, Default, clap::Args)]
pub struct Flags {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed list, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seed: Option<Vec<u64>>,
    #[arg(long, global = true, value_enum)]
    pub dataset: Option<DatasetArg>,
    /// Directory holding dataset files (else $MDLREG_DATA_DIR, else ./data).
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub reg: Option<RegArg>,
    /// Trade-off weight list, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub beta: Option<Vec<f64>>,
    /// Mixture components per class.
    #[arg(long, global = true)]
    pub components: Option<usize>,
    #[arg(long, global = true)]
    pub latent_dim: Option<usize>,
    #[arg(long, global = true)]
    pub hidden_dim: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub lr_decay: Option<f64>,
    #[arg(long, global = true)]
    pub adam_beta1: Option<f64>,
    #[arg(long, global = true)]
    pub adam_beta2: Option<f64>,
    #[arg(long, global = true)]
    pub k_train: Option<usize>,
    #[arg(long, global = true)]
    pub k_eval: Option<usize>,
    #[arg(long, global = true)]
    pub eta_mean: Option<f64>,
    #[arg(long, global = true)]
    pub eta_var: Option<f64>,
    #[arg(long, global = true)]
    pub eta_weight: Option<f64>,
    #[arg(long, global = true)]
    pub noise_mean: Option<f64>,
    #[arg(long, global = true)]
    pub noise_var: Option<f64>,
    #[arg(long, global = true)]
    pub var_floor: Option<f64>,
    /// Lossy distortion level ε.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Big-batch size for bank initialization.
    #[arg(long, global = true)]
    pub init_batch: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub base: Option<BaseArg>,
    /// Use (and create) a binary dataset cache next to the source file.
    #[arg(long, global = true)]
    pub cache: bool,
    /// Sample count n for bound evaluation.
    #[arg(long, global = true)]
    pub n: Option<u64>,
    /// Class count C for bound evaluation.
    #[arg(long, global = true)]
    pub classes: Option<u32>,
    #[arg(long, global = true)]
    pub emp_risk: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub emp_risks: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub mdl_min: Option<f64>,
    #[arg(long, global = true)]
    pub mdl_max: Option<f64>,
    #[arg(long, global = true)]
    pub mdl_step: Option<f64>,
    #[arg(long, global = true)]
    pub gen_min: Option<f64>,
    #[arg(long, global = true)]
    pub gen_max: Option<f64>,
    #[arg(long, global = true)]
    pub gen_step: Option<f64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub mc_samples: Option<usize>,
    #[arg(long, global = true)]
    pub max_dim: Option<usize>,
    #[arg(long, global = true)]
    pub max_components: Option<usize>,
    #[arg(long, global = true)]
    pub synth_classes: Option<usize>,
    #[arg(long, global = true)]
    pub synth_dim: Option<usize>,
    #[arg(long, global = true)]
    pub synth_per_class: Option<usize>,
    #[arg(long, global = true)]
    pub synth_separation: Option<f64>,
    #[arg(long, global = true)]
    pub synth_noise: Option<f64>,
    /// Seed for synthetic data generation (kept apart from run seeds).
    #[arg(long, global = true)]
    pub synth_seed: Option<u64>,
    /// Posterior CSV for prior-fit (rows: label, mu_1..mu_d, var_1..var_d).
    #[arg(long, global = true, value_name = "CSV")]
    pub input: Option<PathBuf>,
    /// Prior-fit update variant.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<FitModeArg>,
    /// Passes over the posterior pool during prior-fit.
    #[arg(long, global = true)]
    pub fit_epochs: Option<usize>,
    /// Number of seeds for the gradient check.
    #[arg(long, global = true)]
    pub gradcheck_seeds: Option<usize>,
}

/// Fully resolved configuration.
#[derive(Clone, Debug)]
pub struct Settings {
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub dataset: DatasetArg,
    pub data_dir: PathBuf,
    pub reg: RegArg,
    pub betas: Vec<f64>,
    pub components: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub k_train: usize,
    pub k_eval: usize,
    pub eta_mean: f64,
    pub eta_var: f64,
    pub eta_weight: f64,
    pub noise_mean: f64,
    pub noise_var: f64,
    pub var_floor: f64,
    pub eps: f64,
    pub init_batch: usize,
    pub base: BaseArg,
    pub cache: bool,
    pub n: u64,
    pub classes: u32,
    pub emp_risk: f64,
    pub emp_risks: Vec<f64>,
    pub mdl_min: f64,
    pub mdl_max: f64,
    pub mdl_step: f64,
    pub gen_min: f64,
    pub gen_max: f64,
    pub gen_step: f64,
    pub trials: usize,
    pub mc_samples: usize,
    pub max_dim: usize,
    pub max_components: usize,
    pub synth_classes: usize,
    pub synth_dim: usize,
    pub synth_per_class: usize,
    pub synth_separation: f64,
    pub synth_noise: f64,
    pub synth_seed: u64,
    pub input: Option<PathBuf>,
    pub mode: FitModeArg,
    pub fit_epochs: usize,
    pub gradcheck_seeds: usize,
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

impl Settings {
    /// Merge defaults, file, and flags. Range validation happens here;
    /// command-specific requirements (like prior-fit's input) are checked
    /// by the command.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let dataset = match (&flags.dataset, &file.dataset) {
            (Some(d), _) => *d,
            (None, Some(s)) => DatasetArg::from_name(s)?,
            (None, None) => DatasetArg::Synth,
        };
        let reg = match (&flags.reg, &file.reg) {
            (Some(r), _) => *r,
            (None, Some(s)) => RegArg::from_name(s)?,
            (None, None) => RegArg::None,
        };
        let base = match (&flags.base, &file.base) {
            (Some(b), _) => *b,
            (None, Some(s)) => BaseArg::from_name(s)?,
            (None, None) => BaseArg::Bits,
        };
        let mode = match (&flags.mode, &file.mode) {
            (Some(m), _) => *m,
            (None, Some(s)) => FitModeArg::from_name(s)?,
            (None, None) => FitModeArg::LosslessEst,
        };
        let data_dir = flags
            .data_dir
            .clone()
            .or_else(|| file.data_dir.clone())
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"));

        let s = Self {
            out: pick(flags.out.clone(), file.out, PathBuf::from("out")),
            seeds: pick(flags.seed.clone(), file.seed, vec![0]),
            dataset,
            data_dir,
            reg,
            betas: pick(flags.beta.clone(), file.beta, vec![0.0]),
            components: pick(flags.components, file.components, 20),
            latent_dim: pick(flags.latent_dim, file.latent_dim, 16),
            hidden_dim: pick(flags.hidden_dim, file.hidden_dim, 64),
            epochs: pick(flags.epochs, file.epochs, 30),
            batch_size: pick(flags.batch_size, file.batch_size, 128),
            learning_rate: pick(flags.learning_rate, file.learning_rate, 1e-4),
            lr_decay: pick(flags.lr_decay, file.lr_decay, 0.97),
            adam_beta1: pick(flags.adam_beta1, file.adam_beta1, 0.5),
            adam_beta2: pick(flags.adam_beta2, file.adam_beta2, 0.999),
            k_train: pick(flags.k_train, file.k_train, 1),
            k_eval: pick(flags.k_eval, file.k_eval, 12),
            eta_mean: pick(flags.eta_mean, file.eta_mean, 1e-2),
            eta_var: pick(flags.eta_var, file.eta_var, 5e-4),
            eta_weight: pick(flags.eta_weight, file.eta_weight, 1e-2),
            noise_mean: pick(flags.noise_mean, file.noise_mean, 0.0),
            noise_var: pick(flags.noise_var, file.noise_var, 0.0),
            var_floor: pick(flags.var_floor, file.var_floor, 1e-8),
            eps: pick(flags.eps, file.eps, 0.1),
            init_batch: pick(flags.init_batch, file.init_batch, 2048),
            base,
            cache: flags.cache || file.cache.unwrap_or(false),
            n: pick(flags.n, file.n, 50_000),
            classes: pick(flags.classes, file.classes, 10),
            emp_risk: pick(flags.emp_risk, file.emp_risk, 0.05),
            emp_risks: pick(
                flags.emp_risks.clone(),
                file.emp_risks,
                vec![0.01, 0.05, 0.1],
            ),
            mdl_min: pick(flags.mdl_min, file.mdl_min, 0.0),
            mdl_max: pick(flags.mdl_max, file.mdl_max, 0.2),
            mdl_step: pick(flags.mdl_step, file.mdl_step, 0.005),
            gen_min: pick(flags.gen_min, file.gen_min, 0.0),
            gen_max: pick(flags.gen_max, file.gen_max, 0.3),
            gen_step: pick(flags.gen_step, file.gen_step, 0.005),
            trials: pick(flags.trials, file.trials, 200),
            mc_samples: pick(flags.mc_samples, file.mc_samples, 200_000),
            max_dim: pick(flags.max_dim, file.max_dim, 8),
            max_components: pick(flags.max_components, file.max_components, 5),
            synth_classes: pick(flags.synth_classes, file.synth_classes, 10),
            synth_dim: pick(flags.synth_dim, file.synth_dim, 32),
            synth_per_class: pick(flags.synth_per_class, file.synth_per_class, 600),
            synth_separation: pick(flags.synth_separation, file.synth_separation, 3.0),
            synth_noise: pick(flags.synth_noise, file.synth_noise, 1.0),
            synth_seed: pick(flags.synth_seed, file.synth_seed, 7),
            input: flags.input.clone().or(file.input),
            mode,
            fit_epochs: pick(flags.fit_epochs, file.fit_epochs, 10),
            gradcheck_seeds: pick(flags.gradcheck_seeds, file.gradcheck_seeds, 10),
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_error("seed list must not be empty"));
        }
        if self.betas.is_empty() {
            return Err(config_error("beta list must not be empty"));
        }
        for &b in &self.betas {
            if !(b >= 0.0) {
                return Err(config_error(format!("beta must be >= 0, got {b}")));
            }
        }
        for (name, v) in [
            ("components", self.components),
            ("latent_dim", self.latent_dim),
            ("hidden_dim", self.hidden_dim),
            ("batch_size", self.batch_size),
            ("k_train", self.k_train),
            ("k_eval", self.k_eval),
            ("init_batch", self.init_batch),
        ] {
            if v == 0 {
                return Err(config_error(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(config_error("learning_rate must be > 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(config_error("lr_decay must be in (0, 1]"));
        }
        for (name, v) in [
            ("eta_mean", self.eta_mean),
            ("eta_var", self.eta_var),
            ("eta_weight", self.eta_weight),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_error(format!("{name} must be in [0, 1]")));
            }
        }
        for (name, v) in [
            ("noise_mean", self.noise_mean),
            ("noise_var", self.noise_var),
            ("eps", self.eps),
            ("mdl_min", self.mdl_min),
            ("gen_min", self.gen_min),
        ] {
            if !(v >= 0.0) {
                return Err(config_error(format!("{name} must be >= 0")));
            }
        }
        if !(self.var_floor > 0.0) {
            return Err(config_error("var_floor must be > 0"));
        }
        if self.n < 10 {
            return Err(config_error("n must be >= 10"));
        }
        if self.classes < 2 {
            return Err(config_error("classes must be >= 2"));
        }
        for &r in self.emp_risks.iter().chain([self.emp_risk].iter()) {
            if !(0.0..=1.0).contains(&r) {
                return Err(config_error(format!(
                    "empirical risks must be in [0, 1], got {r}"
                )));
            }
        }
        if !(self.mdl_step > 0.0) || !(self.gen_step > 0.0) {
            return Err(config_error("grid steps must be > 0"));
        }
        if self.mdl_max < self.mdl_min || self.gen_max < self.gen_min {
            return Err(config_error("grid max must be >= min"));
        }
        if self.trials == 0 {
            return Err(config_error("trials must be >= 1"));
        }
        if self.mc_samples < 1000 {
            return Err(config_error("mc_samples must be >= 1000"));
        }
        if self.max_dim == 0 || self.max_components == 0 {
            return Err(config_error("max_dim and max_components must be >= 1"));
        }
        if self.synth_classes < 2 || self.synth_dim == 0 || self.synth_per_class < 5 {
            return Err(config_error("synthetic dataset shape is degenerate"));
        }
        if !(self.synth_separation >= 0.0) || !(self.synth_noise >= 0.0) {
            return Err(config_error("synth separation and noise must be >= 0"));
        }
        Ok(())
    }

    /// Inclusive float grid `min, min+step, ...` up to `max` (within a
    /// half-step tolerance so the endpoint lands on the grid).
    pub fn grid(min: f64, max: f64, step: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0u64;
        loop {
            let v = min + step * k as f64;
            if v > max + step * 0.5 {
                break;
            }
            out.push(v.min(max));
            k += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_file_or_flags() {
        let s = Settings::resolve(&Flags::default()).unwrap();
        assert_eq!(s.components, 20);
        assert_eq!(s.batch_size, 128);
        assert_eq!(s.learning_rate, 1e-4);
        assert_eq!(s.lr_decay, 0.97);
        assert_eq!(s.seeds, vec![0]);
        assert_eq!(s.reg, RegArg::None);
        assert_eq!(s.base, BaseArg::Bits);
    }

    #[test]
    fn flag_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"components": 7, "epochs": 3}"#).unwrap();
        let flags = Flags {
            config: Some(path),
            components: Some(11),
            ..Flags::default()
        };
        let s = Settings::resolve(&flags).unwrap();
        assert_eq!(s.components, 11);
        assert_eq!(s.epochs, 3);
    }

    #[test]
    fn unknown_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"mm": 4}"#).unwrap();
        let err = Settings::resolve(&Flags {
            config: Some(path),
            ..Flags::default()
        })
        .unwrap_err()
        .to_string();
        assert!(err.contains("mm"), "error should name the key: {err}");
    }

    #[test]
    fn type_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"epochs": "many"}"#).unwrap();
        assert!(Settings::resolve(&Flags {
            config: Some(path),
            ..Flags::default()
        })
        .is_err());
    }

    #[test]
    fn range_validation() {
        let flags = Flags {
            learning_rate: Some(-1.0),
            ..Flags::default()
        };
        assert!(Settings::resolve(&flags).is_err());
        let flags = Flags {
            beta: Some(vec![-0.5]),
            ..Flags::default()
        };
        assert!(Settings::resolve(&flags).is_err());
    }

    #[test]
    fn grid_includes_endpoint() {
        let g = Settings::grid(0.0, 0.2, 0.05);
        assert_eq!(g.len(), 5);
        assert_eq!(g[4], 0.2);
    }
}
