//! Flat `key = value` experiment configuration.
//!
//! Lines starting with `#` are comments, lists are comma separated. Every
//! key has a default, so an empty file is a valid configuration. The
//! canonical rendering lists every key in a fixed order and is what the
//! fingerprint hashes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use proud_core::datagen::GeneratorConfig;
use proud_core::model::{MixupTargets, ModelSpec, PretrainConfig};
use proud_core::proud::{MixPolicy, ProudHyper, Reduction};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

pub const CODE_VERSION: &str = concat!("proud-lab ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Proud,
    NoUdmix,
    NoPml,
    ErmLabeledOnly,
    NaivePseudo,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Proud,
        Variant::NoUdmix,
        Variant::NoPml,
        Variant::ErmLabeledOnly,
        Variant::NaivePseudo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proud => "proud",
            Variant::NoUdmix => "no_udmix",
            Variant::NoPml => "no_pml",
            Variant::ErmLabeledOnly => "erm_labeled_only",
            Variant::NaivePseudo => "naive_pseudo",
        }
    }

    /// The hyperparameters this variant actually trains with.
    pub fn apply(self, base: &ProudHyper) -> ProudHyper {
        let mut h = base.clone();
        match self {
            Variant::Proud | Variant::ErmLabeledOnly => {}
            Variant::NoUdmix => h.mix_policy = MixPolicy::Uniform,
            Variant::NoPml => h.alpha = 0.0,
            Variant::NaivePseudo => {
                h.mix_policy = MixPolicy::Fixed(1.0);
                h.alpha = 0.0;
            }
        }
        h
    }
}

impl FromStr for Variant {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combination {
    All,
    Pair { labeled: usize, test: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    /// Dataset file to load instead of generating a suite.
    pub data_path: Option<PathBuf>,
    pub train_fraction: f64,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub pretrain: PretrainConfig,
    pub hyper: ProudHyper,
    pub seeds: Vec<u64>,
    pub variant: Variant,
    pub combination: Combination,
    /// Number of final epochs averaged into a run's score.
    pub score_window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            generator: GeneratorConfig::default(),
            data_path: None,
            train_fraction: 0.9,
            hidden: vec![64, 64],
            feature_dim: 16,
            pretrain: PretrainConfig::default(),
            hyper: ProudHyper::default(),
            seeds: vec![2022, 2023, 2024],
            variant: Variant::Proud,
            combination: Combination::All,
            score_window: 5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| LabError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(LabError::Config(format!(
            "`{key}`: expected true or false, got `{value}`"
        ))),
    }
}

fn parse_domain(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "all" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let (mut labeled, mut test) = (None, None);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                LabError::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let g = &mut cfg.generator;
            let p = &mut cfg.pretrain;
            let h = &mut cfg.hyper;
            match key {
                "data.path" => cfg.data_path = (!value.is_empty()).then(|| PathBuf::from(value)),
                "data.classes" => g.classes = parse(key, value)?,
                "data.dim" => g.dim = parse(key, value)?,
                "data.n_per_domain" => g.n_per_domain = parse(key, value)?,
                "data.class_separation" => g.class_separation = parse(key, value)?,
                "data.rotations_deg" => g.rotations_deg = parse_list(key, value)?,
                "data.translations" => g.translations = parse_list(key, value)?,
                "data.noise_sigma" => g.noise_sigma = parse(key, value)?,
                "data.spurious_strength" => g.spurious_strength = parse(key, value)?,
                "data.seed" => g.seed = parse(key, value)?,
                "data.train_fraction" => cfg.train_fraction = parse(key, value)?,
                "model.hidden" => cfg.hidden = parse_list(key, value)?,
                "model.feature_dim" => cfg.feature_dim = parse(key, value)?,
                "pretrain.epochs" => p.epochs = parse(key, value)?,
                "pretrain.lr" => p.lr = parse(key, value)?,
                "pretrain.momentum" => p.momentum = parse(key, value)?,
                "pretrain.weight_decay" => p.weight_decay = parse(key, value)?,
                "pretrain.batch_size" => p.batch_size = parse(key, value)?,
                "pretrain.patience" => p.early_stop_patience = parse(key, value)?,
                "proud.alpha" => h.alpha = parse(key, value)?,
                "proud.tau_eps" => h.tau_eps = parse(key, value)?,
                "proud.tau_lambda" => h.tau_lambda = parse(key, value)?,
                "proud.lambda_star" => h.lambda_star = parse(key, value)?,
                "proud.ensemble_size" => h.ensemble_size = parse(key, value)?,
                "proud.aug_strength" => h.aug_strength = parse(key, value)?,
                "proud.aug_sigma" => h.aug_sigma = parse(key, value)?,
                "proud.batch_size" => h.batch_size = parse(key, value)?,
                "proud.epochs" => h.epochs = parse(key, value)?,
                "proud.lr" => h.lr = parse(key, value)?,
                "proud.momentum" => h.momentum = parse(key, value)?,
                "proud.weight_decay" => h.weight_decay = parse(key, value)?,
                "proud.mixup_alpha" => h.mixup_alpha = parse(key, value)?,
                "proud.mixup_targets" => {
                    h.mixup_targets = match value {
                        "soft" => MixupTargets::Soft,
                        "hard" => MixupTargets::Hard,
                        _ => {
                            return Err(LabError::Config(format!("`{key}`: expected soft or hard")))
                        }
                    }
                }
                "proud.anchors_include_labeled" => {
                    h.anchors_include_labeled = parse_bool(key, value)?
                }
                "proud.pml_reduction" => {
                    h.pml_reduction = match value {
                        "mean" => Reduction::Mean,
                        "sum" => Reduction::Sum,
                        _ => {
                            return Err(LabError::Config(format!("`{key}`: expected mean or sum")))
                        }
                    }
                }
                "run.seeds" => cfg.seeds = parse_list(key, value)?,
                "run.variant" => cfg.variant = value.parse()?,
                "run.labeled" => labeled = parse_domain(key, value)?,
                "run.test" => test = parse_domain(key, value)?,
                "run.score_window" => cfg.score_window = parse(key, value)?,
                _ => {
                    return Err(LabError::Config(format!(
                        "line {}: unknown key `{key}`",
                        n + 1
                    )))
                }
            }
        }
        cfg.combination = match (labeled, test) {
            (None, None) => Combination::All,
            (Some(labeled), Some(test)) => Combination::Pair { labeled, test },
            _ => {
                return Err(LabError::Config(
                    "run.labeled and run.test must both be set or both be `all`".into(),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(LabError::Config("run.seeds must not be empty".into()));
        }
        if let Combination::Pair { labeled, test } = self.combination {
            if labeled == test {
                return Err(LabError::Config(format!(
                    "labeled domain and test domain are both {labeled}; \
                     the test domain must be disjoint from every training domain"
                )));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(LabError::Config(
                "data.train_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.score_window == 0 {
            return Err(LabError::Config(
                "run.score_window must be at least 1".into(),
            ));
        }
        if self.data_path.is_none() {
            self.generator.validate()?;
        }
        self.pretrain.validate()?;
        self.hyper.validate()?;
        self.model_spec(self.generator.dim, self.generator.classes)
            .validate()?;
        Ok(())
    }

    pub fn model_spec(&self, input_dim: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            classes,
        }
    }

    /// Every key in a fixed order; parsing this text gives back `self`.
    pub fn canonical_text(&self) -> String {
        let g = &self.generator;
        let p = &self.pretrain;
        let h = &self.hyper;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv(
            "data.path",
            self.data_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("data.classes", g.classes.to_string());
        kv("data.dim", g.dim.to_string());
        kv("data.n_per_domain", g.n_per_domain.to_string());
        kv("data.class_separation", g.class_separation.to_string());
        kv("data.rotations_deg", join(&g.rotations_deg));
        kv("data.translations", join(&g.translations));
        kv("data.noise_sigma", g.noise_sigma.to_string());
        kv("data.spurious_strength", g.spurious_strength.to_string());
        kv("data.seed", g.seed.to_string());
        kv("data.train_fraction", self.train_fraction.to_string());
        kv("model.hidden", join(&self.hidden));
        kv("model.feature_dim", self.feature_dim.to_string());
        kv("pretrain.epochs", p.epochs.to_string());
        kv("pretrain.lr", p.lr.to_string());
        kv("pretrain.momentum", p.momentum.to_string());
        kv("pretrain.weight_decay", p.weight_decay.to_string());
        kv("pretrain.batch_size", p.batch_size.to_string());
        kv("pretrain.patience", p.early_stop_patience.to_string());
        kv("proud.alpha", h.alpha.to_string());
        kv("proud.tau_eps", h.tau_eps.to_string());
        kv("proud.tau_lambda", h.tau_lambda.to_string());
        kv("proud.lambda_star", h.lambda_star.to_string());
        kv("proud.ensemble_size", h.ensemble_size.to_string());
        kv("proud.aug_strength", h.aug_strength.to_string());
        kv("proud.aug_sigma", h.aug_sigma.to_string());
        kv("proud.batch_size", h.batch_size.to_string());
        kv("proud.epochs", h.epochs.to_string());
        kv("proud.lr", h.lr.to_string());
        kv("proud.momentum", h.momentum.to_string());
        kv("proud.weight_decay", h.weight_decay.to_string());
        kv("proud.mixup_alpha", h.mixup_alpha.to_string());
        let targets = match h.mixup_targets {
            MixupTargets::Soft => "soft",
            MixupTargets::Hard => "hard",
        };
        kv("proud.mixup_targets", targets.into());
        kv(
            "proud.anchors_include_labeled",
            h.anchors_include_labeled.to_string(),
        );
        let reduction = match h.pml_reduction {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        };
        kv("proud.pml_reduction", reduction.into());
        kv("run.seeds", join(&self.seeds));
        kv("run.variant", self.variant.name().into());
        let (l, t) = match self.combination {
            Combination::All => ("all".into(), "all".into()),
            Combination::Pair { labeled, test } => (labeled.to_string(), test.to_string()),
        };
        kv("run.labeled", l);
        kv("run.test", t);
        kv("run.score_window", self.score_window.to_string());
        s
    }

    /// SHA-256 over the canonical text and the code version, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(CODE_VERSION.as_bytes());
        hasher.update(b"\n");
        hasher.update(self.canonical_text().as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(
            ExperimentConfig::parse("# nothing\n\n").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.hyper.tau_eps = 0.25;
        cfg.seeds = vec![1, 2];
        cfg.combination = Combination::Pair {
            labeled: 2,
            test: 0,
        };
        cfg.variant = Variant::NoPml;
        cfg.hyper.mixup_targets = MixupTargets::Hard;
        cfg.hyper.pml_reduction = Reduction::Sum;
        let back = ExperimentConfig::parse(&cfg.canonical_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(ExperimentConfig::parse("proud.alpha 1").is_err());
        assert!(ExperimentConfig::parse("proud.alhpa = 1").is_err());
        assert!(ExperimentConfig::parse("proud.alpha = x").is_err());
        assert!(ExperimentConfig::parse("run.variant = fancy").is_err());
        assert!(ExperimentConfig::parse("run.seeds =").is_err());
        assert!(ExperimentConfig::parse("run.labeled = 1").is_err());
        let err = ExperimentConfig::parse("run.labeled = 1\nrun.test = 1").unwrap_err();
        assert!(err.to_string().contains("disjoint"));
        assert!(err.is_config());
    }

    #[test]
    fn variants_map_to_hyperparameters() {
        let base = ProudHyper::default();
        assert_eq!(Variant::NoUdmix.apply(&base).mix_policy, MixPolicy::Uniform);
        assert_eq!(Variant::NoPml.apply(&base).alpha, 0.0);
        let naive = Variant::NaivePseudo.apply(&base);
        assert_eq!(
            (naive.alpha, naive.mix_policy),
            (0.0, MixPolicy::Fixed(1.0))
        );
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }
}
