//! Experiment orchestration: one (labeled, test, seed) run, the full
//! combination matrix, and the shared-seed ablation.

use std::time::Instant;

use proud_core::autodiff::Tensor;
use proud_core::datagen::{make_domain_suite, split, DatasetSuite, DomainDataset, Partition};
use proud_core::model::{pretrain, Model, PretrainHistory};
use proud_core::proud::{erm_train, proud_train, EpochRecord, PrototypeBank};

use crate::config::{Combination, ExperimentConfig, Variant};
use crate::error::{LabError, Result};
use crate::formats;

#[derive(Debug, Clone)]
pub struct RunReport {
    pub variant: Variant,
    pub labeled: usize,
    pub test: usize,
    pub seed: u64,
    /// Unlabeled source ids in column order.
    pub sources: Vec<usize>,
    pub pretrain: PretrainHistory,
    pub history: Vec<EpochRecord>,
    /// Mean test accuracy over the last `score_window` epochs.
    pub final_score: f64,
    pub wall_seconds: f64,
    pub fingerprint: String,
    pub bank: Option<PrototypeBank>,
    pub features: Vec<(usize, Tensor)>,
    /// Reads of the test domain's data, all from evaluation.
    pub test_reads: usize,
    /// Reads of hidden labels, all from the pseudo-label metric.
    pub hidden_reads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinationSummary {
    pub labeled: usize,
    pub test: usize,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone)]
pub struct MatrixReport {
    pub variant: Variant,
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunReport>,
    pub combinations: Vec<CombinationSummary>,
    /// Mean of the combination means.
    pub avg: f64,
    /// Population standard deviation of the combination means.
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub reports: Vec<MatrixReport>,
}

impl AblationReport {
    pub fn get(&self, v: Variant) -> Option<&MatrixReport> {
        self.reports.iter().find(|r| r.variant == v)
    }

    /// `Avg(variant) - Avg(first variant)` for every report.
    pub fn diffs(&self) -> Vec<(Variant, f64)> {
        let base = self.reports.first().map_or(0.0, |r| r.avg);
        self.reports
            .iter()
            .map(|r| (r.variant, r.avg - base))
            .collect()
    }
}

pub fn load_suite(cfg: &ExperimentConfig) -> Result<DatasetSuite> {
    match &cfg.data_path {
        Some(p) => formats::read_dataset(p),
        None => Ok(make_domain_suite(&cfg.generator, cfg.generator.seed)?),
    }
}

/// Every ordered (labeled, test) pair of distinct domains, or the configured pair.
pub fn combinations(cfg: &ExperimentConfig, suite: &DatasetSuite) -> Result<Vec<(usize, usize)>> {
    let ids: Vec<usize> = suite.domains.iter().map(|d| d.domain_id).collect();
    match cfg.combination {
        Combination::Pair { labeled, test } => {
            for id in [labeled, test] {
                if !ids.contains(&id) {
                    return Err(LabError::Config(format!("suite has no domain {id}")));
                }
            }
            Ok(vec![(labeled, test)])
        }
        Combination::All => Ok(ids
            .iter()
            .flat_map(|&l| ids.iter().filter(move |&&t| t != l).map(move |&t| (l, t)))
            .collect()),
    }
}

/// The pretrained starting point shared by every variant of one (labeled, test, seed).
pub struct Prepared {
    pub partition: Partition,
    pub train: DomainDataset,
    pub val: DomainDataset,
    pub model: Model,
    pub history: PretrainHistory,
}

pub fn prepare(
    cfg: &ExperimentConfig,
    suite: &DatasetSuite,
    labeled: usize,
    test: usize,
    seed: u64,
) -> Result<Prepared> {
    let partition = suite.partition(labeled, test)?;
    if partition.unlabeled.is_empty() {
        return Err(LabError::Config(format!(
            "combination ({labeled}, {test}) leaves no unlabeled source domain"
        )));
    }
    let ratio = (cfg.train_fraction, 1.0 - cfg.train_fraction);
    let (train, val) = split(&partition.labeled, suite.classes, ratio, seed)?;
    let init = Model::init(cfg.model_spec(suite.dim, suite.classes), seed)?;
    let (model, history) = pretrain(&init, &train, &val, &cfg.pretrain, seed)?;
    Ok(Prepared {
        partition,
        train,
        val,
        model,
        history,
    })
}

pub fn run_prepared(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    variant: Variant,
    seed: u64,
) -> Result<RunReport> {
    let start = Instant::now();
    let hyper = variant.apply(&cfg.hyper);
    let part = &prep.partition;
    let (test_before, hidden_before) = (part.test.reads(), hidden_reads(part));
    let outcome = match variant {
        Variant::ErmLabeledOnly => erm_train(
            &prep.model,
            &prep.train,
            part.unlabeled.len(),
            &part.test,
            &hyper,
            seed,
        )?,
        _ => proud_train(
            &prep.model,
            &prep.train,
            &part.unlabeled,
            &part.hidden,
            &part.test,
            &hyper,
            seed,
        )?,
    };
    let window = cfg.score_window.min(outcome.history.len());
    let final_score = if window == 0 {
        prep.model.accuracy(part.test.open_for_evaluation())?
    } else {
        let tail = &outcome.history[outcome.history.len() - window..];
        tail.iter().map(|r| r.test_acc).sum::<f64>() / window as f64
    };
    Ok(RunReport {
        variant,
        labeled: part.labeled.domain_id,
        test: part.test.domain_id(),
        seed,
        sources: part.unlabeled.iter().map(|d| d.domain_id).collect(),
        pretrain: prep.history.clone(),
        history: outcome.history,
        final_score,
        wall_seconds: start.elapsed().as_secs_f64(),
        fingerprint: variant_fingerprint(cfg, variant),
        bank: outcome.bank,
        features: outcome.features,
        test_reads: part.test.reads() - test_before,
        hidden_reads: hidden_reads(part) - hidden_before,
    })
}

fn variant_fingerprint(cfg: &ExperimentConfig, variant: Variant) -> String {
    let mut c = cfg.clone();
    c.variant = variant;
    c.fingerprint()
}

fn hidden_reads(part: &Partition) -> usize {
    part.hidden.iter().map(|h| h.reads()).sum()
}

pub fn run_combination(
    cfg: &ExperimentConfig,
    suite: &DatasetSuite,
    labeled: usize,
    test: usize,
    seed: u64,
) -> Result<RunReport> {
    cfg.validate()?;
    let prep = prepare(cfg, suite, labeled, test, seed)?;
    run_prepared(cfg, &prep, cfg.variant, seed)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Avg and (population) Std over combination means.
pub fn aggregate(variant: Variant, cfg: &ExperimentConfig, runs: Vec<RunReport>) -> MatrixReport {
    let mut combinations: Vec<CombinationSummary> = Vec::new();
    for r in &runs {
        match combinations
            .iter_mut()
            .find(|c| (c.labeled, c.test) == (r.labeled, r.test))
        {
            Some(c) => c.per_seed.push(r.final_score),
            None => combinations.push(CombinationSummary {
                labeled: r.labeled,
                test: r.test,
                per_seed: vec![r.final_score],
                mean: 0.0,
            }),
        }
    }
    for c in &mut combinations {
        c.mean = mean(&c.per_seed);
    }
    let means: Vec<f64> = combinations.iter().map(|c| c.mean).collect();
    let avg = mean(&means);
    let std =
        (means.iter().map(|m| (m - avg) * (m - avg)).sum::<f64>() / means.len() as f64).sqrt();
    MatrixReport {
        variant,
        fingerprint: variant_fingerprint(cfg, variant),
        seeds: cfg.seeds.clone(),
        runs,
        combinations,
        avg,
        std,
    }
}

/// Runs `variants` over every configured combination and seed, sharing each
/// (combination, seed) pretraining across variants.
pub fn run_variants(
    cfg: &ExperimentConfig,
    suite: &DatasetSuite,
    variants: &[Variant],
    mut progress: impl FnMut(&RunReport),
) -> Result<Vec<MatrixReport>> {
    cfg.validate()?;
    let combos = combinations(cfg, suite)?;
    let mut runs: Vec<Vec<RunReport>> = variants.iter().map(|_| Vec::new()).collect();
    for &(labeled, test) in &combos {
        for &seed in &cfg.seeds {
            let prep = prepare(cfg, suite, labeled, test, seed)?;
            for (slot, &v) in runs.iter_mut().zip(variants) {
                let report = run_prepared(cfg, &prep, v, seed)?;
                progress(&report);
                slot.push(report);
            }
        }
    }
    Ok(variants
        .iter()
        .zip(runs)
        .map(|(&v, r)| aggregate(v, cfg, r))
        .collect())
}

pub fn run_matrix(
    cfg: &ExperimentConfig,
    suite: &DatasetSuite,
    progress: impl FnMut(&RunReport),
) -> Result<MatrixReport> {
    let mut reports = run_variants(cfg, suite, &[cfg.variant], progress)?;
    Ok(reports.remove(0))
}

pub const ABLATION_VARIANTS: [Variant; 3] = [Variant::Proud, Variant::NoUdmix, Variant::NoPml];

pub fn run_ablation(
    cfg: &ExperimentConfig,
    suite: &DatasetSuite,
    progress: impl FnMut(&RunReport),
) -> Result<AblationReport> {
    Ok(AblationReport {
        reports: run_variants(cfg, suite, &ABLATION_VARIANTS, progress)?,
    })
}
