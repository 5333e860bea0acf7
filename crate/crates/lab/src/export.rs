//! Report persistence: `metrics.csv`, `summary.json`, `embeddings.bin`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::CODE_VERSION;
use crate::error::{LabError, Result};
use crate::formats::{self, BlockKind, EmbeddingBlock, RunEmbeddings};
use crate::harness::{AblationReport, MatrixReport};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const ABLATION_FILE: &str = "ablation.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationJson {
    pub labeled: usize,
    pub test: usize,
    pub mean: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryJson {
    pub variant: String,
    pub code_version: String,
    pub fingerprint: String,
    pub seeds: Vec<u64>,
    pub avg: f64,
    pub std: f64,
    pub combinations: Vec<CombinationJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub avg: f64,
    pub std: f64,
    /// `avg - avg(proud)`.
    pub diff: f64,
}

/// One parsed `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub labeled: usize,
    pub test: usize,
    pub seed: u64,
    pub epoch: usize,
    pub test_acc: f64,
    pub pl_acc: Vec<f64>,
    pub mean_lambda: Vec<f64>,
    pub loss_ce: f64,
    pub loss_pml: f64,
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        v.to_string()
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

pub fn summary(report: &MatrixReport) -> SummaryJson {
    SummaryJson {
        variant: report.variant.name().into(),
        code_version: CODE_VERSION.into(),
        fingerprint: report.fingerprint.clone(),
        seeds: report.seeds.clone(),
        avg: report.avg,
        std: report.std,
        combinations: report
            .combinations
            .iter()
            .map(|c| CombinationJson {
                labeled: c.labeled,
                test: c.test,
                mean: c.mean,
                per_seed: c.per_seed.clone(),
            })
            .collect(),
    }
}

/// Column `t` of the unlabeled-source columns is the `t`-th unlabeled domain
/// in ascending id order.
pub fn write_metrics(path: &Path, report: &MatrixReport) -> Result<()> {
    let sources = report
        .runs
        .iter()
        .map(|r| r.sources.len())
        .max()
        .unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::format(path, e.to_string()))?;
    let csv_err = |e: csv::Error| LabError::format(path, e.to_string());
    let mut head: Vec<String> = ["labeled", "test", "seed", "epoch", "test_acc"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for t in 1..=sources {
        head.push(format!("pl_acc_{t}"));
        head.push(format!("mean_lambda_{t}"));
    }
    head.push("loss_ce".into());
    head.push("loss_pml".into());
    w.write_record(&head).map_err(csv_err)?;
    for run in &report.runs {
        for rec in &run.history {
            let mut row = vec![
                run.labeled.to_string(),
                run.test.to_string(),
                run.seed.to_string(),
                rec.epoch.to_string(),
                num(rec.test_acc),
            ];
            for t in 0..sources {
                row.push(num(rec.pl_acc.get(t).copied().unwrap_or(f64::NAN)));
                row.push(num(rec.mean_lambda.get(t).copied().unwrap_or(f64::NAN)));
            }
            row.push(num(rec.loss_ce));
            row.push(num(rec.loss_pml));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::format(path, e.to_string()))?;
    let head = r
        .headers()
        .map_err(|e| LabError::format(path, e.to_string()))?
        .clone();
    let sources = head.iter().filter(|h| h.starts_with("pl_acc_")).count();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| LabError::format(path, e.to_string()))?;
        let bad = || LabError::format(path, format!("row {}: malformed", i + 2));
        let f =
            |j: usize| -> Result<f64> { rec.get(j).and_then(|v| v.parse().ok()).ok_or_else(bad) };
        let u =
            |j: usize| -> Result<u64> { rec.get(j).and_then(|v| v.parse().ok()).ok_or_else(bad) };
        let mut pl_acc = Vec::with_capacity(sources);
        let mut mean_lambda = Vec::with_capacity(sources);
        for t in 0..sources {
            pl_acc.push(f(5 + 2 * t)?);
            mean_lambda.push(f(6 + 2 * t)?);
        }
        rows.push(MetricsRow {
            labeled: u(0)? as usize,
            test: u(1)? as usize,
            seed: u(2)?,
            epoch: u(3)? as usize,
            test_acc: f(4)?,
            pl_acc,
            mean_lambda,
            loss_ce: f(5 + 2 * sources)?,
            loss_pml: f(6 + 2 * sources)?,
        });
    }
    Ok(rows)
}

/// Final normalized features, per-domain prototypes and anchors of every run
/// that built prototypes.
pub fn embeddings(report: &MatrixReport) -> Vec<RunEmbeddings> {
    report
        .runs
        .iter()
        .filter_map(|run| {
            let bank = run.bank.as_ref()?;
            let mut blocks: Vec<EmbeddingBlock> = run
                .features
                .iter()
                .map(|(id, f)| EmbeddingBlock {
                    domain_id: *id,
                    kind: BlockKind::Features,
                    values: f.clone(),
                })
                .collect();
            for (id, p) in bank.domain_ids.iter().zip(&bank.prototypes) {
                blocks.push(EmbeddingBlock {
                    domain_id: *id,
                    kind: BlockKind::Prototypes,
                    values: p.clone(),
                });
            }
            blocks.push(EmbeddingBlock {
                domain_id: run.labeled,
                kind: BlockKind::Anchors,
                values: bank.anchors.clone(),
            });
            Some(RunEmbeddings {
                labeled: run.labeled,
                test: run.test,
                seed: run.seed,
                blocks,
            })
        })
        .collect()
}

pub fn export_report(report: &MatrixReport, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    write_metrics(&out_dir.join(METRICS_FILE), report)?;
    let json = serde_json::to_string_pretty(&summary(report)).expect("summary serializes");
    write_file(&out_dir.join(SUMMARY_FILE), json.as_bytes())?;
    formats::write_embeddings(&out_dir.join(EMBEDDINGS_FILE), &embeddings(report))
}

/// One subdirectory per variant plus `ablation.json` with the differences.
pub fn export_ablation(report: &AblationReport, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    for r in &report.reports {
        export_report(r, &out_dir.join(r.variant.name()))?;
    }
    let rows: Vec<AblationRow> = report
        .reports
        .iter()
        .zip(report.diffs())
        .map(|(r, (_, d))| AblationRow {
            variant: r.variant.name().into(),
            avg: r.avg,
            std: r.std,
            diff: d,
        })
        .collect();
    let json = serde_json::to_string_pretty(&rows).expect("ablation rows serialize");
    write_file(&out_dir.join(ABLATION_FILE), json.as_bytes())
}

pub fn read_summary(path: &Path) -> Result<SummaryJson> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::format(path, e.to_string()))
}

pub fn read_ablation(path: &Path) -> Result<Vec<AblationRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::format(path, e.to_string()))
}

/// Per-combination table with an Avg/Std footer, accuracies in percent.
pub fn format_summary(s: &SummaryJson) -> String {
    let mut out = format!("variant {}  seeds {:?}\n", s.variant, s.seeds);
    out.push_str("labeled  test    mean  per-seed\n");
    for c in &s.combinations {
        let per: Vec<String> = c
            .per_seed
            .iter()
            .map(|v| format!("{:.1}", 100.0 * v))
            .collect();
        out.push_str(&format!(
            "{:>7}  {:>4}  {:>6.1}  {}\n",
            c.labeled,
            c.test,
            100.0 * c.mean,
            per.join(" ")
        ));
    }
    out.push_str(&format!(
        "Avg {:.1}  Std {:.1}\n",
        100.0 * s.avg,
        100.0 * s.std
    ));
    out
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant            Avg    Std   Diff\n");
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:>5.1}  {:>5.1}  {:>+5.1}\n",
            r.variant,
            100.0 * r.avg,
            100.0 * r.std,
            100.0 * r.diff
        ));
    }
    out
}
