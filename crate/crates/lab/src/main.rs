use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use proud_lab::config::{Combination, ExperimentConfig};
use proud_lab::export;
use proud_lab::formats;
use proud_lab::harness::{self, RunReport};
use proud_lab::{LabError, Result};

#[derive(Parser)]
#[command(
    name = "proud",
    version,
    about = "Semi-supervised domain generalization experiments"
)]
struct Cli {
    /// Replace the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic suite and write it as a dataset file.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a CSV export.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Pretrain on the labeled domain and write a checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one combination over the configured seeds.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, requires = "test")]
        labeled: Option<usize>,
        #[arg(long, requires = "labeled")]
        test: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every (labeled, test) combination over the configured seeds.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// proud, no_udmix and no_pml on shared seeds and pretraining.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the summary table of an output directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn progress(quiet: bool) -> impl FnMut(&RunReport) {
    move |r: &RunReport| {
        if !quiet {
            eprintln!(
                "{:<16} labeled {} test {} seed {}: {:.1}% ({:.1}s)",
                r.variant.name(),
                r.labeled,
                r.test,
                r.seed,
                100.0 * r.final_score,
                r.wall_seconds
            );
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::GenerateData { config, out, csv } => {
            let cfg = load(&config, cli.seed)?;
            let mut gen = cfg.generator.clone();
            if let Some(s) = cli.seed {
                gen.seed = s;
            }
            let suite = proud_core::datagen::make_domain_suite(&gen, gen.seed)?;
            formats::write_dataset(&out, &suite)?;
            if let Some(csv) = csv {
                formats::write_dataset_csv(&csv, &suite)?;
            }
            if !quiet {
                eprintln!("wrote {} domains to {}", suite.domains.len(), out.display());
            }
        }
        Command::Pretrain { config, out } => {
            let cfg = load(&config, cli.seed)?;
            let suite = harness::load_suite(&cfg)?;
            let (labeled, test) = match cfg.combination {
                Combination::Pair { labeled, test } => (labeled, test),
                Combination::All => harness::combinations(&cfg, &suite)?[0],
            };
            let prep = harness::prepare(&cfg, &suite, labeled, test, cfg.seeds[0])?;
            formats::write_checkpoint(&out, &prep.model)?;
            if !quiet {
                eprintln!(
                    "pretrained on domain {labeled}: best epoch {} val acc {:.1}%",
                    prep.history.best_epoch,
                    100.0 * prep.history.best_val_acc
                );
            }
        }
        Command::Train {
            config,
            labeled,
            test,
            out,
        } => {
            let mut cfg = load(&config, cli.seed)?;
            if let (Some(labeled), Some(test)) = (labeled, test) {
                cfg.combination = Combination::Pair { labeled, test };
            }
            if cfg.combination == Combination::All {
                return Err(LabError::Config(
                    "train needs a combination: pass --labeled and --test or set run.labeled/run.test".into(),
                ));
            }
            cfg.validate()?;
            let suite = harness::load_suite(&cfg)?;
            let report = harness::run_matrix(&cfg, &suite, progress(quiet))?;
            export::export_report(&report, &out)?;
        }
        Command::Matrix { config, out } => {
            let mut cfg = load(&config, cli.seed)?;
            cfg.combination = Combination::All;
            let suite = harness::load_suite(&cfg)?;
            let report = harness::run_matrix(&cfg, &suite, progress(quiet))?;
            export::export_report(&report, &out)?;
            if !quiet {
                print!("{}", export::format_summary(&export::summary(&report)));
            }
        }
        Command::Ablate { config, out } => {
            let mut cfg = load(&config, cli.seed)?;
            cfg.combination = Combination::All;
            let suite = harness::load_suite(&cfg)?;
            let report = harness::run_ablation(&cfg, &suite, progress(quiet))?;
            export::export_ablation(&report, &out)?;
            let ablation = export::read_ablation(&out.join(export::ABLATION_FILE))?;
            if !quiet {
                print!("{}", export::format_ablation(&ablation));
            }
        }
        Command::Report { input } => {
            let ablation = input.join(export::ABLATION_FILE);
            if ablation.exists() {
                let rows = export::read_ablation(&ablation)?;
                print!("{}", export::format_ablation(&rows));
                for r in &rows {
                    let s =
                        export::read_summary(&input.join(&r.variant).join(export::SUMMARY_FILE))?;
                    print!("\n{}", export::format_summary(&s));
                }
            } else {
                let s = export::read_summary(&input.join(export::SUMMARY_FILE))?;
                print!("{}", export::format_summary(&s));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
