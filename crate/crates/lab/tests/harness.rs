use proud_core::datagen::GeneratorConfig;
use proud_lab::config::{Combination, ExperimentConfig, Variant};
use proud_lab::harness::{self, combinations, load_suite, run_combination, run_matrix};

fn quick(generator: GeneratorConfig) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        generator,
        ..ExperimentConfig::default()
    };
    cfg.pretrain.epochs = 15;
    cfg.hyper.epochs = 4;
    cfg.seeds = vec![2022];
    cfg
}

fn iid() -> GeneratorConfig {
    GeneratorConfig {
        n_per_domain: 240,
        rotations_deg: vec![0.0; 4],
        translations: vec![0.0; 4],
        spurious_strength: 0.0,
        ..GeneratorConfig::default()
    }
}

#[test]
fn default_suite_has_twelve_ordered_combinations() {
    let cfg = ExperimentConfig::default();
    let suite = load_suite(&cfg).unwrap();
    let combos = combinations(&cfg, &suite).unwrap();
    assert_eq!(combos.len(), 12);
    assert!(combos.iter().all(|(l, t)| l != t));
    let mut sorted = combos.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 12);

    let pair = ExperimentConfig {
        combination: Combination::Pair {
            labeled: 2,
            test: 0,
        },
        ..ExperimentConfig::default()
    };
    assert_eq!(combinations(&pair, &suite).unwrap(), vec![(2, 0)]);
}

#[test]
fn labeled_only_baseline_transfers_between_identical_domains() {
    // separation 4 over noise 1
    let mut cfg = quick(iid());
    cfg.variant = Variant::ErmLabeledOnly;
    let suite = load_suite(&cfg).unwrap();
    let r = run_combination(&cfg, &suite, 0, 3, 2022).unwrap();
    assert!(r.final_score >= 0.95, "accuracy {}", r.final_score);
}

#[test]
fn identically_distributed_domains_give_a_flat_matrix() {
    let mut cfg = quick(iid());
    cfg.variant = Variant::ErmLabeledOnly;
    let suite = load_suite(&cfg).unwrap();
    let report = run_matrix(&cfg, &suite, |_| {}).unwrap();
    assert_eq!(report.combinations.len(), 12);
    assert!(report.std < 0.02, "std {}", report.std);
    assert!(report.avg > 0.9, "avg {}", report.avg);
}

#[test]
fn aggregate_uses_combination_means_and_population_std() {
    let mut cfg = quick(GeneratorConfig {
        n_per_domain: 80,
        ..GeneratorConfig::default()
    });
    cfg.hyper.epochs = 2;
    cfg.seeds = vec![1, 2];
    let suite = load_suite(&cfg).unwrap();
    let report = run_matrix(&cfg, &suite, |_| {}).unwrap();
    assert_eq!(report.runs.len(), 24);
    let means: Vec<f64> = report
        .combinations
        .iter()
        .map(|c| {
            let scores: Vec<f64> = report
                .runs
                .iter()
                .filter(|r| (r.labeled, r.test) == (c.labeled, c.test))
                .map(|r| r.final_score)
                .collect();
            assert_eq!(scores.len(), 2);
            (scores[0] + scores[1]) / 2.0
        })
        .collect();
    let avg = means.iter().sum::<f64>() / 12.0;
    let var = means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / 12.0;
    assert!((report.avg - avg).abs() < 1e-12);
    assert!((report.std - var.sqrt()).abs() < 1e-12);
    for r in &report.runs {
        let tail = &r.history[r.history.len() - 2..];
        let want = tail.iter().map(|e| e.test_acc).sum::<f64>() / 2.0;
        assert!((r.final_score - want).abs() < 1e-12);
    }
}

#[test]
fn variants_share_pretraining_and_differ_afterwards() {
    let mut cfg = quick(GeneratorConfig {
        n_per_domain: 80,
        ..GeneratorConfig::default()
    });
    cfg.combination = Combination::Pair {
        labeled: 0,
        test: 2,
    };
    let suite = load_suite(&cfg).unwrap();
    let reports =
        harness::run_variants(&cfg, &suite, &[Variant::Proud, Variant::NoPml], |_| {}).unwrap();
    let (a, b) = (&reports[0].runs[0], &reports[1].runs[0]);
    assert_eq!(a.pretrain, b.pretrain);
    assert!(b.history.iter().all(|e| e.loss_pml == 0.0));
    assert!(a.history.iter().all(|e| e.loss_pml > 0.0));
    assert_ne!(reports[0].fingerprint, reports[1].fingerprint);
}

#[test]
fn fingerprint_tracks_every_setting() {
    let base = ExperimentConfig::default();
    assert_eq!(
        base.fingerprint(),
        ExperimentConfig::default().fingerprint()
    );
    type Edit = Box<dyn Fn(&mut ExperimentConfig)>;
    let edits: Vec<Edit> = vec![
        Box::new(|c| c.generator.noise_sigma = 1.1),
        Box::new(|c| c.generator.seed = 8),
        Box::new(|c| c.hidden = vec![32]),
        Box::new(|c| c.pretrain.lr = 0.1),
        Box::new(|c| c.hyper.alpha = 0.5),
        Box::new(|c| c.hyper.tau_eps = 0.2),
        Box::new(|c| c.hyper.lambda_star = 0.3),
        Box::new(|c| c.seeds = vec![1]),
        Box::new(|c| c.variant = Variant::NoUdmix),
        Box::new(|c| c.score_window = 3),
    ];
    for (i, edit) in edits.iter().enumerate() {
        let mut c = base.clone();
        edit(&mut c);
        assert_ne!(c.fingerprint(), base.fingerprint(), "edit {i}");
    }
}

#[test]
fn missing_domain_is_a_config_error() {
    let cfg = ExperimentConfig {
        combination: Combination::Pair {
            labeled: 0,
            test: 7,
        },
        ..ExperimentConfig::default()
    };
    let suite = load_suite(&cfg).unwrap();
    assert!(combinations(&cfg, &suite).unwrap_err().is_config());
}
