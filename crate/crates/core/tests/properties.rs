//! Analytic invariants as property tests, plus small closed-form oracles.

use proptest::prelude::*;
use proud_core::autodiff::{softmax, Param, ParamId, Sgd, Tape, Tensor};
use proud_core::datagen::{class_counts, make_domain_suite, split_indices, GeneratorConfig};
use proud_core::model::{Model, ModelSpec};
use proud_core::proud::{
    lambda_from_uncertainty, mixing_ratio, pml_values, sample_match, udmix,
    uncertainty_from_distances, ClassIndex, MixPolicy, MixingRule, PrototypeBank,
};
use proud_core::rng;

const LN4: f64 = std::f64::consts::LN_2 * 2.0;

proptest! {
    #[test]
    fn entropy_is_bounded(d in prop::collection::vec(0.0f64..2.0, 2..6), tau in 0.01f64..2.0) {
        let eps = uncertainty_from_distances(&d, tau).unwrap();
        prop_assert!(eps >= 0.0);
        prop_assert!(eps <= (d.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn uniform_distances_maximize_entropy(d in 0.0f64..2.0, k in 2usize..8, tau in 0.01f64..2.0) {
        let eps = uncertainty_from_distances(&vec![d; k], tau).unwrap();
        prop_assert!((eps - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn logistic_ratio_is_in_half_open_interval(eps in 0.0f64..1.4, tau in 0.01f64..1.0) {
        let l = lambda_from_uncertainty(eps, tau);
        prop_assert!(l > 0.0 && l <= 0.5);
    }

    #[test]
    fn mixing_ratio_is_a_probability(eps in 0.0f64..1.4, seed in any::<u64>(), policy in 0usize..3) {
        let policy = [MixPolicy::Adaptive, MixPolicy::Uniform, MixPolicy::Fixed(0.3)][policy];
        let rule = MixingRule { policy, tau_lambda: 0.1, lambda_star: 0.4 };
        let lam = mixing_ratio(eps, &rule, &mut rng::stream(seed, 0));
        prop_assert!((0.0..=1.0).contains(&lam));
    }

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..10), tau in 0.05f64..5.0) {
        let p = softmax(&v, tau).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(2, v.len() / 2 + 1, (0..2 * (v.len() / 2 + 1)).map(|i| v[i % v.len()]).collect()).unwrap());
        let s = tape.softmax(x, tau).unwrap();
        for row in tape.value(s).rows_iter() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn udmix_endpoints_are_bitwise(
        xl in prop::collection::vec(prop_oneof![Just(0.0), Just(-0.0), -1e3f64..1e3], 6),
        xu in prop::collection::vec(prop_oneof![Just(0.0), Just(-0.0), -1e3f64..1e3], 6),
    ) {
        let l = Tensor::from_vec(2, 3, xl).unwrap();
        let u = Tensor::from_vec(2, 3, xu).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let (m0, _) = udmix(&l, &u, &[1, 0], &[1, 0], &[0.0, 0.0]).unwrap();
        let (m1, _) = udmix(&l, &u, &[1, 0], &[1, 0], &[1.0, 1.0]).unwrap();
        prop_assert_eq!(bits(&m0), bits(&l));
        prop_assert_eq!(bits(&m1), bits(&u));
    }

    #[test]
    fn anchors_are_the_stored_mean(blocks in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..5)) {
        let protos: Vec<Tensor> = blocks.iter().map(|b| Tensor::from_vec(3, 2, b.clone()).unwrap()).collect();
        let ids = (0..protos.len()).collect();
        let bank = PrototypeBank::new(ids, protos.clone(), 0).unwrap();
        for e in 0..6 {
            let mut s = 0.0;
            for p in &protos {
                s += p.data()[e];
            }
            prop_assert_eq!(bank.anchors.data()[e], s / protos.len() as f64);
        }
    }

    #[test]
    fn sample_match_pairs_share_class(labels in prop::collection::vec(0usize..3, 3..40), pseudo in prop::collection::vec(0usize..3, 1..40), seed in any::<u64>()) {
        let mut labels = labels;
        labels.extend([0, 1, 2]);
        let idx = ClassIndex::new(&labels, 3).unwrap();
        let picks = sample_match(&pseudo, &idx, &mut rng::stream(seed, 0)).unwrap();
        prop_assert_eq!(picks.len(), pseudo.len());
        for (p, y) in picks.iter().zip(&pseudo) {
            prop_assert_eq!(labels[*p], *y);
        }
    }

    #[test]
    fn split_is_a_stratified_partition(n_per in 2usize..40, k in 2usize..5, ratio in 0.1f64..0.9, seed in any::<u64>()) {
        let labels: Vec<usize> = (0..n_per * k).map(|i| i % k).collect();
        let (tr, va) = split_indices(&labels, k, (ratio, 1.0 - ratio), seed).unwrap();
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        let pick = |ix: &[usize]| ix.iter().map(|&i| labels[i]).collect::<Vec<_>>();
        prop_assert!(class_counts(&pick(&tr), k).unwrap().iter().all(|&c| c >= 1));
        prop_assert!(class_counts(&pick(&va), k).unwrap().iter().all(|&c| c >= 1));
    }
}

#[test]
fn logistic_rule_is_strictly_decreasing() {
    assert_eq!(lambda_from_uncertainty(0.0, 0.1), 0.5);
    for tau in [0.1, 0.5, 1.0] {
        let grid: Vec<f64> = (0..100).map(|i| LN4 * i as f64 / 99.0).collect();
        for w in grid.windows(2) {
            assert!(lambda_from_uncertainty(w[1], tau) < lambda_from_uncertainty(w[0], tau));
        }
    }
}

#[test]
fn sample_match_draws_uniformly_within_class() {
    // 5 members of class 1; chi-square with 4 dof, p > 0.01 needs stat < 13.28
    let labels = [1, 0, 1, 2, 1, 1, 0, 2, 1];
    let members = [0, 2, 4, 5, 8];
    let idx = ClassIndex::new(&labels, 3).unwrap();
    let draws = 10_000;
    let picks = sample_match(&vec![1; draws], &idx, &mut rng::stream(77, 0)).unwrap();
    let expected = draws as f64 / members.len() as f64;
    let stat: f64 = members
        .iter()
        .map(|m| {
            let c = picks.iter().filter(|&&p| p == *m).count() as f64;
            (c - expected).powi(2) / expected
        })
        .sum();
    assert!(stat < 13.28, "chi-square {stat}");
}

#[test]
fn closed_form_oracles() {
    let p = softmax(&[1.0, 2.0], 1.0).unwrap();
    assert!((p[0] - 1.0 / (1.0 + std::f64::consts::E)).abs() < 1e-15);
    assert!((p[0] - 0.2689414213699951).abs() < 1e-15);

    let mut t = Tape::new();
    let logits = t.constant(Tensor::filled(3, 4, 0.25));
    let targets = Tensor::one_hot(&[0, 3, 1], 4).unwrap();
    let ce = t.cross_entropy(logits, &targets).unwrap();
    assert!((t.value(ce).data()[0] - LN4).abs() < 1e-15);

    // features on the anchor, other anchors at the antipode: ln(1 + (K-1) e^-2)
    let anchors = Tensor::from_vec(4, 2, vec![1.0, 0.0, -1.0, 0.0, -1.0, 0.0, -1.0, 0.0]).unwrap();
    let on = Tensor::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
    let v = pml_values(&on, &[0], &anchors).unwrap()[0];
    assert!((v - (1.0 + 3.0 * (-2.0f64).exp()).ln()).abs() < 1e-12);
    let eq = Tensor::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]).unwrap();
    let diag = Tensor::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
    assert!(pml_values(&diag, &[0], &eq).is_err());
    let mid = Tensor::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let sym = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    for v in pml_values(&mid, &[0, 1], &sym).unwrap() {
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn diamond_graph_accumulates_both_paths() {
    // y = a*b + a*a at a=3, b=-2: dy/da = b + 2a = 4, dy/db = a = 3
    let mut t = Tape::new();
    let a = t.variable(Tensor::scalar(3.0));
    let b = t.variable(Tensor::scalar(-2.0));
    let ab = t.mul(a, b).unwrap();
    let aa = t.mul(a, a).unwrap();
    let y = t.add(ab, aa).unwrap();
    t.backward(y).unwrap();
    assert_eq!(t.grad(a).unwrap().data()[0], 4.0);
    assert_eq!(t.grad(b).unwrap().data()[0], 3.0);
}

#[test]
fn sgd_momentum_minimizes_a_quadratic() {
    // f(w) = |w - c|^2 / 2
    let c = [3.0, -1.0];
    let mut params = vec![Param {
        id: ParamId(0),
        name: "w".into(),
        value: Tensor::zeros(1, 2),
    }];
    let mut sgd = Sgd::new(0.1, 0.9, 0.0).unwrap();
    for _ in 0..300 {
        let mut t = Tape::new();
        let w = t.param(ParamId(0), params[0].value.clone());
        let target = t.constant(Tensor::from_vec(1, 2, c.to_vec()).unwrap());
        let diff = t.sub(w, target).unwrap();
        let sq = t.mul(diff, diff).unwrap();
        let s = t.sum(sq);
        let loss = t.scale(s, 0.5);
        let grads = t.backward(loss).unwrap();
        sgd.step(&mut params, &grads).unwrap();
    }
    for (w, c) in params[0].value.data().iter().zip(c) {
        assert!((w - c).abs() < 1e-6);
    }
}

#[test]
fn he_init_scale() {
    let spec = ModelSpec {
        input_dim: 16,
        hidden: vec![64, 64],
        feature_dim: 16,
        classes: 4,
    };
    for name in ["g.0.weight", "g.1.weight", "g.2.weight", "h.weight"] {
        let mut sq = 0.0;
        let mut n = 0.0;
        let mut fan_in = 0;
        for seed in 0..10 {
            let m = Model::init(spec.clone(), seed).unwrap();
            let p = m.params().iter().find(|p| p.name == name).unwrap();
            fan_in = p.value.rows();
            for v in p.value.data() {
                sq += v * v;
                n += 1.0;
            }
        }
        let sd = (sq / n).sqrt();
        let want = (2.0 / fan_in as f64).sqrt();
        assert!((sd / want - 1.0).abs() < 0.1, "{name}: {sd} vs {want}");
    }
}

#[test]
fn generator_is_balanced_and_reproducible() {
    let cfg = GeneratorConfig {
        n_per_domain: 203,
        ..GeneratorConfig::default()
    };
    let a = make_domain_suite(&cfg, 5).unwrap();
    let b = make_domain_suite(&cfg, 5).unwrap();
    assert_eq!(a, b);
    for d in &a.domains {
        let c = class_counts(d.labels().unwrap(), 4).unwrap();
        assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
    }
}
