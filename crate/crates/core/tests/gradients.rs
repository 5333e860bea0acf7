//! Central finite-difference checks of every tape operation and loss.

use proud_core::autodiff::{Axis, Tape, Tensor, Var};
use proud_core::model::{
    mixup_ce_loss, mixup_ce_loss_with_plan, MixPlan, MixupTargets, Model, ModelSpec,
};
use proud_core::proud::pml_loss;
use proud_core::rng::{self, Rng};
use proud_core::Result;
use rand::Rng as _;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Compares tape gradients of `f` w.r.t. every input against central differences.
fn check_inputs(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (j, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[j].rows(), inputs[j].cols()));
        for e in 0..inputs[j].len() {
            let mut plus = inputs.clone();
            plus[j].data_mut()[e] += STEP;
            let mut minus = inputs.clone();
            minus[j].data_mut()[e] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[e], numeric));
        }
    }
    worst
}

/// Compares parameter gradients of a model loss against central differences.
fn check_params(model: &Model, f: impl Fn(&Model, &mut Tape) -> Result<Var>) -> f64 {
    let eval = |m: &Model| -> f64 {
        let mut tape = Tape::new();
        let out = f(m, &mut tape).unwrap();
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let out = f(model, &mut tape).unwrap();
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (pi, p) in model.params().iter().enumerate() {
        let zero = Tensor::zeros(p.value.rows(), p.value.cols());
        let g = grads.get(&p.id).unwrap_or(&zero);
        for e in 0..p.value.len() {
            let mut plus = model.clone();
            plus.params_mut()[pi].value.data_mut()[e] += STEP;
            let mut minus = model.clone();
            minus.params_mut()[pi].value.data_mut()[e] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(g.data()[e], numeric));
        }
    }
    worst
}

fn small_model(seed: u64) -> Model {
    let spec = ModelSpec {
        input_dim: 5,
        hidden: vec![7, 6],
        feature_dim: 4,
        classes: 3,
    };
    let mut m = Model::init(spec, seed).unwrap();
    // nonzero biases so every path is exercised
    let mut rng = rng::stream(seed, 99);
    for p in m.params_mut() {
        if p.name.ends_with("bias") {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    m
}

fn labels(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

#[test]
fn primitive_gradients() {
    let mut rng = rng::stream(1, 0);
    let a = random(3, 4, &mut rng);
    let b = random(4, 2, &mut rng);
    let c = random(3, 4, &mut rng);
    let pos = random(3, 4, &mut rng).map(|v| v.abs() + 0.5);
    let s = random(1, 1, &mut rng);
    let cases: Vec<(&str, f64)> = vec![
        (
            "matmul",
            check_inputs(vec![a.clone(), b.clone()], |t, v| {
                let m = t.matmul(v[0], v[1])?;
                let sq = t.mul(m, m)?;
                Ok(t.sum(sq))
            }),
        ),
        (
            "add/sub/mul",
            check_inputs(vec![a.clone(), c.clone()], |t, v| {
                let x = t.add(v[0], v[1])?;
                let y = t.sub(x, v[1])?;
                let z = t.mul(y, v[1])?;
                Ok(t.mean(z))
            }),
        ),
        (
            "scalar broadcast",
            check_inputs(vec![a.clone(), s.clone()], |t, v| {
                let x = t.mul(v[0], v[1])?;
                let y = t.sub(v[1], x)?;
                let z = t.mul(y, y)?;
                Ok(t.sum(z))
            }),
        ),
        (
            "scale/exp/log",
            check_inputs(vec![pos.clone()], |t, v| {
                let l = t.log(v[0])?;
                let e = t.exp(l);
                let e = t.scale(e, 0.7);
                let m = t.mul(e, l)?;
                Ok(t.sum(m))
            }),
        ),
        (
            "relu",
            check_inputs(vec![a.clone()], |t, v| {
                let r = t.relu(v[0]);
                let sq = t.mul(r, r)?;
                Ok(t.sum(sq))
            }),
        ),
        (
            "concat/select",
            check_inputs(vec![a.clone(), c.clone()], |t, v| {
                let cat = t.concat_rows(&[v[0], v[1]])?;
                let sel = t.select_rows(cat, &[5, 0, 0, 3])?;
                let sq = t.mul(sel, sel)?;
                Ok(t.sum(sq))
            }),
        ),
        (
            "softmax",
            check_inputs(vec![a.clone(), c.clone()], |t, v| {
                let p = t.softmax(v[0], 0.7)?;
                let w = t.mul(p, v[1])?;
                Ok(t.sum(w))
            }),
        ),
        (
            "l2_normalize rows",
            check_inputs(vec![a.clone(), c.clone()], |t, v| {
                let n = t.l2_normalize(v[0], Axis::Rows)?;
                let w = t.mul(n, v[1])?;
                Ok(t.sum(w))
            }),
        ),
        (
            "l2_normalize cols",
            check_inputs(vec![a.clone(), c.clone()], |t, v| {
                let n = t.l2_normalize(v[0], Axis::Cols)?;
                let w = t.mul(n, v[1])?;
                Ok(t.sum(w))
            }),
        ),
        (
            "cosine_distance",
            check_inputs(
                vec![random(1, 5, &mut rng), random(1, 5, &mut rng)],
                |t, v| t.cosine_distance(v[0], v[1]),
            ),
        ),
        ("cross_entropy soft", {
            let targets = Tensor::from_vec(3, 2, vec![0.2, 0.8, 1.0, 0.0, 0.5, 0.5]).unwrap();
            check_inputs(vec![random(3, 2, &mut rng)], move |t, v| {
                t.cross_entropy(v[0], &targets)
            })
        }),
    ];
    for (name, err) in cases {
        assert!(err < TOL, "{name}: max relative error {err:e}");
    }
}

#[test]
fn cross_entropy_parameter_gradients() {
    for seed in 0..4 {
        let m = small_model(seed);
        let mut rng = rng::stream(seed, 5);
        let x = random(6, 5, &mut rng);
        let y = Tensor::one_hot(&labels(6, 3, &mut rng), 3).unwrap();
        let err = check_params(&m, |m, t| {
            let b = m.bind(t);
            let xv = t.constant(x.clone());
            let logits = m.forward_logits(t, &b, xv)?;
            t.cross_entropy(logits, &y)
        });
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn mixup_parameter_gradients() {
    for seed in 0..4 {
        let m = small_model(seed);
        let mut rng = rng::stream(seed, 6);
        let x = random(6, 5, &mut rng);
        let y = Tensor::one_hot(&labels(6, 3, &mut rng), 3).unwrap();
        let plan = MixPlan::draw(6, 0.4, &mut rng).unwrap();
        for mode in [MixupTargets::Soft, MixupTargets::Hard] {
            let err = check_params(&m, |m, t| {
                let b = m.bind(t);
                let xv = t.constant(x.clone());
                mixup_ce_loss_with_plan(m, t, &b, xv, &y, &plan, mode)
            });
            assert!(err < TOL, "seed {seed} {mode:?}: {err:e}");
        }
    }
}

#[test]
fn pml_parameter_gradients() {
    for seed in 0..4 {
        let m = small_model(seed);
        let mut rng = rng::stream(seed, 7);
        let x = random(8, 5, &mut rng);
        let y = labels(8, 3, &mut rng);
        let anchors = random(3, 4, &mut rng);
        let err = check_params(&m, |m, t| {
            let b = m.bind(t);
            let xv = t.constant(x.clone());
            pml_loss(m, t, &b, xv, &y, &anchors)
        });
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn pml_sends_no_gradient_to_anchors_and_reaches_every_parameter() {
    let m = small_model(3);
    let mut rng = rng::stream(3, 8);
    let x = random(8, 5, &mut rng);
    let y = labels(8, 3, &mut rng);
    let anchors = random(3, 4, &mut rng);
    let mut t = Tape::new();
    let b = m.bind(&mut t);
    let xv = t.constant(x);
    let loss = pml_loss(&m, &mut t, &b, xv, &y, &anchors).unwrap();
    let grads = t.backward(loss).unwrap();
    // g's parameters get gradient, h's are unused by this loss
    let g_params = m
        .params()
        .iter()
        .filter(|p| p.name.starts_with("g."))
        .count();
    assert_eq!(grads.len(), g_params);
    assert!(m
        .params()
        .iter()
        .filter(|p| p.name.starts_with("g."))
        .all(|p| grads.contains_key(&p.id)));
}

#[test]
fn mixup_degenerate_coefficient_equals_plain_cross_entropy() {
    let m = small_model(9);
    let mut rng = rng::stream(9, 1);
    let x = random(5, 5, &mut rng);
    let y = Tensor::one_hot(&labels(5, 3, &mut rng), 3).unwrap();
    let mut t = Tape::new();
    let b = m.bind(&mut t);
    let xv = t.constant(x);
    let logits = m.forward_logits(&mut t, &b, xv).unwrap();
    let plain = t.cross_entropy(logits, &y).unwrap();
    let mut plan = MixPlan::draw(5, 0.2, &mut rng).unwrap();
    plan.coeffs.iter_mut().for_each(|c| *c = 1.0);
    let forced =
        mixup_ce_loss_with_plan(&m, &mut t, &b, xv, &y, &plan, MixupTargets::Soft).unwrap();
    let self_mix = mixup_ce_loss_with_plan(
        &m,
        &mut t,
        &b,
        xv,
        &y,
        &MixPlan::identity(5, 0.37),
        MixupTargets::Soft,
    )
    .unwrap();
    let p = t.value(plain).data()[0];
    assert!((t.value(forced).data()[0] - p).abs() < 1e-12);
    assert!((t.value(self_mix).data()[0] - p).abs() < 1e-12);
    let drawn = mixup_ce_loss(
        &m,
        &mut t,
        &b,
        xv,
        &y,
        0.2,
        MixupTargets::Soft,
        &mut rng.clone(),
    )
    .unwrap();
    let again = mixup_ce_loss(&m, &mut t, &b, xv, &y, 0.2, MixupTargets::Soft, &mut rng).unwrap();
    assert_eq!(t.value(drawn).data()[0], t.value(again).data()[0]);
}
