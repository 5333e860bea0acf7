//! Feature extractor `g` (ReLU MLP) and linear classifier `h`, supervised
//! pretraining, and cross-entropy with feature-level mixup.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};

use crate::autodiff::{GradientMap, Param, ParamId, Sgd, Tape, Tensor, Var};
use crate::datagen::DomainDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Layer widths of `g` (input -> hidden... -> features) and of `h` (features -> classes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.feature_dim == 0
            || self.classes == 0
            || self.hidden.contains(&0)
        {
            return Err(Error::Config(format!(
                "all layer widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Widths of the linear layers of `g`, including input and output.
    fn extractor_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.feature_dim);
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Param>,
}

/// Parameters of a [`Model`] registered on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Model {
    /// He-scaled Gaussian weights (`sd = sqrt(2 / fan_in)`) and zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        let mut rng = rng::stream(seed, 0x1417);
        let mut params = Vec::new();
        let dims = spec.extractor_dims();
        let mut layers: Vec<(String, usize, usize)> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| (format!("g.{i}"), w[0], w[1]))
            .collect();
        layers.push((String::from("h"), spec.feature_dim, spec.classes));
        for (name, fan_in, fan_out) in layers {
            let sd = libm::sqrt(2.0 / fan_in as f64);
            let mut w = Tensor::zeros(fan_in, fan_out);
            for v in w.data_mut() {
                let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                *v = sd * z;
            }
            params.push(Param {
                id: ParamId(params.len()),
                name: format!("{name}.weight"),
                value: w,
            });
            params.push(Param {
                id: ParamId(params.len()),
                name: format!("{name}.bias"),
                value: Tensor::zeros(1, fan_out),
            });
        }
        Ok(Model { spec, params })
    }

    /// Rebuilds a model from stored parameters (checkpoint loading).
    pub fn from_params(spec: ModelSpec, params: Vec<Param>) -> Result<Model> {
        let reference = Model::init(spec.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter blocks, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (r, p) in reference.params.iter().zip(&params) {
            if r.name != p.name || r.value.shape() != p.value.shape() || r.id != p.id {
                return Err(Error::Config(format!(
                    "parameter block `{}` {} does not match expected `{}` {}",
                    p.name,
                    p.value.shape(),
                    r.name,
                    r.value.shape()
                )));
            }
        }
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.param(p.id, p.value.clone()))
                .collect(),
        }
    }

    fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        // Bias enters as ones(n x 1) · b so that only scalar broadcasting is needed.
        let n = tape.shape(x).rows;
        let ones = tape.constant(Tensor::filled(n, 1, 1.0));
        let xw = tape.matmul(x, w)?;
        let bias = tape.matmul(ones, b)?;
        tape.add(xw, bias)
    }

    /// `g(x)` for an `n x input_dim` batch; ReLU between layers, linear output.
    pub fn forward_features(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.cols != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                op: "forward_features",
                lhs: s,
                rhs: crate::autodiff::Shape::new(s.rows, self.spec.input_dim),
            });
        }
        let layers = self.spec.hidden.len() + 1;
        let mut h = x;
        for l in 0..layers {
            h = Self::linear(tape, h, bound.vars[2 * l], bound.vars[2 * l + 1])?;
            if l + 1 < layers {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// `h(features)`.
    pub fn classify(&self, tape: &mut Tape, bound: &Bound, features: Var) -> Result<Var> {
        let n = bound.vars.len();
        Self::linear(tape, features, bound.vars[n - 2], bound.vars[n - 1])
    }

    /// `(h ∘ g)(x)`.
    pub fn forward_logits(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let f = self.forward_features(tape, bound, x)?;
        self.classify(tape, bound, f)
    }

    /// `g(x)` without recording gradients for the caller.
    pub fn features(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(inputs.clone());
        let f = self.forward_features(&mut tape, &bound, x)?;
        Ok(tape.value(f).clone())
    }

    /// `(g(x), h(g(x)))` in one pass.
    pub fn features_and_logits(&self, inputs: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(inputs.clone());
        let f = self.forward_features(&mut tape, &bound, x)?;
        let l = self.classify(&mut tape, &bound, f)?;
        Ok((tape.value(f).clone(), tape.value(l).clone()))
    }

    pub fn logits(&self, inputs: &Tensor) -> Result<Tensor> {
        Ok(self.features_and_logits(inputs)?.1)
    }

    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(inputs)?.argmax_rows())
    }

    /// Fraction of samples whose argmax prediction equals the label.
    pub fn accuracy(&self, ds: &DomainDataset) -> Result<f64> {
        let labels = ds.labels()?;
        Ok(agreement(&self.predict(&ds.inputs)?, labels))
    }
}

/// Fraction of positions where `a` and `b` agree (0 for empty input).
pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let hits = a.iter().zip(b).filter(|(x, y)| x == y).count();
    hits as f64 / a.len() as f64
}

/// Supervised pretraining schedule on the labeled domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 50,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            early_stop_patience: 10,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config(
                "pretrain batch_size and patience must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainHistory {
    pub train_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    /// Zero-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// One shuffled pass of mini-batch cross-entropy SGD; returns the mean batch loss.
pub fn supervised_epoch(
    model: &mut Model,
    sgd: &mut Sgd,
    data: &DomainDataset,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let labels = data.labels()?;
    let classes = model.spec.classes;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut steps = 0;
    for chunk in order.chunks(batch_size.max(1)) {
        let x = data.inputs.select_rows(chunk)?;
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let targets = Tensor::one_hot(&y, classes)?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let xv = tape.constant(x);
        let logits = model.forward_logits(&mut tape, &bound, xv)?;
        let loss = tape.cross_entropy(logits, &targets)?;
        total += tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        sgd.step(model.params_mut(), &grads)?;
        steps += 1;
    }
    Ok(if steps == 0 {
        0.0
    } else {
        total / steps as f64
    })
}

/// Cross-entropy SGD on `train`, keeping the parameters of the epoch with the
/// best validation accuracy (first such epoch on ties). Stops after
/// `early_stop_patience` epochs without improvement.
pub fn pretrain(
    model: &Model,
    train: &DomainDataset,
    val: &DomainDataset,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<(Model, PretrainHistory)> {
    cfg.validate()?;
    let mut current = model.clone();
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay)?;
    let mut rng = rng::stream(seed, 0x9e7a);
    let mut history = PretrainHistory {
        best_val_acc: f64::NEG_INFINITY,
        ..PretrainHistory::default()
    };
    let mut best = model.clone();
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let loss = supervised_epoch(&mut current, &mut sgd, train, cfg.batch_size, &mut rng)?;
        let acc = current.accuracy(val)?;
        history.train_loss.push(loss);
        history.val_acc.push(acc);
        if acc > history.best_val_acc {
            history.best_val_acc = acc;
            history.best_epoch = epoch;
            best = current.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    if history.val_acc.is_empty() {
        history.best_val_acc = model.accuracy(val)?;
    }
    Ok((best, history))
}

/// Whether mixed features keep a mixed (soft) target or the anchor sample's own target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixupTargets {
    Soft,
    Hard,
}

/// Coefficients and partner permutation of one feature-level mixup draw.
/// Row `i` mixes as `coeffs[i] * g(x_i) + (1 - coeffs[i]) * g(x_perm[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pub coeffs: Vec<f64>,
    pub perm: Vec<usize>,
}

impl MixPlan {
    pub fn draw(n: usize, beta_alpha: f64, rng: &mut Rng) -> Result<MixPlan> {
        let beta = Beta::new(beta_alpha, beta_alpha).map_err(|e| {
            Error::InvalidArgument(format!("mixup Beta({beta_alpha}, {beta_alpha}): {e}"))
        })?;
        let coeffs = (0..n).map(|_| beta.sample(rng)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        Ok(MixPlan { coeffs, perm })
    }

    pub fn identity(n: usize, coeff: f64) -> MixPlan {
        MixPlan {
            coeffs: alloc::vec![coeff; n],
            perm: (0..n).collect(),
        }
    }
}

/// Cross-entropy of `h` applied to mixed features of `inputs`, for a given plan.
pub fn mixup_ce_loss_with_plan(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    inputs: Var,
    targets: &Tensor,
    plan: &MixPlan,
    mode: MixupTargets,
) -> Result<Var> {
    let n = tape.shape(inputs).rows;
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature mixup needs at least 2 samples, got {n}"
        )));
    }
    if plan.coeffs.len() != n || plan.perm.len() != n || targets.rows() != n {
        return Err(Error::InvalidArgument(format!(
            "mix plan covers {} rows, batch has {n}",
            plan.coeffs.len()
        )));
    }
    let feats = model.forward_features(tape, bound, inputs)?;
    let d = tape.shape(feats).cols;
    let partner = tape.select_rows(feats, &plan.perm)?;
    let mut keep = Tensor::zeros(n, d);
    let mut take = Tensor::zeros(n, d);
    for (i, &mu) in plan.coeffs.iter().enumerate() {
        keep.row_slice_mut(i).fill(mu);
        take.row_slice_mut(i).fill(1.0 - mu);
    }
    let keep = tape.constant(keep);
    let take = tape.constant(take);
    let a = tape.mul(feats, keep)?;
    let b = tape.mul(partner, take)?;
    let mixed = tape.add(a, b)?;
    let logits = model.classify(tape, bound, mixed)?;
    let mixed_targets = match mode {
        MixupTargets::Hard => targets.clone(),
        MixupTargets::Soft => {
            let k = targets.cols();
            let mut t = Tensor::zeros(n, k);
            for i in 0..n {
                let mu = plan.coeffs[i];
                let (own, other) = (targets.row_slice(i), targets.row_slice(plan.perm[i]));
                for (c, v) in t.row_slice_mut(i).iter_mut().enumerate() {
                    *v = mu * own[c] + (1.0 - mu) * other[c];
                }
            }
            t
        }
    };
    tape.cross_entropy(logits, &mixed_targets)
}

/// Feature-level mixup cross-entropy with `Beta(beta_alpha, beta_alpha)` coefficients.
#[allow(clippy::too_many_arguments)]
pub fn mixup_ce_loss(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    inputs: Var,
    targets: &Tensor,
    beta_alpha: f64,
    mode: MixupTargets,
    rng: &mut Rng,
) -> Result<Var> {
    let n = tape.shape(inputs).rows;
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature mixup needs at least 2 samples, got {n}"
        )));
    }
    let plan = MixPlan::draw(n, beta_alpha, rng)?;
    mixup_ce_loss_with_plan(model, tape, bound, inputs, targets, &plan, mode)
}

/// Number of model parameters that received a gradient.
pub fn gradient_coverage(model: &Model, grads: &GradientMap) -> usize {
    model
        .params
        .iter()
        .filter(|p| grads.contains_key(&p.id))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Role;

    fn spec() -> ModelSpec {
        ModelSpec {
            input_dim: 3,
            hidden: alloc::vec![5, 4],
            feature_dim: 3,
            classes: 2,
        }
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(
            Model::init(spec(), 4).unwrap(),
            Model::init(spec(), 4).unwrap()
        );
        assert_ne!(
            Model::init(spec(), 4).unwrap(),
            Model::init(spec(), 5).unwrap()
        );
        assert!(Model::init(
            ModelSpec {
                hidden: alloc::vec![0],
                ..spec()
            },
            1
        )
        .is_err());
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let m = Model::init(spec(), 1).unwrap();
        let f = m.features(&Tensor::zeros(2, 3)).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_batch_and_duplicate_rows() {
        let m = Model::init(spec(), 1).unwrap();
        let f = m.features(&Tensor::zeros(0, 3)).unwrap();
        assert_eq!((f.rows(), f.cols()), (0, 3));
        let x = Tensor::from_vec(2, 3, alloc::vec![0.3, -1.0, 2.0, 0.3, -1.0, 2.0]).unwrap();
        let f = m.features(&x).unwrap();
        assert_eq!(f.row_slice(0), f.row_slice(1));
        assert!(m.features(&Tensor::zeros(2, 4)).is_err());
    }

    #[test]
    fn logits_compose_classifier_after_features() {
        let m = Model::init(spec(), 2).unwrap();
        let x = Tensor::from_vec(2, 3, alloc::vec![0.1, 0.2, -0.3, 1.0, -2.0, 0.5]).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let f = m.forward_features(&mut tape, &b, xv).unwrap();
        let fv = tape.constant(tape.value(f).clone());
        let composed = m.classify(&mut tape, &b, fv).unwrap();
        assert_eq!(tape.value(composed), &m.logits(&x).unwrap());
    }

    #[test]
    fn pretrain_with_zero_lr_keeps_parameters() {
        let m = Model::init(spec(), 3).unwrap();
        let x = Tensor::from_vec(
            4,
            3,
            alloc::vec![1., 0., 0., 0., 1., 0., -1., 0., 0., 0., -1., 0.],
        )
        .unwrap();
        let ds = DomainDataset::new(0, Role::Labeled, x, Some(alloc::vec![0, 1, 0, 1]), 2).unwrap();
        let cfg = PretrainConfig {
            lr: 0.0,
            epochs: 3,
            ..PretrainConfig::default()
        };
        let (out, hist) = pretrain(&m, &ds, &ds, &cfg, 1).unwrap();
        assert_eq!(out, m);
        assert_eq!(hist.best_val_acc, m.accuracy(&ds).unwrap());
    }

    #[test]
    fn mixup_rejects_single_sample() {
        let m = Model::init(spec(), 3).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(1, 3));
        let t = Tensor::one_hot(&[0], 2).unwrap();
        let mut rng = rng::stream(0, 0);
        assert!(
            mixup_ce_loss(&m, &mut tape, &b, x, &t, 0.2, MixupTargets::Soft, &mut rng).is_err()
        );
    }
}
