//! Entropy uncertainty of a pseudo-label and the mixing ratio it implies.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{kernels, Tensor};
use crate::error::Result;
use crate::model::Model;
use crate::rng::Rng;

/// Entropy of `softmax(-distances / tau)`; lies in `[0, ln K]`.
pub fn uncertainty_from_distances(distances: &[f64], tau: f64) -> Result<f64> {
    let neg: Vec<f64> = distances.iter().map(|d| -d).collect();
    let p = kernels::softmax(&neg, tau)?;
    Ok(kernels::entropy(&p))
}

/// Uncertainty of every row of `normed` against `prototypes`.
pub fn uncertainties(normed: &Tensor, prototypes: &Tensor, tau: f64) -> Result<Vec<f64>> {
    let mut dist = alloc::vec![0.0; prototypes.rows()];
    let mut out = Vec::with_capacity(normed.rows());
    for row in normed.rows_iter() {
        for (k, d) in dist.iter_mut().enumerate() {
            *d = kernels::cosine_distance(row, prototypes.row_slice(k))?;
        }
        out.push(uncertainty_from_distances(&dist, tau)?);
    }
    Ok(out)
}

/// Uncertainty of one input `x` against its domain's prototypes.
pub fn estimate_uncertainty(
    prototypes: &Tensor,
    model: &Model,
    x: &[f64],
    tau: f64,
) -> Result<f64> {
    let feats = model.features(&Tensor::row(x))?;
    let normed = kernels::normalized(feats.row_slice(0))?;
    let t = Tensor::row(&normed);
    Ok(uncertainties(&t, prototypes, tau)?[0])
}

/// `λ_ε = exp(-ε/τ) / (1 + exp(-ε/τ))`, in `(0, 1/2]` for `ε >= 0`.
pub fn lambda_from_uncertainty(eps: f64, tau: f64) -> f64 {
    let e = libm::exp(-eps / tau);
    e / (1.0 + e)
}

/// How each pseudo-labeled sample's mixing ratio is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixPolicy {
    /// `λ_ε` from the uncertainty; a uniform draw once `λ_ε` exceeds the threshold.
    Adaptive,
    /// Always a uniform draw (no uncertainty adaptation).
    Uniform,
    /// A constant ratio.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingRule {
    pub policy: MixPolicy,
    pub tau_lambda: f64,
    pub lambda_star: f64,
}

/// Mixing ratio in `[0, 1]` for a sample with uncertainty `eps`.
pub fn mixing_ratio(eps: f64, rule: &MixingRule, rng: &mut Rng) -> f64 {
    match rule.policy {
        MixPolicy::Adaptive => {
            let lam = lambda_from_uncertainty(eps, rule.tau_lambda);
            if lam > rule.lambda_star {
                rng.random::<f64>()
            } else {
                lam
            }
        }
        MixPolicy::Uniform => rng.random::<f64>(),
        MixPolicy::Fixed(v) => v,
    }
}
