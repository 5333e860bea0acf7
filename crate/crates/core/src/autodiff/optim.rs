use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::tape::{GradientMap, ParamId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub id: ParamId,
    pub name: String,
    pub value: Tensor,
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v <- momentum * v + grad + weight_decay * p`, `p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<ParamId, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        Ok(Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        })
    }

    /// One in-place update. `grads` must hold exactly one entry per parameter.
    pub fn step(&mut self, params: &mut [Param], grads: &GradientMap) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient map covers {} parameter(s), optimizer was given {}",
                grads.len(),
                params.len()
            )));
        }
        for p in params.iter() {
            let g = grads.get(&p.id).ok_or_else(|| {
                Error::InvalidArgument(format!("no gradient for parameter `{}`", p.name))
            })?;
            if g.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    lhs: p.value.shape(),
                    rhs: g.shape(),
                });
            }
        }
        for p in params.iter_mut() {
            let g = &grads[&p.id];
            let v = self
                .velocity
                .entry(p.id)
                .or_insert_with(|| alloc::vec![0.0; g.len()]);
            for ((w, vel), &gv) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(v.iter_mut())
                .zip(g.data())
            {
                *vel = self.momentum * *vel + gv + self.weight_decay * *w;
                *w -= self.lr * *vel;
            }
        }
        Ok(())
    }
}
