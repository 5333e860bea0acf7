//! Domain-aware prototype pseudo-labeling, the prototype merging loss,
//! uncertainty-adaptive domain mixing, and the training loop that ties them
//! together.

mod loss;
mod mixing;
mod prototypes;
mod train;
mod uncertainty;

use alloc::format;

pub use loss::{pml_loss, pml_values};
pub use mixing::{sample_match, udmix, ClassIndex};
pub use prototypes::{
    assign_pseudo_labels, augmented_views, compute_soft_prototypes, dapp, embed, feature_views,
    hard_prototypes, mean_blocks, nearest_prototype, refine_prototypes, soft_prototypes,
    DappOutput, PrototypeBank,
};
pub use train::{
    erm_train, evaluate, proud_train, train_epoch, EpochRecord, EpochStats, ProudOutcome,
    PseudoLabeledSample,
};
pub use uncertainty::{
    estimate_uncertainty, lambda_from_uncertainty, mixing_ratio, uncertainties,
    uncertainty_from_distances, MixPolicy, MixingRule,
};

use crate::datagen::Augment;
use crate::error::{Error, Result};
use crate::model::MixupTargets;

#[derive(Debug, Clone, PartialEq)]
pub struct ProudHyper {
    /// Weight of the prototype merging loss.
    pub alpha: f64,
    /// Temperature of the uncertainty softmax.
    pub tau_eps: f64,
    /// Temperature of the logistic mixing rule.
    pub tau_lambda: f64,
    /// Ratio above which the mixing ratio is drawn uniformly.
    pub lambda_star: f64,
    /// Views averaged in the final pseudo-labeling (1 = clean input only).
    pub ensemble_size: usize,
    pub aug_strength: f64,
    pub aug_sigma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Beta parameter of the feature-level mixup inside the CE term.
    pub mixup_alpha: f64,
    pub mixup_targets: MixupTargets,
    pub mix_policy: MixPolicy,
    /// Whether anchors average the labeled domain's prototypes too.
    pub anchors_include_labeled: bool,
    pub pml_reduction: Reduction,
}

/// How the per-sample prototype merging terms of a batch are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

impl Default for ProudHyper {
    fn default() -> Self {
        ProudHyper {
            alpha: 1.0,
            tau_eps: 0.1,
            tau_lambda: 0.1,
            lambda_star: 0.4,
            ensemble_size: 3,
            aug_strength: 1.0,
            aug_sigma: 0.1,
            batch_size: 64,
            epochs: 80,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            mixup_alpha: 0.2,
            mixup_targets: MixupTargets::Soft,
            mix_policy: MixPolicy::Adaptive,
            anchors_include_labeled: true,
            pml_reduction: Reduction::Mean,
        }
    }
}

impl ProudHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.tau_eps > 0.0) || !(self.tau_lambda > 0.0) {
            return bad("tau_eps and tau_lambda must be positive");
        }
        if !(self.lambda_star > 0.0 && self.lambda_star <= 0.5) {
            return bad("lambda_star must lie in (0, 0.5]");
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad("alpha must be non-negative");
        }
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.aug_strength >= 0.0) || !(self.aug_sigma >= 0.0) {
            return bad("augmentation strength and sigma must be non-negative");
        }
        if !(self.mixup_alpha > 0.0) {
            return bad("mixup_alpha must be positive");
        }
        if let MixPolicy::Fixed(v) = self.mix_policy {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "fixed mixing ratio {v} outside [0, 1]"
                )));
            }
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0)
        {
            return bad("invalid optimizer settings");
        }
        Ok(())
    }

    pub fn augment(&self) -> Augment {
        Augment {
            strength: self.aug_strength,
            noise_sigma: self.aug_sigma,
        }
    }

    pub fn mixing_rule(&self) -> MixingRule {
        MixingRule {
            policy: self.mix_policy,
            tau_lambda: self.tau_lambda,
            lambda_star: self.lambda_star,
        }
    }
}
