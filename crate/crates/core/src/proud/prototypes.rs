//! Domain-aware prototypes and nearest-prototype pseudo-labeling.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{kernels, normalize_rows, Tensor};
use crate::datagen::{augment, Augment, DomainDataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::Rng;

use super::ProudHyper;

/// Per-domain class prototypes and their cross-domain anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    /// Domain id of each prototype block, in storage order.
    pub domain_ids: Vec<usize>,
    /// One `classes x dim` block per domain.
    pub prototypes: Vec<Tensor>,
    /// `classes x dim`; row `k` is the mean over domains of row `k` of every block.
    pub anchors: Tensor,
    pub epoch: usize,
}

impl PrototypeBank {
    pub fn new(domain_ids: Vec<usize>, prototypes: Vec<Tensor>, epoch: usize) -> Result<Self> {
        let anchors = mean_blocks(&prototypes)?;
        if domain_ids.len() != prototypes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} domain ids for {} prototype blocks",
                domain_ids.len(),
                prototypes.len()
            )));
        }
        Ok(PrototypeBank {
            domain_ids,
            prototypes,
            anchors,
            epoch,
        })
    }

    pub fn classes(&self) -> usize {
        self.anchors.rows()
    }

    pub fn prototypes_of(&self, domain_id: usize) -> Option<&Tensor> {
        self.domain_ids
            .iter()
            .position(|&d| d == domain_id)
            .map(|i| &self.prototypes[i])
    }
}

/// Elementwise mean of equally shaped blocks, summed in storage order.
pub fn mean_blocks(blocks: &[Tensor]) -> Result<Tensor> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidArgument("prototype bank needs at least one domain".into()))?;
    let mut acc = Tensor::zeros(first.rows(), first.cols());
    for b in blocks {
        if b.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                op: "mean_blocks",
                lhs: first.shape(),
                rhs: b.shape(),
            });
        }
        for (a, &v) in acc.data_mut().iter_mut().zip(b.data()) {
            *a += v;
        }
    }
    let t = blocks.len() as f64;
    for a in acc.data_mut() {
        *a /= t;
    }
    Ok(acc)
}

/// Unit-normalized features and class probabilities of every sample in `inputs`.
pub fn embed(model: &Model, inputs: &Tensor) -> Result<(Tensor, Tensor)> {
    let (feats, logits) = model.features_and_logits(inputs)?;
    let normed = normalize_rows(&feats)?;
    let mut probs = Tensor::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let p = kernels::softmax(logits.row_slice(r), 1.0)?;
        probs.row_slice_mut(r).copy_from_slice(&p);
    }
    Ok((normed, probs))
}

/// `C_k = Σ_i p_ik ĝ_i / Σ_i p_ik` from normalized features and class probabilities.
pub fn soft_prototypes(normed: &Tensor, probs: &Tensor) -> Result<Tensor> {
    if normed.rows() != probs.rows() || normed.rows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "soft prototypes need matching non-empty inputs, got {} features and {} probability rows",
            normed.rows(),
            probs.rows()
        )));
    }
    let (k, d) = (probs.cols(), normed.cols());
    let mut out = Tensor::zeros(k, d);
    let mut mass = alloc::vec![0.0; k];
    for i in 0..normed.rows() {
        let (f, p) = (normed.row_slice(i), probs.row_slice(i));
        for c in 0..k {
            mass[c] += p[c];
            for (o, &v) in out.row_slice_mut(c).iter_mut().zip(f) {
                *o += p[c] * v;
            }
        }
    }
    for c in 0..k {
        for o in out.row_slice_mut(c) {
            *o /= mass[c];
        }
    }
    Ok(out)
}

/// Hard class means of `normed` under `labels`. A class with no members keeps
/// its row from `fallback`.
pub fn hard_prototypes(normed: &Tensor, labels: &[usize], fallback: &Tensor) -> Result<Tensor> {
    let (k, d) = (fallback.rows(), normed.cols());
    if labels.len() != normed.rows() || fallback.cols() != d {
        return Err(Error::InvalidArgument(format!(
            "hard prototypes: {} labels, {} features, fallback {}",
            labels.len(),
            normed.rows(),
            fallback.shape()
        )));
    }
    let mut out = Tensor::zeros(k, d);
    let mut count = alloc::vec![0usize; k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {k} classes"
            )));
        }
        count[y] += 1;
        for (o, &v) in out.row_slice_mut(y).iter_mut().zip(normed.row_slice(i)) {
            *o += v;
        }
    }
    for c in 0..k {
        if count[c] == 0 {
            out.row_slice_mut(c).copy_from_slice(fallback.row_slice(c));
        } else {
            let n = count[c] as f64;
            for o in out.row_slice_mut(c) {
                *o /= n;
            }
        }
    }
    Ok(out)
}

/// Nearest prototype by cosine distance, averaged over views; ties go to the
/// lowest class index. Every view is `n x d` with rows aligned.
pub fn nearest_prototype(views: &[Tensor], prototypes: &Tensor) -> Result<Vec<usize>> {
    let first = views
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one feature view is required".into()))?;
    let n = first.rows();
    let a = views.len() as f64;
    let mut labels = Vec::with_capacity(n);
    let mut avg = alloc::vec![0.0; prototypes.rows()];
    for i in 0..n {
        for (k, slot) in avg.iter_mut().enumerate() {
            let mut s = 0.0;
            for v in views {
                s += kernels::cosine_distance(v.row_slice(i), prototypes.row_slice(k))?;
            }
            *slot = s / a;
        }
        let mut best = 0;
        for k in 1..avg.len() {
            if avg[k] < avg[best] {
                best = k;
            }
        }
        labels.push(best);
    }
    Ok(labels)
}

/// Soft prototypes of one domain from the model's own predictions.
pub fn compute_soft_prototypes(model: &Model, ds: &DomainDataset) -> Result<Tensor> {
    let (normed, probs) = embed(model, &ds.inputs)?;
    soft_prototypes(&normed, &probs)
}

/// Normalized features of `count` independently augmented copies of `inputs`.
pub fn augmented_views(
    model: &Model,
    inputs: &Tensor,
    count: usize,
    aug: Augment,
    rng: &mut Rng,
) -> Result<Vec<Tensor>> {
    let mut views = Vec::with_capacity(count);
    for _ in 0..count {
        let mut x = Tensor::zeros(inputs.rows(), inputs.cols());
        for r in 0..inputs.rows() {
            let a = augment(inputs.row_slice(r), aug, rng);
            x.row_slice_mut(r).copy_from_slice(&a);
        }
        views.push(normalize_rows(&model.features(&x)?)?);
    }
    Ok(views)
}

/// Normalized-feature views of `inputs`: view 0 is the clean input, the other
/// `ensemble - 1` views are augmented copies.
pub fn feature_views(
    model: &Model,
    inputs: &Tensor,
    ensemble: usize,
    aug: Augment,
    rng: &mut Rng,
) -> Result<Vec<Tensor>> {
    let mut views = alloc::vec![normalize_rows(&model.features(inputs)?)?];
    views.extend(augmented_views(
        model,
        inputs,
        ensemble.saturating_sub(1),
        aug,
        rng,
    )?);
    Ok(views)
}

/// Pseudo-labels of `ds` against its domain's prototypes, averaging the
/// distance over `ensemble` views (1 disables augmentation).
pub fn assign_pseudo_labels(
    prototypes: &Tensor,
    model: &Model,
    ds: &DomainDataset,
    ensemble: usize,
    aug: Augment,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let views = feature_views(model, &ds.inputs, ensemble, aug, rng)?;
    nearest_prototype(&views, prototypes)
}

/// Hard-mean prototypes of `ds` under `labels`; empty classes keep `previous`.
pub fn refine_prototypes(
    model: &Model,
    ds: &DomainDataset,
    labels: &[usize],
    previous: &Tensor,
) -> Result<Tensor> {
    let normed = normalize_rows(&model.features(&ds.inputs)?)?;
    hard_prototypes(&normed, labels, previous)
}

/// Output of one DaPP pass over a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DappOutput {
    /// Probability-weighted prototypes (first stage).
    pub soft: Tensor,
    /// Labels from the soft prototypes.
    pub initial_labels: Vec<usize>,
    /// Refined (hard-mean) prototypes used for the final labels.
    pub prototypes: Tensor,
    /// Final pseudo-labels.
    pub labels: Vec<usize>,
    /// Clean-view normalized features, `n x d`.
    pub features: Tensor,
}

/// Soft prototypes, a first nearest-prototype labeling, one hard-mean
/// refinement, and a final labeling with the augmentation ensemble.
pub fn dapp(
    model: &Model,
    ds: &DomainDataset,
    hyper: &ProudHyper,
    rng: &mut Rng,
) -> Result<DappOutput> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "domain {} is empty",
            ds.domain_id
        )));
    }
    let (normed, probs) = embed(model, &ds.inputs)?;
    let soft = soft_prototypes(&normed, &probs)?;
    let initial_labels = nearest_prototype(core::slice::from_ref(&normed), &soft)?;
    let prototypes = hard_prototypes(&normed, &initial_labels, &soft)?;
    let mut views = alloc::vec![normed];
    let extra = hyper.ensemble_size.saturating_sub(1);
    views.extend(augmented_views(
        model,
        &ds.inputs,
        extra,
        hyper.augment(),
        rng,
    )?);
    let labels = nearest_prototype(&views, &prototypes)?;
    let features = views.swap_remove(0);
    Ok(DappOutput {
        soft,
        initial_labels,
        prototypes,
        labels,
        features,
    })
}
