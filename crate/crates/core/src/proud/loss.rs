//! Prototype merging loss.

use alloc::vec::Vec;

use crate::autodiff::{normalize_rows, Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Bound, Model};

/// `-Σ_i log softmax_k(-dist(ĝ(x_i), C̄_k))[y_i]` over the batch. The anchors
/// enter as constants, so gradient reaches only the feature extractor.
pub fn pml_loss(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    inputs: Var,
    labels: &[usize],
    anchors: &Tensor,
) -> Result<Var> {
    let n = tape.shape(inputs).rows;
    if labels.len() != n {
        return Err(Error::InvalidArgument(alloc::format!(
            "pml_loss: {} labels for {n} samples",
            labels.len()
        )));
    }
    let feats = model.forward_features(tape, bound, inputs)?;
    let unit = tape.l2_normalize(feats, Axis::Rows)?;
    let anchors_t = tape.constant(normalize_rows(anchors)?.transpose());
    let sim = tape.matmul(unit, anchors_t)?;
    let one = tape.constant(Tensor::scalar(1.0));
    // -dist = cos - 1
    let neg_dist = tape.sub(sim, one)?;
    let targets = Tensor::one_hot(labels, anchors.rows())?;
    let mean = tape.cross_entropy(neg_dist, &targets)?;
    Ok(tape.scale(mean, n as f64))
}

/// Per-sample value of the loss from precomputed normalized features (no tape).
pub fn pml_values(normed: &Tensor, labels: &[usize], anchors: &Tensor) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(labels.len());
    for (row, &y) in normed.rows_iter().zip(labels) {
        let neg: Vec<f64> = (0..anchors.rows())
            .map(|k| crate::autodiff::cosine_distance(row, anchors.row_slice(k)).map(|d| -d))
            .collect::<Result<_>>()?;
        let p = crate::autodiff::softmax(&neg, 1.0)?;
        out.push(-libm::log(p[y]));
    }
    Ok(out)
}
