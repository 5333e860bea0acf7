//! Pairing of pseudo-labeled samples with same-class labeled samples, and
//! their input-space mixing.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::Tensor;
use crate::datagen::class_counts;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Indices of the labeled domain grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassIndex {
    members: Vec<Vec<usize>>,
}

impl ClassIndex {
    /// Fails if any class in `[0, classes)` has no labeled sample.
    pub fn new(labels: &[usize], classes: usize) -> Result<Self> {
        let counts = class_counts(labels, classes)?;
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!(
                "labeled domain has no sample of class {k}"
            )));
        }
        let mut members = alloc::vec![Vec::new(); classes];
        for (i, &y) in labels.iter().enumerate() {
            members[y].push(i);
        }
        Ok(ClassIndex { members })
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }
}

/// For each pseudo-label, a uniformly drawn labeled index of that class.
pub fn sample_match(
    pseudo_labels: &[usize],
    index: &ClassIndex,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    pseudo_labels
        .iter()
        .map(|&y| {
            let pool = index
                .members
                .get(y)
                .ok_or_else(|| Error::Config(format!("pseudo-label {y} has no labeled class")))?;
            Ok(pool[rng.random_range(0..pool.len())])
        })
        .collect()
}

/// `x_m = λ x_u + (1 - λ) x_l` row by row. Every pair must share its class;
/// the mixed sample keeps that class.
pub fn udmix(
    labeled: &Tensor,
    unlabeled: &Tensor,
    labeled_classes: &[usize],
    pseudo_labels: &[usize],
    lambdas: &[f64],
) -> Result<(Tensor, Vec<usize>)> {
    if labeled.shape() != unlabeled.shape()
        || labeled_classes.len() != labeled.rows()
        || pseudo_labels.len() != labeled.rows()
        || lambdas.len() != labeled.rows()
    {
        return Err(Error::ShapeMismatch {
            op: "udmix",
            lhs: labeled.shape(),
            rhs: unlabeled.shape(),
        });
    }
    let mut out = Tensor::zeros(labeled.rows(), labeled.cols());
    for i in 0..labeled.rows() {
        if labeled_classes[i] != pseudo_labels[i] {
            return Err(Error::Invariant(format!(
                "udmix pair {i}: labeled class {} differs from pseudo-label {}",
                labeled_classes[i], pseudo_labels[i]
            )));
        }
        let lam = lambdas[i];
        let (xl, xu) = (labeled.row_slice(i), unlabeled.row_slice(i));
        // exact copies at the endpoints, so signed zeros survive
        if lam == 0.0 {
            out.row_slice_mut(i).copy_from_slice(xl);
            continue;
        }
        if lam == 1.0 {
            out.row_slice_mut(i).copy_from_slice(xu);
            continue;
        }
        for ((o, &l), &u) in out.row_slice_mut(i).iter_mut().zip(xl).zip(xu) {
            *o = lam * u + (1.0 - lam) * l;
        }
    }
    Ok((out, pseudo_labels.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn matches_within_the_pseudo_class() {
        let labels = [0, 1, 2, 1, 0, 2, 1];
        let idx = ClassIndex::new(&labels, 3).unwrap();
        let mut rng = rng::stream(1, 0);
        let picks = sample_match(&[1; 50], &idx, &mut rng).unwrap();
        assert!(picks.iter().all(|&i| labels[i] == 1));
        assert!(ClassIndex::new(&[0, 0, 2], 3).is_err());
    }

    #[test]
    fn singleton_classes_fix_the_match() {
        let idx = ClassIndex::new(&[2, 0, 1], 3).unwrap();
        let mut rng = rng::stream(1, 0);
        assert_eq!(
            sample_match(&[0, 1, 2, 2], &idx, &mut rng).unwrap(),
            vec![1, 2, 0, 0]
        );
    }

    #[test]
    fn endpoints_reproduce_inputs_bitwise() {
        let xl = Tensor::from_vec(2, 3, vec![1.5, -0.0, 3.25, -7.0, 0.1, 0.0]).unwrap();
        let xu = Tensor::from_vec(2, 3, vec![-2.0, 4.0, 0.3, -0.0, -0.2, 1e-300]).unwrap();
        let (m, _) = udmix(&xl, &xu, &[0, 1], &[0, 1], &[0.0, 0.0]).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m), bits(&xl));
        let (m, _) = udmix(&xl, &xu, &[0, 1], &[0, 1], &[1.0, 1.0]).unwrap();
        assert_eq!(bits(&m), bits(&xu));
    }

    #[test]
    fn interior_ratio_is_a_convex_combination() {
        let xl = Tensor::from_vec(1, 3, vec![1.0, 2.0, -3.0]).unwrap();
        let xu = Tensor::from_vec(1, 3, vec![-1.0, 0.5, 4.0]).unwrap();
        let (m, y) = udmix(&xl, &xu, &[2], &[2], &[0.6]).unwrap();
        let want = [
            -0.6 + 0.4 * 1.0,
            0.6 * 0.5 + 0.4 * 2.0,
            0.6 * 4.0 + 0.4 * -3.0,
        ];
        for (a, b) in m.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(y, vec![2]);
    }

    #[test]
    fn class_mismatch_is_an_invariant_violation() {
        let x = Tensor::zeros(1, 2);
        assert!(matches!(
            udmix(&x, &x, &[0], &[1], &[0.5]),
            Err(Error::Invariant(_))
        ));
    }
}
