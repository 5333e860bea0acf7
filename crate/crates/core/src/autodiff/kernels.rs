//! Plain numeric kernels shared by the tape nodes and the gradient-free
//! paths (prototype construction, uncertainty). Every reduction runs in a
//! fixed sequential order so results are bitwise reproducible.

use alloc::vec::Vec;

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Floor below which a vector is considered degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (n, inner, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(n, m);
    let bd = b.data();
    let ad = a.data();
    let od = out.data_mut();
    for i in 0..n {
        let orow = &mut od[i * m..(i + 1) * m];
        for k in 0..inner {
            let aik = ad[i * inner + k];
            let brow = &bd[k * m..(k + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// `grad · bᵀ`, accumulated into `acc` (shape of `a`).
pub(crate) fn matmul_grad_lhs(grad: &Tensor, b: &Tensor, acc: &mut Tensor) {
    let (n, m) = (grad.rows(), grad.cols());
    let inner = b.rows();
    let gd = grad.data();
    let bd = b.data();
    let ad = acc.data_mut();
    for i in 0..n {
        let grow = &gd[i * m..(i + 1) * m];
        for k in 0..inner {
            let brow = &bd[k * m..(k + 1) * m];
            let mut s = 0.0;
            for (g, bv) in grow.iter().zip(brow) {
                s += g * bv;
            }
            ad[i * inner + k] += s;
        }
    }
}

/// `aᵀ · grad`, accumulated into `acc` (shape of `b`).
pub(crate) fn matmul_grad_rhs(a: &Tensor, grad: &Tensor, acc: &mut Tensor) {
    let (n, inner) = (a.rows(), a.cols());
    let m = grad.cols();
    let gd = grad.data();
    let adata = a.data();
    let bd = acc.data_mut();
    for i in 0..n {
        let grow = &gd[i * m..(i + 1) * m];
        for k in 0..inner {
            let aik = adata[i * inner + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &mut bd[k * m..(k + 1) * m];
            for (o, g) in brow.iter_mut().zip(grow) {
                *o += aik * g;
            }
        }
    }
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    Ok(())
}

/// Max-subtracted softmax of `logits / temperature` written into `out`.
pub(crate) fn softmax_into(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &v in logits {
        let s = v / temperature;
        if s > max {
            max = s;
        }
    }
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(logits) {
        let e = libm::exp(v / temperature - max);
        *o = e;
        total += e;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `log softmax(logits)` written into `out`.
pub(crate) fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &v in logits {
        if v > max {
            max = v;
        }
    }
    let mut total = 0.0;
    for &v in logits {
        total += libm::exp(v - max);
    }
    let lse = max + libm::log(total);
    for (o, &v) in out.iter_mut().zip(logits) {
        *o = v - lse;
    }
}

/// Softmax of a single vector at the given temperature.
pub fn softmax(values: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    let mut out = alloc::vec![0.0; values.len()];
    softmax_into(values, temperature, &mut out);
    Ok(out)
}

/// Shannon entropy (natural log) of a probability vector; zero entries contribute zero.
pub fn entropy(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * libm::log(p);
        }
    }
    h
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Unit-length copy of `v`.
pub fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > NORM_FLOOR) {
        return Err(Error::DegenerateVector { op: "l2_normalize" });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// `1 - a·b / (|a| |b|)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_distance",
            lhs: Shape::new(1, a.len()),
            rhs: Shape::new(1, b.len()),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > NORM_FLOOR) || !(nb > NORM_FLOOR) {
        return Err(Error::DegenerateVector {
            op: "cosine_distance",
        });
    }
    let d = 1.0 - dot(a, b) / (na * nb);
    Ok(d.clamp(0.0, 2.0))
}

/// Row-wise unit normalization of a matrix.
pub fn normalize_rows(t: &Tensor) -> Result<Tensor> {
    let mut out = t.clone();
    let cols = t.cols();
    for r in 0..t.rows() {
        let row = out.row_slice_mut(r);
        let n = norm(row);
        if !(n > NORM_FLOOR) || cols == 0 {
            return Err(Error::DegenerateVector { op: "l2_normalize" });
        }
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Ok(out)
}

/// Cosine distance between every row of `a` and every row of `b` (`a.rows x b.rows`).
pub fn pairwise_cosine_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "pairwise_cosine_distance",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Tensor::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.set(i, j, cosine_distance(a.row_slice(i), b.row_slice(j))?);
        }
    }
    Ok(out)
}
