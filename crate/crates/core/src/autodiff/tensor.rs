use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Matrix shape `rows x cols`. Vectors are `1 x n`, scalars `1 x 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { rows: 1, cols: 1 };

    pub const fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}x{}]", self.rows, self.cols)
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(rows, cols);
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: shape,
                rhs: Shape::new(1, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: Shape::new(rows, cols),
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            shape: Shape::new(rows, cols),
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::SCALAR,
            data: vec![value],
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor {
            shape: Shape::new(1, values.len()),
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally long rows. An empty iterator yields `0 x cols`.
    pub fn from_rows<'a, I>(cols: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    lhs: Shape::new(1, cols),
                    rhs: Shape::new(1, r.len()),
                });
            }
            data.extend_from_slice(r);
            n += 1;
        }
        Ok(Tensor {
            shape: Shape::new(n, cols),
            data,
        })
    }

    /// One-hot rows for `labels` over `classes` columns.
    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let mut t = Tensor::zeros(labels.len(), classes);
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::InvalidArgument(alloc::format!(
                    "label {y} out of range for {classes} classes"
                )));
            }
            t.data[i * classes + y] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.shape.cols;
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.shape.cols;
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; zero-width matrices have no addressable rows.
        let c = self.shape.cols.max(1);
        let n = if self.shape.cols == 0 {
            0
        } else {
            self.shape.rows
        };
        self.data.chunks_exact(c).take(n)
    }

    /// Gathers rows by index; indices may repeat.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let c = self.shape.cols;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= self.shape.rows {
                return Err(Error::InvalidArgument(alloc::format!(
                    "row index {i} out of range for {} rows",
                    self.shape.rows
                )));
            }
            data.extend_from_slice(self.row_slice(i));
        }
        Ok(Tensor {
            shape: Shape::new(idx.len(), c),
            data,
        })
    }

    pub fn transpose(&self) -> Self {
        let Shape { rows, cols } = self.shape;
        let mut out = Tensor::zeros(cols, rows);
        for r in 0..rows {
            for c in 0..cols {
                out.data[c * rows + r] = self.data[r * cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Index of the largest entry in each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.rows_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}
