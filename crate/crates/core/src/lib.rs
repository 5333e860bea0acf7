//! Semi-supervised domain generalization with domain-aware prototypes and
//! uncertainty-adaptive domain mixing.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the experiment
//! harness and the command line live in the `proud-lab` companion crate.
//!
//! * [`autodiff`]: matrices, a reverse-mode tape, SGD.
//! * [`datagen`]: synthetic rotated/translated multi-domain suites, splits, augmentation.
//! * [`model`]: the feature extractor / classifier MLP, pretraining, feature-level mixup.
//! * [`proud`]: prototype pseudo-labeling, prototype merging loss, uncertainty,
//!   mixing ratios, sample matching, domain mixing and the training loop.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is how NaN gets rejected; index loops read better in the kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod autodiff;
pub mod datagen;
mod error;
pub mod model;
pub mod proud;
pub mod rng;

pub use error::{Error, Result};
