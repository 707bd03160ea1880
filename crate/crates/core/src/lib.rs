//! Location-aware dish recognition.
//!
//! A photo's geotag selects nearby restaurants, their menus define the label
//! space, and per-restaurant classifiers trained on weakly-labeled images
//! recognize the dish. Recognition runs six local descriptors through
//! bag-of-words histograms, χ² extended Gaussian kernels, and a p-norm
//! multiple kernel learning SVM solved with SMO.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codebook;
pub mod context;
pub mod descriptors;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod interest;
pub mod kernels;
pub mod mkl;
pub mod par;
pub mod pipeline;
pub mod segmentation;

pub use error::{Error, Result};
