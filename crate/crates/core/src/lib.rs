//! Higher-order likelihood inference: signed-root and Wald/score pivots,
//! their second-order expansion coefficients, Cornish–Fisher and parametric
//! bootstrap p-values, Bartlett correction, and Monte Carlo experiments that
//! measure orders of agreement.

// `!(x > 0.0)` is used on purpose so that NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod error;
pub mod fit;
pub mod mc;
pub mod models;
pub mod numeric;
pub mod pivots;
pub mod rng;
pub mod tensors;
pub mod theory;
pub mod verify;

pub use array::Tensor3;
pub use error::{Error, Result};
pub use fit::AdjustmentSpec;
pub use models::{BaseDensity, Dataset, LogLikDerivs, ModelSpec, ParamPoint};
pub use tensors::{CumulantTensors, DerivedTensors};
pub use pivots::{PivotKind, WecVariant};
