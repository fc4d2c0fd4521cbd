//! Uniform affine quantization, dyadic requantization, quantization-aware
//! training and lowering to an integer-only model.

mod bn;
mod dyadic;
mod lower;
mod params;
mod qat;
mod schema;

pub use bn::{fold_bn, populate_bn_stats};
pub use dyadic::{to_dyadic, DyadicScale, MANTISSA_LIMIT, MAX_DYADIC_SHIFT};
pub use lower::{lower, IntForward, IntLayer, IntegerModel, OpTally, INTEGER_MODEL_FORMAT};
pub use params::{calibrate, qrange, QuantParams, MAX_BITS, MIN_BITS};
pub use qat::{qat_train, QatConfig, QatEpoch, QatModel, DEFAULT_ACCUMULATOR_BITS, MAX_ACCUMULATOR_BITS};
pub use schema::{QuantSchema, DEFAULT_ACT_OFFSET, DEFAULT_INPUT_BITS};

pub(crate) use lower::ceil_log2;
