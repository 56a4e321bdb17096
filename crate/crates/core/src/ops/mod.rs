//! The physical forward model: rigid warps as sparse matrices with exact
//! adjoints, colour-filter-array degradation, and the data-fidelity term.

mod degradation;
mod demosaick;
mod fidelity;
mod transform;
mod warp;

pub use demosaick::demosaick_bilinear;
pub use degradation::{apply_degradation, apply_degradation_adjoint, BayerPattern, DegradationOp};
pub use fidelity::{data_fidelity_gradient, data_fidelity_value, estimate_operator_norm, ForwardModel};
pub use transform::{image_center, invert_transform, AffineTransform, TransformRecord};
pub use warp::{apply_warp, apply_warp_adjoint, build_warp, Interpolation, SparseWarp};
