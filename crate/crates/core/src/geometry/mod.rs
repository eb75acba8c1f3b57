//! Landmarks, thin-plate-spline warping, neighbour mining and alignment.

mod align;
mod landmarks;
mod tps;
mod warp;

pub use align::{align_face, AlignAnchors, Similarity};
pub use landmarks::{
    canonical_template, nearest_neighbor, phi_g, sample_perturbation, LandmarkSet, MiningNorm,
    Point, DEFAULT_K,
};
pub use tps::{max_residual, tps_fit, tps_kernel, TpsTransform};
pub use warp::{resample, warp_image};
