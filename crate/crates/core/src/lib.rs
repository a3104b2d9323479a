//! Triplane undistortion and visibility-weighted fusion on synthetic
//! portrait scenes, with the multi-view evaluation protocol used to score
//! reconstructions.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`triplane`] / [`camera`]: data model, bilinear lookup, analytic decoder, `TRI1` files.
//! * [`render`]: ray generation, shoulder ray warping, emission-absorption rendering.
//! * [`warp`]: displacement fields, inversion, undistorters, `WRP1` files.
//! * [`visfuse`]: ground-truth visibility, occlusion masks, fusion, losses, gradient checks.
//! * [`synth`]: deterministic synthetic multi-view sequences.
//! * [`eval`]: image metrics, the score tensor and its aggregates, reports.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod camera;
pub mod error;
pub mod eval;
pub mod image;
pub mod render;
pub mod rng;
pub mod synth;
pub mod triplane;
pub mod visfuse;
pub mod warp;

pub use camera::Camera;
pub use error::{Error, Result};
pub use eval::{
    ivv, l1_metric, nvs_quality, nvv, overall_quality, psnr, score_tensor, ssim, Aggregates,
    Metric, Reconstructor, ReconstructorKind, ScoreReport, ScoreTensor,
};
pub use image::{Image, ImageFormat};
pub use render::{
    composite, generate_rays, render, warp_rays_shoulder, Ray, RenderConfig, ShoulderParams,
};
pub use synth::{build_sequence, Bundle, SceneSpec};
pub use triplane::{
    aggregate_features, decode, load_triplane, sample_plane, save_triplane, Triplane, TriplaneDims,
};
pub use visfuse::{OcclusionMask, VisibilityTriplane};
pub use warp::{apply_warp, invert_warp, synth_distortion, WarpField};
