//! Visibility estimation, fusion and the training losses.

pub mod fuse;
pub mod gradcheck;
pub mod loss;
pub mod visibility;

pub use fuse::{fuse, Fuser, ReferenceFuser};
pub use gradcheck::{numeric_grad_check, GradCheckOptions, GradCheckReport};
pub use loss::{
    fusion_loss, fusion_loss_grad, fusion_loss_terms, render_loss, render_loss_l1_grad, total_loss,
    visibility_loss, FusionLossTerms, ImageLoss, L1Loss, LossParts, LossReport, LossWeights,
    MseLoss,
};
pub use visibility::{
    compute_visibility_gt, occlusion_mask, resample_triplane, transmittance_to,
    upsample_visibility, OcclusionMask, VisibilityConfig, VisibilityTriplane,
    DEFAULT_VISIBILITY_RESOLUTION,
};
