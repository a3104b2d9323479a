//! Training-style losses over triplanes, visibilities and images, plus their
//! analytic (sub)gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::triplane::{Triplane, PLANE_COUNT};
use crate::warp::mean_abs_diff;

use super::visibility::{OcclusionMask, VisibilityTriplane};

const MASK_EPS: f64 = 1e-6;

/// `L1(pred_raw, gt_raw) + L1(pred_cano, gt_cano)`.
pub fn visibility_loss(
    pred_raw: &VisibilityTriplane,
    gt_raw: &VisibilityTriplane,
    pred_cano: &VisibilityTriplane,
    gt_cano: &VisibilityTriplane,
) -> Result<f64> {
    pred_raw
        .as_triplane()
        .check_same_dims(gt_raw.as_triplane(), "raw visibility")?;
    pred_cano
        .as_triplane()
        .check_same_dims(gt_cano.as_triplane(), "canonical visibility")?;
    Ok(mean_abs_diff(pred_raw.as_slice(), gt_raw.as_slice())
        + mean_abs_diff(pred_cano.as_slice(), gt_cano.as_slice()))
}

/// The three terms of the fusion loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionLossTerms {
    pub mean: f64,
    pub visible: f64,
    pub occluded: f64,
}

impl FusionLossTerms {
    pub fn total(&self) -> f64 {
        self.mean + self.visible + self.occluded
    }
}

fn check_mask_dims(fused: &Triplane, mask: &Triplane, what: &str) -> Result<()> {
    let d = fused.dims();
    let m = mask.dims();
    if m.channels != 1 || m.height != d.height || m.width != d.width {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}x{}, expected 1x{}x{}",
            m.channels, m.height, m.width, d.height, d.width
        )));
    }
    Ok(())
}

/// Mask sums per term, with the single-channel mask broadcast over channels.
fn mask_norm(mask: &[f32], channels: usize) -> f64 {
    mask.iter().map(|&m| f64::from(m)).sum::<f64>() * channels as f64
}

/// `Mean(D) + sum(D * vis)/|vis| + sum(D * occ)/|occ|` with `D = |fused - gt|`.
///
/// Masks have one channel and broadcast over all feature channels; `|m|` is
/// the broadcast mask mass. A term whose mask mass is below `1e-6` is zero.
pub fn fusion_loss_terms(
    fused: &Triplane,
    gt: &Triplane,
    vis_gt: &VisibilityTriplane,
    occ: &OcclusionMask,
) -> Result<FusionLossTerms> {
    fused.check_same_dims(gt, "fusion loss")?;
    check_mask_dims(fused, vis_gt.as_triplane(), "visibility mask")?;
    check_mask_dims(fused, occ.as_triplane(), "occlusion mask")?;
    let d = fused.dims();
    let n = d.height * d.width;
    let (f, g) = (fused.as_slice(), gt.as_slice());
    let (vis, occm) = (vis_gt.as_slice(), occ.as_slice());
    let mut sum = 0.0f64;
    let mut sum_vis = 0.0f64;
    let mut sum_occ = 0.0f64;
    for k in 0..PLANE_COUNT {
        for c in 0..d.channels {
            let base = (k * d.channels + c) * n;
            for i in 0..n {
                let diff = (f64::from(f[base + i]) - f64::from(g[base + i])).abs();
                sum += diff;
                sum_vis += diff * f64::from(vis[k * n + i]);
                sum_occ += diff * f64::from(occm[k * n + i]);
            }
        }
    }
    let weighted = |s: f64, mass: f64| if mass < MASK_EPS { 0.0 } else { s / mass };
    Ok(FusionLossTerms {
        mean: sum / d.len() as f64,
        visible: weighted(sum_vis, mask_norm(vis, d.channels)),
        occluded: weighted(sum_occ, mask_norm(occm, d.channels)),
    })
}

pub fn fusion_loss(
    fused: &Triplane,
    gt: &Triplane,
    vis_gt: &VisibilityTriplane,
    occ: &OcclusionMask,
) -> Result<f64> {
    fusion_loss_terms(fused, gt, vis_gt, occ).map(|t| t.total())
}

/// Subgradient of [`fusion_loss`] with respect to `fused` (sign(0) = 0).
pub fn fusion_loss_grad(
    fused: &Triplane,
    gt: &Triplane,
    vis_gt: &VisibilityTriplane,
    occ: &OcclusionMask,
) -> Result<Vec<f64>> {
    fused.check_same_dims(gt, "fusion loss")?;
    check_mask_dims(fused, vis_gt.as_triplane(), "visibility mask")?;
    check_mask_dims(fused, occ.as_triplane(), "occlusion mask")?;
    let d = fused.dims();
    let n = d.height * d.width;
    let vis = vis_gt.as_slice();
    let occm = occ.as_slice();
    let inv = |mass: f64| if mass < MASK_EPS { 0.0 } else { 1.0 / mass };
    let inv_vis = inv(mask_norm(vis, d.channels));
    let inv_occ = inv(mask_norm(occm, d.channels));
    let inv_all = 1.0 / d.len() as f64;
    let (f, g) = (fused.as_slice(), gt.as_slice());
    let mut grad = vec![0.0f64; d.len()];
    for k in 0..PLANE_COUNT {
        for c in 0..d.channels {
            let base = (k * d.channels + c) * n;
            for i in 0..n {
                let diff = f64::from(f[base + i]) - f64::from(g[base + i]);
                let s = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                grad[base + i] = s
                    * (inv_all
                        + f64::from(vis[k * n + i]) * inv_vis
                        + f64::from(occm[k * n + i]) * inv_occ);
            }
        }
    }
    Ok(grad)
}

/// Image-space loss used for the render term.
pub trait ImageLoss: Send + Sync {
    fn name(&self) -> &str;
    fn eval(&self, a: &Image, b: &Image) -> Result<f64>;
}

/// Mean absolute difference over all pixels and channels.
#[derive(Debug, Clone, Copy, Default)]
pub struct L1Loss;

impl ImageLoss for L1Loss {
    fn name(&self) -> &str {
        "l1"
    }

    fn eval(&self, a: &Image, b: &Image) -> Result<f64> {
        a.check_same_dims(b)?;
        Ok(mean_abs_diff(a.as_slice(), b.as_slice()))
    }
}

/// Mean squared difference over all pixels and channels.
#[derive(Debug, Clone, Copy, Default)]
pub struct MseLoss;

impl ImageLoss for MseLoss {
    fn name(&self) -> &str {
        "mse"
    }

    fn eval(&self, a: &Image, b: &Image) -> Result<f64> {
        a.check_same_dims(b)?;
        let s: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
            .sum();
        Ok(s / a.as_slice().len() as f64)
    }
}

/// Render loss between the ground-truth and rendered novel view. The
/// perceptual metric is replaced by a pluggable image loss (L1 by default).
pub fn render_loss(gt: &Image, rendered: &Image, metric: &dyn ImageLoss) -> Result<f64> {
    metric.eval(gt, rendered)
}

/// Subgradient of the L1 render loss with respect to rendered values.
pub fn render_loss_l1_grad(gt: &Image, rendered: &Image) -> Result<Vec<f64>> {
    gt.check_same_dims(rendered)?;
    let n = gt.as_slice().len() as f64;
    Ok(gt
        .as_slice()
        .iter()
        .zip(rendered.as_slice())
        .map(|(g, r)| {
            let d = f64::from(*r) - f64::from(*g);
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub undist: f64,
    pub fusion: f64,
    pub vis: f64,
    pub render: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub undist: f64,
    pub fusion: f64,
    pub vis: f64,
    pub render: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            undist: 1.0,
            fusion: 1.0,
            vis: 1.0,
            render: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.undist, self.fusion, self.vis, self.render];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "loss weights must be finite and >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> f64 {
    weights.undist * parts.undist
        + weights.fusion * parts.fusion
        + weights.vis * parts.vis
        + weights.render * parts.render
}

/// JSON loss record: per-term values, weights, the render metric in use and
/// the weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossParts,
    pub weights: LossWeights,
    pub metric: String,
    pub total: f64,
    pub substitutions: Vec<String>,
}

impl LossReport {
    pub fn new(terms: LossParts, weights: LossWeights, metric: &dyn ImageLoss) -> Self {
        LossReport {
            terms,
            weights,
            metric: metric.name().to_string(),
            total: total_loss(&terms, &weights),
            substitutions: vec![format!(
                "render loss uses `{}` in place of a perceptual metric",
                metric.name()
            )],
        }
    }
}
