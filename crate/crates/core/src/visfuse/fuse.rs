//! Visibility-weighted triplane fusion.

use crate::error::{Error, Result};
use crate::triplane::{Triplane, PLANE_COUNT};

use super::visibility::VisibilityTriplane;

/// Combines an undistorted per-frame triplane with the canonical triplane.
pub trait Fuser: Send + Sync {
    fn name(&self) -> &str;

    fn fuse(
        &self,
        undist: &Triplane,
        vis_undist: &VisibilityTriplane,
        cano: &Triplane,
        vis_cano: &VisibilityTriplane,
    ) -> Result<Triplane>;
}

/// Per texel: `w_c = (1 - vis_undist) * vis_cano`, output
/// `(1 - w_c) * undist + w_c * cano`, shared by all channels.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceFuser;

impl Fuser for ReferenceFuser {
    fn name(&self) -> &str {
        "reference"
    }

    fn fuse(
        &self,
        undist: &Triplane,
        vis_undist: &VisibilityTriplane,
        cano: &Triplane,
        vis_cano: &VisibilityTriplane,
    ) -> Result<Triplane> {
        fuse(undist, vis_undist, cano, vis_cano)
    }
}

pub fn fuse(
    undist: &Triplane,
    vis_undist: &VisibilityTriplane,
    cano: &Triplane,
    vis_cano: &VisibilityTriplane,
) -> Result<Triplane> {
    undist.check_same_dims(cano, "fusion inputs")?;
    let dims = undist.dims();
    for (vis, name) in [
        (vis_undist, "input visibility"),
        (vis_cano, "canonical visibility"),
    ] {
        if vis.height() != dims.height || vis.width() != dims.width {
            return Err(Error::DimensionMismatch(format!(
                "{name} is {}x{}, triplane is {}x{} (upsample first)",
                vis.height(),
                vis.width(),
                dims.height,
                dims.width
            )));
        }
    }
    let n = dims.height * dims.width;
    let (a, b) = (undist.as_slice(), cano.as_slice());
    let (vu, vc) = (vis_undist.as_slice(), vis_cano.as_slice());
    let mut out = vec![0.0f32; dims.len()];
    for k in 0..PLANE_COUNT {
        for c in 0..dims.channels {
            let base = (k * dims.channels + c) * n;
            for i in 0..n {
                let w_c = (1.0 - vu[k * n + i]) * vc[k * n + i];
                let w_u = 1.0 - w_c;
                out[base + i] = w_u * a[base + i] + w_c * b[base + i];
            }
        }
    }
    Triplane::from_vec(dims, out)
}
