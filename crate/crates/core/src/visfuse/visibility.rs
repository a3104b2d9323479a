//! Ground-truth visibility triplanes and occlusion masks.

use rayon::prelude::*;

use crate::camera::{norm, scale, sub, Camera};
use crate::error::{Error, Result};
use crate::render::{Ray, RenderConfig};
use crate::triplane::{density_at, texel_to_cube, PlaneView, Triplane, TriplaneDims, PLANE_COUNT};
use crate::warp::{apply_warp, WarpField};

/// Native visibility resolution for 256-texel triplanes.
pub const DEFAULT_VISIBILITY_RESOLUTION: usize = 128;

const EMPTY_COLUMN_EPS: f64 = 1e-6;

/// Single-channel per-plane weights in `[0, 1]`; 1 marks content seen by the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityTriplane(Triplane);

/// Single-channel per-plane weights in `[0, 1]` marking content hidden in the
/// input frame but visible in the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask(Triplane);

fn check_unit_mask(tri: &Triplane, what: &str) -> Result<()> {
    if tri.dims().channels != 1 {
        return Err(Error::InvalidDimensions(format!(
            "{what} must have one channel, found {}",
            tri.dims().channels
        )));
    }
    if let Some(i) = tri.as_slice().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidParameter(format!(
            "{what} value {} at index {i} outside [0,1]",
            tri.as_slice()[i]
        )));
    }
    Ok(())
}

macro_rules! mask_type {
    ($ty:ident, $what:literal) => {
        impl $ty {
            pub fn new(tri: Triplane) -> Result<Self> {
                check_unit_mask(&tri, $what)?;
                Ok($ty(tri))
            }

            pub fn filled(height: usize, width: usize, value: f32) -> Self {
                $ty(Triplane::filled(
                    TriplaneDims::new(1, height, width),
                    value.clamp(0.0, 1.0),
                ))
            }

            pub fn as_triplane(&self) -> &Triplane {
                &self.0
            }

            pub fn into_triplane(self) -> Triplane {
                self.0
            }

            pub fn height(&self) -> usize {
                self.0.dims().height
            }

            pub fn width(&self) -> usize {
                self.0.dims().width
            }

            pub fn as_slice(&self) -> &[f32] {
                self.0.as_slice()
            }

            pub fn get(&self, plane: usize, row: usize, col: usize) -> f32 {
                self.0.get(plane, 0, row, col)
            }
        }
    };
}

mask_type!(VisibilityTriplane, "visibility triplane");
mask_type!(OcclusionMask, "occlusion mask");

impl VisibilityTriplane {
    /// Bilinear resampling to `height x width` (align-corners).
    pub fn resample(&self, height: usize, width: usize) -> VisibilityTriplane {
        VisibilityTriplane(resample_triplane(&self.0, height, width))
    }

    /// Warps the visibility planes with the same backward warp as their triplane.
    pub fn warped(&self, field: &WarpField) -> Result<VisibilityTriplane> {
        let mut t = apply_warp(&self.0, field)?;
        t.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(VisibilityTriplane(t))
    }
}

/// Align-corners bilinear resampling of every plane and channel.
pub fn resample_triplane(tri: &Triplane, height: usize, width: usize) -> Triplane {
    let src = tri.dims();
    let dims = TriplaneDims::new(src.channels, height, width);
    if src == dims {
        return tri.clone();
    }
    let ratio = |dst: usize, s: usize| {
        if dst <= 1 {
            0.0
        } else {
            (s - 1) as f32 / (dst - 1) as f32
        }
    };
    let (ry, rx) = (ratio(height, src.height), ratio(width, src.width));
    let planes: Vec<PlaneView<'_>> = (0..PLANE_COUNT).map(|k| tri.plane(k)).collect();
    Triplane::from_fn(dims, |k, c, row, col| {
        planes[k].sample_channel(c, col as f32 * rx, row as f32 * ry)
    })
}

pub fn upsample_visibility(
    vis: &VisibilityTriplane,
    height: usize,
    width: usize,
) -> VisibilityTriplane {
    vis.resample(height, width)
}

/// Sampling budget of the ground-truth visibility construction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VisibilityConfig {
    pub resolution: usize,
    /// Samples along each plane column (the axis perpendicular to the plane).
    pub column_samples: usize,
    /// Samples along each camera-to-point transmittance ray.
    pub ray_samples: usize,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        VisibilityConfig {
            resolution: DEFAULT_VISIBILITY_RESOLUTION,
            column_samples: 32,
            ray_samples: 32,
        }
    }
}

/// Transmittance from the camera center to world point `x`, ray-marched
/// through the scene cube with `samples` midpoint samples.
pub fn transmittance_to(
    tri: &Triplane,
    origin: [f64; 3],
    x: [f64; 3],
    cfg: &RenderConfig,
    samples: usize,
) -> f64 {
    let to = sub(x, origin);
    let len = norm(to);
    if len <= 0.0 {
        return 1.0;
    }
    let ray = Ray {
        origin,
        direction: scale(to, 1.0 / len),
        t_near: 0.0,
        t_far: len,
    };
    let Some((t0, t1)) = ray.march_span(cfg.half_extent) else {
        return 1.0;
    };
    let delta = (t1 - t0) / samples as f64;
    let inv_h = 1.0 / cfg.half_extent;
    let mut optical = 0.0f64;
    for m in 0..samples {
        let p = ray.at(t0 + (m as f64 + 0.5) * delta);
        let q = p.map(|v| (v * inv_h).clamp(-1.0, 1.0) as f32);
        optical += f64::from(density_at(tri, q, cfg.density_scale)) * delta;
    }
    (-optical).exp()
}

/// Normalized cube point of plane `k`'s texel `(a, b)` at column depth `depth`.
#[inline]
pub fn column_point(plane: usize, a: f32, b: f32, depth: f32) -> [f32; 3] {
    match plane {
        0 => [a, b, depth],
        1 => [a, depth, b],
        _ => [depth, a, b],
    }
}

/// Density-weighted camera transmittance along each plane column.
///
/// For every plane texel, the column through the cube perpendicular to that
/// plane is sampled; visibility is `sum(sigma_k tau_k) / sum(sigma_k)` where
/// `tau_k` is the transmittance from the camera to sample `k`. Columns with no
/// mass are fully visible.
pub fn compute_visibility_gt(
    tri: &Triplane,
    cam: &Camera,
    cfg: &RenderConfig,
    vcfg: &VisibilityConfig,
) -> Result<VisibilityTriplane> {
    cfg.validate()?;
    if vcfg.resolution == 0 || vcfg.column_samples == 0 || vcfg.ray_samples == 0 {
        return Err(Error::InvalidParameter(format!(
            "visibility config {vcfg:?}"
        )));
    }
    let res = vcfg.resolution;
    let origin = cam.center();
    let h = cfg.half_extent;
    let n = vcfg.column_samples;
    let mut data = vec![0.0f32; PLANE_COUNT * res * res];
    data.par_chunks_mut(res)
        .enumerate()
        .for_each(|(chunk, row_out)| {
            let plane = chunk / res;
            let row = chunk % res;
            let b = texel_to_cube(row as f32, res);
            for (col, out) in row_out.iter_mut().enumerate() {
                let a = texel_to_cube(col as f32, res);
                let mut mass = 0.0f64;
                let mut seen = 0.0f64;
                for k in 0..n {
                    let depth = -1.0 + (k as f32 + 0.5) * 2.0 / n as f32;
                    let q = column_point(plane, a, b, depth);
                    let sigma = f64::from(density_at(tri, q, cfg.density_scale));
                    if sigma <= 0.0 {
                        continue;
                    }
                    let x = q.map(|v| f64::from(v) * h);
                    mass += sigma;
                    seen += sigma * transmittance_to(tri, origin, x, cfg, vcfg.ray_samples);
                }
                *out = if mass <= EMPTY_COLUMN_EPS {
                    1.0
                } else {
                    (seen / mass).clamp(0.0, 1.0) as f32
                };
            }
        });
    let tri = Triplane::from_vec(TriplaneDims::new(1, res, res), data)?;
    Ok(VisibilityTriplane(tri))
}

/// `clamp((1 - vis_input) * vis_cano, 0, 1)`.
pub fn occlusion_mask(
    vis_input: &VisibilityTriplane,
    vis_cano: &VisibilityTriplane,
) -> Result<OcclusionMask> {
    vis_input
        .0
        .check_same_dims(&vis_cano.0, "occlusion mask inputs")?;
    let data = vis_input
        .as_slice()
        .iter()
        .zip(vis_cano.as_slice())
        .map(|(vi, vc)| ((1.0 - vi) * vc).clamp(0.0, 1.0))
        .collect();
    Ok(OcclusionMask(Triplane::from_vec(vis_input.0.dims(), data)?))
}
