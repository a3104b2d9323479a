//! Ray generation, shoulder ray warping and emission-absorption volume
//! rendering of a triplane.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{add, dot, normalize, scale, Camera, Vec3};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::triplane::{aggregate_into, decode, Triplane, DECODED_CHANNELS, DEFAULT_DENSITY_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub samples_per_ray: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f32; 3],
    /// Half-extent of the scene cube mapped onto the triplane domain `[-1, 1]^3`.
    pub half_extent: f64,
    pub density_scale: f32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 128,
            height: 128,
            samples_per_ray: 64,
            near: 0.1,
            far: 10.0,
            background: [1.0, 1.0, 1.0],
            half_extent: 1.0,
            density_scale: DEFAULT_DENSITY_SCALE,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidDimensions(format!(
                "render resolution {}x{}",
                self.width, self.height
            )));
        }
        if !(self.near < self.far) {
            return Err(Error::InvalidParameter(format!(
                "near ({}) must be < far ({})",
                self.near, self.far
            )));
        }
        if self.samples_per_ray < 2 {
            return Err(Error::InvalidParameter(
                "samples_per_ray must be >= 2".into(),
            ));
        }
        if !(self.half_extent > 0.0) {
            return Err(Error::InvalidParameter("half_extent must be > 0".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidParameter(
                "background must lie in [0,1]^3".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        add(self.origin, scale(self.direction, t))
    }

    /// Parametric entry and exit of the axis-aligned cube `[-h, h]^3`.
    pub fn cube_hit(&self, h: f64) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let o = self.origin[a];
            let d = self.direction[a];
            if d.abs() < 1e-15 {
                if o < -h || o > h {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut ta, mut tb) = ((-h - o) * inv, (h - o) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 < t1).then_some((t0, t1))
    }

    /// Cube span clipped to the ray's own `[t_near, t_far]`.
    pub fn march_span(&self, h: f64) -> Option<(f64, f64)> {
        let (a, b) = self.cube_hit(h)?;
        let a = a.max(self.t_near);
        let b = b.min(self.t_far);
        (a < b).then_some((a, b))
    }
}

/// Row-major grid of primary rays.
#[derive(Debug, Clone, PartialEq)]
pub struct RayGrid {
    pub width: usize,
    pub height: usize,
    pub rays: Vec<Ray>,
}

/// Per-pixel primary ray through the pixel center.
pub fn pixel_ray(
    cam: &Camera,
    inv_k: &[[f64; 3]; 3],
    cfg: &RenderConfig,
    x: usize,
    y: usize,
) -> Ray {
    let u = (x as f64 + 0.5) / cfg.width as f64;
    let v = (y as f64 + 0.5) / cfg.height as f64;
    let dc = [
        inv_k[0][0] * u + inv_k[0][1] * v + inv_k[0][2],
        inv_k[1][0] * u + inv_k[1][1] * v + inv_k[1][2],
        inv_k[2][0] * u + inv_k[2][1] * v + inv_k[2][2],
    ];
    let r = cam.rotation();
    let dw = [
        r[0][0] * dc[0] + r[0][1] * dc[1] + r[0][2] * dc[2],
        r[1][0] * dc[0] + r[1][1] * dc[1] + r[1][2] * dc[2],
        r[2][0] * dc[0] + r[2][1] * dc[1] + r[2][2] * dc[2],
    ];
    Ray {
        origin: cam.center(),
        direction: normalize(dw).unwrap_or([0.0, 0.0, 1.0]),
        t_near: cfg.near,
        t_far: cfg.far,
    }
}

pub fn generate_rays(cam: &Camera, cfg: &RenderConfig) -> Result<RayGrid> {
    cfg.validate()?;
    let inv_k = cam.inverse_intrinsics()?;
    let mut rays = Vec::with_capacity(cfg.width * cfg.height);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            rays.push(pixel_ray(cam, &inv_k, cfg, x, y));
        }
    }
    Ok(RayGrid {
        width: cfg.width,
        height: cfg.height,
        rays,
    })
}

/// Ray-space shoulder motion: rays entering the scene below the neck are
/// translated, rays above it are untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShoulderParams {
    pub offset: Vec3,
    pub neck_height: f64,
    pub blend_width: f64,
}

impl ShoulderParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.blend_width > 0.0) {
            return Err(Error::InvalidParameter(
                "shoulder blend_width must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Blend factor: 0 at or above the neck, 1 a full blend width below it.
    pub fn blend(&self, y: f64) -> f64 {
        if y >= self.neck_height {
            return 0.0;
        }
        let s = ((self.neck_height - y) / self.blend_width).min(1.0);
        s * s * (3.0 - 2.0 * s)
    }

    pub fn warp(&self, ray: &Ray, half_extent: f64) -> Ray {
        let Some((t_entry, _)) = ray.cube_hit(half_extent) else {
            return *ray;
        };
        let beta = self.blend(ray.at(t_entry)[1]);
        if beta == 0.0 {
            return *ray;
        }
        Ray {
            origin: add(ray.origin, scale(self.offset, beta)),
            ..*ray
        }
    }
}

pub fn warp_rays_shoulder(grid: &RayGrid, sp: &ShoulderParams, half_extent: f64) -> RayGrid {
    RayGrid {
        width: grid.width,
        height: grid.height,
        rays: grid.rays.iter().map(|r| sp.warp(r, half_extent)).collect(),
    }
}

/// Front-to-back emission-absorption accumulator.
#[derive(Debug, Clone, Copy)]
pub struct Compositor {
    transmittance: f64,
    weight_sum: f64,
    color: [f64; 3],
}

impl Default for Compositor {
    fn default() -> Self {
        Compositor {
            transmittance: 1.0,
            weight_sum: 0.0,
            color: [0.0; 3],
        }
    }
}

impl Compositor {
    /// Adds a segment and returns its compositing weight.
    #[inline]
    pub fn push(&mut self, density: f64, color: [f64; 3], delta: f64) -> f64 {
        let optical = density * delta;
        let alpha = -(-optical).exp_m1();
        let w = alpha * self.transmittance;
        self.transmittance *= (-optical).exp();
        self.weight_sum += w;
        for (acc, c) in self.color.iter_mut().zip(color) {
            *acc += w * c;
        }
        w
    }

    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    /// Final `(color, alpha)` over a constant background.
    pub fn finish(&self, background: [f64; 3]) -> ([f64; 3], f64) {
        let rest = 1.0 - self.weight_sum;
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = self.color[c] + rest * background[c];
        }
        (out, self.weight_sum)
    }
}

/// One marched sample: density, color and segment length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub density: f64,
    pub color: [f64; 3],
    pub delta: f64,
}

pub fn composite(samples: &[Sample], background: [f64; 3]) -> ([f64; 3], f64) {
    let mut acc = Compositor::default();
    for s in samples {
        acc.push(s.density, s.color, s.delta);
    }
    acc.finish(background)
}

/// Compositing weights `w_k = alpha_k * prod_{j<k}(1 - alpha_j)`.
pub fn composite_weights(samples: &[Sample]) -> Vec<f64> {
    let mut acc = Compositor::default();
    samples
        .iter()
        .map(|s| acc.push(s.density, s.color, s.delta))
        .collect()
}

/// Marches one ray through the triplane; returns `(color, alpha)`.
pub fn march_ray(tri: &Triplane, ray: &Ray, cfg: &RenderConfig) -> ([f64; 3], f64) {
    let bg = cfg.background.map(f64::from);
    let Some((t0, t1)) = ray.march_span(cfg.half_extent) else {
        return (bg, 0.0);
    };
    let n = cfg.samples_per_ray;
    let delta = (t1 - t0) / n as f64;
    let inv_h = 1.0 / cfg.half_extent;
    let mut acc = Compositor::default();
    let mut f = [0.0f32; DECODED_CHANNELS];
    for k in 0..n {
        let t = t0 + (k as f64 + 0.5) * delta;
        let p = ray.at(t);
        let q = [
            (p[0] * inv_h).clamp(-1.0, 1.0) as f32,
            (p[1] * inv_h).clamp(-1.0, 1.0) as f32,
            (p[2] * inv_h).clamp(-1.0, 1.0) as f32,
        ];
        aggregate_into(tri, q, &mut f);
        let d = decode(&f, cfg.density_scale);
        acc.push(d.density as f64, d.color.map(f64::from), delta);
    }
    acc.finish(bg)
}

/// Color and alpha images of a triplane seen from `cam`.
pub fn render_with_alpha(
    tri: &Triplane,
    cam: &Camera,
    cfg: &RenderConfig,
    shoulder: Option<&ShoulderParams>,
) -> Result<(Image, Vec<f32>)> {
    cfg.validate()?;
    if tri.dims().channels < DECODED_CHANNELS {
        return Err(Error::InvalidDimensions(format!(
            "rendering needs >= {DECODED_CHANNELS} channels, triplane has {}",
            tri.dims().channels
        )));
    }
    if let Some(sp) = shoulder {
        sp.validate()?;
    }
    let inv_k = cam.inverse_intrinsics()?;
    let w = cfg.width;
    let mut rgb = vec![0.0f32; w * cfg.height * 3];
    let mut alpha = vec![0.0f32; w * cfg.height];
    rgb.par_chunks_mut(w * 3)
        .zip(alpha.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, arow))| {
            for x in 0..w {
                let mut ray = pixel_ray(cam, &inv_k, cfg, x, y);
                if let Some(sp) = shoulder {
                    ray = sp.warp(&ray, cfg.half_extent);
                }
                let (c, a) = march_ray(tri, &ray, cfg);
                for ch in 0..3 {
                    row[x * 3 + ch] = c[ch] as f32;
                }
                arow[x] = a as f32;
            }
        });
    Ok((Image::from_vec(w, cfg.height, rgb)?, alpha))
}

pub fn render(
    tri: &Triplane,
    cam: &Camera,
    cfg: &RenderConfig,
    shoulder: Option<&ShoulderParams>,
) -> Result<Image> {
    render_with_alpha(tri, cam, cfg, shoulder).map(|(img, _)| img)
}

/// Angle between the optical axis and a ray direction, in radians.
pub fn off_axis_angle(cam: &Camera, ray: &Ray) -> f64 {
    dot(cam.forward(), ray.direction).clamp(-1.0, 1.0).acos()
}
