//! Per-plane 2D displacement fields acting on triplanes.
//!
//! Warping is backward: output texel `(u, v)` of plane `k` reads the input
//! plane at `(u + du, v + dv)`, with border clamping.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamKey};
use crate::triplane::{
    parse_container, read_f32_payload, PlaneView, Triplane, TriplaneDims, PLANE_COUNT,
};

const MAGIC: &[u8; 4] = b"WRP1";

/// Three displacement planes of shape `2 x H x W` (component 0 = du along
/// columns, component 1 = dv along rows), in texels.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl WarpField {
    pub fn zeros(height: usize, width: usize) -> Self {
        WarpField {
            height,
            width,
            data: vec![0.0; PLANE_COUNT * 2 * height * width],
        }
    }

    pub fn constant(height: usize, width: usize, du: f32, dv: f32) -> Self {
        WarpField::from_fn(
            height,
            width,
            |_, comp, _, _| if comp == 0 { du } else { dv },
        )
    }

    /// Evaluates `f(plane, component, row, col)` at every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(PLANE_COUNT * 2 * height * width);
        for k in 0..PLANE_COUNT {
            for comp in 0..2 {
                for row in 0..height {
                    for col in 0..width {
                        data.push(f(k, comp, row, col));
                    }
                }
            }
        }
        WarpField {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions(format!(
                "warp field {height}x{width}"
            )));
        }
        if data.len() != PLANE_COUNT * 2 * height * width {
            return Err(Error::DimensionMismatch(format!(
                "warp field {height}x{width} needs {} values, got {}",
                PLANE_COUNT * 2 * height * width,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(WarpField {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    fn component(&self, plane: usize, comp: usize) -> &[f32] {
        let n = self.height * self.width;
        let off = (plane * 2 + comp) * n;
        &self.data[off..off + n]
    }

    /// Both components of one plane as a 2-channel view.
    pub fn plane(&self, plane: usize) -> PlaneView<'_> {
        let n = 2 * self.height * self.width;
        PlaneView::new(
            &self.data[plane * n..(plane + 1) * n],
            2,
            self.height,
            self.width,
        )
    }

    pub fn displacement(&self, plane: usize, row: usize, col: usize) -> (f32, f32) {
        let i = row * self.width + col;
        (self.component(plane, 0)[i], self.component(plane, 1)[i])
    }

    /// Largest displacement vector length.
    pub fn max_magnitude(&self) -> f32 {
        self.magnitudes().fold(0.0, f32::max)
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = PLANE_COUNT * self.height * self.width;
        self.magnitudes().map(f64::from).sum::<f64>() / n as f64
    }

    fn magnitudes(&self) -> impl Iterator<Item = f32> + '_ {
        (0..PLANE_COUNT).flat_map(move |k| {
            self.component(k, 0)
                .iter()
                .zip(self.component(k, 1))
                .map(|(u, v)| u.hypot(*v))
        })
    }

    /// Field scaled by `s`.
    pub fn scaled(&self, s: f32) -> WarpField {
        WarpField {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn check_matches(&self, dims: TriplaneDims) -> Result<()> {
        if self.height != dims.height || self.width != dims.width {
            return Err(Error::DimensionMismatch(format!(
                "warp field {}x{} vs triplane {}x{}",
                self.height, self.width, dims.height, dims.width
            )));
        }
        Ok(())
    }
}

/// Backward-warps every plane of `tri` by its displacement field.
pub fn apply_warp(tri: &Triplane, field: &WarpField) -> Result<Triplane> {
    let dims = tri.dims();
    field.check_matches(dims)?;
    let (h, w, c) = (dims.height, dims.width, dims.channels);
    let mut out = vec![0.0f32; dims.len()];
    out.par_chunks_mut(w)
        .enumerate()
        .for_each(|(chunk, row_out)| {
            let plane = chunk / (c * h);
            let channel = (chunk / h) % c;
            let row = chunk % h;
            let src = tri.plane(plane);
            let du = &field.component(plane, 0)[row * w..(row + 1) * w];
            let dv = &field.component(plane, 1)[row * w..(row + 1) * w];
            for (col, o) in row_out.iter_mut().enumerate() {
                *o = src.sample_channel(channel, col as f32 + du[col], row as f32 + dv[col]);
            }
        });
    Triplane::from_vec(dims, out)
}

/// Seeded low-frequency displacement field with `|d| <= max_magnitude`.
///
/// Random displacement vectors live on a coarse lattice with spacing
/// `smoothness` texels and are bilinearly upsampled.
pub fn synth_distortion(
    seed: u64,
    height: usize,
    width: usize,
    max_magnitude: f32,
    smoothness: f32,
) -> Result<WarpField> {
    if !(max_magnitude >= 0.0) || !max_magnitude.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "max_magnitude must be finite and >= 0, got {max_magnitude}"
        )));
    }
    if !(smoothness > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "smoothness must be > 0, got {smoothness}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidDimensions(format!(
            "warp field {height}x{width}"
        )));
    }
    if max_magnitude == 0.0 {
        return Ok(WarpField::zeros(height, width));
    }
    let key = StreamKey::new(seed, Purpose::Distortion);
    let gw = ((width - 1) as f32 / smoothness).ceil() as usize + 1;
    let gh = ((height - 1) as f32 / smoothness).ceil() as usize + 1;
    let mut data = Vec::with_capacity(PLANE_COUNT * 2 * height * width);
    for k in 0..PLANE_COUNT {
        let mut rng = key.sub(k as u64);
        let mut lattice = vec![0.0f32; 2 * gh * gw];
        for node in 0..gh * gw {
            let angle = rng.gen_range(0.0..std::f32::consts::TAU);
            let radius = max_magnitude * rng.gen::<f32>();
            lattice[node] = radius * angle.cos();
            lattice[gh * gw + node] = radius * angle.sin();
        }
        let view = PlaneView::new(&lattice, 2, gh, gw);
        for comp in 0..2 {
            for row in 0..height {
                for col in 0..width {
                    data.push(view.sample_channel(
                        comp,
                        col as f32 / smoothness,
                        row as f32 / smoothness,
                    ));
                }
            }
        }
    }
    // Bilinear blending keeps vectors inside the sampling disc up to rounding;
    // rescale any that overshoot by an ulp.
    let mut field = WarpField::from_vec(height, width, data)?;
    let n = height * width;
    for k in 0..PLANE_COUNT {
        for i in 0..n {
            let iu = (k * 2) * n + i;
            let iv = (k * 2 + 1) * n + i;
            let m = field.data[iu].hypot(field.data[iv]);
            if m > max_magnitude {
                let s = max_magnitude / m;
                field.data[iu] *= s;
                field.data[iv] *= s;
            }
        }
    }
    Ok(field)
}

/// `max_x |inv(x) + w(x + inv(x))|` over all planes, in texels: how far
/// warping by `w` then by `inv` is from the identity.
pub fn composition_residual(w: &WarpField, inv: &WarpField) -> f64 {
    assert_eq!((w.height, w.width), (inv.height, inv.width));
    let (h, wd) = (w.height, w.width);
    (0..PLANE_COUNT)
        .into_par_iter()
        .map(|k| {
            let wv = w.plane(k);
            let mut worst = 0.0f64;
            for row in 0..h {
                for col in 0..wd {
                    let (iu, iv) = inv.displacement(k, row, col);
                    let (x, y) = (col as f32 + iu, row as f32 + iv);
                    let ru = iu + wv.sample_channel(0, x, y);
                    let rv = iv + wv.sample_channel(1, x, y);
                    worst = worst.max(f64::from(ru.hypot(rv)));
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// One fixed-point update `inv(x) <- -w(x + inv(x))`.
fn fixed_point_step(w: &WarpField, inv: &WarpField) -> WarpField {
    let (h, wd) = (w.height, w.width);
    let n = h * wd;
    let mut data = vec![0.0f32; PLANE_COUNT * 2 * n];
    data.par_chunks_mut(2 * n).enumerate().for_each(|(k, out)| {
        let wv = w.plane(k);
        let (ou, ov) = out.split_at_mut(n);
        for row in 0..h {
            for col in 0..wd {
                let i = row * wd + col;
                let (iu, iv) = inv.displacement(k, row, col);
                let (x, y) = (col as f32 + iu, row as f32 + iv);
                ou[i] = -wv.sample_channel(0, x, y);
                ov[i] = -wv.sample_channel(1, x, y);
            }
        }
    });
    WarpField {
        height: h,
        width: wd,
        data,
    }
}

/// Inverts a smooth displacement field by fixed-point iteration.
///
/// Converges when the displacement Jacobian has spectral norm below one.
/// Returns `NonConvergence` if the residual is still above `tolerance`
/// after `iterations` updates.
pub fn invert_warp(w: &WarpField, iterations: usize, tolerance: f64) -> Result<WarpField> {
    invert_warp_traced(w, iterations, tolerance).map(|(f, _)| f)
}

/// As [`invert_warp`], also returning the residual after each iteration.
pub fn invert_warp_traced(
    w: &WarpField,
    iterations: usize,
    tolerance: f64,
) -> Result<(WarpField, Vec<f64>)> {
    let mut inv = WarpField::zeros(w.height, w.width);
    let mut trace = Vec::with_capacity(iterations);
    let mut residual = composition_residual(w, &inv);
    if residual <= tolerance {
        return Ok((inv, trace));
    }
    for _ in 0..iterations {
        inv = fixed_point_step(w, &inv);
        residual = composition_residual(w, &inv);
        trace.push(residual);
        if residual <= tolerance {
            return Ok((inv, trace));
        }
    }
    Err(Error::NonConvergence {
        iterations,
        residual,
    })
}

pub const ORACLE_ITERATIONS: usize = 60;
pub const ORACLE_TOLERANCE: f64 = 1e-4;

/// Estimates a correction warp for a raw triplane given the canonical one.
pub trait Undistorter: Send + Sync {
    fn name(&self) -> &str;

    fn estimate_correction(&self, raw: &Triplane, cano: &Triplane) -> Result<WarpField>;

    fn undistort(&self, raw: &Triplane, cano: &Triplane) -> Result<Triplane> {
        let corr = self.estimate_correction(raw, cano)?;
        apply_warp(raw, &corr)
    }
}

/// Undistorter that knows the distortion injected into the raw triplane.
#[derive(Debug, Clone)]
pub struct OracleUndistorter {
    pub distortion: WarpField,
}

impl Undistorter for OracleUndistorter {
    fn name(&self) -> &str {
        "oracle"
    }

    fn estimate_correction(&self, raw: &Triplane, _cano: &Triplane) -> Result<WarpField> {
        self.distortion.check_matches(raw.dims())?;
        invert_warp(&self.distortion, ORACLE_ITERATIONS, ORACLE_TOLERANCE)
    }
}

/// The "no undistorter" arm: returns the raw triplane untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityUndistorter;

impl Undistorter for IdentityUndistorter {
    fn name(&self) -> &str {
        "identity"
    }

    fn estimate_correction(&self, raw: &Triplane, _cano: &Triplane) -> Result<WarpField> {
        Ok(WarpField::zeros(raw.dims().height, raw.dims().width))
    }

    fn undistort(&self, raw: &Triplane, _cano: &Triplane) -> Result<Triplane> {
        Ok(raw.clone())
    }
}

pub fn oracle_undistort(raw: &Triplane, true_distortion: &WarpField) -> Result<Triplane> {
    OracleUndistorter {
        distortion: true_distortion.clone(),
    }
    .undistort(raw, raw)
}

pub fn identity_undistorter(raw: &Triplane, cano: &Triplane) -> Triplane {
    let _ = cano;
    raw.clone()
}

/// Mean absolute difference over all `3 C H W` entries.
pub fn undistort_loss(undist: &Triplane, gt: &Triplane) -> Result<f64> {
    undist.check_same_dims(gt, "undistortion loss")?;
    Ok(mean_abs_diff(undist.as_slice(), gt.as_slice()))
}

pub(crate) fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    let sum: f64 = a
        .par_chunks(4096)
        .zip(b.par_chunks(4096))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(p, q)| (f64::from(*p) - f64::from(*q)).abs())
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    sum / a.len() as f64
}

pub fn save_warp(field: &WarpField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_warp(field, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_warp(field: &WarpField, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    for v in [PLANE_COUNT, 2, field.height, field.width] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(field.data.len() * 4);
    for v in &field.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn load_warp(path: impl AsRef<Path>) -> Result<WarpField> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_warp_bytes(&bytes)
}

pub fn decode_warp_bytes(bytes: &[u8]) -> Result<WarpField> {
    let (header, payload) = parse_container(bytes, MAGIC, Some(2))?;
    if header[0] != PLANE_COUNT {
        return Err(Error::InvalidDimensions(format!(
            "plane count {} (expected {PLANE_COUNT})",
            header[0]
        )));
    }
    let data = read_f32_payload(payload, PLANE_COUNT * 2 * header[2] * header[3])?;
    WarpField::from_vec(header[2], header[3], data)
}
