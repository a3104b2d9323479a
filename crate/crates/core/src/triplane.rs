//! Triplane data model, bilinear lookup, feature aggregation and the analytic
//! decoder.
//!
//! Plane order is fixed: plane 0 = XY, plane 1 = XZ, plane 2 = YZ. Within a
//! plane the first named axis runs along columns (`u`) and the second along
//! rows (`v`). The cube `[-1, 1]` maps onto texel range `[0, W-1]` ("align
//! corners").

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PLANE_COUNT: usize = 3;
pub const DEFAULT_CHANNELS: usize = 32;
pub const DEFAULT_RESOLUTION: usize = 256;
pub const DEFAULT_DENSITY_SCALE: f32 = 25.0;

/// Channels consumed by the decoder: density logit followed by RGB logits.
pub const DECODED_CHANNELS: usize = 4;

const MAGIC: &[u8; 4] = b"TRI1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct TriplaneDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TriplaneDims {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        TriplaneDims {
            channels,
            height,
            width,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn len(&self) -> usize {
        PLANE_COUNT * self.plane_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidDimensions(format!(
                "C={} H={} W={} (all must be positive)",
                self.channels, self.height, self.width
            )));
        }
        Ok(())
    }
}

impl Default for TriplaneDims {
    fn default() -> Self {
        TriplaneDims::new(DEFAULT_CHANNELS, DEFAULT_RESOLUTION, DEFAULT_RESOLUTION)
    }
}

/// Three axis-aligned feature planes, stored plane-major, then channel-major,
/// then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplane {
    dims: TriplaneDims,
    data: Vec<f32>,
}

impl Triplane {
    pub fn zeros(dims: TriplaneDims) -> Self {
        Triplane::filled(dims, 0.0)
    }

    pub fn filled(dims: TriplaneDims, value: f32) -> Self {
        Triplane {
            dims,
            data: vec![value; dims.len()],
        }
    }

    /// Builds a triplane from raw storage, checking every invariant.
    pub fn from_vec(dims: TriplaneDims, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for {:?}, got {}",
                dims.len(),
                dims,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Triplane { dims, data })
    }

    /// Builds a triplane by evaluating `f(plane, channel, row, col)` at every entry.
    pub fn from_fn(
        dims: TriplaneDims,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for k in 0..PLANE_COUNT {
            for c in 0..dims.channels {
                for row in 0..dims.height {
                    for col in 0..dims.width {
                        data.push(f(k, c, row, col));
                    }
                }
            }
        }
        Triplane { dims, data }
    }

    pub fn dims(&self) -> TriplaneDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn index(&self, plane: usize, channel: usize, row: usize, col: usize) -> usize {
        let d = self.dims;
        ((plane * d.channels + channel) * d.height + row) * d.width + col
    }

    pub fn get(&self, plane: usize, channel: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(plane, channel, row, col)]
    }

    pub fn plane(&self, plane: usize) -> PlaneView<'_> {
        let len = self.dims.plane_len();
        PlaneView {
            data: &self.data[plane * len..(plane + 1) * len],
            channels: self.dims.channels,
            height: self.dims.height,
            width: self.dims.width,
        }
    }

    pub fn check_same_dims(&self, other: &Triplane, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// `a * self + b * other`, elementwise.
    pub fn linear_combination(&self, a: f32, other: &Triplane, b: f32) -> Result<Triplane> {
        self.check_same_dims(other, "linear combination")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Triplane {
            dims: self.dims,
            data,
        })
    }
}

/// Borrowed view of one `C x H x W` plane.
#[derive(Debug, Clone, Copy)]
pub struct PlaneView<'a> {
    pub data: &'a [f32],
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Precomputed bilinear footprint for one continuous texel position.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    fx: f32,
    fy: f32,
}

impl<'a> PlaneView<'a> {
    pub fn new(data: &'a [f32], channels: usize, height: usize, width: usize) -> Self {
        assert_eq!(data.len(), channels * height * width, "plane storage size");
        PlaneView {
            data,
            channels,
            height,
            width,
        }
    }

    #[inline]
    fn footprint(&self, u: f32, v: f32) -> Footprint {
        let max_u = (self.width - 1) as f32;
        let max_v = (self.height - 1) as f32;
        // NaN coordinates clamp to the origin texel.
        let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, max_u) };
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, max_v) };
        let x0 = u.floor() as usize;
        let y0 = v.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        Footprint {
            i00: y0 * self.width + x0,
            i01: y0 * self.width + x1,
            i10: y1 * self.width + x0,
            i11: y1 * self.width + x1,
            fx: u - x0 as f32,
            fy: v - y0 as f32,
        }
    }

    #[inline]
    fn lookup(&self, fp: &Footprint, channel: usize) -> f32 {
        let base = channel * self.height * self.width;
        let d = &self.data[base..base + self.height * self.width];
        let top = d[fp.i00] + (d[fp.i01] - d[fp.i00]) * fp.fx;
        let bottom = d[fp.i10] + (d[fp.i11] - d[fp.i10]) * fp.fx;
        top + (bottom - top) * fp.fy
    }

    /// Bilinear sample of a single channel at continuous texel `(u, v)`.
    #[inline]
    pub fn sample_channel(&self, channel: usize, u: f32, v: f32) -> f32 {
        let fp = self.footprint(u, v);
        self.lookup(&fp, channel)
    }

    /// Accumulates the first `out.len()` channels of the sample at `(u, v)` into `out`.
    #[inline]
    pub fn sample_add(&self, u: f32, v: f32, out: &mut [f32]) {
        let fp = self.footprint(u, v);
        for (c, o) in out.iter_mut().enumerate() {
            *o += self.lookup(&fp, c);
        }
    }

    /// Writes the first `out.len()` channels of the sample at `(u, v)` into `out`.
    #[inline]
    pub fn sample_into(&self, u: f32, v: f32, out: &mut [f32]) {
        let fp = self.footprint(u, v);
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.lookup(&fp, c);
        }
    }
}

/// Bilinear lookup of all channels; coordinates are clamped to the border.
pub fn sample_plane(plane: PlaneView<'_>, u: f32, v: f32) -> Vec<f32> {
    let mut out = vec![0.0; plane.channels];
    plane.sample_into(u, v, &mut out);
    out
}

/// Maps a cube coordinate in `[-1, 1]` onto the texel range `[0, size-1]`.
#[inline]
pub fn cube_to_texel(x: f32, size: usize) -> f32 {
    (x + 1.0) * 0.5 * (size - 1) as f32
}

/// Inverse of [`cube_to_texel`].
#[inline]
pub fn texel_to_cube(t: f32, size: usize) -> f32 {
    if size <= 1 {
        return 0.0;
    }
    t / (size - 1) as f32 * 2.0 - 1.0
}

/// Plane-local `(u, v)` cube coordinates of point `p` for each plane.
#[inline]
pub fn plane_coords(p: [f32; 3]) -> [(f32, f32); PLANE_COUNT] {
    [(p[0], p[1]), (p[0], p[2]), (p[1], p[2])]
}

/// Sums the first `out.len()` channels of the three plane projections of `p`.
#[inline]
pub fn aggregate_into(tri: &Triplane, p: [f32; 3], out: &mut [f32]) {
    debug_assert!(out.len() <= tri.dims.channels);
    out.iter_mut().for_each(|o| *o = 0.0);
    let (h, w) = (tri.dims.height, tri.dims.width);
    for (k, (a, b)) in plane_coords(p).into_iter().enumerate() {
        tri.plane(k)
            .sample_add(cube_to_texel(a, w), cube_to_texel(b, h), out);
    }
}

/// Full feature vector at `p` (EG3D-style projection and sum).
pub fn aggregate_features(tri: &Triplane, p: [f32; 3]) -> Vec<f32> {
    let mut out = vec![0.0; tri.dims.channels];
    aggregate_into(tri, p, &mut out);
    out
}

/// Density at `p` using only the density channel.
#[inline]
pub fn density_at(tri: &Triplane, p: [f32; 3], density_scale: f32) -> f32 {
    let mut f = [0.0f32; 1];
    aggregate_into(tri, p, &mut f);
    softplus(f[0]) * density_scale
}

#[inline]
pub fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Decoded radiance sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub density: f32,
    pub color: [f32; 3],
}

/// Fixed analytic decoder: softplus density from channel 0, sigmoid color
/// from channels 1..4. Further channels are ignored.
pub fn decode(f: &[f32], density_scale: f32) -> Decoded {
    assert!(
        f.len() >= DECODED_CHANNELS,
        "decoder needs at least {DECODED_CHANNELS} channels, got {}",
        f.len()
    );
    Decoded {
        density: softplus(f[0]) * density_scale,
        color: [sigmoid(f[1]), sigmoid(f[2]), sigmoid(f[3])],
    }
}

pub fn save_triplane(tri: &Triplane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_triplane(tri, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_triplane(tri: &Triplane, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    let d = tri.dims;
    for v in [PLANE_COUNT, d.channels, d.height, d.width] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tri.data.len() * 4);
    for v in &tri.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn load_triplane(path: impl AsRef<Path>) -> Result<Triplane> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_triplane_bytes(&bytes)
}

/// Parses the `TRI1` container from memory.
pub fn decode_triplane_bytes(bytes: &[u8]) -> Result<Triplane> {
    let (header, payload) = parse_container(bytes, MAGIC, None)?;
    let dims = TriplaneDims::new(header[1], header[2], header[3]);
    if header[0] != PLANE_COUNT {
        return Err(Error::InvalidDimensions(format!(
            "plane count {} (expected {PLANE_COUNT})",
            header[0]
        )));
    }
    dims.validate()?;
    let data = read_f32_payload(payload, dims.len())?;
    Triplane::from_vec(dims, data)
}

/// Splits a `MAGIC + 4 x u32` header from its payload.
pub(crate) fn parse_container<'b>(
    bytes: &'b [u8],
    magic: &[u8; 4],
    fixed_second: Option<usize>,
) -> Result<([usize; 4], &'b [u8])> {
    if bytes.len() < 20 {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, shorter than the 20-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != magic {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut header = [0usize; 4];
    for (i, h) in header.iter_mut().enumerate() {
        let off = 4 + 4 * i;
        *h = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    }
    if let Some(expected) = fixed_second {
        if header[1] != expected {
            return Err(Error::InvalidDimensions(format!(
                "component count {} (expected {expected})",
                header[1]
            )));
        }
    }
    if header.contains(&0) {
        return Err(Error::InvalidDimensions(format!(
            "zero extent in {header:?}"
        )));
    }
    Ok((header, &bytes[20..]))
}

pub(crate) fn read_f32_payload(payload: &[u8], count: usize) -> Result<Vec<f32>> {
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| Error::InvalidDimensions("payload size overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::MalformedPayload(format!(
            "expected {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_plane() -> Vec<f32> {
        vec![0.0, 1.0, 2.0, 3.0]
    }

    #[test]
    fn sample_exact_texel_and_center_and_clamp() {
        let data = tiny_plane();
        let p = PlaneView::new(&data, 1, 2, 2);
        assert_eq!(sample_plane(p, 0.0, 0.0), vec![0.0]);
        assert_eq!(sample_plane(p, 0.5, 0.5), vec![1.5]);
        assert_eq!(sample_plane(p, -5.0, -5.0), vec![0.0]);
        assert_eq!(sample_plane(p, 9.0, 9.0), vec![3.0]);
        assert_eq!(sample_plane(p, 1.0, 0.0), vec![1.0]);
    }

    #[test]
    fn aggregate_constant_and_single_plane() {
        let dims = TriplaneDims::new(4, 5, 7);
        let tri = Triplane::filled(dims, 0.5);
        for p in [[0.0, 0.0, 0.0], [0.3, -0.9, 1.0], [-1.0, 1.0, -1.0]] {
            assert!(aggregate_features(&tri, p).iter().all(|&v| v == 1.5));
        }
        let one = Triplane::from_fn(dims, |k, _, _, _| if k == 1 { 0.25 } else { 0.0 });
        assert!(aggregate_features(&one, [0.1, 0.2, 0.3])
            .iter()
            .all(|&v| v == 0.25));
    }

    #[test]
    fn aggregate_center_matches_plane_centers() {
        // Odd resolution puts the cube center exactly on a texel.
        let dims = TriplaneDims::new(3, 9, 9);
        let mut rng = crate::rng::StreamKey::new(3, crate::rng::Purpose::Test).rng();
        let tri = Triplane::from_fn(dims, |_, _, _, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let got = aggregate_features(&tri, [0.0, 0.0, 0.0]);
        for c in 0..3 {
            let expect: f32 = (0..3).map(|k| tri.get(k, c, 4, 4)).sum();
            assert!((got[c] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn decoder_closed_forms() {
        let d = decode(&[0.0, 0.0, 0.0, 0.0, 9.0], 25.0);
        assert!((d.density - 25.0 * std::f32::consts::LN_2).abs() < 1e-5);
        assert_eq!(d.color, [0.5, 0.5, 0.5]);
        let empty = decode(&[-20.0, 0.0, 0.0, 0.0], 25.0);
        assert!(empty.density < 1e-8 * 25.0);
    }

    #[test]
    fn file_errors_are_distinct() {
        let tri = Triplane::filled(TriplaneDims::new(2, 3, 4), 1.25);
        let mut bytes = Vec::new();
        write_triplane(&tri, &mut bytes).unwrap();
        assert_eq!(decode_triplane_bytes(&bytes).unwrap(), tri);

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            decode_triplane_bytes(truncated),
            Err(Error::MalformedPayload(_))
        ));

        let mut zero_c = bytes.clone();
        zero_c[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_triplane_bytes(&zero_c),
            Err(Error::InvalidDimensions(_))
        ));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_triplane_bytes(&bad_magic),
            Err(Error::MalformedHeader(_))
        ));

        let mut nan = bytes.clone();
        nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_triplane_bytes(&nan),
            Err(Error::NonFinite { index: 0 })
        ));

        assert!(matches!(
            decode_triplane_bytes(&bytes[..10]),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn load_missing_file_reports_path() {
        let err = load_triplane("/nonexistent/dir/x.tri").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.tri"));
    }

    proptest! {
        #[test]
        fn bilinear_is_convex(vals in prop::collection::vec(-10.0f32..10.0, 9), u in -1.0f32..4.0, v in -1.0f32..4.0) {
            let p = PlaneView::new(&vals, 1, 3, 3);
            let s = p.sample_channel(0, u, v);
            let uc = u.clamp(0.0, 2.0);
            let vc = v.clamp(0.0, 2.0);
            let (x0, y0) = (uc.floor() as usize, vc.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(2), (y0 + 1).min(2));
            let n = [vals[y0 * 3 + x0], vals[y0 * 3 + x1], vals[y1 * 3 + x0], vals[y1 * 3 + x1]];
            let lo = n.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = n.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(s >= lo - 1e-5 && s <= hi + 1e-5);
        }

        #[test]
        fn aggregate_is_linear(seed in 0u64..1000, a in -2.0f32..2.0, b in -2.0f32..2.0,
                               x in -1.0f32..1.0, y in -1.0f32..1.0, z in -1.0f32..1.0) {
            let dims = TriplaneDims::new(2, 6, 5);
            let mut rng = crate::rng::StreamKey::new(seed, crate::rng::Purpose::Test).rng();
            let t1 = Triplane::from_fn(dims, |_, _, _, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let t2 = Triplane::from_fn(dims, |_, _, _, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let mix = t1.linear_combination(a, &t2, b).unwrap();
            let lhs = aggregate_features(&mix, [x, y, z]);
            let f1 = aggregate_features(&t1, [x, y, z]);
            let f2 = aggregate_features(&t2, [x, y, z]);
            for c in 0..2 {
                prop_assert!((lhs[c] - (a * f1[c] + b * f2[c])).abs() < 1e-4);
            }
        }

        #[test]
        fn decode_monotone_and_colors_open(f0 in -30.0f32..30.0, df in 0.0f32..5.0, r in -15.0f32..15.0) {
            let lo = decode(&[f0, r, -r, 0.0], 25.0);
            let hi = decode(&[f0 + df, r, -r, 0.0], 25.0);
            prop_assert!(hi.density >= lo.density);
            prop_assert!(lo.density >= 0.0);
            for c in lo.color { prop_assert!(c > 0.0 && c < 1.0); }
        }

        #[test]
        fn file_round_trip_bit_exact(vals in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 3 * 2 * 2 * 3)) {
            let tri = Triplane::from_vec(TriplaneDims::new(2, 2, 3), vals).unwrap();
            let mut bytes = Vec::new();
            write_triplane(&tri, &mut bytes).unwrap();
            let back = decode_triplane_bytes(&bytes).unwrap();
            prop_assert!(tri.as_slice().iter().zip(back.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
