//! Image metrics, the (frame, input view, evaluation view) score tensor,
//! its aggregates, and JSON/CSV reports.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::render::{render, RenderConfig};
use crate::synth::Bundle;
use crate::triplane::Triplane;
use crate::visfuse::fuse;
use crate::warp::{apply_warp, invert_warp, WarpField, ORACLE_ITERATIONS, ORACLE_TOLERANCE};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const REPORT_SCHEMA: &str = "scoretensor/1";

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn squared_error(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum();
    Ok(sum / a.as_slice().len() as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let mse = squared_error(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    squared_error(a, b)
}

/// Mean absolute difference over all channels.
pub fn l1_metric(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
        .sum();
    Ok(sum / a.as_slice().len() as f64)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering with a symmetric 1D kernel.
fn filter_valid(src: &[f64], width: usize, height: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = width + 1 - n;
    let oh = height + 1 - n;
    let mut tmp = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * src[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM of the luminance channels, 11x11 Gaussian window (sigma 1.5),
/// valid region only.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidDimensions(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let x: Vec<f64> = a.luminance().into_iter().map(f64::from).collect();
    let y: Vec<f64> = b.luminance().into_iter().map(f64::from).collect();
    let k = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let (mx, ow, oh) = filter_valid(&x, w, h, &k);
    let (my, _, _) = filter_valid(&y, w, h, &k);
    let (sxx, _, _) = filter_valid(&xx, w, h, &k);
    let (syy, _, _) = filter_valid(&yy, w, h, &k);
    let (sxy, _, _) = filter_valid(&xy, w, h, &k);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let vx = sxx[i] - mx[i] * mx[i];
        let vy = syy[i] - my[i] * my[i];
        let cov = sxy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + C1) * (2.0 * cov + C2))
            / ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
    }
    Ok(total / (ow * oh) as f64)
}

/// Metric registry. Identity and expression similarity need pretrained
/// networks and are reported as unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Psnr,
    L1,
    Ssim,
    Id,
    Expr,
}

impl Metric {
    pub const AVAILABLE: [Metric; 3] = [Metric::Psnr, Metric::L1, Metric::Ssim];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::L1 => "l1",
            Metric::Ssim => "ssim",
            Metric::Id => "id",
            Metric::Expr => "expr",
        }
    }

    pub fn higher_is_better(&self) -> bool {
        !matches!(self, Metric::L1)
    }

    fn unavailable(&self) -> Option<&'static str> {
        match self {
            Metric::Id => Some("ArcFace face-recognition network"),
            Metric::Expr => Some("expression-coefficient estimator"),
            _ => None,
        }
    }

    /// Errors for metrics that need an external model.
    pub fn check_available(&self) -> Result<()> {
        match self.unavailable() {
            Some(model) => Err(Error::MetricUnavailable {
                metric: self.name().into(),
                model: model.into(),
            }),
            None => Ok(()),
        }
    }

    /// Scores `rendered` against `reference`.
    pub fn evaluate(&self, rendered: &Image, reference: &Image) -> Result<f64> {
        self.check_available()?;
        match self {
            Metric::Psnr => psnr(rendered, reference),
            Metric::L1 => l1_metric(rendered, reference),
            Metric::Ssim => ssim(rendered, reference),
            Metric::Id | Metric::Expr => unreachable!(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psnr" => Ok(Metric::Psnr),
            "l1" => Ok(Metric::L1),
            "ssim" => Ok(Metric::Ssim),
            "id" => Ok(Metric::Id),
            "expr" => Ok(Metric::Expr),
            _ => Err(Error::UnknownMetric(s.into())),
        }
    }
}

/// `S[t][i][j]`: metric of the reconstruction from input view `i` at frame
/// `t`, rendered from view `j` and compared with ground-truth image `(t, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTensor {
    frames: usize,
    views: usize,
    values: Vec<f64>,
    pub metric: String,
    pub higher_is_better: bool,
}

impl ScoreTensor {
    pub fn new(
        frames: usize,
        views: usize,
        values: Vec<f64>,
        metric: impl Into<String>,
        higher_is_better: bool,
    ) -> Result<Self> {
        if frames == 0 || views == 0 {
            return Err(Error::InvalidDimensions(format!(
                "score tensor {frames}x{views}x{views}"
            )));
        }
        if values.len() != frames * views * views {
            return Err(Error::InvalidDimensions(format!(
                "score tensor {frames}x{views}x{views} needs {} values, got {}",
                frames * views * views,
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ScoreTensor {
            frames,
            views,
            values,
            metric: metric.into(),
            higher_is_better,
        })
    }

    /// Builds a tensor from nested `[t][i][j]` vectors.
    pub fn from_nested(
        nested: &[Vec<Vec<f64>>],
        metric: impl Into<String>,
        higher_is_better: bool,
    ) -> Result<Self> {
        let frames = nested.len();
        let views = nested.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(frames * views * views);
        for plane in nested {
            if plane.len() != views || plane.iter().any(|row| row.len() != views) {
                return Err(Error::InvalidDimensions("ragged score tensor".into()));
            }
            for row in plane {
                values.extend_from_slice(row);
            }
        }
        ScoreTensor::new(frames, views, values, metric, higher_is_better)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.frames, self.views, self.views]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, frame: usize, input_view: usize, eval_view: usize) -> f64 {
        self.values[(frame * self.views + input_view) * self.views + eval_view]
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.frames)
            .map(|t| {
                (0..self.views)
                    .map(|i| (0..self.views).map(|j| self.get(t, i, j)).collect())
                    .collect()
            })
            .collect()
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Population standard deviation; 0 for fewer than two values.
pub fn population_stddev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    (mean(values.iter().map(|v| (v - m) * (v - m)))).sqrt()
}

/// Mean over all entries, diagonal included.
pub fn overall_quality(s: &ScoreTensor) -> f64 {
    mean(s.values.iter().copied())
}

/// Mean over entries with `input_view != eval_view`.
pub fn nvs_quality(s: &ScoreTensor) -> f64 {
    let n = s.views;
    mean((0..s.frames).flat_map(|t| {
        (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| s.get(t, i, j)))
    }))
}

/// Novel view variation: per `(frame, input view)` the spread across
/// evaluation views, averaged.
pub fn nvv(s: &ScoreTensor) -> f64 {
    let n = s.views;
    let mut spreads = Vec::with_capacity(s.frames * n);
    for t in 0..s.frames {
        for i in 0..n {
            let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| s.get(t, i, j)).collect();
            spreads.push(population_stddev(&row));
        }
    }
    mean(spreads)
}

/// Input view variation: per `(frame, evaluation view)` the spread across
/// input views, averaged.
pub fn ivv(s: &ScoreTensor) -> f64 {
    let n = s.views;
    let mut spreads = Vec::with_capacity(s.frames * n);
    for t in 0..s.frames {
        for j in 0..n {
            let col: Vec<f64> = (0..n).filter(|&i| i != j).map(|i| s.get(t, i, j)).collect();
            spreads.push(population_stddev(&col));
        }
    }
    mean(spreads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub overall: f64,
    pub nvs: f64,
    pub nvv: f64,
    pub ivv: f64,
}

impl Aggregates {
    pub fn of(s: &ScoreTensor) -> Self {
        Aggregates {
            overall: overall_quality(s),
            nvs: nvs_quality(s),
            nvv: nvv(s),
            ivv: ivv(s),
        }
    }
}

/// Produces the triplane to render for input view `view` at `frame`.
pub trait Reconstructor: Send + Sync {
    fn name(&self) -> &str;

    fn reconstruct(&self, bundle: &Bundle, frame: usize, view: usize) -> Result<Triplane>;
}

/// Reference arms. `Perfect` and `Canonical` bracket the protocol; the other
/// four are the ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReconstructorKind {
    /// Ground-truth triplane of the frame.
    Perfect,
    /// The frontal reference triplane, whatever the frame.
    Canonical,
    /// Raw distorted triplane as lifted.
    Identity,
    /// Raw triplane corrected by the inverse of the true distortion.
    Undistort,
    /// Raw triplane fused with the canonical one.
    Fuse,
    /// Corrected triplane fused with the canonical one.
    UndistortFuse,
}

impl ReconstructorKind {
    pub const ALL: [ReconstructorKind; 6] = [
        ReconstructorKind::Perfect,
        ReconstructorKind::Canonical,
        ReconstructorKind::Identity,
        ReconstructorKind::Undistort,
        ReconstructorKind::Fuse,
        ReconstructorKind::UndistortFuse,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ReconstructorKind::Perfect => "perfect",
            ReconstructorKind::Canonical => "canonical",
            ReconstructorKind::Identity => "identity",
            ReconstructorKind::Undistort => "undistort",
            ReconstructorKind::Fuse => "fuse",
            ReconstructorKind::UndistortFuse => "undistort+fuse",
        }
    }
}

impl fmt::Display for ReconstructorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReconstructorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = match s {
            "oracle-undistort" => "undistort",
            "oracle-undistort+fuse" => "undistort+fuse",
            other => other,
        };
        ReconstructorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown reconstructor `{s}`")))
    }
}

impl Reconstructor for ReconstructorKind {
    fn name(&self) -> &str {
        ReconstructorKind::name(self)
    }

    fn reconstruct(&self, bundle: &Bundle, frame: usize, view: usize) -> Result<Triplane> {
        let raw = bundle.raw(frame, view);
        let dims = raw.dims();
        let (h, w) = (dims.height, dims.width);
        let cano_vis = || bundle.canonical_visibility().resample(h, w);
        // Visibility is known in ground-truth coordinates; the raw content
        // sits displaced by the distortion, so its visibility is warped too.
        let raw_vis = || {
            bundle
                .visibility(frame, view)
                .resample(h, w)
                .warped(bundle.distortion(frame, view))
        };
        match self {
            ReconstructorKind::Perfect => Ok(bundle.gt(frame).clone()),
            ReconstructorKind::Canonical => Ok(bundle.canonical().clone()),
            ReconstructorKind::Identity => Ok(raw.clone()),
            ReconstructorKind::Undistort => apply_warp(raw, &correction(bundle, frame, view)?),
            ReconstructorKind::Fuse => fuse(raw, &raw_vis()?, bundle.canonical(), &cano_vis()),
            ReconstructorKind::UndistortFuse => {
                // The visibility planes are undistorted alongside the features.
                let corr = correction(bundle, frame, view)?;
                let undist = apply_warp(raw, &corr)?;
                let vis = raw_vis()?.warped(&corr)?;
                fuse(&undist, &vis, bundle.canonical(), &cano_vis())
            }
        }
    }
}

/// Oracle correction field: the inverse of the injected distortion.
fn correction(bundle: &Bundle, frame: usize, view: usize) -> Result<WarpField> {
    let d = bundle.distortion(frame, view);
    if d.max_magnitude() == 0.0 {
        return Ok(WarpField::zeros(d.height(), d.width()));
    }
    invert_warp(d, ORACLE_ITERATIONS, ORACLE_TOLERANCE)
}

/// Fills one score tensor per metric, rendering each reconstruction once.
pub fn score_tensors(
    recon: &dyn Reconstructor,
    bundle: &Bundle,
    metrics: &[Metric],
    cfg: &RenderConfig,
) -> Result<Vec<ScoreTensor>> {
    for m in metrics {
        m.check_available()?;
    }
    let (frames, views) = (bundle.frames(), bundle.views());
    if views < 2 {
        return Err(Error::InvalidParameter(
            "score tensors need at least 2 views".into(),
        ));
    }
    if cfg.width != bundle.spec.render.width || cfg.height != bundle.spec.render.height {
        return Err(Error::DimensionMismatch(format!(
            "render config is {}x{}, ground-truth images are {}x{}",
            cfg.width, cfg.height, bundle.spec.render.width, bundle.spec.render.height
        )));
    }
    let dims = bundle.spec.dims();
    let cells: Vec<(usize, usize)> = (0..frames)
        .flat_map(|t| (0..views).map(move |i| (t, i)))
        .collect();
    // rows[(t, i)][j][metric]
    let rows = cells
        .par_iter()
        .map(|&(t, i)| -> Result<Vec<Vec<f64>>> {
            let tri = recon.reconstruct(bundle, t, i)?;
            if tri.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "reconstructor `{}` returned {:?}, bundle triplanes are {:?}",
                    recon.name(),
                    tri.dims(),
                    dims
                )));
            }
            let shoulder = bundle.spec.shoulder(t);
            (0..views)
                .map(|j| {
                    let img = render(&tri, bundle.camera(j), cfg, Some(&shoulder))?;
                    metrics
                        .iter()
                        .map(|m| m.evaluate(&img, bundle.gt_image(t, j)))
                        .collect()
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    metrics
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            let values = rows
                .iter()
                .flat_map(|row| row.iter().map(move |s| s[mi]))
                .collect();
            ScoreTensor::new(frames, views, values, m.name(), m.higher_is_better())
        })
        .collect()
}

pub fn score_tensor(
    recon: &dyn Reconstructor,
    bundle: &Bundle,
    metric: Metric,
    cfg: &RenderConfig,
) -> Result<ScoreTensor> {
    Ok(score_tensors(recon, bundle, &[metric], cfg)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub metric: String,
    pub reconstructor: String,
    /// Stand-ins in effect relative to the full method (oracle components, metric substitutions).
    pub substitutions: Vec<String>,
    pub psnr_cap: f64,
    pub bundle_spec_hash: String,
}

/// On-disk score report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub schema: String,
    pub shape: [usize; 3],
    pub higher_is_better: bool,
    /// Nested `[frame][input_view][eval_view]`.
    pub values: Vec<Vec<Vec<f64>>>,
    pub aggregates: Aggregates,
    pub metadata: ReportMetadata,
}

impl ScoreReport {
    pub fn new(
        tensor: &ScoreTensor,
        reconstructor: &str,
        substitutions: Vec<String>,
        bundle_spec_hash: String,
    ) -> Self {
        ScoreReport {
            schema: REPORT_SCHEMA.into(),
            shape: tensor.shape(),
            higher_is_better: tensor.higher_is_better,
            values: tensor.to_nested(),
            aggregates: Aggregates::of(tensor),
            metadata: ReportMetadata {
                metric: tensor.metric.clone(),
                reconstructor: reconstructor.into(),
                substitutions,
                psnr_cap: PSNR_CAP,
                bundle_spec_hash,
            },
        }
    }

    pub fn tensor(&self) -> Result<ScoreTensor> {
        let t = ScoreTensor::from_nested(
            &self.values,
            self.metadata.metric.clone(),
            self.higher_is_better,
        )?;
        if t.shape() != self.shape {
            return Err(Error::DimensionMismatch(format!(
                "report shape {:?} disagrees with values {:?}",
                self.shape,
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::json("score report", e))?;
        let found = value
            .get("schema")
            .and_then(|s| s.as_str())
            .unwrap_or("<none>");
        if found != REPORT_SCHEMA {
            return Err(Error::SchemaMismatch {
                expected: REPORT_SCHEMA.into(),
                found: found.into(),
            });
        }
        serde_json::from_value(value).map_err(|e| Error::json("score report", e))
    }

    /// Flat `frame,input_view,eval_view,value` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,input_view,eval_view,value\n");
        for (t, plane) in self.values.iter().enumerate() {
            for (i, row) in plane.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    out.push_str(&format!("{t},{i},{j},{v}\n"));
                }
            }
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Substitutions relative to the full method for a reconstructor arm.
pub fn substitutions_for(kind: ReconstructorKind, metric: Metric) -> Vec<String> {
    let mut subs = vec!["raw triplanes: synthetic ground truth with hallucinated occlusions and injected distortion".to_string()];
    if matches!(
        kind,
        ReconstructorKind::Undistort | ReconstructorKind::UndistortFuse
    ) {
        subs.push("undistorter: inverse of the injected distortion".into());
    }
    if matches!(
        kind,
        ReconstructorKind::Fuse | ReconstructorKind::UndistortFuse
    ) {
        subs.push("fuser: fixed visibility-weighted blend with ground-truth visibility".into());
    }
    if matches!(metric, Metric::L1 | Metric::Ssim) {
        subs.push(format!("metric {metric} in place of LPIPS"));
    }
    subs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(nested: Vec<Vec<Vec<f64>>>) -> ScoreTensor {
        ScoreTensor::from_nested(&nested, "psnr", true).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Image::filled(4, 4, [0.3, 0.3, 0.3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let black = Image::filled(4, 4, [0.0; 3]);
        let white = Image::filled(4, 4, [1.0; 3]);
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
        assert_eq!(psnr_from_mse(0.01), 20.0);
        assert_eq!(l1_metric(&black, &white).unwrap(), 1.0);
        assert!(psnr(&a, &Image::filled(3, 4, [0.0; 3])).is_err());
    }

    #[test]
    fn ssim_identity_and_size() {
        let mut data = Vec::new();
        for i in 0..16 * 16 {
            let v = ((i * 37) % 101) as f32 / 100.0;
            data.extend([v, 1.0 - v, 0.5]);
        }
        let img = Image::from_vec(16, 16, data).unwrap();
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        let other = img.map_pixels(|p| p.map(|v| v * 0.5));
        assert!(ssim(&img, &other).unwrap() < 0.99);
        let small = Image::filled(8, 8, [0.5; 3]);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn aggregate_hand_examples() {
        let s = tensor(vec![vec![vec![30.0, 20.0], vec![22.0, 28.0]]]);
        assert_eq!(overall_quality(&s), 25.0);
        assert_eq!(nvs_quality(&s), 21.0);

        let s = tensor(vec![vec![
            vec![50.0, 20.0, 24.0],
            vec![22.0, 50.0, 22.0],
            vec![22.0, 22.0, 50.0],
        ]]);
        // Row 0 contributes 2, rows 1 and 2 contribute 0.
        assert_eq!(nvv(&s), 2.0 / 3.0);

        let s = tensor(vec![vec![
            vec![50.0, 22.0, 22.0],
            vec![18.0, 50.0, 22.0],
            vec![26.0, 22.0, 50.0],
        ]]);
        assert_eq!(ivv(&s), 4.0 / 3.0);
        assert_eq!(population_stddev(&[20.0, 24.0]), 2.0);
        assert_eq!(population_stddev(&[18.0, 26.0]), 4.0);
        assert_eq!(population_stddev(&[5.0]), 0.0);
    }

    #[test]
    fn diagonal_excluded_from_novel_view_quality() {
        let s = tensor(vec![vec![
            vec![99.0, 10.0, 10.0],
            vec![10.0, 99.0, 10.0],
            vec![10.0, 10.0, 99.0],
        ]]);
        assert_eq!(nvs_quality(&s), 10.0);
        assert_eq!(nvv(&s), 0.0);
        assert_eq!(ivv(&s), 0.0);
    }

    #[test]
    fn tensor_validation() {
        assert!(ScoreTensor::new(0, 2, vec![], "psnr", true).is_err());
        assert!(ScoreTensor::new(1, 2, vec![1.0; 3], "psnr", true).is_err());
        assert!(ScoreTensor::new(1, 1, vec![f64::NAN], "psnr", true).is_err());
    }

    #[test]
    fn metric_registry() {
        assert_eq!("psnr".parse::<Metric>().unwrap(), Metric::Psnr);
        assert!(matches!(
            "lpips".parse::<Metric>(),
            Err(Error::UnknownMetric(_))
        ));
        let img = Image::filled(16, 16, [0.5; 3]);
        for m in [Metric::Id, Metric::Expr] {
            assert!(matches!(
                m.evaluate(&img, &img),
                Err(Error::MetricUnavailable { .. })
            ));
        }
        for k in ReconstructorKind::ALL {
            assert_eq!(k.name().parse::<ReconstructorKind>().unwrap(), k);
        }
    }

    #[test]
    fn report_round_trip_and_schema() {
        let s = tensor(vec![
            vec![vec![30.1, 20.7], vec![22.3, 28.9]],
            vec![vec![31.0, 19.5], vec![0.1 + 0.2, 27.0]],
        ]);
        let r = ScoreReport::new(&s, "identity", vec![], "abc".into());
        let back = ScoreReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.tensor().unwrap(), s);
        assert_eq!(r.to_csv().lines().count(), 2 * 2 * 2 + 1);
        let bad = r.to_json().replace("scoretensor/1", "scoretensor/0");
        assert!(matches!(
            ScoreReport::from_json(&bad),
            Err(Error::SchemaMismatch { .. })
        ));
    }
}
