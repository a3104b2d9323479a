//! Deterministic synthetic multi-view portrait sequences.
//!
//! A procedural "identity" triplane is morphed per frame by a localized
//! expression warp, rendered from a camera rig with per-frame shoulder ray
//! warping and optional per-view color augmentation. Per (frame, view) the
//! generator also produces a "raw" lifted triplane: the ground truth with
//! content hidden from that view replaced by hallucinated features, then
//! distorted by a smooth warp whose magnitude grows with the view's yaw.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{luminance, Image, ImageFormat};
use crate::render::{render, RenderConfig, ShoulderParams};
use crate::rng::{Purpose, StreamKey};
use crate::triplane::{
    load_triplane, save_triplane, texel_to_cube, PlaneView, Triplane, TriplaneDims, PLANE_COUNT,
};
use crate::visfuse::{compute_visibility_gt, VisibilityConfig, VisibilityTriplane};
use crate::warp::{apply_warp, load_warp, save_warp, synth_distortion, WarpField};

/// Largest expression displacement at `|e| = 1`, in texels.
pub const MAX_EXPRESSION_DISPLACEMENT: f32 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Additive brightness in `[-0.5, 0.5]`.
    pub brightness: f32,
    /// Contrast gain about mid-gray, in `[0.5, 2]`.
    pub contrast: f32,
    /// Saturation gain about luminance, in `[0, 2]`.
    pub saturation: f32,
    /// Rotation about the gray axis.
    pub hue_degrees: f32,
}

impl AugmentationSpec {
    pub const IDENTITY: AugmentationSpec = AugmentationSpec {
        brightness: 0.0,
        contrast: 1.0,
        saturation: 1.0,
        hue_degrees: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (-0.5..=0.5).contains(&self.brightness)
            && (0.5..=2.0).contains(&self.contrast)
            && (0.0..=2.0).contains(&self.saturation)
            && self.hue_degrees.is_finite();
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "augmentation out of range: {self:?}"
            )));
        }
        Ok(())
    }

    /// Seeded augmentation; `strength` in `[0, 1]` scales every range.
    pub fn sample(rng: &mut impl Rng, strength: f32) -> Self {
        let s = strength.clamp(0.0, 1.0);
        AugmentationSpec {
            brightness: rng.gen_range(-0.5..=0.5) * s * 0.3,
            contrast: 2f32.powf(rng.gen_range(-1.0..=1.0) * s * 0.5),
            saturation: 1.0 + rng.gen_range(-1.0..=1.0) * s * 0.5,
            hue_degrees: rng.gen_range(-30.0..=30.0) * s,
        }
    }
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Brightness, contrast, saturation, then hue rotation; one clamp at the end.
/// Identity stages are skipped so the identity spec is bit-exact.
pub fn color_augment(img: &Image, a: &AugmentationSpec) -> Image {
    if a.is_identity() {
        return img.clone();
    }
    let hue = (a.hue_degrees != 0.0).then(|| gray_axis_rotation(a.hue_degrees.to_radians()));
    img.map_pixels(|mut p| {
        if a.brightness != 0.0 {
            p = p.map(|v| v + a.brightness);
        }
        if a.contrast != 1.0 {
            p = p.map(|v| (v - 0.5) * a.contrast + 0.5);
        }
        if a.saturation != 1.0 {
            let y = luminance(p);
            p = p.map(|v| y + a.saturation * (v - y));
        }
        if let Some(r) = &hue {
            if !(p[0] == p[1] && p[1] == p[2]) {
                p = [
                    r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
                    r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
                    r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
                ];
            }
        }
        p
    })
}

/// Rodrigues rotation about `(1, 1, 1) / sqrt(3)`.
fn gray_axis_rotation(theta: f32) -> [[f32; 3]; 3] {
    let k = 1.0 / 3f32.sqrt();
    let (s, c) = theta.sin_cos();
    let t = 1.0 - c;
    let a = c + t * k * k;
    let b = t * k * k - s * k;
    let d = t * k * k + s * k;
    [[a, b, d], [d, a, b], [b, d, a]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub radius: f64,
    pub max_yaw_deg: f64,
    pub max_pitch_deg: f64,
    pub focal: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            radius: 3.2,
            max_yaw_deg: 60.0,
            max_pitch_deg: 12.0,
            focal: 1.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigCamera {
    pub view: usize,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub camera: Camera,
}

/// Camera 0 is exactly frontal; cameras `1..n` sweep yaw evenly over
/// `[-max_yaw, max_yaw]` with seeded pitch, all on a sphere around the origin.
pub fn sample_cameras(n: usize, seed: u64, rig: &CameraRig) -> Result<Vec<RigCamera>> {
    if n == 0 {
        return Err(Error::InvalidParameter("camera count must be >= 1".into()));
    }
    if !(rig.radius > 0.0) || !(rig.focal > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "invalid camera rig {rig:?}"
        )));
    }
    let mut pitch_rng = StreamKey::new(seed, Purpose::CameraPitch).rng();
    (0..n)
        .map(|view| {
            let (yaw, pitch) = if view == 0 {
                (0.0, 0.0)
            } else {
                let yaw = if n == 2 {
                    rig.max_yaw_deg
                } else {
                    -rig.max_yaw_deg + 2.0 * rig.max_yaw_deg * (view - 1) as f64 / (n - 2) as f64
                };
                let pitch = if rig.max_pitch_deg > 0.0 {
                    pitch_rng.gen_range(-rig.max_pitch_deg..=rig.max_pitch_deg)
                } else {
                    0.0
                };
                (yaw, pitch)
            };
            let (y, p) = (yaw.to_radians(), pitch.to_radians());
            let eye = [
                rig.radius * y.sin() * p.cos(),
                rig.radius * p.sin(),
                rig.radius * y.cos() * p.cos(),
            ];
            let camera = Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], rig.focal)?;
            Ok(RigCamera {
                view,
                yaw_deg: yaw,
                pitch_deg: pitch,
                camera,
            })
        })
        .collect()
}

/// Seeded uniform lattice with spacing `smoothness`, bilinearly upsampled.
fn smooth_noise(rng: &mut impl Rng, height: usize, width: usize, smoothness: f32) -> Vec<f32> {
    let gw = ((width - 1) as f32 / smoothness).ceil() as usize + 1;
    let gh = ((height - 1) as f32 / smoothness).ceil() as usize + 1;
    let lattice: Vec<f32> = (0..gh * gw).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let view = PlaneView::new(&lattice, 1, gh, gw);
    let mut out = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            out.push(view.sample_channel(0, col as f32 / smoothness, row as f32 / smoothness));
        }
    }
    out
}

fn logit(p: f32) -> f32 {
    (p / (1.0 - p)).ln()
}

/// Procedural identity: smooth seeded features, with a head-and-torso density
/// silhouette imprinted on the XY plane and a depth falloff split across the
/// XZ and YZ planes.
pub fn gen_canonical_triplane(seed: u64, dims: TriplaneDims, smoothness: f32) -> Result<Triplane> {
    dims.validate()?;
    if dims.channels < 4 {
        return Err(Error::InvalidDimensions(format!(
            "synthetic identities need >= 4 channels, got {}",
            dims.channels
        )));
    }
    if !(smoothness > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "smoothness must be > 0, got {smoothness}"
        )));
    }
    let key = StreamKey::new(seed, Purpose::Identity);
    let mut shape = key.sub(u64::MAX);
    let head_rx = shape.gen_range(0.36..0.44f32);
    let head_ry = shape.gen_range(0.44..0.52f32);
    let head_cy = shape.gen_range(0.22..0.30f32);
    let depth = shape.gen_range(0.40..0.48f32);
    let skin = [
        shape.gen_range(0.70..0.90f32),
        shape.gen_range(0.50..0.70f32),
        shape.gen_range(0.40..0.60f32),
    ];
    let shirt = [
        shape.gen_range(0.10..0.50f32),
        shape.gen_range(0.20..0.50f32),
        shape.gen_range(0.40..0.80f32),
    ];

    const SHARPNESS: f32 = 10.0;
    const BIAS: f32 = 3.0;
    let (h, w) = (dims.height, dims.width);
    let n = h * w;
    let mut data = vec![0.0f32; dims.len()];
    for k in 0..PLANE_COUNT {
        for c in 0..dims.channels {
            let mut rng = key.sub((k * dims.channels + c) as u64);
            let noise = smooth_noise(&mut rng, h, w, smoothness);
            let amp = match c {
                0 => 0.4,
                1..=3 => 0.5,
                _ => 1.0,
            };
            let base = (k * dims.channels + c) * n;
            for row in 0..h {
                let b = texel_to_cube(row as f32, h);
                for col in 0..w {
                    let a = texel_to_cube(col as f32, w);
                    let mut v = amp * noise[row * w + col];
                    if c == 0 {
                        v -= BIAS / 3.0;
                        v += SHARPNESS
                            * match k {
                                // XY: silhouette in (x, y).
                                0 => silhouette(a, b, head_rx, head_ry, head_cy),
                                // XZ and YZ: depth falloff in z.
                                _ => -0.5 * (b / depth).powi(2),
                            };
                    } else if c <= 3 && k == 0 {
                        let (head, torso) = regions(a, b, head_rx, head_ry, head_cy);
                        let wt = 1.0 / (1.0 + (-(head - torso) * 8.0).exp());
                        let ch = c - 1;
                        v += wt * logit(skin[ch]) + (1.0 - wt) * logit(shirt[ch]);
                    }
                    data[base + row * w + col] = v;
                }
            }
        }
    }
    Triplane::from_vec(dims, data)
}

/// `(head, torso-and-neck)` support values, positive inside.
fn regions(x: f32, y: f32, rx: f32, ry: f32, cy: f32) -> (f32, f32) {
    let head = 1.0 - (x / rx).powi(2) - ((y - cy) / ry).powi(2);
    let torso = 1.0 - (x / 0.8).powi(2) - ((y + 1.05) / 0.6).powi(2);
    let neck = 1.0 - (x / 0.16).powi(2) - ((y + 0.3) / 0.25).powi(2);
    (head, torso.max(neck))
}

fn silhouette(x: f32, y: f32, rx: f32, ry: f32, cy: f32) -> f32 {
    let (head, body) = regions(x, y, rx, ry, cy);
    head.max(body).max(-1.5)
}

/// Fixed lower-face displacement bump scaled by expression `e`.
pub fn expression_field(height: usize, width: usize, e: f32) -> WarpField {
    // Lower face in cube coordinates: x = 0, y = 0.02, z = 0.35.
    let centers = [(0.0f32, 0.02f32), (0.0, 0.35), (0.02, 0.35)];
    let sigma = 0.1 * width.max(height) as f32;
    let amp = MAX_EXPRESSION_DISPLACEMENT * e;
    WarpField::from_fn(height, width, |k, comp, row, col| {
        let (cu, cv) = centers[k];
        let du = col as f32 - (cu + 1.0) * 0.5 * (width - 1) as f32;
        let dv = row as f32 - (cv + 1.0) * 0.5 * (height - 1) as f32;
        let g = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
        // XY and XZ move along rows (y, z); YZ moves along columns (y).
        let along = if k == 2 { 0 } else { 1 };
        if comp == along {
            amp * g
        } else {
            0.0
        }
    })
}

pub fn apply_expression(tri: &Triplane, e: f32) -> Result<Triplane> {
    if !(-1.0..=1.0).contains(&e) {
        return Err(Error::InvalidParameter(format!(
            "expression {e} outside [-1, 1]"
        )));
    }
    if e == 0.0 {
        return Ok(tri.clone());
    }
    let d = tri.dims();
    apply_warp(tri, &expression_field(d.height, d.width, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub views: usize,
    pub channels: usize,
    pub resolution: usize,
    /// Lattice spacing of the identity features, in texels.
    pub smoothness: f32,
    /// Per-frame expression in `[-1, 1]`.
    pub expressions: Vec<f32>,
    /// Per-frame shoulder translation in scene units.
    pub shoulder_offsets: Vec<[f64; 3]>,
    pub neck_height: f64,
    pub shoulder_blend: f64,
    /// Per-view color augmentation of ground-truth images.
    pub augmentations: Vec<AugmentationSpec>,
    pub rig: CameraRig,
    /// Raw-triplane distortion at 90 degrees of yaw, in texels.
    pub distortion_magnitude: f32,
    pub distortion_smoothness: f32,
    /// Fraction of occluded content replaced by hallucinated features in raw triplanes.
    pub occlusion_hallucination: f32,
    pub visibility: VisibilityConfig,
    pub render: RenderConfig,
    pub image_format: ImageFormat,
}

impl SceneSpec {
    /// Default desk-scale suite: varying expression and shoulders, no color
    /// augmentation, PFM images.
    pub fn new(seed: u64, frames: usize, views: usize) -> Self {
        let expressions = (0..frames).map(|t| 0.8 * (t as f32 * 0.9).sin()).collect();
        let shoulder_offsets = (0..frames)
            .map(|t| {
                [
                    0.08 * (t as f64 * 0.7).sin(),
                    0.02 * (t as f64 * 1.1).sin(),
                    0.0,
                ]
            })
            .collect();
        SceneSpec {
            seed,
            frames,
            views,
            channels: 8,
            resolution: 128,
            smoothness: 16.0,
            expressions,
            shoulder_offsets,
            neck_height: -0.35,
            shoulder_blend: 0.25,
            augmentations: vec![AugmentationSpec::IDENTITY; views],
            rig: CameraRig::default(),
            distortion_magnitude: 6.0,
            distortion_smoothness: 24.0,
            occlusion_hallucination: 0.8,
            visibility: VisibilityConfig {
                resolution: 64,
                column_samples: 32,
                ray_samples: 32,
            },
            render: RenderConfig::default(),
            image_format: ImageFormat::Pfm,
        }
    }

    /// Replaces per-view augmentations by seeded draws of the given strength.
    pub fn with_random_augmentation(mut self, strength: f32) -> Self {
        self.augmentations = (0..self.views)
            .map(|v| {
                let mut rng = StreamKey::new(self.seed, Purpose::Augmentation)
                    .at(0, v)
                    .rng();
                AugmentationSpec::sample(&mut rng, strength)
            })
            .collect();
        self
    }

    /// A static scene: no expression, shoulder motion, distortion or augmentation.
    pub fn static_scene(mut self) -> Self {
        self.expressions = vec![0.0; self.frames];
        self.shoulder_offsets = vec![[0.0; 3]; self.frames];
        self.distortion_magnitude = 0.0;
        self.augmentations = vec![AugmentationSpec::IDENTITY; self.views];
        self
    }

    pub fn dims(&self) -> TriplaneDims {
        TriplaneDims::new(self.channels, self.resolution, self.resolution)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 1 {
            return Err(Error::InvalidParameter("frame count must be >= 1".into()));
        }
        if self.views < 2 {
            return Err(Error::InvalidParameter(format!(
                "view count must be >= 2 (input plus novel views), got {}",
                self.views
            )));
        }
        self.dims().validate()?;
        if self.channels < 4 {
            return Err(Error::InvalidDimensions("scenes need >= 4 channels".into()));
        }
        if self.expressions.len() != self.frames || self.shoulder_offsets.len() != self.frames {
            return Err(Error::InvalidParameter(
                "per-frame parameter count differs from frame count".into(),
            ));
        }
        if self.augmentations.len() != self.views {
            return Err(Error::InvalidParameter(
                "per-view augmentation count differs from view count".into(),
            ));
        }
        if self.expressions.iter().any(|e| !(-1.0..=1.0).contains(e)) {
            return Err(Error::InvalidParameter(
                "expressions must lie in [-1, 1]".into(),
            ));
        }
        if self
            .shoulder_offsets
            .iter()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "shoulder offsets must be finite".into(),
            ));
        }
        for a in &self.augmentations {
            a.validate()?;
        }
        if !(self.smoothness > 0.0) || !(self.distortion_smoothness > 0.0) {
            return Err(Error::InvalidParameter(
                "smoothness values must be > 0".into(),
            ));
        }
        if !(self.distortion_magnitude >= 0.0) || !self.distortion_magnitude.is_finite() {
            return Err(Error::InvalidParameter(
                "distortion magnitude must be >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.occlusion_hallucination) {
            return Err(Error::InvalidParameter(
                "occlusion_hallucination must lie in [0, 1]".into(),
            ));
        }
        self.shoulder(0).validate()?;
        self.render.validate()
    }

    pub fn shoulder(&self, frame: usize) -> ShoulderParams {
        ShoulderParams {
            offset: self.shoulder_offsets[frame],
            neck_height: self.neck_height,
            blend_width: self.shoulder_blend,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene spec serializes")
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Everything the pipeline and the evaluation protocol need for one sequence.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub spec: SceneSpec,
    pub cameras: Vec<RigCamera>,
    /// Per-frame ground truth; also serves as the pseudo ground truth.
    pub gt_triplanes: Vec<Triplane>,
    /// Indexed `frame * views + view`.
    pub raw_triplanes: Vec<Triplane>,
    pub distortions: Vec<WarpField>,
    pub gt_images: Vec<Image>,
    pub visibility: Vec<VisibilityTriplane>,
    pub reference: Image,
}

impl Bundle {
    fn idx(&self, frame: usize, view: usize) -> usize {
        frame * self.spec.views + view
    }

    pub fn frames(&self) -> usize {
        self.spec.frames
    }

    pub fn views(&self) -> usize {
        self.spec.views
    }

    pub fn gt(&self, frame: usize) -> &Triplane {
        &self.gt_triplanes[frame]
    }

    /// Supervision target; identical to the ground truth for synthetic scenes.
    pub fn pseudo_gt(&self, frame: usize) -> &Triplane {
        self.gt(frame)
    }

    pub fn raw(&self, frame: usize, view: usize) -> &Triplane {
        &self.raw_triplanes[self.idx(frame, view)]
    }

    pub fn distortion(&self, frame: usize, view: usize) -> &WarpField {
        &self.distortions[self.idx(frame, view)]
    }

    pub fn gt_image(&self, frame: usize, view: usize) -> &Image {
        &self.gt_images[self.idx(frame, view)]
    }

    pub fn visibility(&self, frame: usize, view: usize) -> &VisibilityTriplane {
        &self.visibility[self.idx(frame, view)]
    }

    /// Triplane lifted from the frontal reference image (frame 0, view 0).
    pub fn canonical(&self) -> &Triplane {
        self.raw(0, 0)
    }

    pub fn canonical_visibility(&self) -> &VisibilityTriplane {
        self.visibility(0, 0)
    }

    pub fn camera(&self, view: usize) -> &Camera {
        &self.cameras[view].camera
    }

    pub fn spec_hash(&self) -> String {
        self.spec.hash()
    }

    /// Writes the on-disk layout under `root`.
    pub fn write(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        for dir in [
            "gt_triplanes",
            "raw_triplanes",
            "distortions",
            "gt_images",
            "visibility",
        ] {
            let p = root.join(dir);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        write_file(&root.join("spec.json"), self.spec.to_json().as_bytes())?;
        write_file(
            &root.join("cameras.json"),
            cameras_json(&self.cameras).as_bytes(),
        )?;
        let ext = self.spec.image_format.extension();
        for (t, tri) in self.gt_triplanes.iter().enumerate() {
            save_triplane(tri, root.join(format!("gt_triplanes/f{t}.tri")))?;
        }
        for t in 0..self.frames() {
            for i in 0..self.views() {
                let stem = format!("f{t}_v{i}");
                save_triplane(
                    self.raw(t, i),
                    root.join(format!("raw_triplanes/{stem}.tri")),
                )?;
                save_warp(
                    self.distortion(t, i),
                    root.join(format!("distortions/{stem}.wrp")),
                )?;
                self.gt_image(t, i).save(
                    root.join(format!("gt_images/{stem}.{ext}")),
                    self.spec.image_format,
                )?;
                save_triplane(
                    self.visibility(t, i).as_triplane(),
                    root.join(format!("visibility/{stem}.tri")),
                )?;
            }
        }
        self.reference
            .save(root.join("reference.png"), ImageFormat::Png)
    }

    /// Reads a bundle written by [`Bundle::write`].
    pub fn load(root: impl AsRef<Path>) -> Result<Bundle> {
        let root = root.as_ref();
        let spec_path = root.join("spec.json");
        let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let spec: SceneSpec = serde_json::from_str(&text)
            .map_err(|e| Error::json(spec_path.display().to_string(), e))?;
        spec.validate()?;
        let cam_path = root.join("cameras.json");
        let text = fs::read_to_string(&cam_path).map_err(|e| Error::io(&cam_path, e))?;
        let cameras = parse_cameras_json(&text)
            .map_err(|e| Error::json(cam_path.display().to_string(), e))?;
        if cameras.len() != spec.views {
            return Err(Error::DimensionMismatch(format!(
                "cameras.json lists {} views, spec has {}",
                cameras.len(),
                spec.views
            )));
        }
        let dims = spec.dims();
        let check = |tri: Triplane, path: &PathBuf| -> Result<Triplane> {
            if tri.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "{} has {:?}, spec says {:?}",
                    path.display(),
                    tri.dims(),
                    dims
                )));
            }
            Ok(tri)
        };
        let mut gt_triplanes = Vec::with_capacity(spec.frames);
        for t in 0..spec.frames {
            let p = root.join(format!("gt_triplanes/f{t}.tri"));
            gt_triplanes.push(check(load_triplane(&p)?, &p)?);
        }
        let ext = spec.image_format.extension();
        let n = spec.frames * spec.views;
        let mut raw_triplanes = Vec::with_capacity(n);
        let mut distortions = Vec::with_capacity(n);
        let mut gt_images = Vec::with_capacity(n);
        let mut visibility = Vec::with_capacity(n);
        for t in 0..spec.frames {
            for i in 0..spec.views {
                let stem = format!("f{t}_v{i}");
                let p = root.join(format!("raw_triplanes/{stem}.tri"));
                raw_triplanes.push(check(load_triplane(&p)?, &p)?);
                let d = load_warp(root.join(format!("distortions/{stem}.wrp")))?;
                d.check_matches(dims)?;
                distortions.push(d);
                let img = Image::load(root.join(format!("gt_images/{stem}.{ext}")))?;
                if img.width() != spec.render.width || img.height() != spec.render.height {
                    return Err(Error::DimensionMismatch(format!(
                        "gt image {stem} is {}x{}, render config is {}x{}",
                        img.width(),
                        img.height(),
                        spec.render.width,
                        spec.render.height
                    )));
                }
                gt_images.push(img);
                let vis = VisibilityTriplane::new(load_triplane(
                    root.join(format!("visibility/{stem}.tri")),
                )?)?;
                visibility.push(vis);
            }
        }
        let reference = Image::load(root.join("reference.png"))?;
        Ok(Bundle {
            spec,
            cameras,
            gt_triplanes,
            raw_triplanes,
            distortions,
            gt_images,
            visibility,
            reference,
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    view: usize,
    yaw_deg: f64,
    pitch_deg: f64,
    /// 16 extrinsic + 9 intrinsic values, row-major.
    matrix25: Vec<f64>,
    extrinsics: [[f64; 4]; 4],
    intrinsics: [[f64; 3]; 3],
}

pub fn cameras_json(cams: &[RigCamera]) -> String {
    let records: Vec<CameraRecord> = cams
        .iter()
        .map(|c| CameraRecord {
            view: c.view,
            yaw_deg: c.yaw_deg,
            pitch_deg: c.pitch_deg,
            matrix25: c.camera.flatten().to_vec(),
            extrinsics: c.camera.extrinsics,
            intrinsics: c.camera.intrinsics,
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("camera records serialize")
}

fn parse_cameras_json(text: &str) -> std::result::Result<Vec<RigCamera>, serde_json::Error> {
    let records: Vec<CameraRecord> = serde_json::from_str(text)?;
    records
        .into_iter()
        .map(|r| {
            let camera = Camera::from_flat(&r.matrix25).map_err(serde::de::Error::custom)?;
            Ok(RigCamera {
                view: r.view,
                yaw_deg: r.yaw_deg,
                pitch_deg: r.pitch_deg,
                camera,
            })
        })
        .collect()
}

/// Per-(frame, view) outputs of the generator.
struct ViewProducts {
    raw: Triplane,
    distortion: WarpField,
    image: Image,
    visibility: VisibilityTriplane,
}

/// Generates the full in-memory bundle for `spec`.
pub fn build_sequence(spec: &SceneSpec) -> Result<Bundle> {
    spec.validate()?;
    let dims = spec.dims();
    let cameras = sample_cameras(spec.views, spec.seed, &spec.rig)?;
    let identity = gen_canonical_triplane(spec.seed, dims, spec.smoothness)?;
    let hallucination = gen_canonical_triplane(
        StreamKey::new(spec.seed, Purpose::Hallucination).fold(),
        dims,
        spec.smoothness,
    )?;
    let gt_triplanes = spec
        .expressions
        .par_iter()
        .map(|&e| apply_expression(&identity, e))
        .collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(usize, usize)> = (0..spec.frames)
        .flat_map(|t| (0..spec.views).map(move |i| (t, i)))
        .collect();
    let products = pairs
        .par_iter()
        .map(|&(t, i)| -> Result<ViewProducts> {
            let gt = &gt_triplanes[t];
            let cam = &cameras[i];
            let shoulder = spec.shoulder(t);
            let image = color_augment(
                &render(gt, &cam.camera, &spec.render, Some(&shoulder))?,
                &spec.augmentations[i],
            );
            let visibility =
                compute_visibility_gt(gt, &cam.camera, &spec.render, &spec.visibility)?;
            let lifted = hallucinate_occluded(
                gt,
                &hallucination,
                &visibility,
                spec.occlusion_hallucination,
            )?;
            let magnitude =
                spec.distortion_magnitude * (cam.yaw_deg.to_radians().sin().abs() as f32);
            let distortion = synth_distortion(
                StreamKey::new(spec.seed, Purpose::Distortion)
                    .at(t, i)
                    .fold(),
                dims.height,
                dims.width,
                magnitude,
                spec.distortion_smoothness,
            )?;
            let raw = apply_warp(&lifted, &distortion)?;
            Ok(ViewProducts {
                raw,
                distortion,
                image,
                visibility,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let reference = render(
        &gt_triplanes[0],
        &cameras[0].camera,
        &spec.render,
        Some(&spec.shoulder(0)),
    )?;
    let mut bundle = Bundle {
        spec: spec.clone(),
        cameras,
        gt_triplanes,
        raw_triplanes: Vec::with_capacity(products.len()),
        distortions: Vec::with_capacity(products.len()),
        gt_images: Vec::with_capacity(products.len()),
        visibility: Vec::with_capacity(products.len()),
        reference,
    };
    for p in products {
        bundle.raw_triplanes.push(p.raw);
        bundle.distortions.push(p.distortion);
        bundle.gt_images.push(p.image);
        bundle.visibility.push(p.visibility);
    }
    Ok(bundle)
}

/// Single-view lifting surrogate: content with low visibility from the input
/// camera drifts toward a generic hallucinated identity,
/// `gt + s (1 - vis) (hallucination - gt)`.
pub fn hallucinate_occluded(
    gt: &Triplane,
    hallucination: &Triplane,
    vis: &VisibilityTriplane,
    strength: f32,
) -> Result<Triplane> {
    gt.check_same_dims(hallucination, "hallucination")?;
    if strength == 0.0 {
        return Ok(gt.clone());
    }
    let d = gt.dims();
    let up = vis.resample(d.height, d.width);
    let n = d.height * d.width;
    let v = up.as_slice();
    let (g, hl) = (gt.as_slice(), hallucination.as_slice());
    let mut out = g.to_vec();
    for k in 0..PLANE_COUNT {
        for c in 0..d.channels {
            let base = (k * d.channels + c) * n;
            for i in 0..n {
                let w = strength * (1.0 - v[k * n + i]);
                out[base + i] = g[base + i] + w * (hl[base + i] - g[base + i]);
            }
        }
    }
    Triplane::from_vec(d, out)
}
