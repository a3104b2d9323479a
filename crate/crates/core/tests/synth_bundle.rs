use std::fs;
use std::path::Path;

use trifuse_core::render::render_with_alpha;
use trifuse_core::synth::{
    build_sequence, gen_canonical_triplane, hallucinate_occluded, Bundle, SceneSpec,
};
use trifuse_core::warp::{oracle_undistort, undistort_loss};
use trifuse_core::{apply_warp, ImageFormat, TriplaneDims};

fn small_spec(seed: u64, frames: usize, views: usize) -> SceneSpec {
    let mut s = SceneSpec::new(seed, frames, views);
    s.channels = 4;
    s.resolution = 48;
    s.smoothness = 8.0;
    s.distortion_smoothness = 12.0;
    s.distortion_magnitude = 3.0;
    s.visibility.resolution = 16;
    s.visibility.column_samples = 12;
    s.visibility.ray_samples = 12;
    s.render.width = 32;
    s.render.height = 32;
    s.render.samples_per_ray = 24;
    s
}

/// Content and distortion smooth relative to the texel grid, where inversion is near lossless.
fn smooth_spec() -> SceneSpec {
    let mut s = small_spec(9, 1, 3);
    s.resolution = 128;
    s.smoothness = 16.0;
    s.distortion_smoothness = 32.0;
    s
}

fn count(dir: &Path) -> usize {
    fs::read_dir(dir).unwrap().count()
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn file_count_contract_and_byte_identical_rebuild() {
    let spec = small_spec(11, 3, 3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    build_sequence(&spec).unwrap().write(a.path()).unwrap();
    build_sequence(&spec).unwrap().write(b.path()).unwrap();
    let root = a.path();
    assert_eq!(count(&root.join("gt_triplanes")), 3);
    assert_eq!(count(&root.join("raw_triplanes")), 9);
    assert_eq!(count(&root.join("distortions")), 9);
    assert_eq!(count(&root.join("gt_images")), 9);
    assert_eq!(count(&root.join("visibility")), 9);
    assert!(root.join("reference.png").is_file());
    assert!(root.join("spec.json").is_file());
    assert!(root.join("cameras.json").is_file());
    assert!(root.join("gt_images/f2_v1.pfm").is_file());
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}

#[test]
fn bundle_load_round_trip() {
    let spec = small_spec(5, 2, 2);
    let bundle = build_sequence(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.write(dir.path()).unwrap();
    let back = Bundle::load(dir.path()).unwrap();
    assert_eq!(back.spec, bundle.spec);
    assert_eq!(back.cameras, bundle.cameras);
    assert_eq!(back.gt_triplanes, bundle.gt_triplanes);
    assert_eq!(back.raw_triplanes, bundle.raw_triplanes);
    assert_eq!(back.distortions, bundle.distortions);
    assert_eq!(back.gt_images, bundle.gt_images);
    assert_eq!(back.visibility, bundle.visibility);
    assert_eq!(back.spec_hash(), bundle.spec_hash());

    fs::remove_file(dir.path().join("raw_triplanes/f1_v0.tri")).unwrap();
    let err = Bundle::load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("f1_v0.tri"), "{err}");
}

#[test]
fn png_bundles_store_png_images() {
    let mut spec = small_spec(5, 1, 2);
    spec.image_format = ImageFormat::Png;
    let bundle = build_sequence(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.write(dir.path()).unwrap();
    assert!(dir.path().join("gt_images/f0_v1.png").is_file());
    let back = Bundle::load(dir.path()).unwrap();
    for (x, y) in back
        .gt_image(0, 1)
        .as_slice()
        .iter()
        .zip(bundle.gt_image(0, 1).as_slice())
    {
        assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn static_scene_repeats_frame_zero() {
    let spec = small_spec(2, 3, 2).static_scene();
    let b = build_sequence(&spec).unwrap();
    for t in 1..3 {
        assert_eq!(b.gt(t), b.gt(0));
        assert_eq!(b.gt_image(t, 1), b.gt_image(0, 1));
    }
    assert_eq!(b.pseudo_gt(1), b.gt(1));
}

#[test]
fn frontal_view_has_no_distortion_and_oblique_views_do() {
    let b = build_sequence(&small_spec(4, 1, 3)).unwrap();
    assert_eq!(b.distortion(0, 0).max_magnitude(), 0.0);
    let expected = 3.0 * 60f32.to_radians().sin();
    for v in [1, 2] {
        let m = b.distortion(0, v).max_magnitude();
        assert!(m > 0.0 && m <= expected + 1e-5, "{m} vs {expected}");
    }
}

#[test]
fn raw_triplanes_are_consistent_with_the_undistortion_oracle() {
    // Without hallucination the raw triplane is the distorted ground truth.
    let mut spec = smooth_spec();
    spec.occlusion_hallucination = 0.0;
    let b = build_sequence(&spec).unwrap();
    for v in 0..3 {
        let rec = oracle_undistort(b.raw(0, v), b.distortion(0, v)).unwrap();
        let err = interior_l1(&rec, b.gt(0), 4);
        assert!(err <= 3e-3, "view {v}: {err}");
    }

    // With hallucination, the oracle recovers the lifted triplane before distortion.
    let spec = smooth_spec();
    let b = build_sequence(&spec).unwrap();
    let dims = spec.dims();
    let hall = gen_canonical_triplane(
        trifuse_core::rng::StreamKey::new(spec.seed, trifuse_core::rng::Purpose::Hallucination)
            .fold(),
        dims,
        spec.smoothness,
    )
    .unwrap();
    for v in 0..3 {
        let lifted = hallucinate_occluded(
            b.gt(0),
            &hall,
            b.visibility(0, v),
            spec.occlusion_hallucination,
        )
        .unwrap();
        assert_eq!(
            &apply_warp(&lifted, b.distortion(0, v)).unwrap(),
            b.raw(0, v)
        );
        let rec = oracle_undistort(b.raw(0, v), b.distortion(0, v)).unwrap();
        assert!(interior_l1(&rec, &lifted, 4) <= 3e-3);
        assert!(undistort_loss(&lifted, b.gt(0)).unwrap() > 0.0);
    }
}

fn interior_l1(a: &trifuse_core::Triplane, b: &trifuse_core::Triplane, border: usize) -> f64 {
    let d = a.dims();
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..3 {
        for c in 0..d.channels {
            for row in border..d.height - border {
                for col in border..d.width - border {
                    sum +=
                        (f64::from(a.get(k, c, row, col)) - f64::from(b.get(k, c, row, col))).abs();
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}

#[test]
fn frontal_coverage_in_range_across_seeds() {
    let spec = SceneSpec::new(0, 1, 2);
    for seed in 0..4 {
        let tri = gen_canonical_triplane(seed, TriplaneDims::new(4, 128, 128), 16.0).unwrap();
        let cams = trifuse_core::synth::sample_cameras(1, seed, &spec.rig).unwrap();
        let cfg = trifuse_core::RenderConfig {
            width: 64,
            height: 64,
            ..spec.render
        };
        let (_, alpha) = render_with_alpha(&tri, &cams[0].camera, &cfg, None).unwrap();
        let cov = alpha.iter().filter(|&&a| a > 0.5).count() as f64 / alpha.len() as f64;
        assert!((0.10..=0.60).contains(&cov), "seed {seed}: coverage {cov}");
    }
}

#[test]
fn expression_keeps_values_within_input_range() {
    let dims = TriplaneDims::new(4, 48, 48);
    let tri = gen_canonical_triplane(3, dims, 8.0).unwrap();
    let (lo, hi) = tri
        .as_slice()
        .iter()
        .fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    for e in [-1.0, -0.3, 0.5, 1.0] {
        let out = trifuse_core::synth::apply_expression(&tri, e).unwrap();
        assert!(out.as_slice().iter().all(|&v| v >= lo && v <= hi));
        assert_ne!(out, tri);
    }
}
