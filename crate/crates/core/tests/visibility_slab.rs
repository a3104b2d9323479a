//! Ground-truth visibility against a brute-force two-pass march.

use trifuse_core::triplane::{texel_to_cube, Triplane, TriplaneDims};
use trifuse_core::visfuse::{compute_visibility_gt, VisibilityConfig};
use trifuse_core::{Camera, RenderConfig};

const RES: usize = 16;

/// Logit of the opaque slab (z in [0.3, 0.5]) and of the blob behind it
/// (|x| < 0.5, z in [-0.6, -0.2]), carried by the XZ plane.
fn xz_logit(x: f64, z: f64) -> f64 {
    let slab = (0.3..=0.5).contains(&z);
    let blob = x.abs() < 0.5 && (-0.6..=-0.2).contains(&z);
    if slab || blob {
        8.0
    } else {
        -10.0
    }
}

fn scene() -> Triplane {
    let dims = TriplaneDims::new(4, 96, 96);
    Triplane::from_fn(dims, |k, c, row, col| {
        if k == 1 && c == 0 {
            let x = f64::from(texel_to_cube(col as f32, 96));
            let z = f64::from(texel_to_cube(row as f32, 96));
            xz_logit(x, z) as f32
        } else {
            0.0
        }
    })
}

/// Density from the stored triplane with an f64 bilinear lookup.
fn sigma(tri: &Triplane, p: [f64; 3]) -> f64 {
    let d = tri.dims();
    let look = |plane: usize, a: f64, b: f64| {
        let u = ((a.clamp(-1.0, 1.0) + 1.0) * 0.5 * (d.width - 1) as f64).min((d.width - 1) as f64);
        let v =
            ((b.clamp(-1.0, 1.0) + 1.0) * 0.5 * (d.height - 1) as f64).min((d.height - 1) as f64);
        let (x0, y0) = (u.floor() as usize, v.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(d.width - 1), (y0 + 1).min(d.height - 1));
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let g = |r, c| f64::from(tri.get(plane, 0, r, c));
        (1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x1))
            + fy * ((1.0 - fx) * g(y1, x0) + fx * g(y1, x1))
    };
    let f = look(0, p[0], p[1]) + look(1, p[0], p[2]) + look(2, p[1], p[2]);
    (1.0 + f.exp()).ln() * 25.0
}

/// Pass 1 walks the column, pass 2 marches camera-to-point transmittance.
fn oracle(tri: &Triplane, eye: [f64; 3], plane: usize, a: f64, b: f64) -> f64 {
    let n = 256;
    let (mut mass, mut seen) = (0.0, 0.0);
    for k in 0..n {
        let depth = -1.0 + (k as f64 + 0.5) * 2.0 / n as f64;
        let p = match plane {
            0 => [a, b, depth],
            1 => [a, depth, b],
            _ => [depth, a, b],
        };
        let s = sigma(tri, p);
        // Transmittance from the eye to p, restricted to the cube.
        let steps = 1024;
        let mut optical = 0.0;
        let len =
            ((p[0] - eye[0]).powi(2) + (p[1] - eye[1]).powi(2) + (p[2] - eye[2]).powi(2)).sqrt();
        for m in 0..steps {
            let t = (m as f64 + 0.5) / steps as f64;
            let q = [0, 1, 2].map(|i| eye[i] + (p[i] - eye[i]) * t);
            if q.iter().all(|v| v.abs() <= 1.0) {
                optical += sigma(tri, q) * len / steps as f64;
            }
        }
        mass += s;
        seen += s * (-optical).exp();
    }
    if mass <= 1e-6 {
        1.0
    } else {
        seen / mass
    }
}

#[test]
fn mass_behind_an_opaque_slab_is_invisible() {
    let tri = scene();
    let eye = [0.0, 0.0, 3.0];
    let cam = Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], 1.5).unwrap();
    let cfg = RenderConfig::default();
    let vcfg = VisibilityConfig {
        resolution: RES,
        column_samples: 32,
        ray_samples: 64,
    };
    let vis = compute_visibility_gt(&tri, &cam, &cfg, &vcfg).unwrap();
    let mut behind = 0;
    for row in 0..RES {
        let z = f64::from(texel_to_cube(row as f32, RES));
        for col in 0..RES {
            let x = f64::from(texel_to_cube(col as f32, RES));
            let got = f64::from(vis.get(1, row, col));
            let want = oracle(&tri, eye, 1, x, z);
            assert!(
                (got - want).abs() < 0.1,
                "texel ({row}, {col}): {got} vs oracle {want}"
            );
            if x.abs() < 0.4 && (-0.55..=-0.25).contains(&z) {
                behind += 1;
                assert!(
                    got < 0.05,
                    "texel ({row}, {col}) behind the slab has visibility {got}"
                );
                assert!(want < 0.05);
            }
        }
    }
    assert!(behind >= 10, "only {behind} probe texels behind the slab");
    // Columns along z through the XY plane always cross the slab.
    let front_rows = (0..RES).filter(|&r| {
        let z = f64::from(texel_to_cube(r as f32, RES));
        z > 0.55
    });
    for row in front_rows {
        for col in 0..RES {
            let v = vis.get(1, row, col);
            assert!(v > 0.9, "texel in front of the slab has visibility {v}");
        }
    }
}
