//! Pinhole camera with world-from-camera extrinsics and intrinsics normalized
//! to the unit image plane.
//!
//! Camera frame follows the OpenCV convention: +x right, +y down, +z forward.
//! World frame is +y up. Normalized pixel coordinates run over `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

const ORTHONORMAL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// World-from-camera rigid transform, row-major.
    pub extrinsics: [[f64; 4]; 4],
    /// Normalized intrinsics, row-major.
    pub intrinsics: [[f64; 3]; 3],
}

impl Camera {
    pub fn new(extrinsics: [[f64; 4]; 4], intrinsics: [[f64; 3]; 3]) -> Result<Self> {
        let cam = Camera {
            extrinsics,
            intrinsics,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Normalized pinhole intrinsics with the principal point at the image center.
    pub fn normalized_intrinsics(focal: f64) -> [[f64; 3]; 3] {
        [[focal, 0.0, 0.5], [0.0, focal, 0.5], [0.0, 0.0, 1.0]]
    }

    /// Camera at `eye` looking at `target`, with world `up` mapped to image-up.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64) -> Result<Self> {
        let forward = normalize(sub(target, eye))
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = normalize(cross(forward, up))
            .ok_or_else(|| Error::InvalidCamera("up vector parallel to view direction".into()))?;
        let down = cross(forward, right);
        let mut ext = [[0.0; 4]; 4];
        for r in 0..3 {
            ext[r][0] = right[r];
            ext[r][1] = down[r];
            ext[r][2] = forward[r];
            ext[r][3] = eye[r];
        }
        ext[3][3] = 1.0;
        Camera::new(ext, Camera::normalized_intrinsics(focal))
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .extrinsics
            .iter()
            .flatten()
            .chain(self.intrinsics.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > ORTHONORMAL_TOL {
                    return Err(Error::InvalidCamera(format!(
                        "rotation block not orthonormal (column {i}.{j} dot = {dot})"
                    )));
                }
            }
        }
        if self.extrinsics[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidCamera(
                "extrinsics bottom row must be 0 0 0 1".into(),
            ));
        }
        Ok(())
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let e = &self.extrinsics;
        [
            [e[0][0], e[0][1], e[0][2]],
            [e[1][0], e[1][1], e[1][2]],
            [e[2][0], e[2][1], e[2][2]],
        ]
    }

    pub fn center(&self) -> Vec3 {
        [
            self.extrinsics[0][3],
            self.extrinsics[1][3],
            self.extrinsics[2][3],
        ]
    }

    /// Optical axis (camera +z) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        let r = self.rotation();
        [r[0][2], r[1][2], r[2][2]]
    }

    /// 16 extrinsic values followed by 9 intrinsic values, row-major.
    pub fn flatten(&self) -> [f64; 25] {
        let mut out = [0.0; 25];
        for (o, v) in out.iter_mut().zip(
            self.extrinsics
                .iter()
                .flatten()
                .chain(self.intrinsics.iter().flatten()),
        ) {
            *o = *v;
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != 25 {
            return Err(Error::InvalidCamera(format!(
                "flattened camera needs 25 values, got {}",
                flat.len()
            )));
        }
        let mut ext = [[0.0; 4]; 4];
        let mut int = [[0.0; 3]; 3];
        for i in 0..16 {
            ext[i / 4][i % 4] = flat[i];
        }
        for i in 0..9 {
            int[i / 3][i % 3] = flat[16 + i];
        }
        Camera::new(ext, int)
    }

    /// Inverse of the intrinsic matrix, or an error if it is singular.
    pub fn inverse_intrinsics(&self) -> Result<[[f64; 3]; 3]> {
        invert3(&self.intrinsics)
    }
}

pub(crate) fn invert3(m: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::SingularIntrinsics(det));
    }
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // Cofactor of (j, i).
            let (r0, r1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            *v = sign * minor * inv_det;
        }
    }
    Ok(out)
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    (n > 1e-12 && n.is_finite()).then(|| scale(a, 1.0 / n))
}
