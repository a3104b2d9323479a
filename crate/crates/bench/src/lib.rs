//! Shared fixtures for the benchmarks.

use trifuse_core::synth::gen_canonical_triplane;
use trifuse_core::{Camera, RenderConfig, Triplane, TriplaneDims};

pub fn identity_triplane(channels: usize, resolution: usize) -> Triplane {
    gen_canonical_triplane(
        7,
        TriplaneDims::new(channels, resolution, resolution),
        resolution as f32 / 8.0,
    )
    .expect("fixture triplane")
}

pub fn frontal_camera() -> Camera {
    Camera::look_at([0.0, 0.0, 3.2], [0.0; 3], [0.0, 1.0, 0.0], 1.6).expect("fixture camera")
}

pub fn render_config(size: usize, samples: usize) -> RenderConfig {
    RenderConfig {
        width: size,
        height: size,
        samples_per_ray: samples,
        ..RenderConfig::default()
    }
}
