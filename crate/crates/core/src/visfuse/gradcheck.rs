//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use serde::Serialize;

use crate::rng::{Purpose, StreamKey};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f32,
    /// Number of entries to compare (excluding skipped ones).
    pub samples: usize,
    pub seed: u64,
    /// One-sided differences disagreeing by more than this fraction mark a kink.
    pub kink_tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-3,
            samples: 64,
            seed: 0,
            kink_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: Vec<usize>,
    /// Entries whose neighborhood straddles a kink of the loss.
    pub skipped: Vec<usize>,
}

/// Compares `analytic` with central differences of `loss` at random entries
/// of `params`.
///
/// Perturbed values are rounded to `f32`, and the actual step is used in the
/// quotient. An entry is skipped when forward and backward one-sided
/// differences disagree, which happens when the loss has a kink within `eps`.
pub fn numeric_grad_check(
    loss: impl Fn(&[f32]) -> f64,
    params: &[f32],
    analytic: &[f64],
    opts: &GradCheckOptions,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let mut rng = StreamKey::new(opts.seed, Purpose::Probe).rng();
    let candidates = sample(&mut rng, params.len(), (opts.samples * 8).min(params.len()));
    let mut work = params.to_vec();
    let base = loss(&work);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: Vec::new(),
        skipped: Vec::new(),
    };
    for idx in candidates.iter() {
        if report.checked.len() >= opts.samples {
            break;
        }
        let x = params[idx];
        let up = x + opts.eps;
        let down = x - opts.eps;
        work[idx] = up;
        let l_up = loss(&work);
        work[idx] = down;
        let l_down = loss(&work);
        work[idx] = x;
        let h_up = f64::from(up) - f64::from(x);
        let h_down = f64::from(x) - f64::from(down);
        let fwd = (l_up - base) / h_up;
        let bwd = (base - l_down) / h_down;
        let scale = fwd.abs().max(bwd.abs()).max(1e-300);
        if (fwd - bwd).abs() > opts.kink_tolerance * scale {
            report.skipped.push(idx);
            continue;
        }
        let numeric = (l_up - l_down) / (h_up + h_down);
        let a = analytic[idx];
        let denom = a.abs().max(numeric.abs()).max(1e-300);
        let rel = if a == numeric {
            0.0
        } else {
            (a - numeric).abs() / denom
        };
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked.push(idx);
    }
    report
}
