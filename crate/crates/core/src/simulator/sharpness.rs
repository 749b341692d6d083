//! Hutchinson estimation of the loss Hessian trace.
//!
//! No second derivatives are formed: each Rademacher probe `v` pairs one
//! estimate `v . Hv` with a Hessian-vector product obtained from central
//! finite differences of the gradient. Restricting probes to a parameter
//! block (zeroing the other coordinates) estimates the trace of that
//! diagonal block, which is what the trunk-versus-heads comparisons use.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;

/// A trace estimate with its Monte Carlo uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SharpnessEstimate {
    /// Mean of `v . Hv` over the probes.
    pub trace: f64,
    /// Standard error of the mean (0 when `probes == 1`).
    pub stderr: f64,
    pub probes: usize,
    /// Finite-difference step that was used.
    pub step: f64,
}

/// The default gradient finite-difference step for a parameter vector.
pub fn default_step(point: &[f64]) -> f64 {
    let scale = point.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    1e-4 * (1.0 + scale)
}

/// Estimates `tr(H)` of the loss whose gradient is `grad`, at `point`.
///
/// `step` scales the central difference `(g(x + h v) - g(x - h v)) / (2 h)`;
/// pass [`default_step`] unless the loss has a known better scale. The probe
/// count must be at least 1; uncertainty shrinks as `1/sqrt(probes)`.
pub fn sharpness<G>(
    grad: G,
    point: &[f64],
    probes: usize,
    step: f64,
    stream: &mut ChaCha8Rng,
) -> Result<SharpnessEstimate>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    sharpness_masked(grad, point, None, probes, step, stream)
}

/// [`sharpness`] restricted to the coordinates where `mask` is true.
///
/// Probe components outside the mask are zeroed, so the estimate converges
/// to the trace of the corresponding diagonal Hessian block.
pub fn sharpness_masked<G>(
    grad: G,
    point: &[f64],
    mask: Option<&[bool]>,
    probes: usize,
    step: f64,
    stream: &mut ChaCha8Rng,
) -> Result<SharpnessEstimate>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    if point.is_empty() {
        return Err(Error::EmptyInput("sharpness needs parameters".into()));
    }
    if probes == 0 {
        return Err(Error::domain("probe count must be >= 1"));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::domain(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    if let Some(m) = mask {
        if m.len() != point.len() {
            return Err(Error::DimensionMismatch {
                expected: point.len(),
                got: m.len(),
            });
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::domain("mask selects no coordinates"));
        }
    }
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("parameters must be finite"));
    }

    let n = point.len();
    let mut v = vec![0.0; n];
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    // Welford running moments over the probe estimates.
    let mut mean = 0.0;
    let mut m2 = 0.0;

    for probe in 0..probes {
        for i in 0..n {
            let keep = mask.map_or(true, |m| m[i]);
            v[i] = if keep { rng::rademacher(stream) } else { 0.0 };
        }
        for i in 0..n {
            plus[i] = point[i] + step * v[i];
            minus[i] = point[i] - step * v[i];
        }
        let g_plus = grad(&plus);
        let g_minus = grad(&minus);
        if g_plus.len() != n || g_minus.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: g_plus.len().min(g_minus.len()),
            });
        }
        let mut quad = 0.0;
        for i in 0..n {
            quad += v[i] * (g_plus[i] - g_minus[i]);
        }
        let estimate = quad / (2.0 * step);
        if !estimate.is_finite() {
            return Err(Error::Divergence {
                message: "non-finite curvature probe".into(),
                best: vec![mean],
            });
        }
        let delta = estimate - mean;
        mean += delta / (probe + 1) as f64;
        m2 += delta * (estimate - mean);
    }

    let stderr = if probes > 1 {
        (m2 / (probes - 1) as f64 / probes as f64).sqrt()
    } else {
        0.0
    };
    Ok(SharpnessEstimate {
        trace: mean,
        stderr,
        probes,
        step,
    })
}
