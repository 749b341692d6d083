//! The double power law, its derivatives, critical points, and the
//! temperature-sampling baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower edge of the sampling-ratio range the law was validated on.
pub const VALIDATED_RATIO_MIN: f64 = 0.1;
/// Upper edge of the sampling-ratio range the law was validated on.
pub const VALIDATED_RATIO_MAX: f64 = 0.9;

/// Shared law parameters plus per-direction bias terms.
///
/// Loss model for a direction with data size `D` (millions of examples) at
/// sampling ratio `p`:
///
/// ```text
/// F(p, D) = (k * p)^(-alpha) + (D^gamma + b) * (q * p)^beta + M
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DplParams<S> {
    /// Capacity scale, `k > 0`.
    pub k: S,
    /// Capacity exponent, `alpha > 0`.
    pub alpha: S,
    /// Over-fit scale, `q > 0`.
    pub q: S,
    /// Over-fit exponent, `beta > 0`.
    pub beta: S,
    /// Data-scaling exponent.
    pub gamma: S,
    /// Data-scaling offset.
    pub b: S,
    /// Per-direction bias terms `M`, keyed by direction name. A missing entry
    /// reads as 0 unless strict bias mode is on.
    #[serde(default = "BTreeMap::new")]
    pub biases: BTreeMap<String, S>,
}

impl<S: Scalar> DplParams<S> {
    /// Builds parameters with no biases, validating positivity invariants.
    pub fn new(k: S, alpha: S, q: S, beta: S, gamma: S, b: S) -> Result<Self> {
        let params = DplParams {
            k,
            alpha,
            q,
            beta,
            gamma,
            b,
            biases: BTreeMap::new(),
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks the type invariants: `k, alpha, q, beta > 0`, all fields finite.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("alpha", self.alpha),
            ("q", self.q),
            ("beta", self.beta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > S::zero()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("b", self.b)] {
            if !v.is_finite() {
                return Err(Error::domain(format!("{name} must be finite, got {v}")));
            }
        }
        for (dir, v) in &self.biases {
            if !v.is_finite() {
                return Err(Error::domain(format!("bias for `{dir}` must be finite")));
            }
        }
        Ok(())
    }

    /// Bias for a direction, if one is stored. Falls back from the exact name
    /// to any `name@size` composite key produced by multi-size fits.
    pub fn bias(&self, direction: &str) -> Option<S> {
        if let Some(v) = self.biases.get(direction) {
            return Some(*v);
        }
        let prefix = format!("{direction}@");
        self.biases
            .iter()
            .find(|(key, _)| key.starts_with(&prefix))
            .map(|(_, v)| *v)
    }

    /// The over-fit coefficient `D^gamma + b`; positive means a U-shaped
    /// curve is possible, non-positive means the loss is monotone in `p`.
    pub fn overfit_coefficient(&self, data_size: S) -> S {
        data_size.powf(self.gamma) + self.b
    }

    /// Bias-free law value at `(p, D)`. Rejects `p` outside `(0, 1]`.
    pub fn shape(&self, p: S, data_size: S) -> Result<S> {
        check_ratio_half_open(p)?;
        check_data_size(data_size)?;
        let capacity = (self.k * p).powf(-self.alpha);
        let overfit = self.overfit_coefficient(data_size) * (self.q * p).powf(self.beta);
        Ok(capacity + overfit)
    }

    /// Closed-form `dF/dp` at `(p, D)`; `p` must lie in the open `(0, 1)`.
    pub fn shape_derivative(&self, p: S, data_size: S) -> Result<S> {
        check_ratio_open(p)?;
        check_data_size(data_size)?;
        let capacity = -self.alpha * self.k.powf(-self.alpha) * p.powf(-self.alpha - S::one());
        let overfit = self.beta
            * self.overfit_coefficient(data_size)
            * self.q.powf(self.beta)
            * p.powf(self.beta - S::one());
        Ok(capacity + overfit)
    }

    /// Closed-form `d2F/dp2` at `(p, D)`.
    pub fn shape_second_derivative(&self, p: S, data_size: S) -> Result<S> {
        check_ratio_open(p)?;
        check_data_size(data_size)?;
        let one = S::one();
        let capacity = self.alpha
            * (self.alpha + one)
            * self.k.powf(-self.alpha)
            * p.powf(-self.alpha - S::from_f64c(2.0));
        let overfit = self.beta
            * (self.beta - one)
            * self.overfit_coefficient(data_size)
            * self.q.powf(self.beta)
            * p.powf(self.beta - S::from_f64c(2.0));
        Ok(capacity + overfit)
    }
}

/// A named direction with its training-set size in millions of examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSpec<S> {
    pub name: String,
    /// Millions of training examples, strictly positive.
    #[serde(rename = "data_size_millions")]
    pub data_size: S,
}

impl<S: Scalar> DirectionSpec<S> {
    /// Builds a direction, rejecting non-positive or non-finite sizes.
    pub fn new(name: impl Into<String>, data_size: S) -> Result<Self> {
        check_data_size(data_size)?;
        Ok(DirectionSpec {
            name: name.into(),
            data_size,
        })
    }
}

/// One law evaluation with its warning flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eval<S> {
    /// Predicted evaluation cross-entropy in nats.
    pub loss: S,
    /// True when the direction had no stored bias and 0 was used.
    pub missing_bias: bool,
    /// True when `p` lies outside the validated range `[0.1, 0.9]`.
    pub extrapolated: bool,
}

/// Evaluates the law at `(p, direction)`. A missing bias reads as 0 and sets
/// the `missing_bias` flag; ratios outside `[0.1, 0.9]` set `extrapolated`.
pub fn eval_dpl<S: Scalar>(
    params: &DplParams<S>,
    p: S,
    direction: &DirectionSpec<S>,
) -> Result<Eval<S>> {
    let shape = params.shape(p, direction.data_size)?;
    let stored = params.bias(&direction.name);
    let loss = shape + stored.unwrap_or_else(S::zero);
    Ok(Eval {
        loss,
        missing_bias: stored.is_none(),
        extrapolated: is_extrapolated(p),
    })
}

/// Strict-bias variant of [`eval_dpl`]: a missing bias is an error.
pub fn eval_dpl_strict<S: Scalar>(
    params: &DplParams<S>,
    p: S,
    direction: &DirectionSpec<S>,
) -> Result<Eval<S>> {
    let eval = eval_dpl(params, p, direction)?;
    if eval.missing_bias {
        return Err(Error::MissingBias(direction.name.clone()));
    }
    Ok(eval)
}

/// Closed-form `dF/dp` for a direction; `p` in the open `(0, 1)`.
pub fn dpl_derivative<S: Scalar>(
    params: &DplParams<S>,
    p: S,
    direction: &DirectionSpec<S>,
) -> Result<S> {
    params.shape_derivative(p, direction.data_size)
}

/// The over-fit coefficient `D^gamma + b` for a direction.
pub fn overfit_coefficient<S: Scalar>(params: &DplParams<S>, direction: &DirectionSpec<S>) -> S {
    params.overfit_coefficient(direction.data_size)
}

/// Where a direction's loss curve attains its interior minimum, if anywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "ratio", rename_all = "kebab-case")]
pub enum CriticalPoint<S> {
    /// The stationary ratio lies inside `(0, 1)`.
    Interior(S),
    /// The stationary ratio exists but is `>= 1`; within `(0, 1)` the curve
    /// is decreasing. Reported rather than clamped because the law is only
    /// validated on `p` in `[0.1, 0.9]`.
    BeyondRange(S),
    /// Non-positive over-fit coefficient: the curve decreases monotonically.
    Monotone,
}

impl<S: Scalar> CriticalPoint<S> {
    /// The interior minimizer, when there is one.
    pub fn interior(&self) -> Option<S> {
        match self {
            CriticalPoint::Interior(p) => Some(*p),
            _ => None,
        }
    }
}

/// Solves `dF/dp = 0` in closed form:
///
/// ```text
/// p* = [alpha * k^(-alpha) / (beta * (D^gamma + b) * q^beta)]^(1 / (alpha + beta))
/// ```
///
/// Returns [`CriticalPoint::Monotone`] when the over-fit coefficient is
/// non-positive and [`CriticalPoint::BeyondRange`] when `p* >= 1`.
pub fn critical_point<S: Scalar>(
    params: &DplParams<S>,
    direction: &DirectionSpec<S>,
) -> CriticalPoint<S> {
    let coef = params.overfit_coefficient(direction.data_size);
    if coef <= S::zero() {
        return CriticalPoint::Monotone;
    }
    let numerator = params.alpha * params.k.powf(-params.alpha);
    let denominator = params.beta * coef * params.q.powf(params.beta);
    let p_star = (numerator / denominator).powf(S::one() / (params.alpha + params.beta));
    if p_star >= S::one() {
        CriticalPoint::BeyondRange(p_star)
    } else {
        CriticalPoint::Interior(p_star)
    }
}

/// One point of a predicted loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint<S> {
    pub ratio: S,
    pub loss: S,
    /// True when the ratio lies outside the validated `[0.1, 0.9]` range.
    pub extrapolated: bool,
}

/// Evaluates the law over a ratio grid, preserving grid order.
pub fn predict_curve<S: Scalar>(
    params: &DplParams<S>,
    direction: &DirectionSpec<S>,
    grid: &[S],
) -> Result<Vec<CurvePoint<S>>> {
    grid.iter()
        .map(|&p| {
            let eval = eval_dpl(params, p, direction)?;
            Ok(CurvePoint {
                ratio: p,
                loss: eval.loss,
                extrapolated: eval.extrapolated,
            })
        })
        .collect()
}

/// Temperature-based sampling weights, `w_i = s_i^(1/T) / sum_j s_j^(1/T)`.
///
/// The formula is scale invariant in the shares, so they need not be
/// normalized; they must be positive and finite, and `T > 0`. The output
/// sums to 1 within 1e-12.
pub fn temperature_weights<S: Scalar>(data_shares: &[S], t: S) -> Result<Vec<S>> {
    if data_shares.is_empty() {
        return Err(Error::EmptyInput("temperature weights need shares".into()));
    }
    if !(t.is_finite() && t > S::zero()) {
        return Err(Error::domain(format!("temperature must be positive, got {t}")));
    }
    for &s in data_shares {
        if !(s.is_finite() && s > S::zero()) {
            return Err(Error::domain(format!("shares must be positive, got {s}")));
        }
    }
    let inv_t = S::one() / t;
    let powered: Vec<S> = data_shares.iter().map(|s| s.powf(inv_t)).collect();
    let total: S = powered.iter().copied().sum();
    Ok(powered.into_iter().map(|w| w / total).collect())
}

/// Candidate temperatures customarily searched over.
pub const TEMPERATURE_CANDIDATES: [f64; 5] = [1.0, 2.0, 5.0, 10.0, 100.0];

/// Proportional data shares `D_i / sum_j D_j` for a direction set.
pub fn data_shares<S: Scalar>(directions: &[DirectionSpec<S>]) -> Result<Vec<S>> {
    if directions.is_empty() {
        return Err(Error::EmptyInput("data shares need directions".into()));
    }
    let total: S = directions.iter().map(|d| d.data_size).sum();
    Ok(directions.iter().map(|d| d.data_size / total).collect())
}

fn is_extrapolated<S: Scalar>(p: S) -> bool {
    p < S::from_f64c(VALIDATED_RATIO_MIN) || p > S::from_f64c(VALIDATED_RATIO_MAX)
}

fn check_ratio_half_open<S: Scalar>(p: S) -> Result<()> {
    if !(p.is_finite() && p > S::zero() && p <= S::one()) {
        return Err(Error::domain(format!(
            "sampling ratio must lie in (0, 1], got {p}"
        )));
    }
    Ok(())
}

fn check_ratio_open<S: Scalar>(p: S) -> Result<()> {
    if !(p.is_finite() && p > S::zero() && p < S::one()) {
        return Err(Error::domain(format!(
            "sampling ratio must lie in (0, 1), got {p}"
        )));
    }
    Ok(())
}

fn check_data_size<S: Scalar>(d: S) -> Result<()> {
    if !(d.is_finite() && d > S::zero()) {
        return Err(Error::domain(format!(
            "data size must be positive millions of examples, got {d}"
        )));
    }
    Ok(())
}
