//! Parameter estimation from experiment logs.
//!
//! The procedure runs in three steps, mirroring how the law's terms separate:
//!
//! 1. capacity `(k, alpha)` plus a bias from the highest-resource series,
//!    where the over-fit term is negligible,
//! 2. over-fit shape `beta` (with a composite scale `s0`) from the
//!    lowest-resource series, capacity fixed,
//! 3. data scaling `(gamma, b, q)` regressed over per-series over-fit scales
//!    `s_j = (D_j^gamma + b) * q^beta` across the low-resource series.
//!
//! Step 1's capacity estimate absorbs the high series' residual over-fit term
//! (it is small, not zero), which biases a literal three-step reading by more
//! than the round-trip tolerance. [`fit_full`] therefore finishes with a
//! joint least-squares polish over all shared parameters and per-series
//! biases, seeded from the step results; the step diagnostics stay in the
//! report.

pub mod nlls;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dpl::DplParams;
use crate::error::{Error, Result};
use crate::io::Observation;
use crate::scalar::Scalar;

pub use nlls::{nlls_solve, NllsOptions, NllsResult};

/// Box bounds for every fitted parameter, as `(lower, upper)` pairs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitBounds<S> {
    pub k: (S, S),
    pub alpha: (S, S),
    pub q: (S, S),
    pub beta: (S, S),
    pub gamma: (S, S),
    pub b: (S, S),
    /// Composite per-series over-fit scale in step 2 (strictly positive
    /// there; the internal per-series refits are unbounded).
    pub s0: (S, S),
    pub bias: (S, S),
}

impl<S: Scalar> Default for FitBounds<S> {
    /// `k` and `q` are confined to three orders of magnitude around 1: they
    /// multiply a ratio in (0, 1), so anything outside that range encodes an
    /// absurd amplitude, and on noisy sweeps the likelihood has a shallow
    /// valley running toward `k = 0` that a wider box lets the solver chase
    /// indefinitely.
    fn default() -> Self {
        let c = S::from_f64c;
        FitBounds {
            k: (c(1e-2), c(1e2)),
            alpha: (c(0.01), c(2.0)),
            q: (c(1e-2), c(1e2)),
            beta: (c(0.1), c(10.0)),
            gamma: (c(-10.0), c(0.0)),
            b: (c(-100.0), c(100.0)),
            s0: (c(1e-8), c(1e3)),
            bias: (c(-1e3), c(1e3)),
        }
    }
}

/// Fitting configuration.
#[derive(Debug, Clone, Serialize)]
pub struct FitOptions<S> {
    pub bounds: FitBounds<S>,
    pub nlls: NllsOptions<S>,
    /// Number of passes over the three steps (fit_full only, minimum 1).
    /// Passes after the first replace the plain capacity fit with a pooled
    /// refit over every series that shares the previous pass's over-fit
    /// exponent, so the capacity pair stops absorbing the high-resource
    /// contamination. Each pass contracts the remaining capacity error by
    /// roughly half; passes stop early once the shared parameters stabilize.
    pub refine_cycles: usize,
    /// Run a joint all-parameter polish after the stepwise estimation
    /// (fit_full only). Off by default: on noisy sweeps the joint
    /// least-squares landscape has a spurious basin (`k` slides to its lower
    /// bound while per-series biases flip sign to compensate) that sits
    /// below the true one, so polishing can leave the stepwise answer for a
    /// worse-calibrated fit with slightly smaller residuals. Useful on clean
    /// or densely sampled sweeps.
    pub polish: bool,
    /// Iteration cap for the pooled capacity refinement and the optional
    /// joint polish. Both walk curved many-parameter valleys that need far
    /// more iterations than the well-conditioned per-step fits.
    pub polish_iterations: usize,
    /// Absolute loss range below which a series counts as constant.
    pub degenerate_tolerance: S,
}

impl<S: Scalar> Default for FitOptions<S> {
    fn default() -> Self {
        FitOptions {
            bounds: FitBounds::default(),
            nlls: NllsOptions::default(),
            refine_cycles: 16,
            polish: false,
            polish_iterations: 2000,
            degenerate_tolerance: S::from_f64c(1e-9),
        }
    }
}

/// Which stage of the procedure a flag or error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStep {
    Capacity,
    OverfitShape,
    DataScaling,
    Polish,
}

/// Diagnostic flags. Hard flags mean the result cannot be trusted
/// (`converged = false`); [`FitFlag::AtBound`] is a soft warning on an
/// otherwise converged solution. [`fit_full`] forgives `MaxIterations` on an
/// intermediate step when the joint polish afterwards converges from a
/// neutral start.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "flag", rename_all = "kebab-case")]
pub enum FitFlag {
    /// The solver ran out of iterations.
    MaxIterations { step: FitStep },
    /// A fitted parameter rests on a box bound.
    AtBound { step: FitStep, parameter: String },
    /// A series has (near-)constant losses or too little ratio variation to
    /// identify its parameters.
    DegenerateSeries { series: String },
    /// The step-2 series shows no identifiable over-fit scale (monotone
    /// decreasing losses push `s0` to its lower bound).
    MonotoneSeries { series: String },
    /// Per-series over-fit scales do not vary with data size, so the
    /// data-scaling regression is meaningless.
    DataSizeIndependent,
}

impl FitFlag {
    /// Hard flags invalidate the fit in isolation; soft ones annotate it.
    /// See the enum docs for the one context-dependent exception.
    pub fn is_hard(&self) -> bool {
        !matches!(self, FitFlag::AtBound { .. })
    }
}

/// Solver diagnostics for one stage.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepDiagnostics<S> {
    pub residual_norm: S,
    pub iterations: usize,
    pub used_fallback: bool,
}

/// Step-1 output: `loss ~ (k * p)^(-alpha) + bias` on a high-resource series.
#[derive(Debug, Clone, Serialize)]
pub struct CapacityFit<S> {
    pub k: S,
    pub alpha: S,
    pub bias: S,
    pub diagnostics: StepDiagnostics<S>,
    pub flags: Vec<FitFlag>,
}

/// Step-2 output: `loss ~ capacity(p) + s0 * p^beta + bias` on the
/// lowest-resource series, capacity fixed.
#[derive(Debug, Clone, Serialize)]
pub struct OverfitFit<S> {
    pub beta: S,
    pub s0: S,
    pub bias: S,
    pub diagnostics: StepDiagnostics<S>,
    pub flags: Vec<FitFlag>,
}

/// Step-3 output: `s_j ~ (D_j^gamma + b) * q^beta` across series.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit<S> {
    pub gamma: S,
    pub b: S,
    pub q: S,
    pub diagnostics: StepDiagnostics<S>,
    pub flags: Vec<FitFlag>,
}

/// Per-series fit quality.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesStat<S> {
    /// Bias key: the direction name, or `name@size` when one name appears at
    /// several data sizes.
    pub key: String,
    pub direction: String,
    pub data_size: S,
    pub observations: usize,
    /// `None` when the series' losses are constant (r-squared undefined).
    pub r_squared: Option<S>,
}

/// Full fit output.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport<S> {
    pub params: DplParams<S>,
    pub capacity: CapacityFit<S>,
    pub overfit: OverfitFit<S>,
    pub scaling: ScalingFit<S>,
    pub polish: Option<StepDiagnostics<S>>,
    pub series: Vec<SeriesStat<S>>,
    /// All flags raised anywhere in the procedure.
    pub flags: Vec<FitFlag>,
    /// True iff no hard flag was raised.
    pub converged: bool,
}

fn series_stats<S: Scalar>(observations: &[Observation<S>]) -> (S, S, usize) {
    let mut min = observations[0].eval_loss;
    let mut max = min;
    let mut ratios: Vec<S> = Vec::new();
    for obs in observations {
        min = min.min(obs.eval_loss);
        max = max.max(obs.eval_loss);
        if !ratios.contains(&obs.sampling_ratio) {
            ratios.push(obs.sampling_ratio);
        }
    }
    (min, max, ratios.len())
}

fn check_single_series<S: Scalar>(observations: &[Observation<S>], what: &str) -> Result<()> {
    if observations.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{what} needs >= 4 observations, got {}",
            observations.len()
        )));
    }
    let first = &observations[0];
    for obs in observations {
        if obs.direction != first.direction || obs.data_size != first.data_size {
            return Err(Error::domain(format!(
                "{what} expects a single (direction, data size) series; got `{}`@{} and `{}`@{}",
                first.direction, first.data_size, obs.direction, obs.data_size
            )));
        }
    }
    let (_, _, distinct) = series_stats(observations);
    if distinct < 3 {
        return Err(Error::InsufficientData(format!(
            "{what} needs >= 3 distinct sampling ratios, got {distinct}"
        )));
    }
    Ok(())
}

fn solver_flags<S: Scalar>(
    result: &NllsResult<S>,
    step: FitStep,
    names: &[&str],
    flags: &mut Vec<FitFlag>,
) {
    if !result.converged {
        flags.push(FitFlag::MaxIterations { step });
    }
    for &idx in &result.at_bound {
        flags.push(FitFlag::AtBound {
            step,
            parameter: names[idx].to_string(),
        });
    }
}

fn diagnostics_of<S: Scalar>(result: &NllsResult<S>) -> StepDiagnostics<S> {
    StepDiagnostics {
        residual_norm: result.residual_norm,
        iterations: result.iterations,
        used_fallback: result.used_fallback,
    }
}

/// Step 1: fits `loss ~ (k * p)^(-alpha) + bias` to one high-resource series.
///
/// Requires >= 4 observations at >= 3 distinct ratios, all from one
/// (direction, data size) series. Constant losses still fit (alpha is driven
/// to its lower bound) but raise a hard [`FitFlag::DegenerateSeries`].
pub fn fit_capacity<S: Scalar>(
    observations: &[Observation<S>],
    options: &FitOptions<S>,
) -> Result<CapacityFit<S>> {
    check_single_series(observations, "capacity fit")?;
    let (min, max, _) = series_stats(observations);

    let bounds = &options.bounds;
    let residual = |x: &[S]| -> Vec<S> {
        observations
            .iter()
            .map(|o| (x[0] * o.sampling_ratio).powf(-x[1]) + x[2] - o.eval_loss)
            .collect()
    };
    let x0 = [S::from_f64c(0.1), S::from_f64c(0.3), min];
    let lower = [bounds.k.0, bounds.alpha.0, bounds.bias.0];
    let upper = [bounds.k.1, bounds.alpha.1, bounds.bias.1];
    let result = nlls_solve(residual, &x0, &lower, &upper, &options.nlls)?;

    let mut flags = Vec::new();
    if max - min <= options.degenerate_tolerance {
        flags.push(FitFlag::DegenerateSeries {
            series: observations[0].direction.clone(),
        });
    }
    solver_flags(&result, FitStep::Capacity, &["k", "alpha", "bias"], &mut flags);

    Ok(CapacityFit {
        k: result.x[0],
        alpha: result.x[1],
        bias: result.x[2],
        diagnostics: diagnostics_of(&result),
        flags,
    })
}

/// Step-1 refinement used by [`fit_full`] on passes after the first: refits
/// the capacity pair pooled across every series, under the current over-fit
/// exponent, with a free over-fit coefficient and a free bias per series.
///
/// The plain step-1 model cannot represent the (small) over-fit term of the
/// high-resource series, and the least-squares-best distortion that soaks it
/// up is a degenerate one: `k` slides to its lower bound while `alpha` drags
/// far below its true value. The later steps then hide the damage, because a
/// capacity-shape error shifts every per-series scale by the same constant,
/// which the data-scaling fit absorbs into `b` exactly, leaving a spurious
/// self-consistent solution. Estimates of the over-fit coefficients
/// therefore cannot be trusted inside this refit (freezing them freezes the
/// very shift being corrected); only the exponent carries over. With the
/// coefficients free, the true capacity pair is an exact optimum on clean
/// data, and pooling conditions the pair against noise, since the
/// low-resource series carry the steep end of the capacity branch. The
/// per-series coefficients are nuisance values and are not reported.
fn fit_capacity_refined<S: Scalar>(
    series: &[Series<S>],
    high_idx: usize,
    beta: S,
    options: &FitOptions<S>,
) -> Result<CapacityFit<S>> {
    let high = &series[high_idx].observations;
    let (min, max, _) = series_stats(high);

    let n = series.len();
    let bounds = &options.bounds;
    let residual = |x: &[S]| -> Vec<S> {
        let mut out = Vec::new();
        for (idx, s) in series.iter().enumerate() {
            let scale = x[2 + idx];
            let bias = x[2 + n + idx];
            for o in &s.observations {
                let f = (x[0] * o.sampling_ratio).powf(-x[1])
                    + scale * o.sampling_ratio.powf(beta)
                    + bias;
                out.push(f - o.eval_loss);
            }
        }
        out
    };

    let mut x0 = vec![S::from_f64c(0.1), S::from_f64c(0.3)];
    let mut lower = vec![bounds.k.0, bounds.alpha.0];
    let mut upper = vec![bounds.k.1, bounds.alpha.1];
    let mut names = vec!["k".to_string(), "alpha".to_string()];
    for s in series {
        x0.push(S::zero());
        lower.push(bounds.b.0);
        upper.push(bounds.b.1);
        names.push(format!("scale:{}", s.key));
    }
    for s in series {
        let (series_min, _, _) = series_stats(&s.observations);
        x0.push(series_min);
        lower.push(bounds.bias.0);
        upper.push(bounds.bias.1);
        names.push(format!("bias:{}", s.key));
    }
    let mut refit_opts = options.nlls;
    refit_opts.max_iterations = options.polish_iterations;
    let result = nlls_solve(residual, &x0, &lower, &upper, &refit_opts)?;

    let mut flags = Vec::new();
    if max - min <= options.degenerate_tolerance {
        flags.push(FitFlag::DegenerateSeries {
            series: high[0].direction.clone(),
        });
    }
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    solver_flags(&result, FitStep::Capacity, &name_refs, &mut flags);

    Ok(CapacityFit {
        k: result.x[0],
        alpha: result.x[1],
        bias: result.x[2 + n + high_idx],
        diagnostics: diagnostics_of(&result),
        flags,
    })
}

/// Step 2: fits `loss ~ (k * p)^(-alpha) + s0 * p^beta + bias` with capacity
/// fixed, on the lowest-resource series.
///
/// A series without a U shape cannot identify `s0 > 0`; the scale lands on
/// its lower bound and a hard [`FitFlag::MonotoneSeries`] is raised.
pub fn fit_overfit_shape<S: Scalar>(
    observations: &[Observation<S>],
    capacity: (S, S),
    options: &FitOptions<S>,
) -> Result<OverfitFit<S>> {
    check_single_series(observations, "over-fit shape fit")?;
    let (k, alpha) = capacity;
    if !(k > S::zero() && alpha > S::zero()) {
        return Err(Error::domain(
            "fixed capacity parameters must be positive",
        ));
    }
    let (min, max, _) = series_stats(observations);

    let bounds = &options.bounds;
    let residual = |x: &[S]| -> Vec<S> {
        observations
            .iter()
            .map(|o| {
                (k * o.sampling_ratio).powf(-alpha) + x[1] * o.sampling_ratio.powf(x[0]) + x[2]
                    - o.eval_loss
            })
            .collect()
    };
    let s0_guess = (max - min).max(bounds.s0.0).min(bounds.s0.1);
    let x0 = [S::one(), s0_guess, min];
    let lower = [bounds.beta.0, bounds.s0.0, bounds.bias.0];
    let upper = [bounds.beta.1, bounds.s0.1, bounds.bias.1];
    let result = nlls_solve(residual, &x0, &lower, &upper, &options.nlls)?;

    let mut flags = Vec::new();
    if max - min <= options.degenerate_tolerance {
        flags.push(FitFlag::DegenerateSeries {
            series: observations[0].direction.clone(),
        });
    }
    let s0 = result.x[1];
    if s0 - bounds.s0.0 <= S::from_f64c(1e-6) * (S::one() + bounds.s0.0) {
        flags.push(FitFlag::MonotoneSeries {
            series: observations[0].direction.clone(),
        });
    }
    solver_flags(
        &result,
        FitStep::OverfitShape,
        &["beta", "s0", "bias"],
        &mut flags,
    );

    Ok(OverfitFit {
        beta: result.x[0],
        s0,
        bias: result.x[2],
        diagnostics: diagnostics_of(&result),
        flags,
    })
}

/// Step 3: fits `s_j ~ (D_j^gamma + b) * q^beta` across per-series scales.
///
/// `series` holds `(data_size, fitted_scale)` pairs; at least 3 distinct
/// sizes are required (3 unknowns). Scales that do not vary with data size
/// raise a hard [`FitFlag::DataSizeIndependent`] and drive gamma to 0.
pub fn fit_data_scaling<S: Scalar>(
    series: &[(S, S)],
    beta: S,
    options: &FitOptions<S>,
) -> Result<ScalingFit<S>> {
    let mut sizes: Vec<S> = Vec::new();
    for &(d, _) in series {
        if !(d.is_finite() && d > S::zero()) {
            return Err(Error::domain(format!("data sizes must be positive, got {d}")));
        }
        if !sizes.contains(&d) {
            sizes.push(d);
        }
    }
    if sizes.len() < 3 {
        return Err(Error::Identifiability(format!(
            "data scaling needs >= 3 distinct data sizes for (gamma, b, q), got {}",
            sizes.len()
        )));
    }
    if !(beta.is_finite() && beta > S::zero()) {
        return Err(Error::domain(format!("shared beta must be positive, got {beta}")));
    }

    let bounds = &options.bounds;
    let residual = |x: &[S]| -> Vec<S> {
        series
            .iter()
            .map(|&(d, s)| (d.powf(x[0]) + x[1]) * x[2].powf(beta) - s)
            .collect()
    };
    let x0 = [S::from_f64c(-0.3), S::zero(), S::one()];
    let lower = [bounds.gamma.0, bounds.b.0, bounds.q.0];
    let upper = [bounds.gamma.1, bounds.b.1, bounds.q.1];
    let result = nlls_solve(residual, &x0, &lower, &upper, &options.nlls)?;

    let mut flags = Vec::new();
    let mut s_min = series[0].1;
    let mut s_max = s_min;
    for &(_, s) in series {
        s_min = s_min.min(s);
        s_max = s_max.max(s);
    }
    if s_max - s_min <= S::from_f64c(1e-9) * (S::one() + s_max.abs().max(s_min.abs())) {
        flags.push(FitFlag::DataSizeIndependent);
    }
    solver_flags(
        &result,
        FitStep::DataScaling,
        &["gamma", "b", "q"],
        &mut flags,
    );

    Ok(ScalingFit {
        gamma: result.x[0],
        b: result.x[1],
        q: result.x[2],
        diagnostics: diagnostics_of(&result),
        flags,
    })
}

/// One grouped series of a fitting dataset.
struct Series<S> {
    key: String,
    direction: String,
    data_size: S,
    observations: Vec<Observation<S>>,
}

/// Groups observations into (direction, data size) series. Keys are direction
/// names, or `name@size` when a name spans several sizes.
fn group_series<S: Scalar>(observations: &[Observation<S>]) -> Vec<Series<S>> {
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut map: BTreeMap<(String, u64), Vec<Observation<S>>> = BTreeMap::new();
    for obs in observations {
        let id = (obs.direction.clone(), obs.data_size.to_f64c().to_bits());
        if !map.contains_key(&id) {
            order.push(id.clone());
        }
        map.entry(id).or_default().push(obs.clone());
    }
    let mut multi_size: BTreeMap<&str, usize> = BTreeMap::new();
    for (name, _) in &order {
        *multi_size.entry(name.as_str()).or_default() += 1;
    }
    order
        .iter()
        .map(|id| {
            let observations = map[id].clone();
            let data_size = observations[0].data_size;
            let key = if multi_size[id.0.as_str()] > 1 {
                format!("{}@{}", id.0, data_size)
            } else {
                id.0.clone()
            };
            Series {
                key,
                direction: id.0.clone(),
                data_size,
                observations,
            }
        })
        .collect()
}

/// Unbounded closed-form least squares of `z ~ s * u + m` for one series,
/// used to refit per-series over-fit scales under shared exponents. Returns
/// `None` when the ratios do not vary.
fn linear_scale_refit<S: Scalar>(u: &[S], z: &[S]) -> Option<(S, S)> {
    let n = S::from_usize(u.len()).unwrap();
    let su: S = u.iter().copied().sum();
    let sz: S = z.iter().copied().sum();
    let suu: S = u.iter().map(|&x| x * x).sum();
    let suz: S = u.iter().zip(z).map(|(&x, &y)| x * y).sum();
    let det = n * suu - su * su;
    if det.abs() <= S::from_f64c(1e-12) * (S::one() + suu.abs() * n) {
        return None;
    }
    let s = (n * suz - su * sz) / det;
    let m = (sz - s * su) / n;
    Some((s, m))
}

fn shape_value<S: Scalar>(params: &DplParams<S>, p: S, d: S) -> S {
    (params.k * p).powf(-params.alpha)
        + params.overfit_coefficient(d) * (params.q * p).powf(params.beta)
}

/// Full stepwise estimation: capacity on the high-resource series, over-fit
/// shape on the low-resource one, per-series scales, then the data-size law,
/// iterated so later passes can strip the estimated over-fit term out of the
/// high series (see [`FitOptions::refine_cycles`]), plus bias refits and an
/// optional joint polish.
///
/// Needs one high-resource series (the largest data size) and at least 3
/// further series at distinct sizes. Step errors propagate with the step
/// attached. Diagnostics and flags describe the final pass. The report's
/// `converged` is false iff a hard flag was raised; parameters are still
/// returned for inspection.
pub fn fit_full<S: Scalar>(
    observations: &[Observation<S>],
    options: &FitOptions<S>,
) -> Result<FitReport<S>> {
    if observations.is_empty() {
        return Err(Error::EmptyInput("no observations".into()));
    }
    let series = group_series(observations);

    // Highest data size hosts step 1; ties break toward more observations,
    // then lexicographic key.
    let high_idx = (0..series.len())
        .max_by(|&i, &j| {
            series[i]
                .data_size
                .partial_cmp(&series[j].data_size)
                .unwrap()
                .then(series[i].observations.len().cmp(&series[j].observations.len()))
                .then(series[j].key.cmp(&series[i].key))
        })
        .unwrap();
    let low_idx = (0..series.len())
        .filter(|&i| i != high_idx)
        .min_by(|&i, &j| {
            series[i]
                .data_size
                .partial_cmp(&series[j].data_size)
                .unwrap()
                .then(series[j].observations.len().cmp(&series[i].observations.len()))
                .then(series[i].key.cmp(&series[j].key))
        })
        .ok_or_else(|| {
            Error::Identifiability("dataset has a single series".into()).in_step("overfit-shape")
        })?;

    // One pass over the three steps. The first pass fits plain capacity;
    // later passes refit it pooled across series under the previous pass's
    // over-fit estimates (see fit_capacity_refined). Step 2.5 sits between
    // shape and scaling: per-series composite scales under the shared
    // exponents. Those refits are unbounded because scales legitimately
    // cross zero near the data size where the over-fit coefficient changes
    // sign.
    let run_pass = |previous_beta: Option<S>| -> Result<(
        CapacityFit<S>,
        OverfitFit<S>,
        ScalingFit<S>,
        Vec<FitFlag>,
    )> {
        let capacity = match previous_beta {
            None => fit_capacity(&series[high_idx].observations, options),
            Some(beta) => fit_capacity_refined(&series, high_idx, beta, options),
        }
        .map_err(|e| e.in_step("capacity"))?;
        let mut flags = capacity.flags.clone();

        let overfit = fit_overfit_shape(
            &series[low_idx].observations,
            (capacity.k, capacity.alpha),
            options,
        )
        .map_err(|e| e.in_step("overfit-shape"))?;
        flags.extend(overfit.flags.iter().cloned());

        let mut scale_pairs: Vec<(S, S)> = Vec::new();
        for (idx, s) in series.iter().enumerate() {
            if idx == high_idx {
                continue;
            }
            let u: Vec<S> = s
                .observations
                .iter()
                .map(|o| o.sampling_ratio.powf(overfit.beta))
                .collect();
            let z: Vec<S> = s
                .observations
                .iter()
                .map(|o| o.eval_loss - (capacity.k * o.sampling_ratio).powf(-capacity.alpha))
                .collect();
            match linear_scale_refit(&u, &z) {
                Some((scale, _)) => scale_pairs.push((s.data_size, scale)),
                None => flags.push(FitFlag::DegenerateSeries {
                    series: s.key.clone(),
                }),
            }
        }

        let scaling = fit_data_scaling(&scale_pairs, overfit.beta, options)
            .map_err(|e| e.in_step("data-scaling"))?;
        flags.extend(scaling.flags.iter().cloned());
        Ok((capacity, overfit, scaling, flags))
    };

    // The first pass feeds the second its over-fit exponent, the second
    // feeds the third a sharper one, and so on until the shared parameters
    // stabilize or the pass budget runs out.
    let (mut capacity, mut overfit, mut scaling, mut flags) = run_pass(None)?;
    for _ in 1..options.refine_cycles.max(1) {
        let previous = [
            capacity.k,
            capacity.alpha,
            overfit.beta,
            scaling.gamma,
            scaling.b,
            scaling.q,
        ];
        (capacity, overfit, scaling, flags) = run_pass(Some(overfit.beta))?;
        let current = [
            capacity.k,
            capacity.alpha,
            overfit.beta,
            scaling.gamma,
            scaling.b,
            scaling.q,
        ];
        let drift = previous
            .iter()
            .zip(&current)
            .map(|(&p, &c)| (p - c).abs() / (S::one() + c.abs()))
            .fold(S::zero(), S::max);
        if drift <= S::from_f64c(1e-8) {
            break;
        }
    }

    let mut params = DplParams {
        k: capacity.k,
        alpha: capacity.alpha,
        q: scaling.q,
        beta: overfit.beta,
        gamma: scaling.gamma,
        b: scaling.b,
        biases: BTreeMap::new(),
    };

    let mut polish = None;
    if options.polish {
        // Assemble the polish start. Step outputs that parked on a bound or
        // ran out of iterations are unreliable, so those reset to neutral
        // defaults.
        let bounds = &options.bounds;
        let maxed = |step_flags: &[FitFlag]| {
            step_flags
                .iter()
                .any(|f| matches!(f, FitFlag::MaxIterations { .. }))
        };
        let capacity_maxed = maxed(&capacity.flags);
        let overfit_maxed = maxed(&overfit.flags);
        let scaling_maxed = maxed(&scaling.flags);
        let near = |v: S, bound: (S, S)| -> bool {
            let span = bound.1 - bound.0;
            let tol = S::from_f64c(1e-6) * span.min(S::one() + bound.0.abs().max(bound.1.abs()));
            v - bound.0 <= tol || bound.1 - v <= tol
        };
        let start_k = if capacity_maxed || near(capacity.k, bounds.k) {
            S::from_f64c(0.1)
        } else {
            capacity.k
        };
        let start_alpha = if capacity_maxed || near(capacity.alpha, bounds.alpha) {
            S::from_f64c(0.3)
        } else {
            capacity.alpha
        };
        let start_beta = if overfit_maxed || near(overfit.beta, bounds.beta) {
            S::one()
        } else {
            overfit.beta
        };
        let start_gamma = if scaling_maxed || near(scaling.gamma, bounds.gamma) {
            S::from_f64c(-0.3)
        } else {
            scaling.gamma
        };
        let start_b = if scaling_maxed || near(scaling.b, bounds.b) {
            S::zero()
        } else {
            scaling.b
        };
        let start_q = if scaling_maxed || near(scaling.q, bounds.q) {
            S::one()
        } else {
            scaling.q
        };
        let start_params = DplParams {
            k: start_k,
            alpha: start_alpha,
            q: start_q,
            beta: start_beta,
            gamma: start_gamma,
            b: start_b,
            biases: BTreeMap::new(),
        };

        let shared_names = ["k", "alpha", "q", "beta", "gamma", "b"];
        let mut x0 = vec![start_k, start_alpha, start_q, start_beta, start_gamma, start_b];
        let mut lower = vec![
            bounds.k.0,
            bounds.alpha.0,
            bounds.q.0,
            bounds.beta.0,
            bounds.gamma.0,
            bounds.b.0,
        ];
        let mut upper = vec![
            bounds.k.1,
            bounds.alpha.1,
            bounds.q.1,
            bounds.beta.1,
            bounds.gamma.1,
            bounds.b.1,
        ];
        for s in &series {
            // Seed each bias with the series' mean offset from the start shape.
            let mean_off: S = s
                .observations
                .iter()
                .map(|o| o.eval_loss - shape_value(&start_params, o.sampling_ratio, s.data_size))
                .sum::<S>()
                / S::from_usize(s.observations.len()).unwrap();
            x0.push(mean_off.max(bounds.bias.0).min(bounds.bias.1));
            lower.push(bounds.bias.0);
            upper.push(bounds.bias.1);
        }

        let residual = |x: &[S]| -> Vec<S> {
            let mut out = Vec::with_capacity(observations.len());
            for (idx, s) in series.iter().enumerate() {
                let (k, alpha, q, beta, gamma, b) = (x[0], x[1], x[2], x[3], x[4], x[5]);
                let coef = s.data_size.powf(gamma) + b;
                let bias = x[6 + idx];
                for o in &s.observations {
                    let f = (k * o.sampling_ratio).powf(-alpha)
                        + coef * (q * o.sampling_ratio).powf(beta)
                        + bias;
                    out.push(f - o.eval_loss);
                }
            }
            out
        };
        let mut polish_opts = options.nlls;
        polish_opts.max_iterations = options.polish_iterations;
        let result = nlls_solve(residual, &x0, &lower, &upper, &polish_opts)?;
        if !result.converged {
            flags.push(FitFlag::MaxIterations { step: FitStep::Polish });
        }
        for &idx in &result.at_bound {
            let parameter = if idx < shared_names.len() {
                shared_names[idx].to_string()
            } else {
                format!("bias:{}", series[idx - shared_names.len()].key)
            };
            flags.push(FitFlag::AtBound {
                step: FitStep::Polish,
                parameter,
            });
        }
        params.k = result.x[0];
        params.alpha = result.x[1];
        params.q = result.x[2];
        params.beta = result.x[3];
        params.gamma = result.x[4];
        params.b = result.x[5];
        polish = Some(diagnostics_of(&result));
    }

    // Closed-form bias refit per series (idempotent given the shape).
    for s in &series {
        let mean_off: S = s
            .observations
            .iter()
            .map(|o| o.eval_loss - shape_value(&params, o.sampling_ratio, s.data_size))
            .sum::<S>()
            / S::from_usize(s.observations.len()).unwrap();
        params.biases.insert(s.key.clone(), mean_off);
    }

    // Per-series r-squared under the final parameters.
    let stats: Vec<SeriesStat<S>> = series
        .iter()
        .map(|s| {
            let bias = params.biases[&s.key];
            let predictions: Vec<S> = s
                .observations
                .iter()
                .map(|o| shape_value(&params, o.sampling_ratio, s.data_size) + bias)
                .collect();
            let observed: Vec<S> = s.observations.iter().map(|o| o.eval_loss).collect();
            SeriesStat {
                key: s.key.clone(),
                direction: s.direction.clone(),
                data_size: s.data_size,
                observations: s.observations.len(),
                r_squared: r_squared_of(&predictions, &observed),
            }
        })
        .collect();

    // A step that exhausted its budget left only a bad starting point; once
    // the polish converges from defaults, that history no longer taints the
    // result. Data pathologies and a failed polish remain disqualifying.
    let polish_rescues = polish.is_some()
        && !flags.iter().any(|f| {
            matches!(
                f,
                FitFlag::MaxIterations {
                    step: FitStep::Polish
                }
            )
        });
    let converged = !flags.iter().any(|f| match f {
        FitFlag::MaxIterations { step } if *step != FitStep::Polish => !polish_rescues,
        other => other.is_hard(),
    });
    Ok(FitReport {
        params,
        capacity,
        overfit,
        scaling,
        polish,
        series: stats,
        flags,
        converged,
    })
}

/// Bias-only adaptation: the mean offset of a direction's observations from
/// the bias-free shape. Closed form, no iteration, never touches shared
/// parameters.
pub fn fit_bias<S: Scalar>(params: &DplParams<S>, observations: &[Observation<S>]) -> Result<S> {
    if observations.is_empty() {
        return Err(Error::InsufficientData(
            "bias fit needs >= 1 observation".into(),
        ));
    }
    params.validate()?;
    let mut total = S::zero();
    for obs in observations {
        total = total + (obs.eval_loss - params.shape(obs.sampling_ratio, obs.data_size)?);
    }
    Ok(total / S::from_usize(observations.len()).unwrap())
}

fn r_squared_of<S: Scalar>(predictions: &[S], observed: &[S]) -> Option<S> {
    let n = S::from_usize(observed.len()).unwrap();
    let mean: S = observed.iter().copied().sum::<S>() / n;
    let ss_tot: S = observed.iter().map(|&y| (y - mean) * (y - mean)).sum();
    if ss_tot <= S::zero() {
        return None;
    }
    let ss_res: S = predictions
        .iter()
        .zip(observed)
        .map(|(&f, &y)| (f - y) * (f - y))
        .sum();
    Some(S::one() - ss_res / ss_tot)
}

/// `1 - SS_res / SS_tot` of the law's predictions against observations.
///
/// Needs >= 2 observations with non-constant losses; missing biases read
/// as 0.
pub fn goodness_of_fit<S: Scalar>(
    params: &DplParams<S>,
    observations: &[Observation<S>],
) -> Result<S> {
    if observations.len() < 2 {
        return Err(Error::InsufficientData(
            "r-squared needs >= 2 observations".into(),
        ));
    }
    let predictions: Vec<S> = observations
        .iter()
        .map(|o| {
            let bias = params.bias(&o.direction).unwrap_or_else(S::zero);
            Ok(params.shape(o.sampling_ratio, o.data_size)? + bias)
        })
        .collect::<Result<_>>()?;
    let observed: Vec<S> = observations.iter().map(|o| o.eval_loss).collect();
    r_squared_of(&predictions, &observed).ok_or(Error::UndefinedRSquared)
}

#[cfg(test)]
mod tests;
