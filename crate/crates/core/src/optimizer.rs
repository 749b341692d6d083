//! Optimal sampling-ratio selection on the floored simplex.
//!
//! Minimizes a weighted sum of per-direction predicted losses over
//! `{p : sum p_i = 1, p_i >= floor}`. When every weighted direction's loss
//! curve is convex on the feasible range the KKT conditions are solved by
//! nested bisection (outer on the multiplier, inner per coordinate);
//! otherwise a multi-start projected-gradient descent takes over. A separate
//! exhaustive grid search serves as a slow verifier for small problems.
//!
//! Directions with zero weight do not influence the objective. They receive
//! the floor plus any budget the weighted directions decline (past their own
//! loss minima, extra ratio only hurts), split by [`ZeroWeightPolicy`].

use serde::Serialize;

use crate::dpl::DirectionSpec;
use crate::dpl::DplParams;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Per-direction objective weights; non-negative, summing to 1 within 1e-12.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricWeights<S> {
    values: Vec<S>,
}

impl<S: Scalar> MetricWeights<S> {
    /// Validates and wraps explicit weights.
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("weights must not be empty".into()));
        }
        let mut total = S::zero();
        for &w in &values {
            if !(w.is_finite() && w >= S::zero()) {
                return Err(Error::domain(format!(
                    "weights must be finite and non-negative, got {w}"
                )));
            }
            total = total + w;
        }
        if (total - S::one()).abs() > S::from_f64c(1e-12) {
            return Err(Error::domain(format!(
                "weights must sum to 1 within 1e-12, got {total}"
            )));
        }
        Ok(MetricWeights { values })
    }

    /// Equal weights `1/n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("weights must not be empty".into()));
        }
        let w = S::one() / S::from_usize(n).unwrap();
        Ok(MetricWeights {
            values: vec![w; n],
        })
    }

    /// Weights proportional to the directions' data sizes.
    pub fn data_share(directions: &[DirectionSpec<S>]) -> Result<Self> {
        let shares = crate::dpl::data_shares(directions)?;
        Ok(MetricWeights { values: shares })
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How the budget declined by weighted directions is split among zero-weight
/// directions (beyond their guaranteed floor).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroWeightPolicy {
    /// Equal split of the surplus.
    #[default]
    UniformSurplus,
    /// Surplus proportional to the zero-weight directions' data sizes.
    DataShare,
}

/// Which algorithm produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    /// Nested-bisection KKT solve (convex objective).
    Kkt,
    /// Multi-start projected-gradient descent.
    ProjectedGradient,
    /// Exhaustive composition enumeration.
    GridSearch,
}

/// Optimizer configuration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OptimizeOptions<S> {
    /// Minimum ratio per direction, strictly positive.
    pub floor: S,
    pub zero_weight: ZeroWeightPolicy,
    /// Seed for the projected-gradient restarts.
    pub seed: u64,
    /// Step-size convergence tolerance for projected gradient.
    pub tol: S,
    /// Iteration cap per projected-gradient start.
    pub max_iterations: usize,
}

impl<S: Scalar> Default for OptimizeOptions<S> {
    fn default() -> Self {
        OptimizeOptions {
            floor: S::from_f64c(0.01),
            zero_weight: ZeroWeightPolicy::UniformSurplus,
            seed: 0,
            tol: S::from_f64c(1e-10),
            max_iterations: 1000,
        }
    }
}

/// An optimized allocation with its diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct RatioSolution<S> {
    /// Sampling ratios aligned with the input directions; sums to 1.
    pub p: Vec<S>,
    /// Weighted objective at `p`, biases included.
    pub objective: S,
    /// Per-direction predicted losses at `p`, biases included.
    pub per_direction_losses: Vec<S>,
    pub method: SolverMethod,
    pub iterations: usize,
    /// Worst stationarity or simplex defect; only the KKT path reports one.
    pub kkt_residual: Option<S>,
    pub converged: bool,
    pub floor: S,
}

fn validate_problem<S: Scalar>(
    params: &DplParams<S>,
    directions: &[DirectionSpec<S>],
    weights: &MetricWeights<S>,
    floor: S,
) -> Result<()> {
    params.validate()?;
    if directions.is_empty() {
        return Err(Error::EmptyInput("no directions".into()));
    }
    if weights.len() != directions.len() {
        return Err(Error::DimensionMismatch {
            expected: directions.len(),
            got: weights.len(),
        });
    }
    for d in directions {
        if !(d.data_size.is_finite() && d.data_size > S::zero()) {
            return Err(Error::domain(format!(
                "direction `{}` has non-positive data size",
                d.name
            )));
        }
    }
    if !(floor.is_finite() && floor > S::zero()) {
        return Err(Error::domain(format!(
            "ratio floor must be strictly positive, got {floor}"
        )));
    }
    let n = S::from_usize(directions.len()).unwrap();
    if floor * n >= S::one() {
        return Err(Error::InfeasibleFloor {
            floor: floor.to_f64c(),
            n: directions.len(),
        });
    }
    Ok(())
}

/// Weighted objective `sum_i r_i * F_i(p_i)`, biases included.
///
/// `p` must lie on the simplex within 1e-6 with every entry in `(0, 1]`.
pub fn objective<S: Scalar>(
    params: &DplParams<S>,
    directions: &[DirectionSpec<S>],
    weights: &MetricWeights<S>,
    p: &[S],
) -> Result<S> {
    if p.len() != directions.len() || weights.len() != directions.len() {
        return Err(Error::DimensionMismatch {
            expected: directions.len(),
            got: p.len().min(weights.len()),
        });
    }
    let total: S = p.iter().copied().sum();
    if (total - S::one()).abs() > S::from_f64c(1e-6) {
        return Err(Error::domain(format!(
            "ratios must sum to 1 within 1e-6, got {total}"
        )));
    }
    let mut acc = S::zero();
    for ((d, &r), &pi) in directions.iter().zip(weights.values()).zip(p) {
        let eval = crate::dpl::eval_dpl(params, pi, d)?;
        acc = acc + r * eval.loss;
    }
    Ok(acc)
}

fn per_direction_losses<S: Scalar>(
    params: &DplParams<S>,
    directions: &[DirectionSpec<S>],
    p: &[S],
) -> Result<Vec<S>> {
    directions
        .iter()
        .zip(p)
        .map(|(d, &pi)| Ok(crate::dpl::eval_dpl(params, pi, d)?.loss))
        .collect()
}

/// Splits the unallocated budget among zero-weight directions per policy.
/// Weighted coordinates in `p` are left untouched.
fn allocate_zero_weight<S: Scalar>(
    p: &mut [S],
    directions: &[DirectionSpec<S>],
    weights: &MetricWeights<S>,
    floor: S,
    policy: ZeroWeightPolicy,
) {
    let zero: Vec<usize> = (0..p.len())
        .filter(|&i| weights.values()[i] == S::zero())
        .collect();
    if zero.is_empty() {
        return;
    }
    let weighted_total: S = (0..p.len())
        .filter(|&i| weights.values()[i] != S::zero())
        .map(|i| p[i])
        .sum();
    let n0 = S::from_usize(zero.len()).unwrap();
    let surplus = (S::one() - weighted_total - n0 * floor).max(S::zero());
    match policy {
        ZeroWeightPolicy::UniformSurplus => {
            let share = surplus / n0;
            for &i in &zero {
                p[i] = floor + share;
            }
        }
        ZeroWeightPolicy::DataShare => {
            let total_size: S = zero.iter().map(|&i| directions[i].data_size).sum();
            for &i in &zero {
                p[i] = floor + surplus * directions[i].data_size / total_size;
            }
        }
    }
}

/// Minimizes the weighted objective over the floored simplex.
///
/// Convexity of every weighted direction's curve is checked on a log grid of
/// second derivatives; the KKT path runs when it holds, the projected
/// gradient otherwise. Among equal-objective candidates the lexicographically
/// smallest ratio vector wins.
pub fn optimize_ratios<S: Scalar>(
    params: &DplParams<S>,
    directions: &[DirectionSpec<S>],
    weights: &MetricWeights<S>,
    options: &OptimizeOptions<S>,
) -> Result<RatioSolution<S>> {
    validate_problem(params, directions, weights, options.floor)?;
    let n = directions.len();
    let floor = options.floor;

    if n == 1 {
        let p = vec![S::one()];
        let losses = per_direction_losses(params, directions, &p)?;
        let objective = weights.values()[0] * losses[0];
        return Ok(RatioSolution {
            p,
            objective,
            per_direction_losses: losses,
            method: SolverMethod::Kkt,
            iterations: 0,
            kkt_residual: Some(S::zero()),
            converged: true,
            floor,
        });
    }

    let weighted: Vec<usize> = (0..n)
        .filter(|&i| weights.values()[i] != S::zero())
        .collect();
    let n0 = n - weighted.len();
    // Budget available to the weighted directions once every zero-weight one
    // holds its floor. Taking less is allowed; the surplus has a home.
    let budget = S::one() - S::from_usize(n0).unwrap() * floor;
    let cap = budget - S::from_usize(weighted.len() - 1).unwrap() * floor;

    let convex = weighted.iter().all(|&i| {
        let d = directions[i].data_size;
        let mut convex = true;
        let lo = floor.ln();
        let hi = cap.min(S::one() - S::from_f64c(1e-12)).ln();
        for g in 0..64 {
            let t = S::from_usize(g).unwrap() / S::from_f64c(63.0);
            let p = (lo + (hi - lo) * t).exp();
            match params.shape_second_derivative(p, d) {
                Ok(v) if v >= S::zero() => {}
                _ => {
                    convex = false;
                    break;
                }
            }
        }
        convex
    });

    let mut solution = if convex {
        solve_kkt(params, directions, weights, &weighted, budget, cap, floor)?
    } else {
        solve_pgd(params, directions, weights, options, &weighted)?
    };

    allocate_zero_weight(
        &mut solution.p,
        directions,
        weights,
        floor,
        options.zero_weight,
    );
    solution.per_direction_losses = per_direction_losses(params, directions, &solution.p)?;
    solution.objective = objective(params, directions, weights, &solution.p)?;
    Ok(solution)
}

/// Solves `r_i F_i'(p) = -lambda` for one coordinate by bisection on
/// `[floor, cap]`; the weighted derivative is increasing under convexity.
fn coordinate_ratio<S: Scalar>(
    params: &DplParams<S>,
    d: S,
    r: S,
    lambda: S,
    floor: S,
    cap: S,
) -> S {
    let g = |p: S| r * params.shape_derivative(p, d).unwrap() + lambda;
    if g(floor) >= S::zero() {
        return floor;
    }
    if g(cap) <= S::zero() {
        return cap;
    }
    let (mut lo, mut hi) = (floor, cap);
    for _ in 0..200 {
        let mid = (lo + hi) * S::from_f64c(0.5);
        if g(mid) <= S::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= S::from_f64c(1e-16) * (S::one() + hi.abs()) {
            break;
        }
    }
    (lo + hi) * S::from_f64c(0.5)
}

fn solve_kkt<S: Scalar>(
    params: &DplParams<S>,
    directions: &[DirectionSpec<S>],
    weights: &MetricWeights<S>,
    weighted: &[usize],
    budget: S,
    cap: S,
    floor: S,
) -> Result<RatioSolution<S>> {
    let n = directions.len();
    let n0 = n - weighted.len();
    let sum_at = |lambda: S| -> S {
        weighted
            .iter()
            .map(|&i| {
                coordinate_ratio(
                    params,
                    directions[i].data_size,
                    weights.values()[i],
                    lambda,
                    floor,
                    cap,
                )
            })
            .sum()
    };

    let mut iterations = 0;
    let unconstrained = sum_at(S::zero());
    // With zero-weight directions present the budget is an inequality: a
    // strictly interior optimum leaves lambda at 0 and the surplus flows to
    // the indifferent directions.
    let lambda = if n0 > 0 && unconstrained <= budget {
        S::zero()
    } else if unconstrained <= budget && n0 == 0 {
        // Equality constraint slack on the low side: pad allocations past
        // their minima with a negative multiplier.
        if (unconstrained - budget).abs() <= S::from_f64c(1e-12) {
            S::zero()
        } else {
            let mut lo = -S::one();
            while sum_at(lo) < budget {
                lo = lo * S::from_f64c(2.0);
                iterations += 1;
                if lo < S::from_f64c(-1e30) {
                    break;
                }
            }
            bisect_lambda(&sum_at, lo, S::zero(), budget, &mut iterations)
        }
    } else {
        let mut hi = S::one();
        while sum_at(hi) > budget {
            hi = hi * S::from_f64c(2.0);
            iterations += 1;
            if hi > S::from_f64c(1e30) {
                break;
            }
        }
        bisect_lambda(&sum_at, S::zero(), hi, budget, &mut iterations)
    };

    let mut p = vec![floor; n];
    for &i in weighted {
        p[i] = coordinate_ratio(
            params,
            directions[i].data_size,
            weights.values()[i],
            lambda,
            floor,
            cap,
        );
    }

    // Absorb the residual bisection defect into an interior coordinate so the
    // full vector sums to 1 at machine precision.
    let weighted_sum: S = weighted.iter().map(|&i| p[i]).sum();
    let target = if n0 > 0 && lambda == S::zero() {
        weighted_sum
    } else {
        budget
    };
    let defect = target - weighted_sum;
    let mut converged = true;
    if defect.abs() > S::from_f64c(1e-6) {
        converged = false;
    } else if defect != S::zero() {
        if let Some(&adjust) = weighted
            .iter()
            .filter(|&&i| p[i] + defect > floor && p[i] + defect < cap)
            .max_by(|&&a, &&b| p[a].partial_cmp(&p[b]).unwrap())
        {
            p[adjust] = p[adjust] + defect;
        }
    }

    // Stationarity report: interior coordinates must match the multiplier,
    // boundary ones must push against their bound.
    let mut residual = S::zero();
    for &i in weighted {
        let g = weights.values()[i] * params.shape_derivative(p[i], directions[i].data_size)?;
        let edge = S::from_f64c(1e-9) * (S::one() + cap);
        let v = if p[i] - floor <= edge {
            (-(g + lambda)).max(S::zero())
        } else if cap - p[i] <= edge {
            (g + lambda).max(S::zero())
        } else {
            (g + lambda).abs()
        };
        residual = residual.max(v);
    }

    Ok(RatioSolution {
        p,
        objective: S::zero(),
        per_direction_losses: Vec::new(),
        method: SolverMethod::Kkt,
        iterations,
        kkt_residual: Some(residual),
        converged,
        floor,
    })
}

fn bisect_lambda<S: Scalar>(
    sum_at: &impl Fn(S) -> S,
    mut lo: S,
    mut hi: S,
    budget: S,
    iterations: &mut usize,
) -> S {
    // sum_at is non-increasing in lambda: high multipliers squeeze budget out.
    for _ in 0..200 {
        *iterations += 1;
        let mid = (lo + hi) * S::from_f64c(0.5);
        if sum_at(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= S::from_f64c(1e-15) * (S::one() + hi.abs()) {
            break;
        }
    }
    (lo + hi) * S::from_f64c(0.5)
}

/// Euclidean projection onto `{x : x_i >= lower_i, sum x_i = total}` via the
/// sort-and-threshold simplex algorithm on the shifted coordinates.
fn project_floored_simplex<S: Scalar>(x: &[S], lower: &[S], total: S) -> Vec<S> {
    let lower_sum: S = lower.iter().copied().sum();
    let t = total - lower_sum;
    let w: Vec<S> = x.iter().zip(lower).map(|(&v, &l)| v - l).collect();
    let mut sorted = w.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = S::zero();
    let mut theta = S::zero();
    for (j, &u) in sorted.iter().enumerate() {
        acc = acc + u;
        let candidate = (acc - t) / S::from_usize(j + 1).unwrap();
        if u - candidate > S::zero() {
            theta = candidate;
        }
    }
    w.iter()
        .zip(lower)
        .map(|(&v, &l)| (v - theta).max(S::zero()) + l)
        .collect()
}

fn lex_less<S: Scalar>(a: &[S], b: &[S]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn solve_pgd<S: Scalar>(
    params: &DplParams<S>,
    directions: &[DirectionSpec<S>],
    weights: &MetricWeights<S>,
    options: &OptimizeOptions<S>,
    weighted: &[usize],
) -> Result<RatioSolution<S>> {
    let n = directions.len();
    let floor = options.floor;
    // Zero-weight coordinates join the descent with zero gradient; they act
    // as slack that the projection shuffles budget through. Their floors
    // stay enforced, so the final reallocation cannot go infeasible.
    let lower = vec![floor; n];

    let cost = |p: &[S]| -> Result<S> {
        let mut acc = S::zero();
        for &i in weighted {
            acc = acc
                + weights.values()[i] * params.shape(p[i], directions[i].data_size)?;
        }
        Ok(acc)
    };
    let grad = |p: &[S]| -> Result<Vec<S>> {
        let mut g = vec![S::zero(); n];
        for &i in weighted {
            g[i] = weights.values()[i]
                * params.shape_derivative(p[i], directions[i].data_size)?;
        }
        Ok(g)
    };

    // Start set: the data-share point, the uniform point, and Dirichlet(1)
    // draws, all projected into the feasible set.
    let mut starts: Vec<Vec<S>> = Vec::with_capacity(16);
    let total_size: S = directions.iter().map(|d| d.data_size).sum();
    starts.push(
        directions
            .iter()
            .map(|d| d.data_size / total_size)
            .collect(),
    );
    starts.push(vec![S::one() / S::from_usize(n).unwrap(); n]);
    let mut stream = rng::derive_stream(options.seed, &[17]);
    for _ in 0..14 {
        let draws: Vec<S> = (0..n)
            .map(|_| S::from_f64c(-rng::uniform_open01(&mut stream).ln()))
            .collect();
        let total: S = draws.iter().copied().sum();
        starts.push(draws.into_iter().map(|e| e / total).collect());
    }

    let mut best: Option<(S, Vec<S>, bool)> = None;
    let mut iterations = 0;
    for start in starts {
        let mut p = project_floored_simplex(&start, &lower, S::one());
        let mut f = cost(&p)?;
        let mut converged = false;
        for _ in 0..options.max_iterations {
            iterations += 1;
            let g = grad(&p)?;
            let mut t = S::one();
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<S> = p.iter().zip(&g).map(|(&x, &gx)| x - t * gx).collect();
                let candidate = project_floored_simplex(&trial, &lower, S::one());
                let decrease: S = g
                    .iter()
                    .zip(p.iter().zip(&candidate))
                    .map(|(&gx, (&a, &b))| gx * (a - b))
                    .sum();
                let fc = cost(&candidate)?;
                if fc <= f - S::from_f64c(1e-4) * decrease.max(S::zero()) && fc < f {
                    accepted = Some((candidate, fc));
                    break;
                }
                t = t * S::from_f64c(0.5);
            }
            match accepted {
                Some((next, fc)) => {
                    let step = p
                        .iter()
                        .zip(&next)
                        .map(|(&a, &b)| (a - b).abs())
                        .fold(S::zero(), S::max);
                    p = next;
                    f = fc;
                    if step <= options.tol {
                        converged = true;
                        break;
                    }
                }
                None => {
                    // No descent direction at line-search resolution.
                    converged = true;
                    break;
                }
            }
        }
        let better = match &best {
            None => true,
            Some((bf, bp, _)) => {
                f < *bf - S::from_f64c(1e-12) * (S::one() + bf.abs())
                    || ((f - *bf).abs() <= S::from_f64c(1e-12) * (S::one() + bf.abs())
                        && lex_less(&p, bp))
            }
        };
        if better {
            best = Some((f, p, converged));
        }
    }

    let (_, p, converged) = best.unwrap();
    Ok(RatioSolution {
        p,
        objective: S::zero(),
        per_direction_losses: Vec::new(),
        method: SolverMethod::ProjectedGradient,
        iterations,
        kkt_residual: None,
        converged,
        floor,
    })
}

/// Exhaustive verifier: enumerates every composition of `1/resolution` ratio
/// steps meeting the floor and returns the best (ties go to the
/// lexicographically smallest vector).
///
/// The budget is deliberately small: at most 4 directions and a resolution
/// no finer than 1e-3 (and no coarser than 0.5).
pub fn grid_oracle<S: Scalar>(
    params: &DplParams<S>,
    directions: &[DirectionSpec<S>],
    weights: &MetricWeights<S>,
    resolution: S,
    options: &OptimizeOptions<S>,
) -> Result<RatioSolution<S>> {
    validate_problem(params, directions, weights, options.floor)?;
    let n = directions.len();
    if n > 4 {
        return Err(Error::BudgetExceeded(format!(
            "grid oracle handles at most 4 directions, got {n}"
        )));
    }
    if !(resolution.is_finite() && resolution > S::zero()) {
        return Err(Error::domain(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    if resolution < S::from_f64c(1e-3) - S::from_f64c(1e-12) {
        return Err(Error::BudgetExceeded(format!(
            "grid oracle resolution must be >= 1e-3, got {resolution}"
        )));
    }
    if resolution > S::from_f64c(0.5) {
        return Err(Error::domain(format!(
            "resolution must be <= 0.5, got {resolution}"
        )));
    }
    let steps_f = (S::one() / resolution).to_f64c();
    let steps = steps_f.round() as usize;
    if ((steps as f64) - steps_f).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "resolution {resolution} does not divide 1 into whole steps"
        )));
    }

    let floor = options.floor;
    let m_floor = (floor.to_f64c() * steps as f64 - 1e-9).ceil().max(0.0) as usize;
    if m_floor * n > steps {
        return Err(Error::InfeasibleFloor {
            floor: floor.to_f64c(),
            n,
        });
    }

    let ratio_of = |m: usize| S::from_usize(m).unwrap() * resolution;
    let mut best: Option<(S, Vec<usize>)> = None;
    let mut evaluated = 0usize;
    let mut m = vec![m_floor; n];
    // Lexicographic enumeration over the first n-1 coordinates; the last one
    // absorbs the remainder. First strict improvement wins, so ties keep the
    // lexicographically smallest composition.
    enumerate_compositions(&mut m, 0, steps, m_floor, &mut |m| {
        evaluated += 1;
        let mut value = S::zero();
        for i in 0..n {
            let eval = crate::dpl::eval_dpl(params, ratio_of(m[i]), &directions[i])?;
            value = value + weights.values()[i] * eval.loss;
        }
        if best.as_ref().map_or(true, |(b, _)| value < *b) {
            best = Some((value, m.to_vec()));
        }
        Ok(())
    })?;

    let (objective_value, m) = best.expect("feasible grid is non-empty");
    let p: Vec<S> = m.iter().map(|&mi| ratio_of(mi)).collect();
    let losses = per_direction_losses(params, directions, &p)?;
    Ok(RatioSolution {
        p,
        objective: objective_value,
        per_direction_losses: losses,
        method: SolverMethod::GridSearch,
        iterations: evaluated,
        kkt_residual: None,
        converged: true,
        floor,
    })
}

fn enumerate_compositions<F>(
    m: &mut [usize],
    index: usize,
    remaining: usize,
    m_floor: usize,
    visit: &mut F,
) -> Result<()>
where
    F: FnMut(&[usize]) -> Result<()>,
{
    let n = m.len();
    if index == n - 1 {
        if remaining >= m_floor {
            m[index] = remaining;
            visit(m)?;
        }
        return Ok(());
    }
    let reserve = m_floor * (n - 1 - index);
    if remaining < m_floor + reserve {
        return Ok(());
    }
    for v in m_floor..=remaining - reserve {
        m[index] = v;
        enumerate_compositions(m, index + 1, remaining - v, m_floor, visit)?;
    }
    Ok(())
}
