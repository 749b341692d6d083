//! Bounded nonlinear least squares.
//!
//! Damped Gauss-Newton (Levenberg-Marquardt with Marquardt diagonal scaling),
//! central finite-difference Jacobians, box constraints via step clipping, and
//! a Nelder-Mead fallback when the normal equations degenerate or the damped
//! steps stop making progress.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Solver knobs. Defaults suit residuals spanning a few orders of magnitude.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NllsOptions<S> {
    /// Outer iteration cap; hitting it yields a non-converged result.
    pub max_iterations: usize,
    /// Relative step for central-difference Jacobian columns.
    pub fd_step_rel: S,
    /// Projected-gradient infinity-norm threshold, scaled by the cost.
    pub gradient_tolerance: S,
    /// Step infinity-norm threshold relative to the parameter scale.
    pub step_tolerance: S,
    /// Relative cost-decrease threshold.
    pub cost_tolerance: S,
    /// Diminishing-returns threshold: three consecutive accepted steps each
    /// improving the cost by at most this fraction of it end the search.
    /// Weakly identified problems otherwise grind out negligible
    /// improvements until the iteration budget runs dry.
    pub decrease_tolerance: S,
}

impl<S: Scalar> Default for NllsOptions<S> {
    fn default() -> Self {
        NllsOptions {
            max_iterations: 200,
            fd_step_rel: S::from_f64c(1e-6),
            gradient_tolerance: S::from_f64c(1e-12),
            step_tolerance: S::from_f64c(1e-13),
            cost_tolerance: S::from_f64c(1e-15),
            decrease_tolerance: S::from_f64c(1e-9),
        }
    }
}

/// Solver outcome. `converged` is false only when the iteration budget ran
/// out; a boundary solution is converged and reports `at_bound` indices.
#[derive(Debug, Clone)]
pub struct NllsResult<S> {
    pub x: Vec<S>,
    /// Euclidean norm of the residual vector at `x`.
    pub residual_norm: S,
    pub iterations: usize,
    pub converged: bool,
    /// Parameter indices resting on a bound at the solution.
    pub at_bound: Vec<usize>,
    /// True when the Nelder-Mead fallback produced the final point.
    pub used_fallback: bool,
}

/// Sum of squares with compensated (Kahan) accumulation, so the result does
/// not depend on summation order rewrites.
fn cost_of<S: Scalar>(residuals: &[S]) -> S {
    let mut sum = S::zero();
    let mut carry = S::zero();
    for &r in residuals {
        let term = r * r - carry;
        let next = sum + term;
        carry = (next - sum) - term;
        sum = next;
    }
    sum
}

fn all_finite<S: Scalar>(values: &[S]) -> bool {
    values.iter().all(|v| v.is_finite())
}

fn clip<S: Scalar>(x: &mut [S], lower: &[S], upper: &[S]) {
    for i in 0..x.len() {
        if x[i] < lower[i] {
            x[i] = lower[i];
        }
        if x[i] > upper[i] {
            x[i] = upper[i];
        }
    }
}

fn dist_sq<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

fn divergence<S: Scalar>(message: &str, best: &[S]) -> Error {
    Error::Divergence {
        message: message.to_string(),
        best: best.iter().map(|v| v.to_f64c()).collect(),
    }
}

/// Solves `min ||residual(x)||^2` subject to `lower <= x <= upper`.
///
/// The initial guess is clipped into the box. Returns a feasible point whose
/// residual norm never exceeds the initial guess's. Non-finite residuals at
/// any probed point abort with [`Error::Divergence`] carrying the best
/// feasible point seen; an exhausted iteration budget is reported through
/// `converged = false`, not an error. Among equal-cost candidates the one
/// closer to the initial guess wins.
pub fn nlls_solve<S, F>(
    residual: F,
    x0: &[S],
    lower: &[S],
    upper: &[S],
    options: &NllsOptions<S>,
) -> Result<NllsResult<S>>
where
    S: Scalar,
    F: Fn(&[S]) -> Vec<S>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: lower.len().min(upper.len()),
        });
    }
    for i in 0..n {
        if !(lower[i] <= upper[i]) {
            return Err(Error::domain(format!(
                "inconsistent bounds at index {i}: [{}, {}]",
                lower[i], upper[i]
            )));
        }
    }

    let mut x = x0.to_vec();
    clip(&mut x, lower, upper);
    let start = x.clone();

    let r = residual(&x);
    if !all_finite(&r) {
        return Err(divergence("residuals non-finite at the initial guess", &x));
    }
    let m = r.len();
    let mut cost = cost_of(&r);
    let mut residuals = r;

    let mut best_x = x.clone();
    let mut best_cost = cost;

    let mut lambda = S::from_f64c(1e-3);
    let lambda_max = S::from_f64c(1e12);
    let mut iterations = 0;
    let mut converged = false;
    let mut used_fallback = false;
    let mut need_fallback = false;

    let mut jacobian = vec![S::zero(); m * n];
    // Accepted-step cost history for the plateau exit below.
    const PLATEAU_WINDOW: usize = 25;
    let mut cost_history: Vec<S> = Vec::new();
    // Consecutive accepted steps whose improvement stayed below the
    // diminishing-returns threshold.
    let mut small_decreases = 0usize;

    while iterations < options.max_iterations {
        iterations += 1;

        // Central-difference Jacobian, probe points clipped into the box.
        for j in 0..n {
            let h = options.fd_step_rel * (S::one() + x[j].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] = (x[j] + h).min(upper[j]);
            xm[j] = (x[j] - h).max(lower[j]);
            let spread = xp[j] - xm[j];
            if spread <= S::zero() {
                for i in 0..m {
                    jacobian[i * n + j] = S::zero();
                }
                continue;
            }
            let rp = residual(&xp);
            let rm = residual(&xm);
            if !all_finite(&rp) || !all_finite(&rm) {
                return Err(divergence(
                    "residuals non-finite at a finite-difference probe",
                    &best_x,
                ));
            }
            for i in 0..m {
                jacobian[i * n + j] = (rp[i] - rm[i]) / spread;
            }
        }

        // Normal equations: A = J^T J, g = J^T r.
        let mut a = vec![S::zero(); n * n];
        let mut g = vec![S::zero(); n];
        for i in 0..m {
            let row = &jacobian[i * n..(i + 1) * n];
            for j in 0..n {
                g[j] = g[j] + row[j] * residuals[i];
                for l in j..n {
                    a[j * n + l] = a[j * n + l] + row[j] * row[l];
                }
            }
        }
        for j in 0..n {
            for l in 0..j {
                a[j * n + l] = a[l * n + j];
            }
        }

        // First-order optimality on the box: gradient components pushing out
        // of an active bound do not count.
        let edge = |i: usize| options.step_tolerance * (S::one() + x[i].abs());
        let mut projected_gradient = S::zero();
        for i in 0..n {
            let gi = g[i];
            let blocked_low = x[i] - lower[i] <= edge(i) && gi > S::zero();
            let blocked_high = upper[i] - x[i] <= edge(i) && gi < S::zero();
            if !(blocked_low || blocked_high) {
                projected_gradient = projected_gradient.max(gi.abs());
            }
        }
        let gradient_scale = options.gradient_tolerance * (S::one() + cost);
        if gradient_scale.is_finite() && projected_gradient <= gradient_scale {
            converged = true;
            break;
        }

        // Inner damping loop: retry with stronger damping until a step
        // improves the cost or the damping range is exhausted.
        let mut stepped = false;
        loop {
            let delta = match solve_damped(&a, &g, lambda, n) {
                Some(delta) if all_finite(&delta) => delta,
                _ => {
                    need_fallback = true;
                    break;
                }
            };
            let mut candidate = x.clone();
            for i in 0..n {
                candidate[i] = candidate[i] + delta[i];
            }
            clip(&mut candidate, lower, upper);

            let candidate_res = residual(&candidate);
            if !all_finite(&candidate_res) {
                return Err(divergence(
                    "residuals non-finite at a trial step",
                    &best_x,
                ));
            }
            let candidate_cost = cost_of(&candidate_res);

            let improved = candidate_cost < cost
                || (candidate_cost == cost
                    && dist_sq(&candidate, &start) < dist_sq(&x, &start));
            if improved {
                let step_norm = x
                    .iter()
                    .zip(&candidate)
                    .map(|(&a, &b)| (a - b).abs())
                    .fold(S::zero(), S::max);
                let decrease = cost - candidate_cost;
                x = candidate;
                residuals = candidate_res;
                cost = candidate_cost;
                if cost < best_cost
                    || (cost == best_cost && dist_sq(&x, &start) < dist_sq(&best_x, &start))
                {
                    best_cost = cost;
                    best_x = x.clone();
                }
                lambda = (lambda / S::from_f64c(3.0)).max(S::from_f64c(1e-12));
                stepped = true;
                let x_scale = x.iter().fold(S::one(), |acc, v| acc.max(v.abs()));
                if step_norm <= options.step_tolerance * x_scale
                    && decrease <= options.cost_tolerance * (cost + S::from_f64c(1e-300))
                {
                    converged = true;
                }
                if decrease <= options.decrease_tolerance * cost {
                    small_decreases += 1;
                    if small_decreases >= 3 {
                        converged = true;
                    }
                } else {
                    small_decreases = 0;
                }
                break;
            }
            lambda = lambda * S::from_f64c(10.0);
            if lambda > lambda_max {
                break;
            }
        }
        if converged {
            break;
        }

        if !need_fallback && !stepped {
            // No damping level could improve the cost. With a near-zero
            // projected gradient that is convergence at numerical precision;
            // otherwise the Jacobian is not to be trusted.
            let stall_scale = S::from_f64c(1e-6) * (S::one() + cost);
            if stall_scale.is_finite() && projected_gradient <= stall_scale {
                converged = true;
                break;
            }
        }

        if stepped && !converged {
            // Plateau exit: steps keep being accepted but a whole window of
            // them no longer moves the cost beyond its numerical floor.
            // Ill-scaled problems (a parameter riding a bound with a huge
            // Jacobian column) otherwise cycle on noise-level improvements
            // that reset the damping forever.
            cost_history.push(cost);
            if cost_history.len() > PLATEAU_WINDOW {
                let past = cost_history[cost_history.len() - 1 - PLATEAU_WINDOW];
                let floor = options.cost_tolerance
                    * S::from_usize(PLATEAU_WINDOW).unwrap()
                    * (S::one() + cost);
                if past - cost <= floor {
                    converged = true;
                    break;
                }
            }
        }

        if need_fallback || !stepped {
            // Jacobian degeneracy or a dead end at maximal damping while the
            // gradient check still fails: hand over to the simplex search.
            let budget = 200 * (n + 1).max(4);
            let nm = nelder_mead(
                |p| {
                    let r = residual(p);
                    if all_finite(&r) {
                        Some(cost_of(&r))
                    } else {
                        None
                    }
                },
                &best_x,
                lower,
                upper,
                budget,
            );
            let nm = nm.ok_or_else(|| {
                divergence("residuals non-finite during simplex fallback", &best_x)
            })?;
            used_fallback = true;
            if nm.cost < best_cost {
                best_cost = nm.cost;
                best_x = nm.x;
            }
            converged = nm.converged;
            break;
        }
    }

    let at_bound = (0..n)
        .filter(|&i| {
            let span = upper[i] - lower[i];
            let tol = S::from_f64c(1e-7) * span.min(S::one() + lower[i].abs().max(upper[i].abs()));
            best_x[i] - lower[i] <= tol || upper[i] - best_x[i] <= tol
        })
        .collect();

    Ok(NllsResult {
        residual_norm: best_cost.max(S::zero()).sqrt(),
        x: best_x,
        iterations,
        converged,
        at_bound,
        used_fallback,
    })
}

/// Solves `(A + lambda * diag(A)) delta = -g` by Gaussian elimination with
/// partial pivoting. Zero diagonal entries are floored so free columns yield
/// zero steps. Returns `None` when the system is numerically singular.
fn solve_damped<S: Scalar>(a: &[S], g: &[S], lambda: S, n: usize) -> Option<Vec<S>> {
    let mut diag_max = S::zero();
    for j in 0..n {
        diag_max = diag_max.max(a[j * n + j].abs());
    }
    let floor = if diag_max > S::zero() {
        diag_max * S::from_f64c(1e-14)
    } else {
        S::from_f64c(1e-14)
    };

    let mut matrix = vec![S::zero(); n * n];
    let mut rhs = vec![S::zero(); n];
    for j in 0..n {
        for l in 0..n {
            matrix[j * n + l] = a[j * n + l];
        }
        let d = a[j * n + j].max(floor);
        matrix[j * n + j] = a[j * n + j] + lambda * d;
        rhs[j] = -g[j];
    }

    for col in 0..n {
        let mut pivot_row = col;
        for row in col + 1..n {
            if matrix[row * n + col].abs() > matrix[pivot_row * n + col].abs() {
                pivot_row = row;
            }
        }
        let pivot = matrix[pivot_row * n + col];
        if !pivot.is_finite() || pivot.abs() < S::from_f64c(1e-300) {
            return None;
        }
        if pivot_row != col {
            for l in 0..n {
                matrix.swap(col * n + l, pivot_row * n + l);
            }
            rhs.swap(col, pivot_row);
        }
        for row in col + 1..n {
            let factor = matrix[row * n + col] / pivot;
            if factor == S::zero() {
                continue;
            }
            for l in col..n {
                matrix[row * n + l] = matrix[row * n + l] - factor * matrix[col * n + l];
            }
            rhs[row] = rhs[row] - factor * rhs[col];
        }
    }
    let mut delta = vec![S::zero(); n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for l in row + 1..n {
            acc = acc - matrix[row * n + l] * delta[l];
        }
        delta[row] = acc / matrix[row * n + row];
    }
    Some(delta)
}

struct NmOutcome<S> {
    x: Vec<S>,
    cost: S,
    converged: bool,
}

/// Box-constrained Nelder-Mead. `cost` returns `None` on non-finite
/// residuals, which aborts the search.
fn nelder_mead<S, F>(
    cost: F,
    x0: &[S],
    lower: &[S],
    upper: &[S],
    max_evals: usize,
) -> Option<NmOutcome<S>>
where
    S: Scalar,
    F: Fn(&[S]) -> Option<S>,
{
    let n = x0.len();
    let clamp_point = |mut p: Vec<S>| {
        clip(&mut p, lower, upper);
        p
    };

    let mut simplex: Vec<(Vec<S>, S)> = Vec::with_capacity(n + 1);
    let f0 = cost(x0)?;
    simplex.push((x0.to_vec(), f0));
    for j in 0..n {
        let span = upper[j] - lower[j];
        let mut step = S::from_f64c(0.05) * (S::one() + x0[j].abs());
        if span.is_finite() && span > S::zero() {
            step = step.min(S::from_f64c(0.25) * span);
        }
        let mut p = x0.to_vec();
        p[j] = if upper[j] - p[j] >= step { p[j] + step } else { p[j] - step };
        let p = clamp_point(p);
        let f = cost(&p)?;
        simplex.push((p, f));
    }

    let mut evals = n + 1;
    let (alpha, gamma, rho, sigma) = (
        S::one(),
        S::from_f64c(2.0),
        S::from_f64c(0.5),
        S::from_f64c(0.5),
    );

    let mut converged = false;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex[n].1 - simplex[0].1;
        if spread <= S::from_f64c(1e-14) * (S::one() + simplex[0].1.abs()) {
            converged = true;
            break;
        }

        let mut centroid = vec![S::zero(); n];
        for (point, _) in &simplex[..n] {
            for j in 0..n {
                centroid[j] = centroid[j] + point[j];
            }
        }
        let inv = S::one() / S::from_usize(n).unwrap();
        for c in centroid.iter_mut() {
            *c = *c * inv;
        }

        let worst = simplex[n].clone();
        let mut reflected = vec![S::zero(); n];
        for j in 0..n {
            reflected[j] = centroid[j] + alpha * (centroid[j] - worst.0[j]);
        }
        let reflected = clamp_point(reflected);
        let f_reflected = cost(&reflected)?;
        evals += 1;

        if f_reflected < simplex[0].1 {
            let mut expanded = vec![S::zero(); n];
            for j in 0..n {
                expanded[j] = centroid[j] + gamma * (reflected[j] - centroid[j]);
            }
            let expanded = clamp_point(expanded);
            let f_expanded = cost(&expanded)?;
            evals += 1;
            simplex[n] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
            continue;
        }
        if f_reflected < simplex[n - 1].1 {
            simplex[n] = (reflected, f_reflected);
            continue;
        }
        let mut contracted = vec![S::zero(); n];
        for j in 0..n {
            contracted[j] = centroid[j] + rho * (worst.0[j] - centroid[j]);
        }
        let contracted = clamp_point(contracted);
        let f_contracted = cost(&contracted)?;
        evals += 1;
        if f_contracted < worst.1 {
            simplex[n] = (contracted, f_contracted);
            continue;
        }
        // Shrink toward the best vertex.
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for j in 0..n {
                vertex.0[j] = best[j] + sigma * (vertex.0[j] - best[j]);
            }
            vertex.1 = cost(&vertex.0)?;
            evals += 1;
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let (x, cost_value) = simplex.swap_remove(0);
    Some(NmOutcome {
        x,
        cost: cost_value,
        converged,
    })
}
