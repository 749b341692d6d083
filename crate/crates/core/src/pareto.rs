//! Pareto dominance, front extraction, and collapse detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-direction losses for one solution, plus an opaque tag (typically the
/// sampling ratios that produced it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossVector<S> {
    pub losses: Vec<S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl<S: Scalar> LossVector<S> {
    pub fn new(losses: Vec<S>) -> Self {
        LossVector { losses, tag: None }
    }

    pub fn with_tag(losses: Vec<S>, tag: impl Into<String>) -> Self {
        LossVector {
            losses,
            tag: Some(tag.into()),
        }
    }
}

/// One sweep point: a simplex ratio vector and the per-direction losses it
/// produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<S> {
    pub ratios: Vec<S>,
    pub losses: Vec<S>,
}

/// Monotonicity of a direction's loss along its own sampling ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monotonicity {
    /// Loss falls as the direction's own ratio grows.
    MonotoneImproving,
    /// Interior minimum strictly below both endpoints: the collapse shape.
    UShaped,
    /// Loss rises as the direction's own ratio grows.
    MonotoneDegrading,
    /// None of the above at the configured tolerance.
    Irregular,
}

/// Collapse analysis of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct CollapseReport<S> {
    /// Indices of sweep points dominated by some other point, ascending.
    pub dominated_indices: Vec<usize>,
    /// Per-direction classification along each direction's own-ratio axis.
    pub per_direction_monotonicity: Vec<Monotonicity>,
    /// True iff `dominated_indices` is non-empty.
    pub collapsed: bool,
    /// Tolerance in nats used for the monotonicity classification.
    pub tolerance: S,
}

/// Options for [`detect_collapse`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CollapseOptions<S> {
    /// Loss differences at or below this are treated as noise (nats).
    pub tolerance: S,
}

impl<S: Scalar> Default for CollapseOptions<S> {
    fn default() -> Self {
        CollapseOptions {
            tolerance: S::from_f64c(1e-3),
        }
    }
}

/// Whether `a` Pareto-dominates `b` (lower loss is better): no worse on every
/// direction and strictly better on at least one.
pub fn dominates<S: Scalar>(a: &LossVector<S>, b: &LossVector<S>) -> Result<bool> {
    if a.losses.len() != b.losses.len() {
        return Err(Error::DimensionMismatch {
            expected: a.losses.len(),
            got: b.losses.len(),
        });
    }
    let mut strictly_better = false;
    for (&x, &y) in a.losses.iter().zip(&b.losses) {
        if x > y {
            return Ok(false);
        }
        if x < y {
            strictly_better = true;
        }
    }
    Ok(strictly_better)
}

/// How duplicate loss vectors on the front are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DuplicatePolicy {
    /// Every copy of a non-dominated vector is returned.
    #[default]
    KeepAll,
    /// Only the lowest-index copy of each non-dominated vector is returned.
    KeepOnce,
}

/// Indices of the non-dominated points, sorted ascending.
///
/// Points are scanned in lexicographic loss order: a dominator is
/// coordinate-wise no larger and differs somewhere, so it sorts strictly
/// before anything it dominates. Each candidate is therefore compared against
/// accepted front members only.
pub fn pareto_front<S: Scalar>(
    points: &[LossVector<S>],
    policy: DuplicatePolicy,
) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("pareto front of no points".into()));
    }
    let dim = points[0].losses.len();
    for p in points {
        if p.losses.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.losses.len(),
            });
        }
        if p.losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::domain("loss vectors must be finite"));
        }
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .losses
            .iter()
            .partial_cmp(points[j].losses.iter())
            .unwrap()
            .then(i.cmp(&j))
    });

    let mut front: Vec<usize> = Vec::new();
    'candidates: for &idx in &order {
        for &kept in &front {
            if dominates(&points[kept], &points[idx])? {
                continue 'candidates;
            }
            if policy == DuplicatePolicy::KeepOnce && points[kept].losses == points[idx].losses {
                continue 'candidates;
            }
        }
        front.push(idx);
    }
    front.sort_unstable();
    Ok(front)
}

/// Classifies dominated points and per-direction monotonicity for a sweep.
///
/// Needs at least 3 points; every point must have matching ratio and loss
/// dimensions. A direction is U-shaped when the minimum over its own-ratio
/// profile is interior and sits below both endpoint losses by more than the
/// tolerance. Profiles flat within the tolerance, or with fewer than 3
/// distinct own ratios, classify as irregular. Duplicate own ratios are
/// merged by median loss.
pub fn detect_collapse<S: Scalar>(
    sweep: &[SweepPoint<S>],
    options: CollapseOptions<S>,
) -> Result<CollapseReport<S>> {
    if sweep.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "collapse detection needs >= 3 sweep points, got {}",
            sweep.len()
        )));
    }
    let dim = sweep[0].ratios.len();
    if dim < 2 {
        return Err(Error::domain("sweeps need >= 2 directions"));
    }
    for point in sweep {
        if point.ratios.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: point.ratios.len(),
            });
        }
        if point.losses.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: point.losses.len(),
            });
        }
    }

    let vectors: Vec<LossVector<S>> = sweep
        .iter()
        .map(|p| LossVector::new(p.losses.clone()))
        .collect();
    let front = pareto_front(&vectors, DuplicatePolicy::KeepAll)?;
    let dominated_indices: Vec<usize> = (0..sweep.len()).filter(|i| !front.contains(i)).collect();

    let per_direction_monotonicity = (0..dim)
        .map(|axis| classify_axis(sweep, axis, options.tolerance))
        .collect();

    Ok(CollapseReport {
        collapsed: !dominated_indices.is_empty(),
        dominated_indices,
        per_direction_monotonicity,
        tolerance: options.tolerance,
    })
}

fn classify_axis<S: Scalar>(sweep: &[SweepPoint<S>], axis: usize, tolerance: S) -> Monotonicity {
    // Profile of this direction's loss against its own ratio, duplicates
    // merged by median.
    let mut pairs: Vec<(S, S)> = sweep.iter().map(|p| (p.ratios[axis], p.losses[axis])).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut profile: Vec<(S, S)> = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let ratio = pairs[i].0;
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == ratio {
            j += 1;
        }
        let mut group: Vec<S> = pairs[i..j].iter().map(|(_, l)| *l).collect();
        group.sort_by(|a, b| a.partial_cmp(b).unwrap());
        profile.push((ratio, median_of_sorted(&group)));
        i = j;
    }
    if profile.len() < 3 {
        return Monotonicity::Irregular;
    }

    let losses: Vec<S> = profile.iter().map(|(_, l)| *l).collect();
    let first = losses[0];
    let last = *losses.last().unwrap();
    let (mut min_val, mut min_idx) = (losses[0], 0);
    let mut max_val = losses[0];
    for (idx, &value) in losses.iter().enumerate() {
        if value < min_val {
            min_val = value;
            min_idx = idx;
        }
        if value > max_val {
            max_val = value;
        }
    }

    if max_val - min_val <= tolerance {
        return Monotonicity::Irregular;
    }
    let interior = min_idx != 0 && min_idx != losses.len() - 1;
    if interior && first - min_val > tolerance && last - min_val > tolerance {
        return Monotonicity::UShaped;
    }
    let non_increasing = losses.windows(2).all(|w| w[1] - w[0] <= tolerance);
    if non_increasing && first - last > tolerance {
        return Monotonicity::MonotoneImproving;
    }
    let non_decreasing = losses.windows(2).all(|w| w[0] - w[1] <= tolerance);
    if non_decreasing && last - first > tolerance {
        return Monotonicity::MonotoneDegrading;
    }
    Monotonicity::Irregular
}

fn median_of_sorted<S: Scalar>(sorted: &[S]) -> S {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / S::from_f64c(2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpl::{self, DirectionSpec};
    use crate::presets;
    use proptest::prelude::*;

    fn lv(losses: &[f64]) -> LossVector<f64> {
        LossVector::new(losses.to_vec())
    }

    #[test]
    fn dominance_definition() {
        assert!(!dominates(&lv(&[1.0, 2.0]), &lv(&[1.0, 2.0])).unwrap());
        assert!(dominates(&lv(&[1.0, 1.9]), &lv(&[1.0, 2.0])).unwrap());
        assert!(!dominates(&lv(&[0.9, 2.1]), &lv(&[1.0, 2.0])).unwrap());
        assert!(dominates(&lv(&[0.9, 1.9]), &lv(&[1.0, 2.0])).unwrap());
        assert!(dominates(&lv(&[1.0]), &lv(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn single_point_is_its_own_front() {
        let front = pareto_front(&[lv(&[1.0, 2.0])], DuplicatePolicy::KeepAll).unwrap();
        assert_eq!(front, vec![0]);
        assert!(pareto_front::<f64>(&[], DuplicatePolicy::KeepAll).is_err());
    }

    #[test]
    fn decreasing_curve_is_an_antichain() {
        let points: Vec<LossVector<f64>> = (0..10)
            .map(|i| lv(&[i as f64, 10.0 - i as f64]))
            .collect();
        let front = pareto_front(&points, DuplicatePolicy::KeepAll).unwrap();
        assert_eq!(front, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn duplicate_policy_controls_copies() {
        let points = vec![lv(&[1.0, 2.0]), lv(&[1.0, 2.0]), lv(&[2.0, 3.0])];
        let all = pareto_front(&points, DuplicatePolicy::KeepAll).unwrap();
        assert_eq!(all, vec![0, 1]);
        let once = pareto_front(&points, DuplicatePolicy::KeepOnce).unwrap();
        assert_eq!(once, vec![0]);
    }

    fn brute_force_front(points: &[LossVector<f64>]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| {
                (0..points.len()).all(|j| !dominates(&points[j], &points[i]).unwrap())
            })
            .collect()
    }

    #[test]
    fn front_matches_brute_force_on_random_instances() {
        use rand::Rng;
        let mut rng = crate::rng::derive_stream(2024, &[7]);
        for case in 0..60 {
            let n = 1 + rng.gen_range(0..120);
            let k = 2 + rng.gen_range(0..4);
            // Coarse values force plenty of ties and duplicates.
            let points: Vec<LossVector<f64>> = (0..n)
                .map(|_| {
                    lv(&(0..k)
                        .map(|_| rng.gen_range(0..6) as f64)
                        .collect::<Vec<_>>())
                })
                .collect();
            let fast = pareto_front(&points, DuplicatePolicy::KeepAll).unwrap();
            let brute = brute_force_front(&points);
            assert_eq!(fast, brute, "case {case}");
        }
    }

    #[test]
    fn dominance_axioms_on_sampled_triples() {
        use rand::Rng;
        let mut rng = crate::rng::derive_stream(99, &[1]);
        for _ in 0..500 {
            let k = 2 + rng.gen_range(0..3);
            let sample = |rng: &mut rand_chacha::ChaCha8Rng| {
                lv(&(0..k).map(|_| rng.gen_range(0..4) as f64).collect::<Vec<_>>())
            };
            let (a, b, c) = (sample(&mut rng), sample(&mut rng), sample(&mut rng));
            assert!(!dominates(&a, &a).unwrap());
            if dominates(&a, &b).unwrap() {
                assert!(!dominates(&b, &a).unwrap());
                if dominates(&b, &c).unwrap() {
                    assert!(dominates(&a, &c).unwrap());
                }
            }
        }
    }

    fn predicted_sweep(d_low: f64) -> Vec<SweepPoint<f64>> {
        let params = presets::get("base").unwrap().params::<f64>();
        let hi = DirectionSpec::new("hi", 10.0).unwrap();
        let lo = DirectionSpec::new("lo", d_low).unwrap();
        (1..=9)
            .map(|i| {
                let p_lo = i as f64 / 10.0;
                let p_hi = 1.0 - p_lo;
                SweepPoint {
                    ratios: vec![p_hi, p_lo],
                    losses: vec![
                        dpl::eval_dpl(&params, p_hi, &hi).unwrap().loss,
                        dpl::eval_dpl(&params, p_lo, &lo).unwrap().loss,
                    ],
                }
            })
            .collect()
    }

    #[test]
    fn high_high_sweep_does_not_collapse() {
        let params = presets::get("base").unwrap().params::<f64>();
        let a = DirectionSpec::new("a", 10.0).unwrap();
        let b = DirectionSpec::new("b", 10.0).unwrap();
        let sweep: Vec<SweepPoint<f64>> = (1..=9)
            .map(|i| {
                let p = i as f64 / 10.0;
                SweepPoint {
                    ratios: vec![p, 1.0 - p],
                    losses: vec![
                        dpl::eval_dpl(&params, p, &a).unwrap().loss,
                        dpl::eval_dpl(&params, 1.0 - p, &b).unwrap().loss,
                    ],
                }
            })
            .collect();
        let report = detect_collapse(&sweep, CollapseOptions::default()).unwrap();
        assert!(!report.collapsed);
        assert!(report.dominated_indices.is_empty());
        assert_eq!(
            report.per_direction_monotonicity,
            vec![Monotonicity::MonotoneImproving, Monotonicity::MonotoneImproving]
        );
    }

    #[test]
    fn high_low_sweep_collapses_with_u_shape_at_the_critical_point() {
        let sweep = predicted_sweep(0.26);
        let report = detect_collapse(&sweep, CollapseOptions::default()).unwrap();
        assert!(report.collapsed);
        assert_eq!(report.per_direction_monotonicity[0], Monotonicity::MonotoneImproving);
        assert_eq!(report.per_direction_monotonicity[1], Monotonicity::UShaped);
        // The low direction's minimum sits at own-ratio 0.3, nearest the
        // critical point 0.339; every point with a larger own ratio than 0.4
        // is dominated.
        let min_idx = sweep
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.losses[1].partial_cmp(&b.losses[1]).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        assert_eq!(sweep[min_idx].ratios[1], 0.3);
        for idx in &report.dominated_indices {
            assert!(sweep[*idx].ratios[1] > 0.3);
        }
    }

    #[test]
    fn constant_losses_classify_irregular_without_collapse() {
        let sweep: Vec<SweepPoint<f64>> = (1..=5)
            .map(|i| SweepPoint {
                ratios: vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0],
                losses: vec![2.0, 3.0],
            })
            .collect();
        let report = detect_collapse(&sweep, CollapseOptions::default()).unwrap();
        assert!(!report.collapsed);
        assert_eq!(
            report.per_direction_monotonicity,
            vec![Monotonicity::Irregular, Monotonicity::Irregular]
        );
    }

    #[test]
    fn collapse_needs_three_points() {
        let sweep = vec![
            SweepPoint { ratios: vec![0.5, 0.5], losses: vec![1.0, 2.0] },
            SweepPoint { ratios: vec![0.4, 0.6], losses: vec![1.1, 1.9] },
        ];
        assert!(detect_collapse(&sweep, CollapseOptions::<f64>::default()).is_err());
    }

    #[test]
    fn collapse_matches_critical_point_prediction() {
        // DPL-generated sweeps collapse exactly when some direction has a
        // positive over-fit coefficient with its critical point inside the
        // swept range.
        let params = presets::get("base").unwrap().params::<f64>();
        for d_low in [0.26, 2.0, 8.5, 10.0] {
            let sweep = predicted_sweep(d_low);
            let report = detect_collapse(&sweep, CollapseOptions::default()).unwrap();
            let lo = DirectionSpec::new("lo", d_low).unwrap();
            let expect_collapse = match dpl::critical_point(&params, &lo) {
                dpl::CriticalPoint::Interior(p) => p < 0.9,
                _ => false,
            };
            assert_eq!(report.collapsed, expect_collapse, "D={d_low}");
        }
    }

    #[test]
    fn degrading_axis_is_classified() {
        let sweep: Vec<SweepPoint<f64>> = (1..=5)
            .map(|i| {
                let p = i as f64 / 10.0;
                SweepPoint {
                    ratios: vec![p, 1.0 - p],
                    losses: vec![2.0 + p, 3.0],
                }
            })
            .collect();
        let report = detect_collapse(&sweep, CollapseOptions::default()).unwrap();
        assert_eq!(report.per_direction_monotonicity[0], Monotonicity::MonotoneDegrading);
    }

    proptest! {
        #[test]
        fn front_never_contains_dominated_points(
            raw in proptest::collection::vec(
                proptest::collection::vec(0.0f64..10.0, 3), 1..40)
        ) {
            let points: Vec<LossVector<f64>> =
                raw.iter().map(|l| LossVector::new(l.clone())).collect();
            let front = pareto_front(&points, DuplicatePolicy::KeepAll).unwrap();
            prop_assert_eq!(front.clone(), brute_force_front(&points));
            for &i in &front {
                for j in 0..points.len() {
                    prop_assert!(!dominates(&points[j], &points[i]).unwrap());
                }
            }
        }
    }
}
