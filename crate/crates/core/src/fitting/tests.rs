use super::*;
use crate::presets;
use crate::rng;

fn base() -> DplParams<f64> {
    presets::get("base").unwrap().params()
}

const RATIOS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Synthetic dataset for a generator: one series per (name, size, bias),
/// ratios over the full validated grid, optional Gaussian noise.
fn synth(
    params: &DplParams<f64>,
    series: &[(&str, f64, f64)],
    sigma: f64,
    seed: u64,
) -> Vec<Observation<f64>> {
    synth_at(params, series, &RATIOS, sigma, seed)
}

fn synth_at(
    params: &DplParams<f64>,
    series: &[(&str, f64, f64)],
    ratios: &[f64],
    sigma: f64,
    seed: u64,
) -> Vec<Observation<f64>> {
    let mut stream = rng::derive_stream(seed, &[0xda7a]);
    let mut out = Vec::new();
    for &(name, size, bias) in series {
        for &p in ratios {
            let mut y = params.shape(p, size).unwrap() + bias;
            if sigma > 0.0 {
                y += sigma * rng::normal(&mut stream);
            }
            out.push(Observation::new(name, size, p, y).unwrap());
        }
    }
    out
}

fn standard_series() -> Vec<(&'static str, f64, f64)> {
    vec![
        ("en-fr", 10.0, 1.2),
        ("en-cs", 4.6, 1.4),
        ("en-de", 1.0, 1.7),
        ("en-ro", 0.26, 2.3),
    ]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn capacity_recovers_noiseless_generator() {
    // Pure capacity data: over-fit coefficient zeroed by construction.
    let mut params = base();
    params.b = -1.0;
    params.gamma = 0.0;
    let obs = synth(&params, &[("en-fr", 10.0, 1.2)], 0.0, 0);
    let fit = fit_capacity(&obs, &FitOptions::default()).unwrap();
    assert!(rel(fit.k, 0.07) < 1e-3, "k = {}", fit.k);
    assert!(rel(fit.alpha, 0.20) < 1e-3, "alpha = {}", fit.alpha);
    assert!((fit.bias - 1.2).abs() < 1e-3);
    assert!(!fit.flags.iter().any(FitFlag::is_hard));
}

#[test]
fn capacity_medians_stay_close_under_noise() {
    // `k` enters only through the amplitude `k^(-alpha)`, so its estimate
    // carries roughly a 1/alpha = 5x error amplification; the curve itself
    // and alpha are the well-conditioned quantities.
    let mut params = base();
    params.b = -1.0;
    params.gamma = 0.0;
    let truth_mid = (0.07f64 * 0.5).powf(-0.2) + 1.2;
    let mut ks = Vec::new();
    let mut alphas = Vec::new();
    let mut mids = Vec::new();
    for seed in 0..20 {
        let obs = synth(&params, &[("en-fr", 10.0, 1.2)], 0.005, seed);
        let fit = fit_capacity(&obs, &FitOptions::default()).unwrap();
        ks.push(fit.k);
        alphas.push(fit.alpha);
        mids.push((fit.k * 0.5).powf(-fit.alpha) + fit.bias);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (v[9] + v[10]) / 2.0
    };
    let (k_med, a_med, mid_med) = (median(&mut ks), median(&mut alphas), median(&mut mids));
    assert!(rel(k_med, 0.07) < 0.30, "median k = {k_med}");
    assert!(rel(a_med, 0.20) < 0.10, "median alpha = {a_med}");
    assert!(rel(mid_med, truth_mid) < 0.005, "median L(0.5) = {mid_med}");
}

#[test]
fn capacity_flags_constant_series_as_degenerate() {
    let obs: Vec<Observation<f64>> = RATIOS
        .iter()
        .map(|&p| Observation::new("flat", 10.0, p, 2.0).unwrap())
        .collect();
    let fit = fit_capacity(&obs, &FitOptions::default()).unwrap();
    assert!(fit
        .flags
        .iter()
        .any(|f| matches!(f, FitFlag::DegenerateSeries { series } if series == "flat")));
    assert!(fit.flags.iter().any(FitFlag::is_hard));
    assert!(fit.alpha <= 0.02, "alpha = {}", fit.alpha);
}

#[test]
fn capacity_rejects_small_or_mixed_series() {
    let opts = FitOptions::default();
    let short: Vec<Observation<f64>> = RATIOS[..3]
        .iter()
        .map(|&p| Observation::new("x", 10.0, p, 2.0 + p).unwrap())
        .collect();
    assert!(matches!(
        fit_capacity(&short, &opts),
        Err(Error::InsufficientData(_))
    ));

    let repeated: Vec<Observation<f64>> = [0.1, 0.1, 0.5, 0.5]
        .iter()
        .map(|&p| Observation::new("x", 10.0, p, 2.0 + p).unwrap())
        .collect();
    assert!(matches!(
        fit_capacity(&repeated, &opts),
        Err(Error::InsufficientData(_))
    ));

    let mut mixed = synth(&base(), &[("a", 10.0, 0.0)], 0.0, 0);
    mixed[0].data_size = 5.0;
    assert!(fit_capacity(&mixed, &opts).is_err());
}

#[test]
fn overfit_shape_recovers_composite_scale_and_minimizer() {
    let params = base();
    let obs = synth(&params, &[("en-ro", 0.26, 2.3)], 0.0, 0);
    let fit = fit_overfit_shape(&obs, (params.k, params.alpha), &FitOptions::default()).unwrap();
    let s0_true = params.overfit_coefficient(0.26) * params.q.powf(params.beta);
    assert!(rel(fit.beta, params.beta) < 1e-3, "beta = {}", fit.beta);
    assert!(rel(fit.s0, s0_true) < 1e-3, "s0 = {}", fit.s0);
    assert!((fit.bias - 2.3).abs() < 1e-4);
    assert!(!fit.flags.iter().any(FitFlag::is_hard));

    // Implied minimizer of capacity + s0 * p^beta against the closed form.
    let implied = (params.alpha * params.k.powf(-params.alpha) / (fit.beta * fit.s0))
        .powf(1.0 / (params.alpha + fit.beta));
    assert!((implied - 0.3386996359731492).abs() < 3e-3);
}

#[test]
fn overfit_shape_minimizer_stays_close_under_noise() {
    let params = base();
    let obs = synth(&params, &[("en-ro", 0.26, 2.3)], 0.01, 7);
    let fit = fit_overfit_shape(&obs, (params.k, params.alpha), &FitOptions::default()).unwrap();
    let implied = (params.alpha * params.k.powf(-params.alpha) / (fit.beta * fit.s0))
        .powf(1.0 / (params.alpha + fit.beta));
    assert!(
        (implied - 0.3386996359731492).abs() < 0.03,
        "implied minimizer = {implied}"
    );
}

#[test]
fn overfit_shape_flags_monotone_series() {
    // D = 10 under the base preset has a negative over-fit coefficient, so
    // the series decreases monotonically and s0 > 0 cannot fit it.
    let params = base();
    let obs = synth(&params, &[("en-fr", 10.0, 1.2)], 0.0, 0);
    let fit = fit_overfit_shape(&obs, (params.k, params.alpha), &FitOptions::default()).unwrap();
    assert!(fit
        .flags
        .iter()
        .any(|f| matches!(f, FitFlag::MonotoneSeries { series } if series == "en-fr")));
    assert!(fit.flags.iter().any(FitFlag::is_hard));
}

#[test]
fn data_scaling_recovers_noiseless_generator() {
    let params = base();
    let series: Vec<(f64, f64)> = [0.26, 0.52, 1.0, 2.0, 4.6]
        .iter()
        .map(|&d| {
            (
                d,
                params.overfit_coefficient(d) * params.q.powf(params.beta),
            )
        })
        .collect();
    let fit = fit_data_scaling(&series, params.beta, &FitOptions::default()).unwrap();
    assert!(rel(fit.gamma, -0.33) < 1e-2, "gamma = {}", fit.gamma);
    assert!((fit.b - -0.50).abs() < 1e-2, "b = {}", fit.b);
    assert!(rel(fit.q, 1.18) < 1e-2, "q = {}", fit.q);
    assert!(!fit.flags.iter().any(FitFlag::is_hard));
}

#[test]
fn data_scaling_flags_size_independent_scales() {
    let series: Vec<(f64, f64)> = [0.26, 1.0, 4.6].iter().map(|&d| (d, 0.8)).collect();
    let fit = fit_data_scaling(&series, 1.21, &FitOptions::default()).unwrap();
    assert!(fit.flags.contains(&FitFlag::DataSizeIndependent));
    assert!(fit.gamma.abs() <= 0.05, "gamma = {}", fit.gamma);
}

#[test]
fn data_scaling_needs_three_distinct_sizes() {
    let opts = FitOptions::default();
    let two = [(1.0, 0.5), (2.0, 0.6)];
    assert!(matches!(
        fit_data_scaling(&two, 1.21, &opts),
        Err(Error::Identifiability(_))
    ));
    let dup = [(1.0, 0.5), (1.0, 0.5), (2.0, 0.6)];
    assert!(matches!(
        fit_data_scaling(&dup, 1.21, &opts),
        Err(Error::Identifiability(_))
    ));
}

#[test]
fn full_fit_recovers_base_generator() {
    let truth = base();
    let obs = synth(&truth, &standard_series(), 0.0, 0);
    let report = fit_full(&obs, &FitOptions::default()).unwrap();
    assert!(report.converged, "flags: {:?}", report.flags);

    let p = &report.params;
    assert!(rel(p.k, truth.k) < 1e-2, "k = {}", p.k);
    assert!(rel(p.alpha, truth.alpha) < 1e-2, "alpha = {}", p.alpha);
    assert!(rel(p.q, truth.q) < 1e-2, "q = {}", p.q);
    assert!(rel(p.beta, truth.beta) < 1e-2, "beta = {}", p.beta);
    assert!(rel(p.gamma, truth.gamma) < 1e-2, "gamma = {}", p.gamma);
    assert!((p.b - truth.b).abs() < 1e-2, "b = {}", p.b);
    for (name, _, bias) in standard_series() {
        assert!(
            (p.biases[name] - bias).abs() < 1e-2,
            "bias {name} = {}",
            p.biases[name]
        );
    }
    for stat in &report.series {
        assert!(stat.r_squared.unwrap() >= 0.999, "{}: {:?}", stat.key, stat.r_squared);
    }
    assert!(goodness_of_fit(p, &obs).unwrap() >= 0.999);
}

#[test]
fn full_fit_recovers_perturbed_generators() {
    // Corners of +-50% perturbations around the defaults, all leaving the
    // lowest-resource series U-shaped inside the ratio grid.
    let generators = [
        (0.05, 0.25, 1.0, 1.5, -0.40, -0.55),
        (0.10, 0.15, 1.4, 0.9, -0.25, -0.40),
        (0.035, 0.30, 0.6, 1.8, -0.45, -0.30),
        (0.09, 0.22, 1.75, 1.21, -0.33, -0.60),
        (0.07, 0.10, 1.18, 2.0, -0.20, -0.70),
    ];
    for (k, alpha, q, beta, gamma, b) in generators {
        let truth = DplParams::new(k, alpha, q, beta, gamma, b).unwrap();
        let obs = synth(&truth, &standard_series(), 0.0, 0);
        let report = fit_full(&obs, &FitOptions::default()).unwrap();
        let p = &report.params;
        let label = format!("generator ({k}, {alpha}, {q}, {beta}, {gamma}, {b})");
        assert!(report.converged, "{label}: flags {:?}", report.flags);
        assert!(rel(p.alpha, alpha) < 1e-2, "{label}: alpha = {}", p.alpha);
        assert!(rel(p.beta, beta) < 1e-2, "{label}: beta = {}", p.beta);
        assert!(rel(p.gamma, gamma) < 1e-2, "{label}: gamma = {}", p.gamma);
        assert!(rel(p.k, k) < 1e-2, "{label}: k = {}", p.k);
        assert!(rel(p.q, q) < 1e-2, "{label}: q = {}", p.q);
        assert!((p.b - b).abs() < 1e-2, "{label}: b = {}", p.b);
        assert!(goodness_of_fit(p, &obs).unwrap() >= 0.999, "{label}");
    }
}

#[test]
fn full_fit_stays_accurate_under_noise() {
    // At sigma = 0.02 a nine-point sweep leaves a flat valley in (k, alpha,
    // per-series scale): curves with alpha anywhere in roughly [0.16, 0.45]
    // fit within the noise floor, so alpha gets only a coarse guard here.
    // beta, the curve itself (r-squared), and convergence stay tight.
    let truth = base();
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut r2s = Vec::new();
    let mut converged = 0;
    for seed in 0..20 {
        let obs = synth(&truth, &standard_series(), 0.02, seed);
        let report = fit_full(&obs, &FitOptions::default()).unwrap();
        if report.converged {
            converged += 1;
        }
        alphas.push(report.params.alpha);
        betas.push(report.params.beta);
        r2s.push(goodness_of_fit(&report.params, &obs).unwrap());
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (v[9] + v[10]) / 2.0
    };
    let alpha = median(&mut alphas);
    let beta = median(&mut betas);
    let r2 = median(&mut r2s);
    assert!(rel(alpha, truth.alpha) < 0.35, "median alpha = {alpha}");
    assert!(rel(beta, truth.beta) < 0.10, "median beta = {beta}");
    assert!(r2 >= 0.95, "median r-squared = {r2}");
    assert!(converged >= 18, "converged {converged}/20");
}

#[test]
fn full_fit_medians_recover_alpha_on_dense_sweeps() {
    // A dense sweep narrows the flat valley enough that the median over
    // seeds pins both exponents. Denser grids were checked against three
    // disjoint seed sets; 81 points is where all of them agree within a few
    // percent.
    let truth = base();
    let ratios: Vec<f64> = (0..81).map(|i| 0.1 + 0.01 * i as f64).collect();
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    for seed in 0..20 {
        let obs = synth_at(&truth, &standard_series(), &ratios, 0.02, seed);
        let report = fit_full(&obs, &FitOptions::default()).unwrap();
        assert!(report.converged, "seed {seed}: flags {:?}", report.flags);
        alphas.push(report.params.alpha);
        betas.push(report.params.beta);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (v[9] + v[10]) / 2.0
    };
    let alpha = median(&mut alphas);
    let beta = median(&mut betas);
    assert!(rel(alpha, truth.alpha) < 0.10, "median alpha = {alpha}");
    assert!(rel(beta, truth.beta) < 0.10, "median beta = {beta}");
}

#[test]
fn full_fit_reports_step_of_failure() {
    let truth = base();
    let obs = synth(
        &truth,
        &[("en-fr", 10.0, 1.2), ("en-ro", 0.26, 2.3)],
        0.0,
        0,
    );
    match fit_full(&obs, &FitOptions::default()) {
        Err(Error::FitStep { step, .. }) => assert_eq!(step, "data-scaling"),
        other => panic!("expected a data-scaling step error, got {other:?}"),
    }

    let single = synth(&truth, &[("en-fr", 10.0, 1.2)], 0.0, 0);
    match fit_full(&single, &FitOptions::default()) {
        Err(Error::FitStep { step, .. }) => assert_eq!(step, "overfit-shape"),
        other => panic!("expected an overfit-shape step error, got {other:?}"),
    }

    assert!(matches!(
        fit_full::<f64>(&[], &FitOptions::default()),
        Err(Error::EmptyInput(_))
    ));
}

#[test]
fn full_fit_keys_repeated_names_by_size() {
    let truth = base();
    let obs = synth(
        &truth,
        &[
            ("en-fr", 10.0, 1.2),
            ("shared", 4.6, 1.4),
            ("shared", 1.0, 1.7),
            ("en-ro", 0.26, 2.3),
        ],
        0.0,
        0,
    );
    let report = fit_full(&obs, &FitOptions::default()).unwrap();
    assert!(report.params.biases.contains_key("shared@4.6"));
    assert!(report.params.biases.contains_key("shared@1"));
    assert!(report.params.biases.contains_key("en-fr"));
    // The name-based lookup still finds one of the composite keys.
    assert!(report.params.bias("shared").is_some());
}

#[test]
fn bias_fit_is_exact_and_noise_symmetric() {
    let params = base();
    let obs = synth(&params, &[("en-ro", 0.26, 2.3)], 0.0, 0);
    let fitted = fit_bias(&params, &obs).unwrap();
    assert!((fitted - 2.3).abs() < 1e-12);

    // Symmetric contamination cancels in the mean exactly.
    let mut noisy = obs;
    noisy[0].eval_loss += 0.25;
    noisy[1].eval_loss -= 0.25;
    let fitted = fit_bias(&params, &noisy).unwrap();
    assert!((fitted - 2.3).abs() < 1e-12);

    assert!(matches!(
        fit_bias::<f64>(&params, &[]),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn bias_refit_is_idempotent_with_full_fit() {
    let truth = base();
    let obs = synth(&truth, &standard_series(), 0.01, 3);
    let report = fit_full(&obs, &FitOptions::default()).unwrap();
    for (name, _, _) in standard_series() {
        let series: Vec<Observation<f64>> = obs
            .iter()
            .filter(|o| o.direction == name)
            .cloned()
            .collect();
        let refit = fit_bias(&report.params, &series).unwrap();
        assert!(
            (refit - report.params.biases[name]).abs() < 1e-12,
            "{name}: {refit} vs {}",
            report.params.biases[name]
        );
    }
}

#[test]
fn r_squared_is_one_on_exact_predictions() {
    let mut params = base();
    params.biases.insert("en-ro".into(), 2.3);
    params.biases.insert("en-fr".into(), 1.2);
    let obs = synth(&params, &[("en-fr", 10.0, 1.2), ("en-ro", 0.26, 2.3)], 0.0, 0);
    assert_eq!(goodness_of_fit(&params, &obs).unwrap(), 1.0);
}

#[test]
fn r_squared_is_zero_on_mean_equivalent_split() {
    // Two ratios with equal shape values on the U curve; observations one
    // unit below and above. Predictions then equal the observed mean, so
    // SS_res == SS_tot.
    let params = base();
    let p1 = 0.2;
    let target = params.shape(p1, 0.26).unwrap();
    let (mut lo, mut hi) = (0.3386996359731492, 0.9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if params.shape(mid, 0.26).unwrap() < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p2 = 0.5 * (lo + hi);
    assert!((params.shape(p2, 0.26).unwrap() - target).abs() < 1e-12);

    let obs = vec![
        Observation::new("x", 0.26, p1, target - 1.0).unwrap(),
        Observation::new("x", 0.26, p2, target + 1.0).unwrap(),
    ];
    let r2 = goodness_of_fit(&params, &obs).unwrap();
    assert!(r2.abs() < 1e-9, "r-squared = {r2}");
}

#[test]
fn r_squared_rejects_degenerate_inputs() {
    let params = base();
    let constant = vec![
        Observation::new("x", 1.0, 0.3, 2.0).unwrap(),
        Observation::new("x", 1.0, 0.5, 2.0).unwrap(),
    ];
    assert!(matches!(
        goodness_of_fit(&params, &constant),
        Err(Error::UndefinedRSquared)
    ));
    let single = vec![Observation::new("x", 1.0, 0.3, 2.0).unwrap()];
    assert!(matches!(
        goodness_of_fit(&params, &single),
        Err(Error::InsufficientData(_))
    ));
}
