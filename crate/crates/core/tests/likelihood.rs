use difflik::benchmarks::{exact_fit, exact_loglik, simulate, BenchmarkKind};
use difflik::likelihood::{
    approx_loglik, fit, FitOptions, LikelihoodError, LoglikOptions, ObservationSeries, ParamBox,
};

fn mrou_series(delta: f64, n: usize, seed: u64) -> ObservationSeries {
    let k = BenchmarkKind::Mrou;
    simulate(k, &k.reference_theta(), delta, n, &[0.06], seed).unwrap()
}

#[test]
fn order_six_loglik_matches_exact_per_observation() {
    let k = BenchmarkKind::Mrou;
    let th = k.reference_theta();
    let s = mrou_series(1.0 / 52.0, 1000, 5);
    let approx = approx_loglik(k.model(), &th, &s, 6, &LoglikOptions::default()).unwrap();
    let exact = exact_loglik(k, &th, &s).unwrap();
    assert!((approx - exact).abs() / 1000.0 <= 1e-4, "{approx} vs {exact}");
}

#[test]
fn leading_order_fit_is_the_increment_variance() {
    // order 0 is N(x0, σ²Δ): σ̂² = Σ(Δx)²/(nΔ), drift parameters are flat
    let d = 1.0 / 52.0;
    let s = mrou_series(d, 1000, 9);
    let xs: Vec<f64> = s.states().iter().map(|v| v[0]).collect();
    let n = (xs.len() - 1) as f64;
    let ss: f64 = xs.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    let sigma = (ss / (n * d)).sqrt();
    let best = -0.5 * n * ((2.0 * std::f64::consts::PI * sigma * sigma * d).ln() + 1.0);

    let k = BenchmarkKind::Mrou;
    let opts = FitOptions {
        stderr: false,
        ..FitOptions::default()
    };
    let r = fit(k.model(), &s, 0, &[0.4, 0.05, 0.04], &ParamBox::default_for(k.model()), &opts).unwrap();
    assert!((r.theta[2] - sigma).abs() <= 1e-6 * sigma, "{} vs {sigma}", r.theta[2]);
    assert!((r.loglik - best).abs() <= 1e-6, "{} vs {best}", r.loglik);
}

#[test]
fn fit_is_bit_deterministic() {
    let k = BenchmarkKind::Sqr;
    let s = simulate(k, &k.reference_theta(), 1.0 / 52.0, 300, &[0.06], 2).unwrap();
    let opts = FitOptions {
        lamperti: true,
        ..FitOptions::default()
    };
    let b = ParamBox::default_for(k.model());
    let a = fit(k.model(), &s, 3, &[0.4, 0.05, 0.1], &b, &opts).unwrap();
    let c = fit(k.model(), &s, 3, &[0.4, 0.05, 0.1], &b, &opts).unwrap();
    assert_eq!(a, c);
    assert_eq!(a.theta.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), c.theta.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn thread_count_does_not_change_the_likelihood() {
    let k = BenchmarkKind::Mrou;
    let s = mrou_series(1.0 / 12.0, 2000, 4);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| approx_loglik(k.model(), &k.reference_theta(), &s, 4, &LoglikOptions::default()).unwrap())
    };
    assert_eq!(run(1).to_bits(), run(3).to_bits());
}

#[test]
fn start_at_the_optimum_stays_there() {
    let k = BenchmarkKind::Mrou;
    let s = mrou_series(1.0 / 52.0, 500, 12);
    let b = ParamBox::default_for(k.model());
    let first = fit(k.model(), &s, 4, &k.reference_theta(), &b, &FitOptions::default()).unwrap();
    let again = fit(k.model(), &s, 4, &first.theta, &b, &FitOptions::default()).unwrap();
    for (a, c) in first.theta.iter().zip(&again.theta) {
        assert!((a - c).abs() <= 1e-6 * a.abs(), "{a} vs {c}");
    }
    assert!(again.loglik >= first.loglik - 1e-9);
}

#[test]
fn exact_and_high_order_estimates_agree() {
    let k = BenchmarkKind::Mrou;
    let s = mrou_series(1.0 / 52.0, 1000, 21);
    let opts = FitOptions::default();
    let exact = exact_fit(k, &s, &k.reference_theta(), &opts).unwrap();
    let approx = fit(k.model(), &s, 6, &exact.theta, &ParamBox::default_for(k.model()), &opts).unwrap();
    for (a, e) in approx.theta.iter().zip(&exact.theta) {
        assert!((a - e).abs() < 1e-3, "{a} vs {e}");
    }
    let se = approx.stderr.expect("standard errors");
    assert!(se.iter().all(|v| v.is_finite() && *v > 0.0));
}

#[test]
fn feller_violating_start_is_refused() {
    let k = BenchmarkKind::Sqr;
    let s = simulate(k, &k.reference_theta(), 1.0 / 52.0, 50, &[0.06], 2).unwrap();
    let err = fit(k.model(), &s, 2, &[0.5, 0.06, 0.5], &ParamBox::default_for(k.model()), &FitOptions::default())
        .unwrap_err();
    assert!(matches!(err, LikelihoodError::InvalidStart(_)), "{err}");
}

#[test]
fn iteration_cap_reports_not_converged() {
    let k = BenchmarkKind::Mrou;
    let s = mrou_series(1.0 / 52.0, 200, 3);
    let mut opts = FitOptions::default();
    opts.nelder_mead.max_iter = 5;
    match fit(k.model(), &s, 2, &[0.4, 0.05, 0.04], &ParamBox::default_for(k.model()), &opts) {
        Err(LikelihoodError::NotConverged { report }) => {
            assert!(!report.converged);
            assert_eq!(report.iterations, 5);
        }
        other => panic!("expected NotConverged, got {other:?}"),
    }
}

#[test]
fn box_bounds_are_respected() {
    let k = BenchmarkKind::Mrou;
    let s = mrou_series(1.0 / 52.0, 500, 8);
    let b = ParamBox::new(vec![0.0, 0.0, 0.0], vec![0.3, 1.0, 1.0]).unwrap();
    // unconstrained κ̂ is well above 0.3, so the fit pins to the bound
    let r = fit(k.model(), &s, 2, &[0.2, 0.06, 0.03], &b, &FitOptions::default()).unwrap();
    assert!(b.contains(&r.theta), "{:?}", r.theta);
    assert!(r.theta[0] > 0.3 - 1e-6, "{:?}", r.theta);
}
