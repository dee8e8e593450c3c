use difflik::benchmarks::{conditional_moments, exact_log_density, BenchmarkKind};
use difflik::expansion::{build_expansion, ExpansionContext, ModelSpec, TransitionApproximation};
use gauss_quad::GaussHermite;

/// `∫ q_k φ_Σ dy` by a tensor Gauss-Hermite rule.
fn integrate_term(kind: BenchmarkKind, k: usize, nodes: usize) -> f64 {
    let th = kind.reference_theta();
    let x0 = kind.default_x0(&th).unwrap();
    let ctx = ExpansionContext::new(kind.model(), &th, &x0).unwrap();
    let exp = build_expansion(&ctx, k).unwrap();
    let q = &exp.terms()[k].q;
    let cov = nalgebra::DMatrix::from_fn(kind.dim(), kind.dim(), |i, j| ctx.covariance()[i][j]);
    let l = cov.cholesky().unwrap().l();
    let rule = GaussHermite::new(nodes).unwrap();
    let pts = rule.as_node_weight_pairs();
    let norm = std::f64::consts::PI.powf(kind.dim() as f64 / 2.0);
    match kind.dim() {
        1 => pts.iter().map(|&(t, w)| w * q.eval(&[l[(0, 0)] * t * 2f64.sqrt()])).sum::<f64>() / norm,
        _ => {
            let mut acc = 0.0;
            for &(a, wa) in pts {
                for &(b, wb) in pts {
                    let z = nalgebra::DVector::from_column_slice(&[a, b]) * 2f64.sqrt();
                    let y = &l * z;
                    acc += wa * wb * q.eval(y.as_slice());
                }
            }
            acc / norm
        }
    }
}

#[test]
fn correction_terms_carry_no_mass() {
    for kind in BenchmarkKind::ALL {
        assert!((integrate_term(kind, 0, 32) - 1.0).abs() < 1e-12);
        for k in 1..=4 {
            let v = integrate_term(kind, k, 32);
            assert!(v.abs() < 1e-9, "{kind} k={k}: {v}");
        }
    }
}

#[test]
fn log_form_error_shrinks_like_the_series_tail() {
    // the gap between exp(l^(J)) and p^(J) is O(Δ^{(J+1)/2})
    for kind in [BenchmarkKind::Mrou, BenchmarkKind::Sqr] {
        let th = kind.reference_theta();
        let x0 = kind.default_x0(&th).unwrap();
        for j in 1..=4 {
            let a = TransitionApproximation::new(kind.model(), j, false).unwrap();
            let gap = |d: f64| {
                let (mean, sd) = conditional_moments(kind, &th, d, &x0).unwrap();
                [-1.0, -0.5, 0.0, 0.5, 1.0]
                    .iter()
                    .map(|s| {
                        let x = [mean[0] + s * sd[0]];
                        let p = a.density(&th, d, &x0, &x).unwrap();
                        let l = a.log_density(&th, d, &x0, &x).unwrap();
                        (l.exp() - p).abs() / p
                    })
                    .fold(0.0, f64::max)
            };
            let ratio = gap(1.0 / 52.0) / gap(1.0 / 252.0);
            let predicted = (252.0f64 / 52.0).powf(0.5 * (j + 1) as f64);
            assert!(ratio > 0.5 * predicted, "{kind} J={j}: ratio {ratio}, predicted {predicted}");
        }
    }
}

#[test]
fn log_form_matches_density_near_mode_at_daily_sampling() {
    let d = 1.0 / 252.0;
    for kind in [BenchmarkKind::Mrou, BenchmarkKind::Sqr] {
        let th = kind.reference_theta();
        let x0 = kind.default_x0(&th).unwrap();
        let (mean, sd) = conditional_moments(kind, &th, d, &x0).unwrap();
        let a = TransitionApproximation::new(kind.model(), 4, false).unwrap();
        for s in [-1.0, 0.0, 1.0] {
            let x = [mean[0] + s * sd[0]];
            let p = a.density(&th, d, &x0, &x).unwrap();
            let l = a.log_density(&th, d, &x0, &x).unwrap();
            assert!((l.exp() - p).abs() / p <= 1e-6, "{kind} at {s} sd");
        }
    }
}

#[test]
fn log_density_is_invariant_under_relabelling() {
    // DMROU with coordinates swapped: upper-triangular reversion
    let swapped = ModelSpec::from_toml_str(
        r#"
name = "dmrou_swapped"
dimension = 2
parameters = ["kappa11", "kappa21", "kappa22", "alpha1", "alpha2"]
positive = ["kappa11", "kappa22"]

[drift]
mu_1 = "kappa21*(alpha1 - x2) + kappa22*(alpha2 - x1)"
mu_2 = "kappa11*(alpha1 - x2)"

[dispersion]
sigma_1_1 = "1"
sigma_1_2 = "0"
sigma_2_1 = "0"
sigma_2_2 = "1"

[state_space]
x1 = [-inf, inf]
x2 = [-inf, inf]
"#,
        "swapped",
    )
    .unwrap();
    let th = BenchmarkKind::Dmrou.reference_theta();
    let d = 1.0 / 52.0;
    for j in [2, 4, 6] {
        let a = TransitionApproximation::new(BenchmarkKind::Dmrou.model(), j, false).unwrap();
        let b = TransitionApproximation::new(&swapped, j, false).unwrap();
        for (x0, x) in [([0.3, 0.1], [0.25, 0.05]), ([-0.1, 0.2], [0.0, 0.0])] {
            let la = a.log_density(&th, d, &x0, &x).unwrap();
            let lb = b.log_density(&th, d, &[x0[1], x0[0]], &[x[1], x[0]]).unwrap();
            assert!((la - lb).abs() < 1e-12, "J={j}: {la} vs {lb}");
        }
    }
}

#[test]
fn log_density_is_finite_on_a_parameter_grid() {
    for kind in BenchmarkKind::ALL {
        let th = kind.reference_theta();
        let x0 = kind.default_x0(&th).unwrap();
        let d = 1.0 / 52.0;
        let (mean, sd) = conditional_moments(kind, &th, d, &x0).unwrap();
        let x: Vec<f64> = mean.iter().zip(&sd).map(|(m, s)| m + 2.0 * s).collect();
        for j in [0, 3, 6] {
            let a = TransitionApproximation::new(kind.model(), j, false).unwrap();
            for scale in [0.9, 0.95, 1.0, 1.05, 1.1] {
                let t: Vec<f64> = th.iter().map(|v| v * scale).collect();
                if a.check_theta(&t).is_err() {
                    continue;
                }
                let l = a.log_density(&t, d, &x0, &x).unwrap();
                assert!(l.is_finite(), "{kind} J={j} scale={scale}");
            }
        }
    }
}

#[test]
fn high_order_expansion_tracks_the_exact_density() {
    let kind = BenchmarkKind::Sqr;
    let th = kind.reference_theta();
    let d = 1.0 / 52.0;
    let a = TransitionApproximation::new(kind.model(), 6, true).unwrap();
    for x in [0.07, 0.08, 0.09] {
        let exact = exact_log_density(kind, &th, d, &[0.08], &[x]).unwrap();
        let approx = a.log_density(&th, d, &[0.08], &[x]).unwrap();
        assert!((exact - approx).abs() < 1e-4, "x={x}: {exact} vs {approx}");
    }
}
