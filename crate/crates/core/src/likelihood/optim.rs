//! Derivative-free simplex minimisation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Stop when every vertex is within `xtol` of the best one (max norm)...
    pub xtol: f64,
    /// ...and their objective values are within `ftol`.
    pub ftol: f64,
    pub max_iter: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            xtol: 1e-8,
            ftol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("objective is not finite at the starting point")]
    InfeasibleStart,
    #[error("degenerate simplex: {0}")]
    DegenerateSimplex(String),
}

/// Rebuilds allowed before a flat simplex counts as a failure.
const MAX_REBUILDS: usize = 5;

/// `|det E| / Π |e_i|` for the edge matrix from the best vertex; zero for
/// a flat simplex, one for a right-angled one.
fn normalized_volume(simplex: &[Vec<f64>]) -> f64 {
    // each coordinate is rescaled by its spread first, so a simplex that is
    // merely long along one axis does not read as flat
    let n = simplex.len() - 1;
    let mut e = nalgebra::DMatrix::zeros(n, n);
    for j in 0..n {
        let (lo, hi) = simplex
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[j]), hi.max(v[j])));
        let r = hi - lo;
        if r == 0.0 {
            return 0.0;
        }
        for i in 0..n {
            e[(i, j)] = (simplex[i + 1][j] - simplex[0][j]) / r;
        }
    }
    let mut norms = 1.0;
    for i in 0..n {
        norms *= e.row(i).norm();
    }
    if norms == 0.0 {
        return 0.0;
    }
    e.determinant().abs() / norms
}

/// Minimises `f` from `x0`, with initial edge lengths `step` per
/// coordinate. Non-finite values are treated as `+inf`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    opts: &NelderMeadOptions,
) -> Result<Minimum, OptimError> {
    let n = x0.len();
    if n == 0 {
        return Err(OptimError::DegenerateSimplex("no free parameters".into()));
    }
    if step.iter().any(|s| !(s.abs() > 0.0 && s.is_finite())) {
        return Err(OptimError::DegenerateSimplex("initial steps must be nonzero".into()));
    }
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let f0 = eval(x0, &mut evals);
    if !f0.is_finite() {
        return Err(OptimError::InfeasibleStart);
    }
    let build = |center: &[f64], steps: &[f64]| -> Vec<Vec<f64>> {
        let mut s = vec![center.to_vec()];
        for i in 0..n {
            let mut v = center.to_vec();
            v[i] += steps[i];
            s.push(v);
        }
        s
    };
    let mut simplex = build(x0, step);
    let mut values = vec![f0];
    for v in &simplex[1..] {
        values.push(eval(v, &mut evals));
    }
    let mut rebuilds = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        // stable sort keeps ties in insertion order, for determinism
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread_x = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread_f = values[1..]
            .iter()
            .map(|v| (v - values[0]).abs())
            .fold(0.0, f64::max);
        if spread_x <= opts.xtol && spread_f <= opts.ftol {
            converged = true;
            break;
        }
        if n > 1 && spread_x > opts.xtol && normalized_volume(&simplex) < 1e-12 {
            rebuilds += 1;
            if rebuilds > MAX_REBUILDS {
                return Err(OptimError::DegenerateSimplex(format!(
                    "simplex collapsed {MAX_REBUILDS} times without converging"
                )));
            }
            let steps: Vec<f64> = (0..n).map(|i| spread_x.max(step[i].abs() * 1e-3)).collect();
            let best = simplex[0].clone();
            simplex = build(&best, &steps);
            values.truncate(1);
            for v in &simplex[1..] {
                values.push(eval(v, &mut evals));
            }
            continue;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink towards the best vertex
        for i in 1..=n {
            let v: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, x)| b + 0.5 * (x - b))
                .collect();
            values[i] = eval(&v, &mut evals);
            simplex[i] = v;
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("nonempty simplex");
    Ok(Minimum {
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        evaluations: evals,
        converged,
    })
}
