//! Density error grids and the Monte Carlo estimation protocol.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::exact::{conditional_moments, PreparedExact};
use super::simulate::{rng_for, simulate_stream, stationary_draw};
use super::{BenchmarkError, BenchmarkKind};
use crate::expansion::TransitionApproximation;
use crate::likelihood::{
    asymptotic_stddev, finish, fisher_information, loglik, maximize, sum_transitions, EstimateReport, FitOptions,
    LikelihoodError, ObservationSeries, ParamBox,
};

/// Points per dimension of a density grid.
pub const GRID_POINTS: usize = 201;
/// Half-width of a density grid in conditional standard deviations.
pub const GRID_HALF_WIDTH: f64 = 4.0;

/// Approximation errors on a grid around the conditional mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorGrid {
    pub kind: String,
    pub delta: f64,
    pub order: usize,
    pub lamperti: bool,
    pub x0: Vec<f64>,
    /// Grid coordinates per dimension; points are the row-major product.
    pub axes: Vec<Vec<f64>>,
    pub exact: Vec<f64>,
    pub approx: Vec<f64>,
    pub max_abs_error: f64,
}

impl ErrorGrid {
    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let m = self.axes.len();
        let n = self.axes[0].len();
        (0..n.pow(m as u32)).map(move |mut idx| {
            let mut p = vec![0.0; m];
            for d in (0..m).rev() {
                p[d] = self.axes[d][idx % n];
                idx /= n;
            }
            p
        })
    }
}

fn grid_axes(kind: BenchmarkKind, theta: &[f64], delta: f64, x0: &[f64]) -> Result<Vec<Vec<f64>>, BenchmarkError> {
    let (mean, sd) = conditional_moments(kind, theta, delta, x0)?;
    Ok(mean
        .iter()
        .zip(&sd)
        .map(|(&m, &s)| {
            let mut lo = m - GRID_HALF_WIDTH * s;
            if kind == BenchmarkKind::Sqr {
                lo = lo.max(1e-3 * m);
            }
            let hi = m + GRID_HALF_WIDTH * s;
            (0..GRID_POINTS)
                .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
                .collect()
        })
        .collect())
}

/// `p^(J) - p` on the grid for every `(Δ, J)`, in that nesting order.
pub fn error_experiment(
    kind: BenchmarkKind,
    theta: &[f64],
    x0: &[f64],
    deltas: &[f64],
    orders: &[usize],
    lamperti: bool,
) -> Result<Vec<ErrorGrid>, BenchmarkError> {
    kind.check_theta(theta)?;
    let mut out = Vec::new();
    for &delta in deltas {
        let axes = grid_axes(kind, theta, delta, x0)?;
        let exact_law = PreparedExact::new(kind, theta, delta)?;
        let mut grid = ErrorGrid {
            kind: kind.name().into(),
            delta,
            order: 0,
            lamperti,
            x0: x0.to_vec(),
            axes,
            exact: Vec::new(),
            approx: Vec::new(),
            max_abs_error: 0.0,
        };
        let points: Vec<Vec<f64>> = grid.points().collect();
        grid.exact = points.par_iter().map(|x| exact_law.log_density(x0, x).exp()).collect();
        for &order in orders {
            let approx = TransitionApproximation::new(kind.model(), order, lamperti)?;
            approx.check_theta(theta)?;
            let values: Result<Vec<f64>, _> = points
                .par_iter()
                .map(|x| approx.density(theta, delta, x0, x))
                .collect();
            let mut g = grid.clone();
            g.order = order;
            g.approx = values?;
            g.max_abs_error = g
                .approx
                .iter()
                .zip(&g.exact)
                .map(|(a, e)| (a - e).abs())
                .fold(0.0, f64::max);
            out.push(g);
        }
    }
    Ok(out)
}

/// `delta,order,lamperti,max_abs_error` rows.
pub fn write_error_summary(grids: &[ErrorGrid], writer: impl Write) -> Result<(), BenchmarkError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| BenchmarkError::Io(e.to_string());
    w.write_record(["kind", "delta", "order", "lamperti", "max_abs_error"]).map_err(io)?;
    for g in grids {
        w.write_record([
            g.kind.clone(),
            format!("{:?}", g.delta),
            g.order.to_string(),
            g.lamperti.to_string(),
            format!("{:?}", g.max_abs_error),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| BenchmarkError::Io(e.to_string()))
}

/// Point-by-point `x1..xm,exact,approx,error` rows of one grid.
pub fn write_grid(grid: &ErrorGrid, writer: impl Write) -> Result<(), BenchmarkError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| BenchmarkError::Io(e.to_string());
    let mut header: Vec<String> = (1..=grid.axes.len()).map(|i| format!("x{i}")).collect();
    header.extend(["exact", "approx", "error"].map(String::from));
    w.write_record(&header).map_err(io)?;
    for ((p, e), a) in grid.points().zip(&grid.exact).zip(&grid.approx) {
        let mut rec: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
        rec.extend([format!("{e:?}"), format!("{a:?}"), format!("{:?}", a - e)]);
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| BenchmarkError::Io(e.to_string()))
}

/// Exact log-likelihood of a series.
pub fn exact_loglik(kind: BenchmarkKind, theta: &[f64], series: &ObservationSeries) -> Result<f64, LikelihoodError> {
    series.check_model(kind.model())?;
    let law = PreparedExact::new(kind, theta, series.delta()).map_err(|e| LikelihoodError::Data(e.to_string()))?;
    sum_transitions(series, |x0, x| Ok(law.log_density(x0, x)))
}

/// Exact MLE by the same simplex search used for the approximations.
pub fn exact_fit(
    kind: BenchmarkKind,
    series: &ObservationSeries,
    theta0: &[f64],
    opts: &FitOptions,
) -> Result<EstimateReport, LikelihoodError> {
    let model = kind.model();
    series.check_model(model)?;
    let bounds = ParamBox::default_for(model);
    let ll = |theta: &[f64]| exact_loglik(kind, theta, series);
    let best = maximize(model, &ll, theta0, &bounds, opts)?;
    finish(EstimateReport::new(model, None, false, best, series))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MleOptions {
    pub replications: usize,
    /// Transitions per path.
    pub n: usize,
    pub delta: f64,
    pub orders: Vec<usize>,
    pub seed: u64,
    pub lamperti: bool,
    pub fit: FitOptions,
}

impl MleOptions {
    /// Scaled protocol: 500 paths of 1000 transitions.
    pub fn scaled(delta: f64, orders: Vec<usize>, seed: u64) -> Self {
        MleOptions {
            replications: 500,
            n: 1000,
            delta,
            orders,
            seed,
            lamperti: false,
            fit: FitOptions {
                stderr: false,
                ..FitOptions::default()
            },
        }
    }
}

/// Estimates from one simulated path; `None` marks a failed fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MleReplication {
    pub index: usize,
    pub x0: Vec<f64>,
    pub exact: Option<Vec<f64>>,
    pub approx: Vec<Option<Vec<f64>>>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl ParamSummary {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return ParamSummary {
                mean: f64::NAN,
                sd: f64::NAN,
                count: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        ParamSummary {
            mean,
            sd: var.sqrt(),
            count: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MleSummary {
    pub kind: String,
    pub params: Vec<String>,
    pub theta_true: Vec<f64>,
    pub options: MleOptions,
    /// `θ̂ - θ` per parameter.
    pub exact: Vec<ParamSummary>,
    /// Per order, `θ̂^(J) - θ̂` per parameter.
    pub approx: Vec<Vec<ParamSummary>>,
    /// `sqrt(diag(i(θ)^{-1}) / n)` where available.
    pub asymptotic_sd: Option<Vec<f64>>,
    pub exact_failures: usize,
    pub approx_failures: Vec<usize>,
    pub replications: Vec<MleReplication>,
}

fn replicate(
    kind: BenchmarkKind,
    theta: &[f64],
    opts: &MleOptions,
    approxs: &[TransitionApproximation],
    index: usize,
) -> Result<MleReplication, BenchmarkError> {
    let mut rng = rng_for(opts.seed, index as u64);
    let x0 = stationary_draw(kind, theta, &mut rng)?;
    let series = simulate_stream(kind, theta, opts.delta, opts.n, &x0, &mut rng)?;
    let mut rep = MleReplication {
        index,
        x0,
        exact: None,
        approx: vec![None; approxs.len()],
        failures: Vec::new(),
    };
    let exact = match exact_fit(kind, &series, theta, &opts.fit) {
        Ok(r) => r.theta,
        Err(e) => {
            rep.failures.push(format!("exact: {e}"));
            return Ok(rep);
        }
    };
    let bounds = ParamBox::default_for(kind.model());
    for (slot, approx) in rep.approx.iter_mut().zip(approxs) {
        let ll = |t: &[f64]| loglik(approx, t, &series);
        let r = maximize(kind.model(), &ll, &exact, &bounds, &opts.fit)
            .and_then(|best| finish(EstimateReport::new(kind.model(), Some(approx.order()), opts.lamperti, best, &series)));
        match r {
            Ok(r) => *slot = Some(r.theta),
            Err(e) => rep.failures.push(format!("order {}: {e}", approx.order())),
        }
    }
    rep.exact = Some(exact);
    Ok(rep)
}

/// Simulates `N` stationary paths on independent streams, fits the exact
/// MLE and, starting from it, the order-`J` MLEs. Failed fits are counted,
/// not fatal.
pub fn mle_experiment(kind: BenchmarkKind, theta: &[f64], opts: &MleOptions) -> Result<MleSummary, BenchmarkError> {
    kind.check_theta(theta)?;
    let approxs = opts
        .orders
        .iter()
        .map(|&j| TransitionApproximation::new(kind.model(), j, opts.lamperti))
        .collect::<Result<Vec<_>, _>>()?;
    let reps = (0..opts.replications)
        .into_par_iter()
        .map(|r| replicate(kind, theta, opts, &approxs, r))
        .collect::<Result<Vec<_>, _>>()?;
    let p = theta.len();
    let column = |f: &dyn Fn(&MleReplication) -> Option<Vec<f64>>| -> Vec<ParamSummary> {
        let diffs: Vec<Vec<f64>> = reps.iter().filter_map(f).collect();
        (0..p)
            .map(|i| ParamSummary::of(&diffs.iter().map(|d| d[i]).collect::<Vec<_>>()))
            .collect()
    };
    let exact = column(&|r| r.exact.as_ref().map(|e| e.iter().zip(theta).map(|(a, b)| a - b).collect()));
    let approx = (0..opts.orders.len())
        .map(|j| {
            column(&|r| match (&r.exact, &r.approx[j]) {
                (Some(e), Some(a)) => Some(a.iter().zip(e).map(|(a, b)| a - b).collect()),
                _ => None,
            })
        })
        .collect();
    let asymptotic_sd = match kind {
        BenchmarkKind::Sqr => None,
        _ => Some(asymptotic_stddev(&fisher_information(kind, theta, opts.delta)?, opts.n)?),
    };
    Ok(MleSummary {
        kind: kind.name().into(),
        params: kind.model().params.clone(),
        theta_true: theta.to_vec(),
        exact_failures: reps.iter().filter(|r| r.exact.is_none()).count(),
        approx_failures: (0..opts.orders.len())
            .map(|j| reps.iter().filter(|r| r.approx[j].is_none()).count())
            .collect(),
        options: opts.clone(),
        exact,
        approx,
        asymptotic_sd,
        replications: reps,
    })
}

/// One row per parameter: `θ̂ - θ` mean and stddev, the asymptotic stddev,
/// then a mean/stddev pair of `θ̂^(J) - θ̂` for every order.
pub fn write_mle_table(summary: &MleSummary, writer: impl Write) -> Result<(), BenchmarkError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| BenchmarkError::Io(e.to_string());
    let mut header: Vec<String> = ["delta", "parameter", "true", "exact_mean", "exact_sd", "asymptotic_sd"]
        .map(String::from)
        .to_vec();
    for j in &summary.options.orders {
        header.push(format!("J{j}_mean"));
        header.push(format!("J{j}_sd"));
    }
    w.write_record(&header).map_err(io)?;
    for (i, name) in summary.params.iter().enumerate() {
        let mut rec = vec![
            format!("{:?}", summary.options.delta),
            name.clone(),
            format!("{:?}", summary.theta_true[i]),
            format!("{:?}", summary.exact[i].mean),
            format!("{:?}", summary.exact[i].sd),
            summary
                .asymptotic_sd
                .as_ref()
                .map_or(String::new(), |a| format!("{:?}", a[i])),
        ];
        for col in &summary.approx {
            rec.push(format!("{:?}", col[i].mean));
            rec.push(format!("{:?}", col[i].sd));
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| BenchmarkError::Io(e.to_string()))
}

/// Per-replication estimates; failed fits leave empty cells.
pub fn write_mle_estimates(summary: &MleSummary, writer: impl Write) -> Result<(), BenchmarkError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| BenchmarkError::Io(e.to_string());
    let mut header = vec!["replication".to_string()];
    let m = summary.replications.first().map_or(0, |r| r.x0.len());
    header.extend((1..=m).map(|i| format!("x0_{i}")));
    header.extend(summary.params.iter().map(|p| format!("exact_{p}")));
    for j in &summary.options.orders {
        header.extend(summary.params.iter().map(|p| format!("J{j}_{p}")));
    }
    w.write_record(&header).map_err(io)?;
    let cells = |v: &Option<Vec<f64>>, p: usize| -> Vec<String> {
        match v {
            Some(v) => v.iter().map(|x| format!("{x:?}")).collect(),
            None => vec![String::new(); p],
        }
    };
    let p = summary.params.len();
    for r in &summary.replications {
        let mut rec = vec![r.index.to_string()];
        rec.extend(r.x0.iter().map(|v| format!("{v:?}")));
        rec.extend(cells(&r.exact, p));
        for a in &r.approx {
            rec.extend(cells(a, p));
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| BenchmarkError::Io(e.to_string()))
}
