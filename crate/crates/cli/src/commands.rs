use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};

use difflik::benchmarks::{
    error_experiment, euler_simulate, mle_experiment, simulate, stationary_moments, write_error_summary, write_grid,
    write_mle_estimates, write_mle_table, BenchmarkKind, MleOptions,
};
use difflik::expansion::{build_expansion, ExpansionContext, LampertiExpansion, ModelSpec, TransitionApproximation};
use difflik::ito::{conditional_product_expectation, conditional_product_expectation_via_ito, strat_to_ito, MultiIndex};
use difflik::likelihood::{fit, FitOptions, LikelihoodError, ObservationSeries, ParamBox};
use difflik::symbolic::{rational_text, Program};

use crate::args::{
    parse_list, parse_number, parse_orders, BenchCommand, BenchCommon, BenchDensityArgs, BenchMleArgs, Command,
    ExpandArgs, FitArgs, PolyCommand, PolyDebugArgs, SimulateArgs,
};
use crate::manifest::StagedDir;

/// A problem with the user's input; reported in one line with exit code 1.
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub fn user(e: impl fmt::Display) -> anyhow::Error {
    UserError(e.to_string()).into()
}

/// What a command read and wrote.
#[derive(Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Output directory still under its staging name; the manifest goes
    /// in before it is committed.
    pub staged: Option<StagedDir>,
    pub seed: Option<u64>,
    /// Set when results were written but the run still counts as failed.
    pub failure: Option<String>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("cannot resolve {}", p.display()))
}

/// Makes every path absolute and checks that inputs exist, so the
/// recorded command does not depend on the working directory.
pub fn resolve(cmd: &mut Command) -> Result<()> {
    let model = |m: &mut String| -> Result<()> {
        let p = Path::new(m.as_str());
        if p.exists() {
            *m = absolute(p)?.to_string_lossy().into_owned();
        } else if ModelSpec::builtin_source(m).is_none() {
            return Err(user(format!("model `{m}` is neither a file nor a built-in (mrou, sqr, dmrou)")));
        }
        Ok(())
    };
    let out = |o: &mut Option<PathBuf>| -> Result<()> {
        if let Some(p) = o {
            *p = absolute(p)?;
        }
        Ok(())
    };
    match cmd {
        Command::Expand(a) => {
            model(&mut a.model)?;
            out(&mut a.out)?;
            out(&mut a.emit_grid)?;
        }
        Command::Fit(a) => {
            model(&mut a.model)?;
            if !a.data.exists() {
                return Err(user(format!("data file {} does not exist", a.data.display())));
            }
            a.data = absolute(&a.data)?;
            out(&mut a.out)?;
        }
        Command::Simulate(a) => {
            if let Some(m) = &mut a.model {
                model(m)?;
            }
            a.out = absolute(&a.out)?;
        }
        Command::Bench(BenchCommand::Density(BenchDensityArgs { common, .. }))
        | Command::Bench(BenchCommand::Mle(BenchMleArgs { common, .. })) => {
            common.out = absolute(&common.out)?;
            if common.out.exists() && !common.force {
                return Err(user(format!(
                    "output directory {} already exists (use --force to replace it)",
                    common.out.display()
                )));
            }
        }
        Command::Poly(PolyCommand::Debug(a)) => out(&mut a.out)?,
        Command::Replay(_) => {}
    }
    Ok(())
}

fn load_model(name: &str) -> Result<ModelSpec> {
    let p = Path::new(name);
    if p.exists() {
        ModelSpec::from_file(p).map_err(user)
    } else {
        ModelSpec::builtin(name).map_err(user)
    }
}

fn write_json(value: &Value, out: Option<&Path>) -> Result<Option<PathBuf>> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => {
            fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?;
            Ok(Some(p.to_path_buf()))
        }
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(None)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

pub fn expand(a: &ExpandArgs) -> Result<Outcome> {
    let model = load_model(&a.model)?;
    let theta = parse_list(&a.theta, "theta").map_err(user)?;
    let x0 = parse_list(&a.x0, "x0").map_err(user)?;
    let json = if a.lamperti {
        if x0.len() != 1 {
            return Err(user("the Lamperti transform needs a one-dimensional model"));
        }
        let e = LampertiExpansion::build(&model, &theta, x0[0], a.order).map_err(user)?;
        let lam = model.lamperti.as_ref().expect("build checked the transform");
        let mut v = e.z_expansion().to_json();
        v["model"] = json!(model.name);
        v["x0"] = json!(x0);
        v["lamperti"] = json!({
            "gamma": lam.gamma.to_string(),
            "gamma_inv": lam.gamma_inv.to_string(),
            "z0": e.z_expansion().context().x0(),
        });
        v
    } else {
        let ctx = ExpansionContext::new(&model, &theta, &x0).map_err(user)?;
        build_expansion(&ctx, a.order).map_err(user)?.to_json()
    };
    let mut outcome = Outcome::default();
    if let Some(p) = &a.emit_grid {
        let delta = parse_number(a.delta.as_deref().unwrap_or_default()).map_err(user)?;
        if !(delta > 0.0) {
            return Err(user("--delta must be positive"));
        }
        write_expand_grid(&model, &theta, &x0, delta, a, p)?;
        outcome.outputs.push(p.clone());
    }
    outcome.outputs.extend(write_json(&json, a.out.as_deref())?);
    Ok(outcome)
}

/// Density and log-density on `x_0 + μΔ ± 4 sqrt(diag(ΣΔ))`, clipped to
/// the state space.
fn write_expand_grid(
    model: &ModelSpec,
    theta: &[f64],
    x0: &[f64],
    delta: f64,
    a: &ExpandArgs,
    path: &Path,
) -> Result<()> {
    if a.grid_points < 2 {
        return Err(user("--grid-points must be at least 2"));
    }
    let ctx = ExpansionContext::new(model, theta, x0).map_err(user)?;
    let sigma = ctx.sigma();
    let mu = Program::compile(&model.mu, &model.params)
        .and_then(|p| p.eval(x0, theta))
        .map_err(user)?;
    let axes: Vec<Vec<f64>> = (0..model.dim)
        .map(|i| {
            let c = x0[i] + mu[i] * delta;
            let var: f64 = sigma[i].iter().map(|s| s * s).sum();
            let h = 4.0 * (var * delta).sqrt();
            let (slo, shi) = model.state_space[i];
            let lo = if c - h <= slo { slo + 1e-3 * (c - slo) } else { c - h };
            let hi = if c + h >= shi { shi - 1e-3 * (shi - c) } else { c + h };
            (0..a.grid_points)
                .map(|k| lo + (hi - lo) * k as f64 / (a.grid_points - 1) as f64)
                .collect()
        })
        .collect();
    let approx = TransitionApproximation::new(model, a.order, a.lamperti).map_err(user)?;
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = (1..=model.dim).map(|i| format!("x{i}")).collect();
    header.extend(["density".to_string(), "log_density".to_string()]);
    w.write_record(&header)?;
    let n = a.grid_points;
    for mut idx in 0..n.pow(model.dim as u32) {
        let mut x = vec![0.0; model.dim];
        for d in (0..model.dim).rev() {
            x[d] = axes[d][idx % n];
            idx /= n;
        }
        let p = approx.density(theta, delta, x0, &x).map_err(user)?;
        let l = approx.log_density(theta, delta, x0, &x).map_err(user)?;
        let mut rec: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        rec.extend([format!("{p:?}"), format!("{l:?}")]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_box(s: &str, p: usize) -> Result<ParamBox> {
    let v = parse_list(s, "box").map_err(user)?;
    if v.len() != 2 * p {
        return Err(user(format!("--box needs {} values (lo,hi per parameter), got {}", 2 * p, v.len())));
    }
    let lower = v.iter().step_by(2).copied().collect();
    let upper = v.iter().skip(1).step_by(2).copied().collect();
    ParamBox::new(lower, upper).map_err(user)
}

pub fn fit_cmd(a: &FitArgs) -> Result<Outcome> {
    let model = load_model(&a.model)?;
    let series = ObservationSeries::from_csv(&a.data).map_err(user)?;
    let start = parse_list(&a.start, "start").map_err(user)?;
    let bounds = match &a.bounds {
        Some(b) => parse_box(b, model.num_params())?,
        None => ParamBox::default_for(&model),
    };
    if a.order < model.dim {
        eprintln!(
            "warning: order {} is below the dimension {}; the convergence rate in Δ is not guaranteed",
            a.order, model.dim
        );
    }
    let opts = FitOptions {
        lamperti: a.lamperti,
        restarts: a.restarts,
        stderr: !a.no_stderr,
        ..FitOptions::default()
    };
    let mut outcome = Outcome {
        inputs: vec![a.data.clone()],
        ..Outcome::default()
    };
    if Path::new(&a.model).exists() {
        outcome.inputs.push(PathBuf::from(&a.model));
    }
    let report = match fit(&model, &series, a.order, &start, &bounds, &opts) {
        Ok(r) => r,
        Err(LikelihoodError::NotConverged { report }) => {
            outcome.failure = Some(format!(
                "optimizer did not converge after {} iterations; the report has converged = false",
                report.iterations
            ));
            *report
        }
        Err(e) => return Err(user(e)),
    };
    outcome
        .outputs
        .extend(write_json(&serde_json::to_value(&report)?, a.out.as_deref())?);
    Ok(outcome)
}

fn kind_of(s: &str) -> Result<BenchmarkKind> {
    s.parse().map_err(user)
}

pub fn simulate_cmd(a: &SimulateArgs) -> Result<Outcome> {
    let delta = parse_number(&a.delta).map_err(user)?;
    let theta_arg = a.theta.as_deref().map(|t| parse_list(t, "theta")).transpose().map_err(user)?;
    let x0_arg = a.x0.as_deref().map(|t| parse_list(t, "x0")).transpose().map_err(user)?;
    let series = match (&a.kind, &a.model) {
        (Some(k), None) => {
            let kind = kind_of(k)?;
            let theta = theta_arg.unwrap_or_else(|| kind.reference_theta());
            let x0 = match x0_arg {
                Some(x) => x,
                None => stationary_moments(kind, &theta).map_err(user)?.0,
            };
            simulate(kind, &theta, delta, a.n, &x0, a.seed).map_err(user)?
        }
        (None, Some(m)) => {
            let model = load_model(m)?;
            let theta = theta_arg.ok_or_else(|| user("--theta is required with --model"))?;
            let x0 = x0_arg.ok_or_else(|| user("--x0 is required with --model"))?;
            euler_simulate(&model, &theta, delta, a.n, a.substeps, &x0, a.seed).map_err(user)?
        }
        _ => return Err(user("give exactly one of --kind and --model")),
    };
    series.write_csv(create(&a.out)?).map_err(user)?;
    Ok(Outcome {
        outputs: vec![a.out.clone()],
        seed: Some(a.seed),
        ..Outcome::default()
    })
}

fn bench_theta(kind: BenchmarkKind, c: &BenchCommon) -> Result<Vec<f64>> {
    if c.preset != "paper" {
        return Err(user(format!("unknown preset `{}` (only `paper` is defined)", c.preset)));
    }
    let theta = match &c.theta {
        Some(t) => parse_list(t, "theta").map_err(user)?,
        None => kind.reference_theta(),
    };
    kind.check_theta(&theta).map_err(user)?;
    Ok(theta)
}

pub fn bench_density(a: &BenchDensityArgs) -> Result<Outcome> {
    let kind = kind_of(&a.common.kind)?;
    let theta = bench_theta(kind, &a.common)?;
    let deltas = parse_list(&a.deltas, "deltas").map_err(user)?;
    let orders = parse_orders(&a.orders).map_err(user)?;
    let x0 = match &a.x0 {
        Some(x) => parse_list(x, "x0").map_err(user)?,
        None => kind.default_x0(&theta).map_err(user)?,
    };
    let variants: &[bool] = if kind == BenchmarkKind::Sqr { &[false, true] } else { &[false] };
    let mut grids = Vec::new();
    for &lamperti in variants {
        grids.extend(error_experiment(kind, &theta, &x0, &deltas, &orders, lamperti).map_err(user)?);
    }
    let dir = StagedDir::new(&a.common.out, a.common.force)?;
    write_error_summary(&grids, create(&dir.path().join("errors.csv"))?)?;
    let mut outputs = vec![a.common.out.join("errors.csv")];
    if a.emit_grid {
        fs::create_dir(dir.path().join("grids"))?;
        for g in &grids {
            let name = format!(
                "{}_delta{}_J{}{}.csv",
                kind,
                (1.0 / g.delta).round(),
                g.order,
                if g.lamperti { "_lamperti" } else { "" }
            );
            write_grid(g, create(&dir.path().join("grids").join(&name))?)?;
            outputs.push(a.common.out.join("grids").join(name));
        }
    }
    let summary = json!({
        "kind": kind.name(),
        "theta": theta,
        "x0": x0,
        "grids": grids.iter().map(|g| json!({
            "delta": g.delta,
            "order": g.order,
            "lamperti": g.lamperti,
            "max_abs_error": g.max_abs_error,
        })).collect::<Vec<_>>(),
    });
    fs::write(dir.path().join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    outputs.push(a.common.out.join("summary.json"));
    Ok(Outcome {
        outputs,
        staged: Some(dir),
        ..Outcome::default()
    })
}

pub fn bench_mle(a: &BenchMleArgs) -> Result<Outcome> {
    let kind = kind_of(&a.common.kind)?;
    let theta = bench_theta(kind, &a.common)?;
    let delta = parse_number(&a.delta).map_err(user)?;
    let orders = parse_orders(&a.orders).map_err(user)?;
    let mut opts = MleOptions::scaled(delta, orders, a.seed);
    opts.n = a.n;
    opts.lamperti = a.lamperti;
    if a.full_n {
        opts.replications = 5000;
    } else if let Some(r) = a.replications {
        opts.replications = r;
    }
    let summary = mle_experiment(kind, &theta, &opts).map_err(user)?;
    let dir = StagedDir::new(&a.common.out, a.common.force)?;
    write_mle_table(&summary, create(&dir.path().join("table.csv"))?)?;
    write_mle_estimates(&summary, create(&dir.path().join("estimates.csv"))?)?;
    fs::write(
        dir.path().join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    let outputs = ["table.csv", "estimates.csv", "summary.json"]
        .iter()
        .map(|f| a.common.out.join(f))
        .collect();
    let failed = summary.exact_failures + summary.approx_failures.iter().sum::<usize>();
    if failed > 0 {
        eprintln!("note: {failed} fits failed; see summary.json");
    }
    Ok(Outcome {
        outputs,
        staged: Some(dir),
        seed: Some(a.seed),
        ..Outcome::default()
    })
}

fn parse_index(s: &str) -> Result<MultiIndex> {
    let s = s.trim().trim_start_matches('(').trim_end_matches(')');
    let entries = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<u8>()
                .map_err(|_| user(format!("`{}` is not an index entry", v.trim())))
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(MultiIndex::new(entries))
}

fn qpoly_json(p: &difflik::symbolic::QPoly) -> Value {
    let mut map = Map::new();
    for (mono, c) in p.terms().rev() {
        let key = mono
            .0
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, &e)| if e == 1 { format!("z{}", i + 1) } else { format!("z{}^{e}", i + 1) })
            .collect::<Vec<_>>()
            .join("*");
        map.insert(if key.is_empty() { "1".into() } else { key }, json!(rational_text(c)));
    }
    Value::Object(map)
}

pub fn poly_debug(a: &PolyDebugArgs) -> Result<Outcome> {
    let list = a.indices.iter().map(|s| parse_index(s)).collect::<Result<Vec<_>>>()?;
    let needed = list.iter().map(|i| i.max_coordinate() as usize).max().unwrap_or(0).max(1);
    let m = a.dim.unwrap_or(needed);
    if m < needed {
        return Err(user(format!("an index uses coordinate {needed} but --dim is {m}")));
    }
    let p = conditional_product_expectation(&list, m);
    let mut v = json!({
        "indices": list.iter().map(|i| i.to_string()).collect::<Vec<_>>(),
        "dim": m,
        "text": p.to_text("z"),
        "conditional_expectation": qpoly_json(&p),
        "ito": list.iter().map(|i| json!({
            "index": i.to_string(),
            "norm": i.norm(),
            "ito_form": strat_to_ito(i).to_string(),
        })).collect::<Vec<_>>(),
    });
    if a.via_ito {
        let q = conditional_product_expectation_via_ito(&list, m);
        v["via_ito_agrees"] = json!(q == *p);
    }
    Ok(Outcome {
        outputs: write_json(&v, a.out.as_deref())?.into_iter().collect(),
        ..Outcome::default()
    })
}
