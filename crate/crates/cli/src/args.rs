use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Closed-form transition density expansions and approximate maximum
/// likelihood for multivariate diffusions.
///
/// Exit codes: 0 success, 1 user error (bad flags, malformed model or data
/// files, invalid parameters, a fit that did not converge), 2 internal
/// error.
#[derive(Debug, Parser)]
#[command(name = "difflik", version)]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "DIFFLIK_THREADS")]
    pub threads: Option<usize>,

    /// Where to write the run manifest. Defaults to `<out>.manifest.json`
    /// next to a file output, or `manifest.json` inside an output directory.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Emit the correction polynomials of a density expansion as JSON.
    Expand(ExpandArgs),
    /// Approximate maximum-likelihood fit of a model to a CSV series.
    Fit(FitArgs),
    /// Simulate a series (exact law for benchmarks, Euler otherwise).
    Simulate(SimulateArgs),
    /// Benchmark experiments against exact transition densities.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Inspect the iterated-integral algebra.
    #[command(subcommand)]
    Poly(PolyCommand),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExpandArgs {
    /// Built-in model name (mrou, sqr, dmrou) or path to a TOML model file.
    #[arg(long)]
    pub model: String,
    /// Parameter values, comma separated, in declaration order.
    #[arg(long)]
    pub theta: String,
    /// Conditioning state, comma separated.
    #[arg(long)]
    pub x0: String,
    /// Expansion order J.
    #[arg(long)]
    pub order: usize,
    /// Expand the Lamperti-transformed model (1-D models only).
    #[arg(long)]
    pub lamperti: bool,
    /// JSON output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the density on a grid to this CSV.
    #[arg(long, requires = "delta")]
    pub emit_grid: Option<PathBuf>,
    /// Sampling interval for the grid; fractions such as 1/52 are accepted.
    #[arg(long)]
    pub delta: Option<String>,
    /// Grid points per dimension.
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub model: String,
    /// CSV with header `t,x1,..,xm` and equally spaced times.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub order: usize,
    /// Starting parameters, comma separated.
    #[arg(long)]
    pub start: String,
    /// Parameter box as `lo1,hi1,lo2,hi2,..`; `inf` and `-inf` allowed.
    /// Defaults to (0, inf) for positive parameters and the real line
    /// otherwise.
    #[arg(long = "box")]
    pub bounds: Option<String>,
    #[arg(long)]
    pub lamperti: bool,
    /// Extra simplex runs from the best point found.
    #[arg(long, default_value_t = 0)]
    pub restarts: usize,
    /// Skip the finite-difference standard errors.
    #[arg(long)]
    pub no_stderr: bool,
    /// JSON report file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Benchmark with an exact sampler: mrou, sqr or dmrou.
    #[arg(long, conflicts_with = "model")]
    pub kind: Option<String>,
    /// Any model, simulated with the Euler scheme.
    #[arg(long)]
    pub model: Option<String>,
    /// Parameters; defaults to the published set for `--kind`.
    #[arg(long)]
    pub theta: Option<String>,
    #[arg(long)]
    pub delta: String,
    /// Number of transitions.
    #[arg(short = 'n', long)]
    pub n: usize,
    /// Initial state; defaults to the long-run mean for `--kind`.
    #[arg(long)]
    pub x0: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Euler steps per sampling interval (with `--model`).
    #[arg(long, default_value_t = 64)]
    pub substeps: usize,
    /// Output CSV `t,x1,..,xm`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum BenchCommand {
    /// Maximum density errors on grids around the conditional mean.
    Density(BenchDensityArgs),
    /// Monte Carlo study of exact and approximate MLEs.
    Mle(BenchMleArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchCommon {
    #[arg(long)]
    pub kind: String,
    /// Parameter preset; `paper` is the reference parameter set of each model.
    #[arg(long, default_value = "paper")]
    pub preset: String,
    /// Override the preset parameters.
    #[arg(long)]
    pub theta: Option<String>,
    /// Output directory; created atomically, must not exist yet.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchDensityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: BenchCommon,
    #[arg(long, default_value = "1/12,1/52,1/252")]
    pub deltas: String,
    #[arg(long, default_value = "1,2,3,4,5,6")]
    pub orders: String,
    /// Conditioning state; defaults to one stationary standard deviation
    /// above the mean.
    #[arg(long)]
    pub x0: Option<String>,
    /// Write every grid point to `grids/`.
    #[arg(long)]
    pub emit_grid: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchMleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: BenchCommon,
    #[arg(long, default_value = "1/52")]
    pub delta: String,
    #[arg(long, default_value = "1,2,3,4,5,6")]
    pub orders: String,
    /// Replications (default 500).
    #[arg(long)]
    pub replications: Option<usize>,
    /// Use the published 5000 replications.
    #[arg(long, conflicts_with = "replications")]
    pub full_n: bool,
    /// Transitions per path.
    #[arg(short = 'n', long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 20240101)]
    pub seed: u64,
    #[arg(long)]
    pub lamperti: bool,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum PolyCommand {
    /// Print `E(J_i1(1) .. J_il(1) | W(1) = z)` and the Itô form of each index.
    Debug(PolyDebugArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PolyDebugArgs {
    /// Stratonovich multi-index such as `1,0,1`; repeat for products.
    #[arg(long = "index", required = true)]
    pub indices: Vec<String>,
    /// Brownian dimension m.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Also compute the polynomial through the Itô product route.
    #[arg(long)]
    pub via_ito: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses a number, accepting `a/b`, `inf` and `-inf`.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let a: f64 = parse_number(a)?;
        let b: f64 = parse_number(b)?;
        if b == 0.0 {
            return Err(format!("division by zero in `{s}`"));
        }
        return Ok(a / b);
    }
    match s {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse::<f64>().map_err(|_| format!("`{s}` is not a number")),
    }
}

pub fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| parse_number(v).map_err(|e| format!("{what}: {e}")))
        .collect()
}

pub fn parse_orders(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("orders: `{}` is not a nonnegative integer", v.trim()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers() {
        assert_eq!(parse_number("1/52").unwrap(), 1.0 / 52.0);
        assert_eq!(parse_number(" -inf").unwrap(), f64::NEG_INFINITY);
        assert!(parse_number("x").is_err());
        assert_eq!(parse_list("0.5,0.06,0.03", "theta").unwrap(), vec![0.5, 0.06, 0.03]);
        assert_eq!(parse_orders("1, 2,6").unwrap(), vec![1, 2, 6]);
    }
}
