//! The `habitree` command line.
//!
//! Every command reads JSON, writes JSON or CSV, and reports failures as
//! a JSON object on stderr. Exit codes: 2 schema, 3 non-convergence,
//! 4 model condition violated, 1 anything else.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::asymptotics::{log_grid, propensity_sweep};
use crate::equilibrium::hetero::heterogeneous_equilibrium;
use crate::equilibrium::iid::{beta_grid, bond_curve, figure_data, lucas_curve, IidEconomy};
use crate::equilibrium::{homogeneous_conditions, homogeneous_spd, EquilibriumResult};
use crate::error::{Error, Result};
use crate::estimates::{bound_coefficients, check_sandwich};
use crate::io;
use crate::market::{spd_pair, validate_market_class, Market};
use crate::optimizer::{solve_consumption_tol, AgentSpec};
use crate::verify::{parse_manifest, run_manifest, BUNDLED_MANIFEST};

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "habitree", version, about = "Habit-forming consumption and equilibrium on event trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Input JSON file(s). `solve`, `bounds` and `asymptotics` take either one
    /// `{"market", "agent"}` file or a market file followed by an agent file.
    #[arg(long = "input", short = 'i')]
    pub input: Vec<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    /// Tolerance override. For `solve` the first-order-condition target,
    /// for `bounds` the slack allowed, for `verify` a factor on all limits.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate SPD and market classes; with an agent also the perturbed SPD.
    Spd(Common),
    /// Optimal consumption, wealth and diagnostics.
    Solve(Common),
    /// Consumption and wealth bounds per period.
    Bounds(Common),
    /// Propensity-to-consume sweep over initial endowments.
    Asymptotics {
        #[command(flatten)]
        common: Common,
        /// `lo:hi:points_per_decade` or a comma list of values.
        #[arg(long = "eps0-grid", default_value = "1e1:1e5:1")]
        eps0_grid: String,
    },
    /// Equilibrium SPD, weights and allocations of an economy.
    Equilibrium(Common),
    /// Zero-coupon bond price `B(0,T)` against the habit coefficient.
    BondCurve(Curve),
    /// Long-run Lucas tree equity against the habit coefficient.
    LucasCurve(Curve),
    /// Randomized invariant suite from a manifest.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Base seed; defaults to the manifest's.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
pub struct Curve {
    #[command(flatten)]
    pub common: Common,
    /// `a:b:step`.
    #[arg(long = "beta-grid")]
    pub beta_grid: Option<String>,
    /// Reproduce a figure of the two-point example (1 bond, 2 equity).
    #[arg(long)]
    pub figure: Option<u8>,
    /// Bond maturity; overrides the input's `horizon`.
    #[arg(long)]
    pub horizon: Option<usize>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Schema { .. } | Error::UnknownNode(_) | Error::Depth(_) => 2,
        Error::NonConvergence { .. } => 3,
        Error::Condition(_) => 4,
        _ => 1,
    }
}

pub fn error_json(e: &Error) -> Value {
    let mut v = json!({ "error": e.kind(), "message": e.to_string() });
    if let Error::Schema { field, .. } = e {
        v["field"] = json!(field);
    }
    v
}

/// Parses `args` (without the program name handled by clap) and runs.
/// Returns the exit status.
pub fn run_from_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let err = Error::schema("arguments", e.to_string().trim().to_string());
            let _ = writeln!(stderr, "{}", error_json(&err));
            return 2;
        }
    };
    match configure_threads().and_then(|_| run(&cli.command, stdout)) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_json(&e));
            exit_code(&e)
        }
    }
}

/// Caps rayon's global pool at `HABITREE_THREADS` when set. Later calls are
/// no-ops once the pool exists.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("HABITREE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::schema("HABITREE_THREADS", format!("expected a positive integer, got `{v}`")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn read_json(path: &PathBuf) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::schema("input", format!("cannot read {}: {e}", path.display())))?;
    io::parse_json(&text).map_err(|e| match e {
        Error::Schema { field, message } => {
            Error::schema(field.replacen("<json>", &path.display().to_string(), 1), message)
        }
        other => other,
    })
}

fn one_input(c: &Common) -> Result<Value> {
    match c.input.as_slice() {
        [p] => read_json(p),
        [] => Err(Error::schema("input", "an --input file is required")),
        _ => Err(Error::schema("input", "exactly one --input file expected")),
    }
}

fn problem(c: &Common) -> Result<(Market, AgentSpec)> {
    match c.input.as_slice() {
        [p] => io::problem_from_json(&read_json(p)?),
        [m, a] => {
            let market = io::market_from_json(&read_json(m)?)?;
            let agent = io::agent_from_json(market.tree(), &read_json(a)?, "")?;
            Ok((market, agent))
        }
        [] => Err(Error::schema("input", "an --input file is required")),
        _ => Err(Error::schema("input", "at most two --input files expected")),
    }
}

fn tolerance(c: &Common, default: f64) -> Result<f64> {
    match c.tol {
        None => Ok(default),
        Some(t) if t > 0.0 && t.is_finite() => Ok(t),
        Some(t) => Err(Error::schema("tol", format!("tolerance {t} must be positive"))),
    }
}

fn emit(c: &Common, stdout: &mut dyn Write, text: &str) -> Result<()> {
    match &c.output {
        Some(p) => std::fs::write(p, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

pub fn run(cmd: &Command, stdout: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Spd(c) => {
            let v = one_input(c)?;
            let (market, agent) = if v.get("market").is_some() {
                let (m, a) = io::problem_from_json(&v)?;
                (m, Some(a))
            } else {
                (io::market_from_json(&v)?, None)
            };
            let tree = market.tree();
            let class = validate_market_class(&market)?;
            let mut out = json!({
                "M": io::process_to_json(tree, market.spd()),
                "classes": class.labels.iter().map(|l| l.label()).collect::<Vec<_>>(),
                "complete": market.is_complete(),
            });
            if let Some(a) = agent {
                let pair = spd_pair(&market, &a.habits);
                out["Mtilde"] = io::process_to_json(tree, &pair.mtilde);
            }
            emit(c, stdout, &pretty(&out))?;
        }
        Command::Solve(c) => {
            let tol = tolerance(c, DEFAULT_TOL)?;
            let (market, agent) = problem(c)?;
            let r = solve_consumption_tol(&market, &agent, tol)?;
            emit(c, stdout, &pretty(&io::solve_to_json(market.tree(), &r)))?;
        }
        Command::Bounds(c) => {
            let tol = tolerance(c, DEFAULT_TOL)?;
            let (market, agent) = problem(c)?;
            let coef = bound_coefficients(&market, &agent)?;
            let sol = solve_consumption_tol(&market, &agent, DEFAULT_TOL)?;
            let rep = check_sandwich(&market, &coef, &sol);
            let tree = market.tree();
            let mut periods = Vec::new();
            for k in 0..=tree.horizon() {
                let nodes: Vec<_> = rep.nodes.iter().filter(|b| b.depth == k).collect();
                let map = |f: &dyn Fn(&crate::estimates::NodeBounds) -> Option<f64>| -> Value {
                    let mut m = serde_json::Map::new();
                    for b in &nodes {
                        if let Some(x) = f(b) {
                            m.insert(b.node.clone(), json!(x));
                        }
                    }
                    Value::Object(m)
                };
                let mut p = json!({
                    "k": k,
                    "lower": map(&|b| Some(b.c_lower)),
                    "value": map(&|b| Some(b.c)),
                    "upper": map(&|b| Some(b.c_upper)),
                    "slack": rep.period_slack[k],
                });
                if k > 0 {
                    p["wealth"] = json!({
                        "lower": map(&|b| b.w_lower),
                        "value": map(&|b| b.w),
                        "upper": map(&|b| b.w_upper),
                    });
                }
                periods.push(p);
            }
            let out = json!({
                "periods": periods,
                "min_slack": rep.min_slack,
                "vacuous": rep.vacuous,
                "holds": rep.holds(tol),
            });
            emit(c, stdout, &pretty(&out))?;
        }
        Command::Asymptotics { common: c, eps0_grid } => {
            let grid = parse_eps0_grid(eps0_grid)?;
            let (market, agent) = problem(c)?;
            let rep = propensity_sweep(&market, &agent, &grid)?;
            let tree = market.tree();
            let table = io::csv(
                &["eps0", "err_c", "err_W"],
                rep.sweep.iter().map(|p| vec![p.eps0, p.err_c, p.err_w]),
            );
            let mut summary = json!({
                "fitted_rate": rep.fitted_rate,
                "fitted_rate_W": rep.fitted_rate_w,
                "decreasing": rep.decreasing,
                "converged": rep.converged,
                "alpha_lower": rep.alpha_lower,
                "cstar": io::process_to_json(tree, &rep.cstar),
                "Wstar": io::process_to_json(tree, &rep.wstar),
            });
            match &c.output {
                Some(p) => std::fs::write(p, table)?,
                None => {
                    summary["table"] = json!(rep
                        .sweep
                        .iter()
                        .map(|p| json!({"eps0": p.eps0, "err_c": p.err_c, "err_W": p.err_w}))
                        .collect::<Vec<_>>());
                }
            }
            stdout.write_all(pretty(&summary).as_bytes())?;
        }
        Command::Equilibrium(c) => {
            let econ = io::economy_from_json(&one_input(c)?)?;
            let mut out = if econ.agents.len() == 1 {
                let cond = homogeneous_conditions(&econ)?;
                let r = homogeneous_spd(&econ)?;
                let mut v = io::equilibrium_to_json(&econ.tree, &r);
                v["conditions"] = json!({
                    "growth_margin": cond.growth_margin,
                    "marginal_margin": cond.marginal_margin,
                    "sufficient_margin": cond.sufficient_margin,
                    "sufficient": cond.sufficient,
                });
                v
            } else {
                let (r, trace): (EquilibriumResult, _) = heterogeneous_equilibrium(&econ)?;
                let mut v = io::equilibrium_to_json(&econ.tree, &r);
                v["search"] = json!({
                    "tatonnement_steps": trace.tatonnement_steps,
                    "newton_steps": trace.newton_steps,
                    "max_walras": trace.walras.iter().fold(0.0f64, |m, x| m.max(*x)),
                });
                v
            };
            out["horizon"] = json!(econ.tree.horizon());
            emit(c, stdout, &pretty(&out))?;
        }
        Command::BondCurve(cv) => {
            let rows = curve(cv, true)?;
            emit(&cv.common, stdout, &io::csv(&["beta", "value"], rows.iter().map(|r| vec![r.0, r.1])))?;
        }
        Command::LucasCurve(cv) => {
            let rows = curve(cv, false)?;
            emit(&cv.common, stdout, &io::csv(&["beta", "value"], rows.iter().map(|r| vec![r.0, r.1])))?;
        }
        Command::Verify { common: c, seed } => {
            let scale = tolerance(c, 1.0)?;
            let text = match c.input.as_slice() {
                [] => BUNDLED_MANIFEST.to_string(),
                [p] => std::fs::read_to_string(p)
                    .map_err(|e| Error::schema("input", format!("cannot read {}: {e}", p.display())))?,
                _ => return Err(Error::schema("input", "at most one manifest expected")),
            };
            let manifest = parse_manifest(&text)?;
            let rep = run_manifest(&manifest, seed.unwrap_or(manifest.seed), scale);
            let v = serde_json::to_value(&rep).expect("report serializes");
            emit(c, stdout, &pretty(&v))?;
            return Ok(if rep.failed == 0 { 0 } else { 1 });
        }
    }
    Ok(0)
}

/// Bond (`bond = true`) or long-run equity curve. Without `--input` the
/// two-point example economy with maturity 1 is used.
fn curve(cv: &Curve, bond: bool) -> Result<Vec<(f64, f64)>> {
    if let Some(f) = cv.figure {
        if cv.beta_grid.is_some() || !cv.common.input.is_empty() {
            return Err(Error::schema("figure", "--figure uses its own economy and grid"));
        }
        let want = if bond { 1 } else { 2 };
        if f != want {
            return Err(Error::schema("figure", format!("this command reproduces figure {want}")));
        }
        return figure_data(f);
    }
    let spec = cv
        .beta_grid
        .as_deref()
        .ok_or_else(|| Error::schema("beta_grid", "--beta-grid a:b:step is required"))?;
    let grid = parse_triplet(spec, "beta_grid").and_then(|(a, b, s)| beta_grid(a, b, s))?;
    let (econ, horizon) = match cv.common.input.as_slice() {
        [] => (IidEconomy::example(0.0)?, 1),
        _ => io::iid_from_json(&one_input(&cv.common)?)?,
    };
    let horizon = cv.horizon.unwrap_or(horizon);
    if horizon == 0 {
        return Err(Error::schema("horizon", "horizon must be at least 1"));
    }
    if bond {
        bond_curve(&econ, horizon, &grid)
    } else {
        lucas_curve(&econ, &grid)
    }
}

fn parse_triplet(s: &str, field: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::schema(field, format!("expected a:b:step, got `{s}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let n = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
    Ok((n(parts[0])?, n(parts[1])?, n(parts[2])?))
}

/// `lo:hi:points_per_decade` (log-spaced) or `v1,v2,...`.
pub fn parse_eps0_grid(s: &str) -> Result<Vec<f64>> {
    if s.contains(':') {
        let (lo, hi, per) = parse_triplet(s, "eps0_grid")?;
        if !(lo > 0.0 && hi > lo && per >= 1.0 && per.fract() == 0.0) {
            return Err(Error::schema("eps0_grid", "need 0 < lo < hi and a whole number of points per decade"));
        }
        Ok(log_grid(lo.log10(), hi.log10(), per as usize))
    } else {
        s.split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::schema("eps0_grid", format!("`{x}` is not a number")))
            })
            .collect()
    }
}
