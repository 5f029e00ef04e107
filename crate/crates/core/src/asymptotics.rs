//! Large initial endowment limits.
//!
//! Power utility is homogeneous, so `c(tε) = t c(ε)`. Sending `ε_0 → ∞`
//! with the future income fixed pushes the normalized plan `c/ε_0` towards
//! the solution of the artificial problem with endowment `(1, 0, …, 0)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::{perturbed_spd, Market};
use crate::optimizer::{solve_consumption, wealth_from_consumption, AgentSpec, SolveResult};
use crate::tree::AdaptedProcess;

/// Relative error under which a sweep is declared converged.
pub const CONVERGED_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub eps0: f64,
    pub err_c: f64,
    pub err_w: f64,
}

#[derive(Debug, Clone)]
pub struct AsymptoticsReport {
    pub cstar: AdaptedProcess,
    pub wstar: AdaptedProcess,
    pub sweep: Vec<SweepPoint>,
    /// Least-squares slope of `log err_c` on `log ε_0` over the last three
    /// points; `None` when some error there is exactly zero.
    pub fitted_rate: Option<f64>,
    pub fitted_rate_w: Option<f64>,
    /// `α_k` for `k = 0..=T` (with `α_0 = 1`).
    pub alpha_lower: Vec<f64>,
    pub decreasing: bool,
    pub converged: bool,
    pub first: SolveResult,
    pub last: SolveResult,
}

fn unit_endowment(market: &Market) -> AdaptedProcess {
    AdaptedProcess::from_fn(market.tree(), |n| if n == 0 { 1.0 } else { 0.0 })
}

/// Closed form on a complete market: the surplus is proportional to
/// `e^{-ρk/γ} M̃_k^{-1/γ}` and the level is fixed by the unit budget.
pub fn artificial_closed_form(market: &Market, agent: &AgentSpec) -> Result<(AdaptedProcess, AdaptedProcess)> {
    if !market.is_complete() {
        return Err(Error::Market("closed form needs a complete market".into()));
    }
    let tree = market.tree();
    let mt = perturbed_spd(tree, market.spd(), &agent.habits);
    if mt.values().iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Infeasible("perturbed state price density is not positive".into()));
    }
    let g = agent.gamma;
    let shape = AdaptedProcess::from_fn(tree, |n| {
        let k = tree.depth(n) as f64;
        (-agent.rho * k / g).exp() * (mt.at(n) / mt.at(0)).powf(-1.0 / g)
    });
    let c1 = agent.habits.consumption(tree, &shape);
    let pv: f64 = (0..tree.len())
        .map(|n| tree.node_probability(n) * market.spd().at(n) * c1.at(n))
        .sum();
    let c = c1.scale(1.0 / pv);
    let (w, _) = wealth_from_consumption(market, &unit_endowment(market), &c);
    Ok((c, w))
}

/// Optimal plan for the endowment `(1, 0, …, 0)`.
pub fn artificial_solution(market: &Market, agent: &AgentSpec) -> Result<(AdaptedProcess, AdaptedProcess)> {
    if market.is_complete() {
        return artificial_closed_form(market, agent);
    }
    let r = solve_consumption(market, &agent.with_endowment(unit_endowment(market)))?;
    Ok((r.c, r.w))
}

/// Residual of `c*_k = W*_k − E[(M_{k+1}/M_k) W*_{k+1} | G_k]` and
/// `c*_0 = 1 − E[M_1 W*_1]`.
pub fn artificial_budget_residual(market: &Market, c: &AdaptedProcess, w: &AdaptedProcess) -> f64 {
    let tree = market.tree();
    let mut err: f64 = 0.0;
    for n in 0..tree.len() {
        let k = tree.depth(n);
        let next: f64 = tree
            .children(n)
            .map(|ch| tree.transition(ch) * market.spd_ratio(ch) * w.at(ch))
            .sum();
        let own = if k == 0 { 1.0 } else { w.at(n) };
        err = err.max((c.at(n) - (own - next)).abs());
    }
    err
}

/// `α_k`: sum of habit products along every chain `k > i_j > … > i_1 > 0`.
pub fn alpha_constants(agent: &AgentSpec) -> Vec<f64> {
    let t = agent.habits.horizon();
    (0..=t).map(|k| agent.habits.chain_sum(k, 0)).collect()
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn fit_tail(points: &[SweepPoint], pick: impl Fn(&SweepPoint) -> f64) -> Option<f64> {
    let tail = &points[points.len().saturating_sub(3)..];
    if tail.len() < 2 || tail.iter().any(|p| !(pick(p) > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = tail.iter().map(|p| p.eps0.ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|p| pick(p).ln()).collect();
    Some(slope(&xs, &ys))
}

fn max_gap(a: &AdaptedProcess, b: &AdaptedProcess, t: f64, from: usize) -> f64 {
    a.values()[from..]
        .iter()
        .zip(&b.values()[from..])
        .fold(0.0, |m, (x, y)| m.max((x / t - y).abs()))
}

/// Solves at every `ε_0` of the grid (future income taken from the agent)
/// and measures the distance of `c/ε_0`, `W/ε_0` to the artificial limit.
pub fn propensity_sweep(market: &Market, agent: &AgentSpec, grid: &[f64]) -> Result<AsymptoticsReport> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) || grid[0] <= 0.0 {
        return Err(Error::schema("eps0_grid", "grid must be positive and strictly increasing"));
    }
    let (cstar, wstar) = artificial_solution(market, agent)?;
    let solves: Vec<Result<SolveResult>> = grid
        .par_iter()
        .map(|&e0| {
            let mut eps = agent.endowment.clone();
            eps.set(0, e0);
            solve_consumption(market, &agent.with_endowment(eps))
        })
        .collect();
    let mut results = Vec::with_capacity(grid.len());
    for r in solves {
        results.push(r?);
    }
    let sweep: Vec<SweepPoint> = grid
        .iter()
        .zip(&results)
        .map(|(&e0, r)| SweepPoint {
            eps0: e0,
            err_c: max_gap(&r.c, &cstar, e0, 0),
            err_w: max_gap(&r.w, &wstar, e0, 1),
        })
        .collect();
    let decreasing = sweep.windows(2).skip(1).all(|w| w[1].err_c < w[0].err_c)
        || sweep.iter().all(|p| p.err_c == 0.0);
    let scale = cstar.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let converged = sweep.last().map(|p| p.err_c <= CONVERGED_TOL * scale).unwrap_or(false);
    Ok(AsymptoticsReport {
        fitted_rate: fit_tail(&sweep, |p| p.err_c),
        fitted_rate_w: fit_tail(&sweep, |p| p.err_w),
        alpha_lower: alpha_constants(agent),
        cstar,
        wstar,
        decreasing,
        converged,
        sweep,
        first: results.first().cloned().expect("grid is not empty"),
        last: results.pop().expect("grid is not empty"),
    })
}

#[derive(Debug, Clone)]
pub struct FloorReport {
    pub holds: bool,
    /// Smallest `c_k/c_0 − α_k` over nodes with `k ≥ 1`.
    pub c_margin: f64,
    /// Smallest `W_k/c_0 − α_T E[M_T/M_k | G_k]`.
    pub w_margin: f64,
    pub violations: Vec<String>,
}

/// Checks `c_k/c_0 > α_k` and `W_k/c_0 > α_T E[M_T/M_k | G_k]` on one plan.
pub fn habit_floors(market: &Market, agent: &AgentSpec, result: &SolveResult) -> FloorReport {
    let tree = market.tree();
    let t = tree.horizon();
    let alpha = alpha_constants(agent);
    let c0 = result.c.at(0);
    // E[M_T/M_k | G_k] backward
    let mut disc = AdaptedProcess::constant(tree, 1.0);
    for k in (0..t).rev() {
        for n in tree.level(k) {
            let v: f64 = tree
                .children(n)
                .map(|ch| tree.transition(ch) * market.spd_ratio(ch) * disc.at(ch))
                .sum();
            disc.set(n, v);
        }
    }
    let mut c_margin = f64::INFINITY;
    let mut w_margin = f64::INFINITY;
    let mut violations = Vec::new();
    for n in 1..tree.len() {
        let k = tree.depth(n);
        let mc = result.c.at(n) / c0 - alpha[k];
        c_margin = c_margin.min(mc);
        if !(mc > 0.0) {
            violations.push(format!("consumption floor at node {}", tree.id(n)));
        }
        let mw = result.w.at(n) / c0 - alpha[t] * disc.at(n);
        w_margin = w_margin.min(mw);
        if !(mw > 0.0) {
            violations.push(format!("wealth floor at node {}", tree.id(n)));
        }
    }
    FloorReport {
        holds: violations.is_empty(),
        c_margin,
        w_margin,
        violations,
    }
}

/// Unbounded growth along the sweep: every `c_k` and `W_k` at the largest
/// `ε_0` exceeds `factor` times its value at the smallest.
pub fn growth_check(report: &AsymptoticsReport, factor: f64) -> bool {
    let c = report
        .last
        .c
        .values()
        .iter()
        .zip(report.first.c.values())
        .all(|(l, f)| *l > factor * f.abs());
    let w = report.last.w.values()[1..]
        .iter()
        .zip(&report.first.w.values()[1..])
        .all(|(l, f)| *l > factor * f.abs());
    c && w
}

/// `10^a, 10^{a+1/n}, …, 10^b`.
pub fn log_grid(a: f64, b: f64, per_decade: usize) -> Vec<f64> {
    let steps = ((b - a) * per_decade as f64).round() as usize;
    (0..=steps)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / steps as f64))
        .collect()
}
