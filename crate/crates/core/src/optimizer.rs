//! Single-agent habit-forming consumption by first-order conditions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::habits::Habits;
use crate::market::Market;
use crate::oracle;
use crate::tree::{AdaptedProcess, EventTree};

/// FOC residual target.
pub const FOC_TOL: f64 = 1e-9;
pub const MAX_NEWTON: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub gamma: f64,
    pub rho: f64,
    pub habits: Habits,
    pub endowment: AdaptedProcess,
}

impl AgentSpec {
    pub fn new(tree: &EventTree, gamma: f64, rho: f64, habits: Habits, endowment: AdaptedProcess) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::schema("gamma", format!("risk aversion {gamma} must be positive")));
        }
        if (gamma - 1.0).abs() < 1e-12 {
            return Err(Error::schema("gamma", "gamma = 1 (log utility) is not supported"));
        }
        if !rho.is_finite() {
            return Err(Error::schema("rho", "impatience must be finite"));
        }
        if habits.horizon() != tree.horizon() {
            return Err(Error::schema(
                "beta_matrix",
                format!("habit rows cover horizon {} but tree has {}", habits.horizon(), tree.horizon()),
            ));
        }
        if endowment.values().len() != tree.len() {
            return Err(Error::schema("endowment", "one value per node required"));
        }
        if let Some(n) = (0..tree.len()).find(|&n| !(endowment.at(n) >= 0.0 && endowment.at(n).is_finite())) {
            return Err(Error::schema(
                format!("endowment.{}", tree.id(n)),
                format!("endowment {} must be non-negative", endowment.at(n)),
            ));
        }
        Ok(AgentSpec {
            gamma,
            rho,
            habits,
            endowment,
        })
    }

    pub fn with_endowment(&self, endowment: AdaptedProcess) -> Self {
        AgentSpec {
            endowment,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub foc_residual: f64,
    pub utility: f64,
    pub iterations: usize,
    /// `newton`, `oracle`, or `oracle+newton`.
    pub method: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub c: AdaptedProcess,
    /// Wealth; the root entry is 0.
    pub w: AdaptedProcess,
    pub r: AdaptedProcess,
    pub diagnostics: Diagnostics,
}

/// Discounted expected utility of the surplus stream.
pub fn evaluate_utility(tree: &EventTree, agent: &AgentSpec, c: &AdaptedProcess) -> Result<f64> {
    let s = agent.habits.surplus(tree, c);
    let g = agent.gamma;
    let mut total = 0.0;
    for n in 0..tree.len() {
        let v = s.at(n);
        if v < 0.0 || (v == 0.0 && g > 1.0) {
            return Err(Error::UtilityPole(format!(
                "surplus {v:.3e} at `{}` with gamma {g}",
                tree.id(n)
            )));
        }
        let k = tree.depth(n) as f64;
        total += tree.node_probability(n) * (-agent.rho * k).exp() * v.powf(1.0 - g) / (1.0 - g);
    }
    Ok(total)
}

/// `R_k = e^{-ρk} s_k^{-γ} − Σ_{m>k} β^(m)_k e^{-ρm} E[s_m^{-γ} | G_k]`.
pub fn marginal_process(tree: &EventTree, agent: &AgentSpec, s: &AdaptedProcess) -> AdaptedProcess {
    let t = tree.horizon();
    let g = agent.gamma;
    let mu = AdaptedProcess::from_fn(tree, |n| {
        (-agent.rho * tree.depth(n) as f64).exp() * s.at(n).powf(-g)
    });
    let mut r = mu.clone();
    for k in 0..t {
        for m in k + 1..=t {
            let b = agent.habits.get(m, k);
            if b == 0.0 {
                continue;
            }
            let e = tree.cond_expectation(mu.level(tree, m), m, k).expect("depths in range");
            for (i, n) in tree.level(k).enumerate() {
                r.set(n, r.at(n) - b * e[i]);
            }
        }
    }
    r
}

/// Wealth implied by a consumption plan through the budget recursion, and the
/// period-0 budget gap `c_0 − ε_0 + E[M_1 W_1]`.
pub fn wealth_from_consumption(market: &Market, eps: &AdaptedProcess, c: &AdaptedProcess) -> (AdaptedProcess, f64) {
    let tree = market.tree();
    let t = tree.horizon();
    let mut w = AdaptedProcess::zeros(tree);
    for n in tree.level(t) {
        w.set(n, c.at(n) - eps.at(n));
    }
    let mut root_gap = c.at(0) - eps.at(0);
    for k in (0..t).rev() {
        for n in tree.level(k) {
            let inv: f64 = tree
                .children(n)
                .map(|ch| tree.transition(ch) * market.spd_ratio(ch) * w.at(ch))
                .sum();
            if k == 0 {
                root_gap += inv;
            } else {
                w.set(n, c.at(n) - eps.at(n) + inv);
            }
        }
    }
    (w, root_gap)
}

/// Present value `Σ_k E[M_k x_k]`.
pub fn present_value(market: &Market, x: &AdaptedProcess) -> f64 {
    let tree = market.tree();
    (0..tree.len())
        .map(|n| tree.node_probability(n) * market.spd().at(n) * x.at(n))
        .sum()
}

/// Largest coordinate of `W_k` outside the payoff space, over all atoms.
pub fn wealth_span_error(market: &Market, w: &AdaptedProcess) -> f64 {
    let tree = market.tree();
    let mut err: f64 = 0.0;
    for a in 0..tree.level(tree.horizon()).start {
        let kids = tree.children(a);
        for q in &market.atom(a).complement {
            let v: f64 = kids
                .clone()
                .zip(q)
                .map(|(c, q)| tree.transition(c) * w.at(c) * q)
                .sum();
            err = err.max(v.abs());
        }
    }
    err
}

fn foc_coordinates(market: &Market, agent: &AgentSpec, s: &AdaptedProcess, r: &AdaptedProcess, out: &mut Vec<f64>, a: usize) {
    let tree = market.tree();
    let k1 = tree.depth(a) as f64;
    let scale = (-agent.rho * k1).exp() * s.at(a).powf(-agent.gamma);
    let kids = tree.children(a);
    for q in &market.atom(a).basis {
        let v: f64 = kids
            .clone()
            .zip(q)
            .map(|(c, q)| tree.transition(c) * (r.at(c) - r.at(a) * market.spd_ratio(c)) * q)
            .sum();
        out.push(v / scale);
    }
}

/// Normalized violation of `P_L[R_k/R_{k-1}] = M_k/M_{k-1}`, written as
/// orthogonality of `R_k − R_{k-1} M_k/M_{k-1}` to the payoff space.
pub fn foc_residual(market: &Market, agent: &AgentSpec, result: &SolveResult) -> f64 {
    let tree = market.tree();
    let s = agent.habits.surplus(tree, &result.c);
    if s.values().iter().any(|v| !(*v > 0.0)) {
        return f64::INFINITY;
    }
    let r = marginal_process(tree, agent, &s);
    let mut out = Vec::new();
    for a in 0..tree.level(tree.horizon()).start {
        foc_coordinates(market, agent, &s, &r, &mut out, a);
    }
    out.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Violation of the simplified condition
/// `P_L[s_k^{-γ}] = e^ρ (M̃_k/M̃_{k-1}) s_{k-1}^{-γ}`, relative to the right side.
/// Meaningful for deterministic-rate or idiosyncratic markets.
pub fn simplified_foc_residual(market: &Market, agent: &AgentSpec, mtilde: &AdaptedProcess, c: &AdaptedProcess) -> f64 {
    let tree = market.tree();
    let s = agent.habits.surplus(tree, c);
    let mut err: f64 = 0.0;
    for k in 1..=tree.horizon() {
        let x: Vec<f64> = s.level(tree, k).iter().map(|v| v.powf(-agent.gamma)).collect();
        let lhs = market.project_level(&x, k).expect("depth in range");
        for (i, n) in tree.level(k).enumerate() {
            let p = tree.parent(n).unwrap();
            let rhs = agent.rho.exp() * mtilde.at(n) / mtilde.at(p) * s.at(p).powf(-agent.gamma);
            err = err.max(((lhs[i] - rhs) / rhs).abs());
        }
    }
    err
}

struct System<'a> {
    market: &'a Market,
    agent: &'a AgentSpec,
    scale: f64,
}

impl System<'_> {
    fn tree(&self) -> &EventTree {
        self.market.tree()
    }

    fn consumption(&self, x: &[f64]) -> (AdaptedProcess, AdaptedProcess) {
        let tree = self.tree();
        let s = AdaptedProcess::from_values(tree, x.iter().map(|v| v.exp()).collect()).unwrap();
        let c = self.agent.habits.consumption(tree, &s);
        (s, c)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let tree = self.tree();
        let (s, c) = self.consumption(x);
        let (w, gap) = wealth_from_consumption(self.market, &self.agent.endowment, &c);
        let r = marginal_process(tree, self.agent, &s);
        let mut out = Vec::with_capacity(tree.len());
        for a in 0..tree.level(tree.horizon()).start {
            foc_coordinates(self.market, self.agent, &s, &r, &mut out, a);
            let kids = tree.children(a);
            for q in &self.market.atom(a).complement {
                let v: f64 = kids
                    .clone()
                    .zip(q)
                    .map(|(ch, q)| tree.transition(ch) * w.at(ch) * q)
                    .sum();
                out.push(v / self.scale);
            }
        }
        out.push(gap / self.scale);
        out
    }

    fn jacobian(&self, x: &[f64], f0: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut j = DMatrix::zeros(f0.len(), n);
        let mut xp = x.to_vec();
        for i in 0..n {
            let h = 1e-7 * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let f1 = self.residual(&xp);
            xp[i] = x[i];
            for (r, (a, b)) in f1.iter().zip(f0).enumerate() {
                j[(r, i)] = (a - b) / h;
            }
        }
        j
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn merit(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Damped Newton in log-surplus coordinates. Returns the solution and the
/// iteration count.
fn newton(sys: &System, mut x: Vec<f64>, tol: f64) -> Result<(Vec<f64>, usize)> {
    let mut f = sys.residual(&x);
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence {
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    for it in 0..MAX_NEWTON {
        if max_abs(&f) < tol {
            return Ok((x, it));
        }
        let j = sys.jacobian(&x, &f);
        let rhs = -DVector::from_vec(f.clone());
        let Some(mut dx) = j.lu().solve(&rhs) else {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: max_abs(&f),
            });
        };
        let big = dx.amax();
        if big > 2.0 {
            dx *= 2.0 / big;
        }
        let m0 = merit(&f);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let xt: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + step * d).collect();
            let ft = sys.residual(&xt);
            if ft.iter().all(|v| v.is_finite()) && merit(&ft) < (1.0 - 1e-4 * step) * m0 {
                x = xt;
                f = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // at the floating point floor a non-decreasing step is still fine
            if max_abs(&f) < tol * 1e3 {
                return Ok((x, it));
            }
            return Err(Error::NonConvergence {
                iterations: it,
                residual: max_abs(&f),
            });
        }
    }
    if max_abs(&f) < tol {
        Ok((x, MAX_NEWTON))
    } else {
        Err(Error::NonConvergence {
            iterations: MAX_NEWTON,
            residual: max_abs(&f),
        })
    }
}

/// Assembles a result from a consumption plan.
pub fn finish(market: &Market, agent: &AgentSpec, c: AdaptedProcess, iterations: usize, method: &str) -> Result<SolveResult> {
    let tree = market.tree();
    let (w, _) = wealth_from_consumption(market, &agent.endowment, &c);
    let s = agent.habits.surplus(tree, &c);
    let r = marginal_process(tree, agent, &s);
    let utility = evaluate_utility(tree, agent, &c)?;
    let mut res = SolveResult {
        c,
        w,
        r,
        diagnostics: Diagnostics {
            foc_residual: 0.0,
            utility,
            iterations,
            method: method.to_string(),
        },
    };
    res.diagnostics.foc_residual = foc_residual(market, agent, &res);
    Ok(res)
}

fn initial_guess(market: &Market, agent: &AgentSpec) -> Result<Vec<f64>> {
    let tree = market.tree();
    let pv = present_value(market, &agent.endowment);
    if !(pv > 0.0) {
        return Err(Error::Infeasible("endowment has no positive value".into()));
    }
    let unit = agent.habits.consumption(tree, &AdaptedProcess::constant(tree, 1.0));
    let level = pv / present_value(market, &unit);
    Ok(vec![level.ln(); tree.len()])
}

/// Optimal consumption. Newton on the first-order system; if that stalls the
/// concave oracle is run and its answer polished by Newton.
pub fn solve_consumption(market: &Market, agent: &AgentSpec) -> Result<SolveResult> {
    solve_consumption_tol(market, agent, 1e-12)
}

pub fn solve_consumption_tol(market: &Market, agent: &AgentSpec, tol: f64) -> Result<SolveResult> {
    let tree = market.tree();
    if agent.endowment.values().iter().all(|&v| v == 0.0) {
        return Err(Error::Infeasible("endowment is identically zero".into()));
    }
    let sys = System {
        market,
        agent,
        scale: present_value(market, &agent.endowment),
    };
    let x0 = initial_guess(market, agent)?;
    if let Ok((x, it)) = newton(&sys, x0, tol) {
        let (_, c) = sys.consumption(&x);
        let res = finish(market, agent, c, it, "newton")?;
        if res.diagnostics.foc_residual < FOC_TOL && res.c.values().iter().all(|&v| v >= 0.0) {
            return Ok(res);
        }
    }
    let base = oracle::brute_force_oracle(market, agent)?;
    let s = agent.habits.surplus(tree, &base.c);
    let x: Vec<f64> = s.values().iter().map(|v| v.ln()).collect();
    if let Ok((x, it)) = newton(&sys, x, tol) {
        let (_, c) = sys.consumption(&x);
        let res = finish(market, agent, c, base.diagnostics.iterations + it, "oracle+newton")?;
        if res.diagnostics.foc_residual <= base.diagnostics.foc_residual {
            return Ok(res);
        }
    }
    if base.diagnostics.foc_residual < FOC_TOL {
        Ok(base)
    } else {
        Err(Error::NonConvergence {
            iterations: base.diagnostics.iterations,
            residual: base.diagnostics.foc_residual,
        })
    }
}
