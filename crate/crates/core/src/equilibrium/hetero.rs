//! Several agents with a common habit. For weights `λ` the clearing
//! condition `Σ_i λ_i^{1/γ_i} e^{−ρ_i k/γ_i} g̃_k^{−1/γ_i} = ε_k − βε_{k−1}`
//! pins down `g̃_k` node by node, backward in time. The weights are then
//! moved until every budget balances.

use super::{clearing_and_budget, Economy, EquilibriumResult, MARGIN_TOL};
use crate::error::{Error, Result};
use crate::tree::AdaptedProcess;

const MAX_TATONNEMENT: usize = 500;
const MAX_NEWTON: usize = 50;
pub const EXCESS_TOL: f64 = 1e-10;

/// Backward construction for fixed weights.
#[derive(Debug, Clone)]
pub struct Construction {
    pub g: AdaptedProcess,
    pub gtilde: AdaptedProcess,
    pub consumptions: Vec<AdaptedProcess>,
}

/// Solves `Σ_i w_i y^{−1/γ_i} = s` for `y > 0`.
fn solve_node(w: &[f64], gam: &[f64], s: f64) -> Result<f64> {
    let n = w.len() as f64;
    // one term alone reaches s at the left end; every term is at most s/N at the right
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (wi, gi) in w.iter().zip(gam) {
        lo = lo.max(gi * (wi / s).ln());
        hi = hi.max(gi * (n * wi / s).ln());
    }
    let f = |u: f64| -> (f64, f64) {
        let mut v = -s;
        let mut d = 0.0;
        for (wi, gi) in w.iter().zip(gam) {
            let t = wi * (-u / gi).exp();
            v += t;
            d -= t / gi;
        }
        (v, d)
    };
    let mut u = lo;
    for _ in 0..200 {
        let (v, d) = f(u);
        if v == 0.0 {
            break;
        }
        if v > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let mut next = u - v / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-15 * u.abs().max(1.0) {
            u = next;
            break;
        }
        u = next;
    }
    let y = u.exp();
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::NonConvergence {
            iterations: 200,
            residual: f(u).0.abs(),
        });
    }
    Ok(y)
}

/// `g_k`, `g̃_k` and the candidate consumptions for weights `λ`.
pub fn construct(economy: &Economy, lambdas: &[f64]) -> Result<Construction> {
    if lambdas.len() != economy.agents.len() || lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::schema("lambdas", "one positive weight per agent required"));
    }
    let tree = &economy.tree;
    let t = tree.horizon();
    let b = economy.beta;
    let s = economy.aggregate_surplus();
    let gam: Vec<f64> = economy.agents.iter().map(|a| a.gamma).collect();
    let mut g = AdaptedProcess::zeros(tree);
    let mut gt = AdaptedProcess::zeros(tree);
    for k in (0..=t).rev() {
        let w: Vec<f64> = economy
            .agents
            .iter()
            .zip(lambdas)
            .map(|(a, l)| l.powf(1.0 / a.gamma) * (-a.rho * k as f64 / a.gamma).exp())
            .collect();
        for n in tree.level(k) {
            if !(s.at(n) > 0.0) {
                return Err(Error::Condition(format!(
                    "aggregate endowment does not outgrow the habit at `{}`",
                    tree.id(n)
                )));
            }
            let carry: f64 = b * tree.children(n).map(|c| tree.transition(c) * gt.at(c)).sum::<f64>();
            let y = solve_node(&w, &gam, s.at(n))?;
            let gn = y - carry;
            if !(gn > 0.0) {
                return Err(Error::Condition(format!(
                    "state price would be non-positive at `{}` ({gn:.3e})",
                    tree.id(n)
                )));
            }
            gt.set(n, y);
            g.set(n, gn);
        }
    }
    let consumptions = economy
        .agents
        .iter()
        .zip(lambdas)
        .map(|(a, l)| {
            let surplus = AdaptedProcess::from_fn(tree, |n| {
                let k = tree.depth(n) as f64;
                l.powf(1.0 / a.gamma) * (-a.rho * k / a.gamma).exp() * gt.at(n).powf(-1.0 / a.gamma)
            });
            a.habits.consumption(tree, &surplus)
        })
        .collect();
    Ok(Construction {
        g,
        gtilde: gt,
        consumptions,
    })
}

fn excess_from(economy: &Economy, lambdas: &[f64], c: &Construction) -> Vec<f64> {
    let tree = &economy.tree;
    economy
        .agents
        .iter()
        .zip(lambdas)
        .zip(&c.consumptions)
        .map(|((a, l), ci)| {
            let v: f64 = (0..tree.len())
                .map(|n| tree.node_probability(n) * c.g.at(n) * (ci.at(n) - a.endowment.at(n)))
                .sum();
            v / l
        })
        .collect()
}

/// `h_i(λ) = (Σ_k E[g_k c^i_k] − Σ_k E[g_k ε^i_k]) / λ_i`.
pub fn excess_demand(economy: &Economy, lambdas: &[f64]) -> Result<Vec<f64>> {
    let c = construct(economy, lambdas)?;
    Ok(excess_from(economy, lambdas, &c))
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn walras(l: &[f64], h: &[f64]) -> f64 {
    l.iter().zip(h).map(|(a, b)| a * b).sum::<f64>().abs()
}

fn simplex(mut l: Vec<f64>) -> Vec<f64> {
    let s: f64 = l.iter().sum();
    l.iter_mut().for_each(|x| *x /= s);
    l
}

/// Relative margins of the sufficient existence conditions:
/// `min (ε_k − βε_{k−1})/ε_k` and `min 1 − β E[max_j (ε_k − βε_{k−1})^{−γ_j} | G_{k−1}] / R`
/// with `R = min_j e^{−ρ_j} (ε_{k−1} − βε_{k−2})^{−γ_j}`.
pub fn heterogeneous_conditions(economy: &Economy) -> (f64, f64) {
    let tree = &economy.tree;
    let s = economy.aggregate_surplus();
    let eps = economy.aggregate();
    let growth = (1..tree.len()).map(|n| s.at(n) / eps.at(n)).fold(f64::INFINITY, f64::min);
    let mut marg = f64::INFINITY;
    for p in 0..tree.level(tree.horizon()).start {
        let e: f64 = tree
            .children(p)
            .map(|c| {
                let x = s.at(c);
                let m = economy
                    .agents
                    .iter()
                    .map(|a| if x > 0.0 { x.powf(-a.gamma) } else { f64::INFINITY })
                    .fold(0.0, f64::max);
                tree.transition(c) * m
            })
            .sum();
        let rhs = economy
            .agents
            .iter()
            .map(|a| (-a.rho).exp() * s.at(p).powf(-a.gamma))
            .fold(f64::INFINITY, f64::min);
        marg = marg.min(1.0 - economy.beta * e / rhs);
    }
    (growth, marg)
}

/// Trace of one equilibrium search.
#[derive(Debug, Clone, Default)]
pub struct SearchTrace {
    /// `‖h‖∞` at every iterate.
    pub excess: Vec<f64>,
    /// `|Σ λ_i h_i|` at every iterate.
    pub walras: Vec<f64>,
    pub tatonnement_steps: usize,
    pub newton_steps: usize,
}

/// Weights on the unit simplex with `h(λ*) = 0`, found by multiplicative
/// tâtonnement and finished with Newton in log-weights.
pub fn heterogeneous_equilibrium(economy: &Economy) -> Result<(EquilibriumResult, SearchTrace)> {
    let n = economy.agents.len();
    let mut trace = SearchTrace::default();
    let (growth, _) = heterogeneous_conditions(economy);
    if !(growth > MARGIN_TOL) {
        return Err(Error::Condition(format!("aggregate endowment does not outgrow the habit (margin {growth:.3e})")));
    }
    let mut lam = vec![1.0 / n as f64; n];
    let mut h = excess_demand(economy, &lam)?;
    let record = |l: &[f64], h: &[f64], tr: &mut SearchTrace| {
        tr.excess.push(sup(h));
        tr.walras.push(walras(l, h));
    };
    record(&lam, &h, &mut trace);
    let mut kappa = 1.0;
    let polish_from = 1e-6;
    let mut steps = 0;
    while sup(&h) > polish_from && steps < MAX_TATONNEMENT && n > 1 {
        let cand = simplex(
            lam.iter()
                .zip(&h)
                .map(|(l, hi)| l * (-kappa * hi / (1.0 + hi.abs())).exp())
                .collect(),
        );
        match excess_demand(economy, &cand) {
            Ok(hc) if sup(&hc) < sup(&h) => {
                lam = cand;
                h = hc;
                record(&lam, &h, &mut trace);
            }
            _ => kappa *= 0.5,
        }
        steps += 1;
        if kappa < 1e-12 {
            break;
        }
    }
    trace.tatonnement_steps = steps;
    // Newton on u_i = log(λ_i/λ_n), i < n
    let mut newton = 0;
    while sup(&h) > EXCESS_TOL * 1e-2 && newton < MAX_NEWTON && n > 1 {
        newton += 1;
        let u: Vec<f64> = (0..n - 1).map(|i| (lam[i] / lam[n - 1]).ln()).collect();
        let weights = |u: &[f64]| -> Vec<f64> {
            let mut v: Vec<f64> = u.iter().map(|x| x.exp()).collect();
            v.push(1.0);
            simplex(v)
        };
        let mut jac = nalgebra::DMatrix::zeros(n - 1, n - 1);
        for j in 0..n - 1 {
            let mut up = u.clone();
            let step = 1e-7 * (1.0 + u[j].abs());
            up[j] += step;
            let hp = excess_demand(economy, &weights(&up))?;
            for i in 0..n - 1 {
                jac[(i, j)] = (hp[i] - h[i]) / step;
            }
        }
        let rhs = nalgebra::DVector::from_fn(n - 1, |i, _| -h[i]);
        let Some(du) = jac.lu().solve(&rhs) else { break };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-6 {
            let un: Vec<f64> = u.iter().zip(du.iter()).map(|(a, d)| a + t * d).collect();
            let ln = weights(&un);
            if let Ok(hn) = excess_demand(economy, &ln) {
                if sup(&hn) < sup(&h) {
                    lam = ln;
                    h = hn;
                    record(&lam, &h, &mut trace);
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    trace.newton_steps = newton;
    if !(sup(&h) < EXCESS_TOL) {
        return Err(Error::NonConvergence {
            iterations: steps + newton,
            residual: sup(&h),
        });
    }
    let c = construct(economy, &lam)?;
    let g0 = c.g.at(0);
    let m = c.g.scale(1.0 / g0);
    let mtilde = c.gtilde.scale(1.0 / g0);
    let (clear, budget) = clearing_and_budget(economy, &m, &c.consumptions);
    Ok((
        EquilibriumResult {
            m,
            mtilde,
            lambdas: lam,
            consumptions: c.consumptions,
            clearing_residual: clear,
            budget_residual: budget,
            excess_demand: h,
            iterations: steps + newton,
        },
        trace,
    ))
}
