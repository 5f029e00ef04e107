//! Upper hedging prices and the backward bound recursion for optimal
//! consumption and wealth in class-C and idiosyncratic markets.
//!
//! Sign conventions follow the derivation: with `ξ^k_j` defined as the
//! positive ratio `E[α^{k+1}_j M_{k+1}/M_k | G_k] / D_k`, the bounds read
//!
//! ```text
//! m_k (W_k − (−ε)^U_k) − Σ ξ^k_j c_j ≤ c_k ≤ m_k (W_k + ε^U_k) − Σ ξ^k_j c_j
//! Σ α^k_j c_j − ε^U_k ≤ W_k ≤ Σ α^k_j c_j + (−ε)^U_k
//! m_0 (ε_0 − (−ε)^U_0) ≤ c_0 ≤ m_0 (ε_0 + ε^U_0)
//! ```
//!
//! These collapse to equalities on a single-path market.

use crate::error::{Error, Result};
use crate::market::{perturbed_spd, validate_market_class, Market, MarketClass};
use crate::optimizer::{AgentSpec, SolveResult};
use crate::tree::{AdaptedProcess, EventTree, Partition};

/// Upper hedging wealth of a payment stream `X_1..X_T` (the root entry of
/// `x` is ignored). Discounting uses `M_{k+1}/M_k`.
pub fn upper_hedging(market: &Market, h: &[Partition], x: &AdaptedProcess) -> Result<AdaptedProcess> {
    let tree = market.tree();
    let t = tree.horizon();
    if h.len() != t + 1 {
        return Err(Error::Market("upper hedging needs one partition per depth".into()));
    }
    let mut u = AdaptedProcess::zeros(tree);
    if t == 0 {
        return Ok(u);
    }
    let top = tree.cond_esssup(x.level(tree, t), t, &h[t])?;
    u.set_level(tree, t, &top);
    for k in (1..t).rev() {
        let inner: Vec<f64> = tree
            .level(k)
            .map(|n| x.at(n) + discounted_child_mean(market, n, &u))
            .collect();
        let v = tree.cond_esssup(&inner, k, &h[k])?;
        u.set_level(tree, k, &v);
    }
    u.set(0, discounted_child_mean(market, 0, &u));
    Ok(u)
}

/// `E[(M_{k+1}/M_k) Y_{k+1} | G_k]` at node `n`.
fn discounted_child_mean(market: &Market, n: usize, y: &AdaptedProcess) -> f64 {
    let tree = market.tree();
    tree.children(n)
        .map(|c| tree.transition(c) * market.spd_ratio(c) * y.at(c))
        .sum()
}

#[derive(Debug, Clone)]
pub struct BoundCoefficients {
    /// `m_k` at every node (`m_T = 1`).
    pub m: AdaptedProcess,
    /// `xi[k][j]` holds `ξ^k_j` on the depth-`k` level.
    pub xi: Vec<Vec<Vec<f64>>>,
    /// `alpha[k][j]` holds `α^k_j` on the depth-`k` level, `k >= 1`.
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub delta: AdaptedProcess,
    pub delta_prime: AdaptedProcess,
    pub eta: AdaptedProcess,
    pub eta_prime: AdaptedProcess,
    pub eps_u: AdaptedProcess,
    pub negeps_u: AdaptedProcess,
    pub partitions: Vec<Partition>,
    pub eps0: f64,
    /// Set when some `m_k <= 0`; the bounds then say nothing.
    pub vacuous: bool,
}

/// Partitions `H_k` when the market satisfies the hypotheses of the
/// bounds (idiosyncratic, or class C with deterministic rate).
pub fn hypothesis_partitions(market: &Market) -> Result<Vec<Partition>> {
    let class = validate_market_class(market)?;
    let ok = class.has(MarketClass::Idiosyncratic)
        || (class.has(MarketClass::ClassC) && class.has(MarketClass::DeterministicRate));
    match (ok, class.class_c) {
        (true, Some(h)) => Ok(h),
        _ => Err(Error::Market(
            "bounds need an idiosyncratic market or a class-C market with deterministic rate".into(),
        )),
    }
}

fn level_map(tree: &EventTree, k: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    tree.level(k).map(f).collect()
}

pub fn bound_coefficients(market: &Market, agent: &AgentSpec) -> Result<BoundCoefficients> {
    let h = hypothesis_partitions(market)?;
    let tree = market.tree();
    let t = tree.horizon();
    let g = agent.gamma;
    let hb = &agent.habits;
    let mt = perturbed_spd(tree, market.spd(), hb);
    // q_k = e^{-ρ/γ} (M̃_k / M̃_{k-1})^{-1/γ}
    let q = |n: usize| -> f64 {
        let p = tree.parent(n).unwrap();
        (-agent.rho / g).exp() * (mt.at(n) / mt.at(p)).powf(-1.0 / g)
    };
    let eps = &agent.endowment;
    let eps_u = upper_hedging(market, &h, eps)?;
    let negeps_u = upper_hedging(market, &h, &eps.map(|v| -v))?;

    let mut m = AdaptedProcess::constant(tree, 1.0);
    let mut xi: Vec<Vec<Vec<f64>>> = (0..=t).map(|k| vec![vec![0.0; tree.level_len(k)]; k]).collect();
    let mut alpha: Vec<Vec<Vec<f64>>> = (0..=t).map(|k| vec![vec![0.0; tree.level_len(k)]; k]).collect();
    let mut delta = AdaptedProcess::zeros(tree);
    let mut delta_p = AdaptedProcess::zeros(tree);
    let mut eta = AdaptedProcess::zeros(tree);
    let mut eta_p = AdaptedProcess::zeros(tree);
    let mut vacuous = false;

    if t == 0 {
        return Ok(BoundCoefficients {
            m,
            xi,
            alpha,
            delta,
            delta_prime: delta_p,
            eta,
            eta_prime: eta_p,
            eps_u,
            negeps_u,
            partitions: h,
            eps0: eps.at(0),
            vacuous,
        });
    }

    // period T
    let sup_t = tree.cond_esssup(eps.level(tree, t), t, &h[t])?;
    let inf_t = tree.cond_essinf(eps.level(tree, t), t, &h[t])?;
    for (i, n) in tree.level(t).enumerate() {
        eta.set(n, inf_t[i]);
        eta_p.set(n, sup_t[i]);
        delta.set(n, -sup_t[i]);
        delta_p.set(n, -inf_t[i]);
    }
    alpha[t][t - 1] = level_map(tree, t, |n| q(n) + hb.get(t, t - 1));
    for j in 0..t - 1 {
        alpha[t][j] = level_map(tree, t, |n| hb.get(t, j) - hb.get(t - 1, j) * q(n));
    }

    for k in (0..t).rev() {
        let base = tree.level(k + 1).start;
        let mean_at = |n: usize, v: &[f64]| -> f64 {
            tree.children(n)
                .map(|c| tree.transition(c) * market.spd_ratio(c) * v[c - base])
                .sum()
        };
        let d: Vec<f64> = level_map(tree, k, |n| 1.0 + mean_at(n, &alpha[k + 1][k]));
        for (i, n) in tree.level(k).enumerate() {
            let mk = 1.0 / d[i];
            if !(d[i] > 0.0) || !mk.is_finite() {
                vacuous = true;
            }
            m.set(n, mk);
        }
        for j in 0..k {
            xi[k][j] = tree
                .level(k)
                .enumerate()
                .map(|(i, n)| mean_at(n, &alpha[k + 1][j]) / d[i])
                .collect();
        }
        let dlev = |p: &AdaptedProcess| -> Vec<f64> { p.level(tree, k + 1).to_vec() };
        let (dl, dpl) = (dlev(&delta), dlev(&delta_p));
        let up: Vec<f64> = level_map(tree, k, |n| eps.at(n) - mean_at(n, &dl));
        let lo: Vec<f64> = level_map(tree, k, |n| eps.at(n) - mean_at(n, &dpl));
        if k == 0 {
            let n = 0;
            eta_p.set(n, -mean_at(n, &dl) / d[0]);
            eta.set(n, -mean_at(n, &dpl) / d[0]);
            break;
        }
        let sup = tree.cond_esssup(&up, k, &h[k])?;
        let inf = tree.cond_essinf(&lo, k, &h[k])?;
        for (i, n) in tree.level(k).enumerate() {
            eta_p.set(n, sup[i] / d[i]);
            eta.set(n, inf[i] / d[i]);
            delta.set(n, -eta_p.at(n) / m.at(n));
            delta_p.set(n, -eta.at(n) / m.at(n));
        }
        let mk: Vec<f64> = m.level(tree, k).to_vec();
        let lvl = tree.level(k).start;
        alpha[k][k - 1] = level_map(tree, k, |n| {
            (q(n) + hb.get(k, k - 1) + xi[k][k - 1][n - lvl]) / mk[n - lvl]
        });
        for j in 0..k - 1 {
            alpha[k][j] = level_map(tree, k, |n| {
                (hb.get(k, j) - hb.get(k - 1, j) * q(n) + xi[k][j][n - lvl]) / mk[n - lvl]
            });
        }
    }
    Ok(BoundCoefficients {
        m,
        xi,
        alpha,
        delta,
        delta_prime: delta_p,
        eta,
        eta_prime: eta_p,
        eps_u,
        negeps_u,
        partitions: h,
        eps0: eps.at(0),
        vacuous,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeBounds {
    pub node: String,
    pub depth: usize,
    pub c_lower: f64,
    pub c: f64,
    pub c_upper: f64,
    /// Wealth bounds are absent at the root.
    pub w_lower: Option<f64>,
    pub w: Option<f64>,
    pub w_upper: Option<f64>,
}

impl NodeBounds {
    pub fn slack(&self) -> f64 {
        let mut s = (self.c - self.c_lower).min(self.c_upper - self.c);
        if let (Some(l), Some(w), Some(u)) = (self.w_lower, self.w, self.w_upper) {
            s = s.min(w - l).min(u - w);
        }
        s
    }

    pub fn width(&self) -> f64 {
        let mut s = self.c_upper - self.c_lower;
        if let (Some(l), Some(u)) = (self.w_lower, self.w_upper) {
            s = s.max(u - l);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct SandwichReport {
    pub nodes: Vec<NodeBounds>,
    /// Minimal slack per period.
    pub period_slack: Vec<f64>,
    pub min_slack: f64,
    pub vacuous: bool,
}

impl SandwichReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.vacuous || self.min_slack >= -tol
    }

    pub fn max_width(&self) -> f64 {
        self.nodes.iter().map(NodeBounds::width).fold(0.0, f64::max)
    }
}

/// Evaluates every consumption and wealth bound at the given solution.
pub fn check_sandwich(market: &Market, coef: &BoundCoefficients, result: &SolveResult) -> SandwichReport {
    let tree = market.tree();
    let t = tree.horizon();
    let c = &result.c;
    let w = &result.w;
    let mut nodes = Vec::with_capacity(tree.len());
    let mut period_slack = vec![f64::INFINITY; t + 1];
    for n in 0..tree.len() {
        let k = tree.depth(n);
        let nb = if k == 0 {
            let m0 = coef.m.at(0);
            let e0 = coef.eps0;
            NodeBounds {
                node: tree.id(n).into(),
                depth: 0,
                c_lower: m0 * (e0 - coef.negeps_u.at(0)),
                c: c.at(0),
                c_upper: m0 * (e0 + coef.eps_u.at(0)),
                w_lower: None,
                w: None,
                w_upper: None,
            }
        } else {
            let pos = tree.pos(n);
            let path = tree.path(n);
            let hist_xi: f64 = (0..k).map(|j| coef.xi[k][j][pos] * c.at(path[j])).sum();
            let hist_alpha: f64 = (0..k).map(|j| coef.alpha[k][j][pos] * c.at(path[j])).sum();
            let mk = coef.m.at(n);
            NodeBounds {
                node: tree.id(n).into(),
                depth: k,
                c_lower: mk * (w.at(n) - coef.negeps_u.at(n)) - hist_xi,
                c: c.at(n),
                c_upper: mk * (w.at(n) + coef.eps_u.at(n)) - hist_xi,
                w_lower: Some(hist_alpha - coef.eps_u.at(n)),
                w: Some(w.at(n)),
                w_upper: Some(hist_alpha + coef.negeps_u.at(n)),
            }
        };
        period_slack[k] = period_slack[k].min(nb.slack());
        nodes.push(nb);
    }
    let min_slack = period_slack.iter().copied().fold(f64::INFINITY, f64::min);
    SandwichReport {
        nodes,
        period_slack,
        min_slack,
        vacuous: coef.vacuous,
    }
}

/// No-habit bounds computed from their own simplified recursion:
/// `m_k = 1/(1 + E[α^{k+1}_k M_{k+1}/M_k | G_k])`, `α^k_{k-1} = q_k / m_k`.
/// Returns `(m, alpha)` with `alpha` on each level `k >= 1`.
pub fn no_habit_coefficients(market: &Market, gamma: f64, rho: f64) -> (AdaptedProcess, Vec<Vec<f64>>) {
    let tree = market.tree();
    let t = tree.horizon();
    let m_spd = market.spd();
    let mut m = AdaptedProcess::constant(tree, 1.0);
    let mut alpha: Vec<Vec<f64>> = vec![Vec::new(); t + 1];
    for k in (1..=t).rev() {
        alpha[k] = tree
            .level(k)
            .map(|n| {
                let p = tree.parent(n).unwrap();
                (-rho / gamma).exp() * (m_spd.at(n) / m_spd.at(p)).powf(-1.0 / gamma) / m.at(n)
            })
            .collect();
        let base = tree.level(k).start;
        for a in tree.level(k - 1) {
            let e: f64 = tree
                .children(a)
                .map(|c| tree.transition(c) * market.spd_ratio(c) * alpha[k][c - base])
                .sum();
            m.set(a, 1.0 / (1.0 + e));
        }
    }
    (m, alpha)
}

/// Slack of the no-habit inequalities at a solution.
pub fn check_no_habit_bounds(market: &Market, agent: &AgentSpec, h: &[Partition], result: &SolveResult) -> Result<f64> {
    let tree = market.tree();
    let (m, alpha) = no_habit_coefficients(market, agent.gamma, agent.rho);
    let eu = upper_hedging(market, h, &agent.endowment)?;
    let nu = upper_hedging(market, h, &agent.endowment.map(|v| -v))?;
    let c = &result.c;
    let w = &result.w;
    let e0 = agent.endowment.at(0);
    let mut slack = (c.at(0) - m.at(0) * (e0 - nu.at(0))).min(m.at(0) * (e0 + eu.at(0)) - c.at(0));
    for n in 1..tree.len() {
        let k = tree.depth(n);
        let p = tree.parent(n).unwrap();
        let a = alpha[k][tree.pos(n)];
        slack = slack
            .min(c.at(n) - m.at(n) * (w.at(n) - nu.at(n)))
            .min(m.at(n) * (w.at(n) + eu.at(n)) - c.at(n))
            .min(w.at(n) - (a * c.at(p) - eu.at(n)))
            .min(a * c.at(p) + nu.at(n) - w.at(n));
    }
    Ok(slack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::habits::Habits;
    use crate::market::{Asset, MarketSpec};
    use crate::optimizer::solve_consumption;
    use crate::random;

    fn path_market(t: usize, r: f64) -> Market {
        let tree = EventTree::uniform(t, &[1.0]).unwrap();
        Market::new(MarketSpec {
            interest: AdaptedProcess::from_fn(&tree, |n| if n == 0 { 0.0 } else { r }),
            tree,
            assets: vec![],
            classc_blocks: None,
            idio_factor: None,
        })
        .unwrap()
    }

    #[test]
    fn hedging_trivial_cases() {
        let m = path_market(3, 0.0);
        let h = hypothesis_partitions(&m).unwrap();
        let zero = upper_hedging(&m, &h, &AdaptedProcess::zeros(m.tree())).unwrap();
        assert!(zero.values().iter().all(|v| *v == 0.0));
        let x = AdaptedProcess::from_values(m.tree(), vec![9.0, 1.0, 2.0, 4.0]).unwrap();
        let u = upper_hedging(&m, &h, &x).unwrap();
        assert!((u.at(0) - 7.0).abs() < 1e-14);
    }

    #[test]
    fn complete_market_hedging_is_replication() {
        let tree = EventTree::uniform(2, &[0.5, 0.5]).unwrap();
        let prices = AdaptedProcess::from_values(&tree, vec![3.4, 3.0, 4.0, 2.9, 3.1, 3.7, 4.4]).unwrap();
        let m = Market::new(MarketSpec {
            assets: vec![Asset {
                name: "s".into(),
                prices,
                dividends: AdaptedProcess::zeros(&tree),
            }],
            interest: AdaptedProcess::zeros(&tree),
            tree: tree.clone(),
            classc_blocks: None,
            idio_factor: None,
        });
        let Ok(m) = m else {
            // the chosen prices must admit a positive SPD
            panic!("market rejected");
        };
        let h = hypothesis_partitions(&m).unwrap();
        let x = AdaptedProcess::from_fn(&tree, |n| 0.5 + n as f64);
        let u = upper_hedging(&m, &h, &x).unwrap();
        let pv: f64 = (1..tree.len())
            .map(|n| tree.node_probability(n) * m.spd().at(n) * x.at(n))
            .sum();
        assert!((u.at(0) - pv).abs() < 1e-12);
    }

    #[test]
    fn one_period_coefficients_by_hand() {
        let m = path_market(1, 0.03);
        let tree = m.tree();
        let (g, rho, b) = (2.0, 0.05, 0.2);
        let eps = AdaptedProcess::from_values(tree, vec![1.0, 0.5]).unwrap();
        let a = AgentSpec::new(tree, g, rho, Habits::static_beta(1, b).unwrap(), eps).unwrap();
        let coef = bound_coefficients(&m, &a).unwrap();
        let m1 = 1.0 / 1.03;
        let mt0 = 1.0 + b * m1;
        let a10 = (-rho / g).exp() * (m1 / mt0).powf(-1.0 / g) + b;
        assert!((coef.alpha[1][0][0] - a10).abs() < 1e-14);
        assert!((coef.m.at(0) - 1.0 / (1.0 + a10 * m1)).abs() < 1e-14);
    }

    #[test]
    fn deterministic_bounds_are_tight() {
        let mut rng = random::rng(5);
        for _ in 0..10 {
            let m = random::deterministic_market(&mut rng, 3);
            let a = random::random_agent(&mut rng, m.tree(), 0.3, false);
            let coef = bound_coefficients(&m, &a).unwrap();
            let sol = solve_consumption(&m, &a).unwrap();
            let rep = check_sandwich(&m, &coef, &sol);
            assert!(rep.min_slack > -1e-9);
            assert!(rep.max_width() < 1e-9, "{}", rep.max_width());
        }
    }

    #[test]
    fn delta_equals_minus_hedging_price() {
        let mut rng = random::rng(9);
        for i in 0..10 {
            let m = if i % 2 == 0 {
                random::idiosyncratic_market(&mut rng, 2)
            } else {
                random::class_c_market(&mut rng, 3, 3)
            };
            let a = random::random_agent(&mut rng, m.tree(), 0.3, false);
            let coef = bound_coefficients(&m, &a).unwrap();
            for n in 1..m.tree().len() {
                assert!((coef.delta.at(n) + coef.eps_u.at(n)).abs() < 1e-12);
                assert!((coef.delta_prime.at(n) - coef.negeps_u.at(n)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_habit_matches_general_recursion() {
        let mut rng = random::rng(13);
        let m = random::class_c_market(&mut rng, 3, 3);
        let tree = m.tree();
        let a = AgentSpec::new(tree, 2.5, 0.02, Habits::none(3), random::random_endowment(&mut rng, tree)).unwrap();
        let coef = bound_coefficients(&m, &a).unwrap();
        let (mm, alpha) = no_habit_coefficients(&m, 2.5, 0.02);
        assert!(coef.m.max_abs_diff(&mm) < 1e-13);
        for k in 1..=3 {
            for (x, y) in coef.alpha[k][k - 1].iter().zip(&alpha[k]) {
                assert!((x - y).abs() < 1e-12);
            }
            for j in 0..k - 1 {
                assert!(coef.xi[k][j].iter().all(|v| *v == 0.0));
                assert!(coef.alpha[k][j].iter().all(|v| *v == 0.0));
            }
        }
        let sol = solve_consumption(&m, &a).unwrap();
        let h = hypothesis_partitions(&m).unwrap();
        assert!(check_no_habit_bounds(&m, &a, &h, &sol).unwrap() > -1e-9);
    }

    #[test]
    fn sandwich_on_random_markets() {
        let mut rng = random::rng(17);
        let mut worst = f64::INFINITY;
        for i in 0..40 {
            let m = if i % 2 == 0 {
                random::idiosyncratic_market(&mut rng, 2)
            } else {
                random::class_c_market(&mut rng, 3, 3)
            };
            let a = random::random_agent(&mut rng, m.tree(), 0.3, false);
            let coef = bound_coefficients(&m, &a).unwrap();
            let sol = solve_consumption(&m, &a).unwrap();
            let rep = check_sandwich(&m, &coef, &sol);
            eprintln!("{i} slack {:e} vac {}", rep.min_slack, rep.vacuous);
            worst = worst.min(rep.min_slack);
        }
        assert!(worst > -1e-9, "{worst}");
    }
}
