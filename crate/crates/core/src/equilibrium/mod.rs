//! Arrow-Debreu equilibria of complete markets under static habits.

pub mod hetero;
pub mod iid;

use crate::error::{Error, Result};
use crate::market::{perturbed_spd, Market};
use crate::optimizer::{simplified_foc_residual, AgentSpec};
use crate::tree::{AdaptedProcess, EventTree};

/// Relative margins below this are treated as violations of a strict inequality.
pub const MARGIN_TOL: f64 = 1e-10;

/// A complete-market economy. Every agent has the same one-lag habit `β`.
#[derive(Debug, Clone)]
pub struct Economy {
    pub tree: EventTree,
    pub beta: f64,
    pub agents: Vec<AgentSpec>,
}

impl Economy {
    pub fn new(tree: EventTree, agents: Vec<AgentSpec>) -> Result<Self> {
        let Some(first) = agents.first() else {
            return Err(Error::schema("agents", "at least one agent is required"));
        };
        let beta = first
            .habits
            .as_static()
            .ok_or_else(|| Error::schema("agents[0].beta", "equilibrium needs static one-lag habits"))?;
        for (i, a) in agents.iter().enumerate() {
            if a.habits.as_static() != Some(beta) {
                return Err(Error::schema(
                    format!("agents[{i}].beta"),
                    "all agents must share the same habit coefficient",
                ));
            }
            if a.endowment.values().len() != tree.len() {
                return Err(Error::schema(format!("agents[{i}].endowment"), "one value per node required"));
            }
        }
        let econ = Economy { tree, beta, agents };
        let eps = econ.aggregate();
        if let Some(n) = (0..econ.tree.len()).find(|&n| !(eps.at(n) > 0.0)) {
            return Err(Error::schema(
                format!("endowment.{}", econ.tree.id(n)),
                "aggregate endowment must be positive",
            ));
        }
        Ok(econ)
    }

    pub fn aggregate(&self) -> AdaptedProcess {
        let mut e = AdaptedProcess::zeros(&self.tree);
        for a in &self.agents {
            e = e.zip_with(&a.endowment, |x, y| x + y);
        }
        e
    }

    /// `ε_k − β ε_{k−1}`, with `ε_{−1} = 0`.
    pub fn aggregate_surplus(&self) -> AdaptedProcess {
        let eps = self.aggregate();
        AdaptedProcess::from_fn(&self.tree, |n| match self.tree.parent(n) {
            Some(p) => eps.at(n) - self.beta * eps.at(p),
            None => eps.at(n),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub m: AdaptedProcess,
    pub mtilde: AdaptedProcess,
    pub lambdas: Vec<f64>,
    pub consumptions: Vec<AdaptedProcess>,
    /// `max_k |Σ_i c^i_k − ε_k|`.
    pub clearing_residual: f64,
    /// `max_i |Σ_k E[M_k (c^i_k − ε^i_k)]|`.
    pub budget_residual: f64,
    pub excess_demand: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub holds: bool,
    /// `min (ε_k − β ε_{k−1}) / ε_k` over `k ≥ 1`.
    pub growth_margin: f64,
    /// `min [1 − β e^{−ρ} E[(ε_k − β ε_{k−1})^{−γ} | G_{k−1}] / (ε_{k−1} − β ε_{k−2})^{−γ}]`.
    pub marginal_margin: f64,
    /// Margin of the sufficient condition
    /// `ε_k > β ε_{k−1} + β^{1/γ} e^{−ρ/γ} (ε_{k−1} − β ε_{k−2})`, relative to `ε_k`.
    pub sufficient_margin: f64,
    pub sufficient: bool,
}

fn single(economy: &Economy) -> Result<&AgentSpec> {
    match economy.agents.as_slice() {
        [a] => Ok(a),
        _ => Err(Error::schema("agents", "homogeneous economy needs exactly one agent")),
    }
}

/// The two strict inequalities characterizing existence with one agent, and
/// the simpler sufficient condition.
pub fn homogeneous_conditions(economy: &Economy) -> Result<ConditionReport> {
    let a = single(economy)?;
    let tree = &economy.tree;
    let (b, g, q) = (economy.beta, a.gamma, (-a.rho).exp());
    let s = economy.aggregate_surplus();
    let eps = economy.aggregate();
    let mut growth = f64::INFINITY;
    let mut suff = f64::INFINITY;
    for n in 1..tree.len() {
        let p = tree.parent(n).unwrap();
        growth = growth.min(s.at(n) / eps.at(n));
        suff = suff.min((s.at(n) - b.powf(1.0 / g) * (-a.rho / g).exp() * s.at(p)) / eps.at(n));
    }
    let mut marginal = f64::INFINITY;
    for p in 0..tree.level(tree.horizon()).start {
        let e: f64 = tree
            .children(p)
            .map(|c| tree.transition(c) * pos_pow(s.at(c), -g))
            .sum();
        marginal = marginal.min(1.0 - b * q * e / s.at(p).powf(-g));
    }
    let holds = growth > MARGIN_TOL && marginal > MARGIN_TOL;
    Ok(ConditionReport {
        holds,
        growth_margin: growth,
        marginal_margin: marginal,
        sufficient_margin: suff,
        sufficient: suff > MARGIN_TOL,
    })
}

/// `x^p` for `x > 0`, `+inf` otherwise (used with negative `p`).
fn pos_pow(x: f64, p: f64) -> f64 {
    if x > 0.0 {
        x.powf(p)
    } else {
        f64::INFINITY
    }
}

/// The unique equilibrium SPD with one agent consuming the aggregate endowment:
/// `M_k ∝ e^{−ρk} [(ε_k − βε_{k−1})^{−γ} − β e^{−ρ} E[(ε_{k+1} − βε_k)^{−γ} | G_k]]`.
pub fn homogeneous_spd(economy: &Economy) -> Result<EquilibriumResult> {
    let a = single(economy)?;
    let cond = homogeneous_conditions(economy)?;
    if !cond.holds {
        return Err(Error::Condition(format!(
            "no equilibrium: growth margin {:.3e}, marginal-utility margin {:.3e}",
            cond.growth_margin, cond.marginal_margin
        )));
    }
    let tree = &economy.tree;
    let t = tree.horizon();
    let (b, g, q) = (economy.beta, a.gamma, (-a.rho).exp());
    let s = economy.aggregate_surplus();
    let raw = AdaptedProcess::from_fn(tree, |n| {
        let k = tree.depth(n);
        let own = s.at(n).powf(-g);
        let next = if k < t {
            tree.children(n)
                .map(|c| tree.transition(c) * s.at(c).powf(-g))
                .sum::<f64>()
        } else {
            0.0
        };
        q.powi(k as i32) * (own - b * q * next)
    });
    let m = raw.scale(1.0 / raw.at(0));
    let habits = &a.habits;
    let mtilde = perturbed_spd(tree, &m, habits);
    let eps = economy.aggregate();
    Ok(EquilibriumResult {
        m,
        mtilde,
        lambdas: vec![1.0],
        consumptions: vec![eps],
        clearing_residual: 0.0,
        budget_residual: 0.0,
        excess_demand: vec![0.0],
        iterations: 0,
    })
}

/// Worst violation of the simplified first-order condition for each agent's
/// consumption under the equilibrium `M̃`.
pub fn equilibrium_foc_residual(economy: &Economy, result: &EquilibriumResult) -> Result<f64> {
    let market = Market::complete_from_spd(economy.tree.clone(), result.m.clone())?;
    Ok(economy
        .agents
        .iter()
        .zip(&result.consumptions)
        .map(|(a, c)| simplified_foc_residual(&market, a, &result.mtilde, c))
        .fold(0.0, f64::max))
}

/// `max_k |Σ_i c^i_k − ε_k|` and the largest per-agent budget gap.
pub fn clearing_and_budget(economy: &Economy, m: &AdaptedProcess, cons: &[AdaptedProcess]) -> (f64, f64) {
    let tree = &economy.tree;
    let eps = economy.aggregate();
    let mut clear: f64 = 0.0;
    for n in 0..tree.len() {
        let tot: f64 = cons.iter().map(|c| c.at(n)).sum();
        clear = clear.max((tot - eps.at(n)).abs());
    }
    let budget = economy
        .agents
        .iter()
        .zip(cons)
        .map(|(a, c)| {
            (0..tree.len())
                .map(|n| tree.node_probability(n) * m.at(n) * (c.at(n) - a.endowment.at(n)))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    (clear, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::habits::Habits;
    use crate::optimizer::solve_consumption;

    fn one_agent(tree: EventTree, eps: Vec<f64>, g: f64, rho: f64, b: f64) -> Economy {
        let e = AdaptedProcess::from_values(&tree, eps).unwrap();
        let h = Habits::static_beta(tree.horizon(), b).unwrap();
        let a = AgentSpec::new(&tree, g, rho, h, e).unwrap();
        Economy::new(tree, vec![a]).unwrap()
    }

    #[test]
    fn deterministic_two_period_by_hand() {
        let (g, rho, b, gr) = (2.0, 0.03, 0.4, 1.1);
        let e = one_agent(EventTree::uniform(1, &[1.0]).unwrap(), vec![1.0, gr], g, rho, b);
        let r = homogeneous_spd(&e).unwrap();
        let q = (-rho).exp();
        let hand = q * (gr - b).powf(-g) / (1.0 - b * q * (gr - b).powf(-g));
        assert!((r.m.at(1) - hand).abs() < 1e-14);
    }

    #[test]
    fn shrinking_endowment_has_no_equilibrium() {
        let e = one_agent(EventTree::uniform(1, &[1.0]).unwrap(), vec![1.0, 0.5], 2.0, 0.0, 0.9);
        let c = homogeneous_conditions(&e).unwrap();
        assert!(!c.holds);
        assert!(c.growth_margin < 0.0);
        assert!(matches!(homogeneous_spd(&e), Err(Error::Condition(_))));
    }

    #[test]
    fn no_habit_spd_is_marginal_utility_ratio() {
        let tree = EventTree::uniform(2, &[0.3, 0.7]).unwrap();
        let eps: Vec<f64> = (0..tree.len()).map(|n| 1.0 + 0.1 * n as f64).collect();
        let e = one_agent(tree, eps.clone(), 3.0, 0.05, 0.0);
        let c = homogeneous_conditions(&e).unwrap();
        assert!(c.holds && c.sufficient);
        let r = homogeneous_spd(&e).unwrap();
        for n in 0..e.tree.len() {
            let k = e.tree.depth(n) as f64;
            let want = (-0.05 * k).exp() * (eps[n] / eps[0]).powf(-3.0);
            assert!((r.m.at(n) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn endowment_is_optimal_under_its_own_spd() {
        let tree = EventTree::uniform(3, &[0.5, 0.5]).unwrap();
        let eps: Vec<f64> = (0..tree.len())
            .map(|n| 1.2f64.powi(tree.depth(n) as i32) * (1.0 + 0.05 * (n % 3) as f64))
            .collect();
        let e = one_agent(tree, eps, 2.0, 0.02, 0.3);
        let r = homogeneous_spd(&e).unwrap();
        assert!(equilibrium_foc_residual(&e, &r).unwrap() < 1e-10);
        let market = Market::complete_from_spd(e.tree.clone(), r.m.clone()).unwrap();
        let sol = solve_consumption(&market, &e.agents[0]).unwrap();
        assert!(sol.c.max_abs_diff(&e.aggregate()) < 1e-8);
    }
}
