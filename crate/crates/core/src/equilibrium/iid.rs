//! Geometric random walk economies: `ε_0 = 1`, `ε_k = X_1 ⋯ X_k` with
//! i.i.d. growth factors. Bond and Lucas tree prices in closed form, checked
//! against the tree sums.

use super::{homogeneous_spd, Economy};
use crate::error::{Error, Result};
use crate::habits::Habits;
use crate::optimizer::AgentSpec;
use crate::tree::{AdaptedProcess, EventTree};

#[derive(Debug, Clone, PartialEq)]
pub struct IidEconomy {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
    pub gamma: f64,
    pub rho: f64,
    pub beta: f64,
}

/// Moments entering every closed form.
#[derive(Debug, Clone, Copy)]
struct Moments {
    q: f64,
    /// `E[X^{−γ}]`
    a: f64,
    /// `E[(X − β)^{−γ}]`
    b: f64,
    /// `E[(X − β)^{−γ−1}]`
    b1: f64,
    /// `E[(X − β)^{−γ−2}]`
    b2: f64,
    /// `E[X^{1−γ}]`
    c: f64,
    /// `E[X (X − β)^{−γ}]`
    e1: f64,
}

impl IidEconomy {
    pub fn new(values: Vec<f64>, probs: Vec<f64>, gamma: f64, rho: f64, beta: f64) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(Error::schema("growth", "values and probabilities must be non-empty and aligned"));
        }
        if probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::schema("growth.probs", "probabilities must lie in (0,1] and sum to 1"));
        }
        if !(gamma > 0.0) || (gamma - 1.0).abs() < 1e-12 {
            return Err(Error::schema("gamma", "risk aversion must be positive and different from 1"));
        }
        if !(beta >= 0.0) {
            return Err(Error::schema("beta", "habit coefficient must be >= 0"));
        }
        let e = IidEconomy {
            values,
            probs,
            gamma,
            rho,
            beta,
        };
        e.check_beta(beta)?;
        Ok(e)
    }

    /// The two-point economy `X ∈ {3, 4}` with equal odds, `γ = 2`, `ρ = 0`.
    pub fn example(beta: f64) -> Result<Self> {
        IidEconomy::new(vec![3.0, 4.0], vec![0.5, 0.5], 2.0, 0.0, beta)
    }

    /// Checks `X > β + β^{1/γ} e^{−ρ/γ}` on the whole support.
    pub fn check_beta(&self, beta: f64) -> Result<()> {
        let bound = beta + beta.powf(1.0 / self.gamma) * (-self.rho / self.gamma).exp();
        let xmin = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        if !(xmin > bound) {
            return Err(Error::Condition(format!(
                "growth factor {xmin} must exceed {bound} for habit {beta}"
            )));
        }
        Ok(())
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::schema("beta", "habit coefficient must be >= 0"));
        }
        self.check_beta(beta)?;
        Ok(IidEconomy { beta, ..self.clone() })
    }

    fn mean(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.values.iter().zip(&self.probs).map(|(x, p)| p * f(*x)).sum()
    }

    fn moments(&self) -> Moments {
        let (g, b) = (self.gamma, self.beta);
        Moments {
            q: (-self.rho).exp(),
            a: self.mean(|x| x.powf(-g)),
            b: self.mean(|x| (x - b).powf(-g)),
            b1: self.mean(|x| (x - b).powf(-g - 1.0)),
            b2: self.mean(|x| (x - b).powf(-g - 2.0)),
            c: self.mean(|x| x.powf(1.0 - g)),
            e1: self.mean(|x| x * (x - b).powf(-g)),
        }
    }

    pub fn tree(&self, horizon: usize) -> Result<EventTree> {
        EventTree::uniform(horizon, &self.probs)
    }

    /// Growth factor realized on the branch into `node` (1 at the root).
    pub fn factor(&self, tree: &EventTree, node: usize) -> f64 {
        match tree.parent(node) {
            Some(p) => self.values[node - tree.children(p).start],
            None => 1.0,
        }
    }

    pub fn endowment(&self, tree: &EventTree) -> AdaptedProcess {
        let mut e = AdaptedProcess::constant(tree, 1.0);
        for n in 1..tree.len() {
            let p = tree.parent(n).unwrap();
            e.set(n, e.at(p) * self.factor(tree, n));
        }
        e
    }

    pub fn economy(&self, horizon: usize) -> Result<Economy> {
        let tree = self.tree(horizon)?;
        let eps = self.endowment(&tree);
        let h = Habits::static_beta(horizon, self.beta)?;
        let agent = AgentSpec::new(&tree, self.gamma, self.rho, h, eps)?;
        Economy::new(tree, vec![agent])
    }

    /// `(1 − β/X_k)^{−γ} − β e^{−ρ} E[(X − β)^{−γ}]`; the bracket is 1 at
    /// the root.
    fn denominator(&self, m: &Moments, k: usize, last: f64) -> f64 {
        let head = if k == 0 {
            1.0
        } else {
            (1.0 - self.beta / last).powf(-self.gamma)
        };
        head - self.beta * m.q * m.b
    }

    /// `E[M_n/M_k | G_k]` on a horizon-`T` economy, where `last = X_k`.
    pub fn bond_price(&self, horizon: usize, k: usize, n: usize, last: f64) -> Result<f64> {
        if !(k <= n && n <= horizon) {
            return Err(Error::schema("maturity", format!("need 0 <= k <= n <= T, got k={k}, n={n}, T={horizon}")));
        }
        if n == k {
            return Ok(1.0);
        }
        let m = self.moments();
        let d = (n - k) as i32;
        let core = m.q.powi(d) * m.a.powi(d - 1) * m.b;
        let tail = if n < horizon { 1.0 - self.beta * m.q * m.a } else { 1.0 };
        Ok(core * tail / self.denominator(&m, k, last))
    }

    /// The same price from the equilibrium SPD on the tree, one value per
    /// depth-`k` node.
    pub fn bond_price_tree(&self, horizon: usize, k: usize, n: usize) -> Result<Vec<f64>> {
        let econ = self.economy(horizon)?;
        let r = homogeneous_spd(&econ)?;
        let tree = &econ.tree;
        let e = tree.cond_expectation(r.m.level(tree, n), n, k)?;
        Ok(e.iter().zip(r.m.level(tree, k)).map(|(e, m)| e / m).collect())
    }

    /// `∂B(0,T)/∂β` and `∂²B(0,T)/∂β²`.
    pub fn bond_derivatives(&self, horizon: usize) -> (f64, f64) {
        let m = self.moments();
        let g = self.gamma;
        let k = m.q.powi(horizon as i32) * m.a.powi(horizon as i32 - 1);
        let qq = 1.0 - self.beta * m.q * m.b;
        let db = g * m.b1;
        let d2b = g * (g + 1.0) * m.b2;
        let num1 = db + m.q * m.b * m.b;
        let first = k * num1 / (qq * qq);
        let minus_dq = m.q * m.b + self.beta * m.q * db;
        let second = k * ((d2b + 2.0 * m.q * m.b * db) * qq + 2.0 * num1 * minus_dq) / qq.powi(3);
        (first, second)
    }

    /// `ρ − log E[X^{−γ}]`, the long-maturity yield.
    pub fn long_run_yield(&self) -> f64 {
        self.rho - self.moments().a.ln()
    }

    /// `Σ_{n>k} E[(M_n/M_k) ε_n | G_k]` at a depth-`k` node with endowment
    /// `eps_k` and last growth factor `last`.
    pub fn lucas_price(&self, horizon: usize, k: usize, last: f64, eps_k: f64) -> Result<f64> {
        if k > horizon {
            return Err(Error::schema("k", "period beyond the horizon"));
        }
        if k == horizon {
            return Ok(0.0);
        }
        let m = self.moments();
        let bqb = self.beta * m.q * m.b;
        let mut sum = 0.0;
        for n in k + 1..horizon {
            let d = (n - k) as i32;
            sum += m.q.powi(d) * m.c.powi(d - 1) * (m.e1 - bqb * m.c);
        }
        let d = (horizon - k) as i32;
        sum += m.q.powi(d) * m.c.powi(d - 1) * m.e1;
        Ok(eps_k * sum / self.denominator(&m, k, last))
    }

    /// Lucas tree price at every node from the defining sum.
    pub fn lucas_price_tree(&self, horizon: usize) -> Result<AdaptedProcess> {
        let econ = self.economy(horizon)?;
        let r = homogeneous_spd(&econ)?;
        let tree = &econ.tree;
        let eps = econ.aggregate();
        let mut v = AdaptedProcess::zeros(tree);
        for k in (0..horizon).rev() {
            for n in tree.level(k) {
                let s: f64 = tree
                    .children(n)
                    .map(|c| tree.transition(c) * r.m.at(c) / r.m.at(n) * (eps.at(c) + v.at(c)))
                    .sum();
                v.set(n, s);
            }
        }
        Ok(v)
    }

    /// `lim_{T→∞} S_(0,T)`.
    pub fn lucas_longrun(&self) -> Result<f64> {
        let m = self.moments();
        if !(m.q * m.c < 1.0) {
            return Err(Error::Condition(format!(
                "e^(-rho) E[X^(1-gamma)] = {} must be below 1",
                m.q * m.c
            )));
        }
        let d0 = 1.0 - self.beta * m.q * m.b;
        Ok(m.q * (m.e1 - self.beta * m.q * m.b * m.c) / (d0 * (1.0 - m.q * m.c)))
    }

    /// Long-run value as typeset in the source, with `e^{ρ}/(1 − E[X^{1−γ}])`
    /// in place of `e^{−ρ}/(1 − e^{−ρ}E[X^{1−γ}])`. Equal to
    /// [`Self::lucas_longrun`] only when `ρ = 0`.
    pub fn lucas_longrun_printed(&self) -> f64 {
        let m = self.moments();
        let d0 = 1.0 - self.beta * m.q * m.b;
        (m.e1 - self.beta * m.q * m.c * m.b) / d0 * self.rho.exp() / (1.0 - m.c)
    }
}

/// Bond price of the two-point example as printed: `r(β)`.
pub fn example_bond_formula(beta: f64) -> f64 {
    let s = (3.0 - beta).powi(-2) + (4.0 - beta).powi(-2);
    s / (2.0 - beta * s)
}

/// Long-run Lucas equity of the two-point example as printed.
pub fn example_equity_formula(beta: f64) -> f64 {
    let s = (3.0 - beta).powi(-2) + (4.0 - beta).powi(-2);
    let w = 7.0 / 24.0 * beta;
    24.0 / 17.0 * ((3.0 - w) * (3.0 - beta).powi(-2) + (4.0 - w) * (4.0 - beta).powi(-2)) / (2.0 - beta * s)
}

/// `a, a + step, …` up to `b` inclusive (within half a step).
pub fn beta_grid(a: f64, b: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
        return Err(Error::schema("beta_grid", "expected a:b:step with step > 0 and b >= a"));
    }
    let n = ((b - a) / step + 0.5).floor() as usize;
    Ok((0..=n).map(|i| a + step * i as f64).collect())
}

/// `(β, B(0,T))` over the grid.
pub fn bond_curve(econ: &IidEconomy, horizon: usize, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&b| {
            let e = econ.with_beta(b)?;
            Ok((b, e.bond_price(horizon, 0, horizon, 1.0)?))
        })
        .collect()
}

/// `(β, S_(0,∞))` over the grid.
pub fn lucas_curve(econ: &IidEconomy, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&b| Ok((b, econ.with_beta(b)?.lucas_longrun()?)))
        .collect()
}

/// Figure data: 101 points on `β ∈ [0, 1]` for the two-point example.
/// `1` is the one-period bond, `2` the long-run Lucas equity.
pub fn figure_data(figure: u8) -> Result<Vec<(f64, f64)>> {
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let econ = IidEconomy::example(0.0)?;
    match figure {
        1 => bond_curve(&econ, 1, &grid),
        2 => lucas_curve(&econ, &grid),
        _ => Err(Error::schema("figure", "figure must be 1 or 2")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub increasing: bool,
    pub convex: bool,
    /// Smallest forward difference on the grid.
    pub min_step: f64,
    /// Smallest second difference `v_{i−1} − 2v_i + v_{i+1}`.
    pub min_curvature: f64,
}

/// Strict monotonicity and midpoint convexity of a curve sampled on an
/// equally spaced grid.
pub fn beta_sensitivity(curve: &[(f64, f64)]) -> Result<Sensitivity> {
    if curve.len() < 10 {
        return Err(Error::schema("beta_grid", "at least 10 grid points are needed"));
    }
    let v: Vec<f64> = curve.iter().map(|p| p.1).collect();
    let min_step = v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let min_curvature = v
        .windows(3)
        .map(|w| w[0] - 2.0 * w[1] + w[2])
        .fold(f64::INFINITY, f64::min);
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(Sensitivity {
        increasing: min_step > 0.0,
        convex: min_curvature >= -4.0 * f64::EPSILON * scale,
        min_step,
        min_curvature,
    })
}

/// Largest relative gap between the analytic bond derivatives and centered
/// differences, over the grid. Returns `(first, second)`.
pub fn bond_derivative_check(econ: &IidEconomy, horizon: usize, grid: &[f64]) -> Result<(f64, f64)> {
    let mut worst = (0.0f64, 0.0f64);
    let price = |b: f64| -> Result<f64> { econ.with_beta(b)?.bond_price(horizon, 0, horizon, 1.0) };
    for &b in grid {
        // shift the stencil inward at the left end of the grid
        let h1 = 1e-5;
        let mid = b.max(h1);
        let (a1, _) = econ.with_beta(mid)?.bond_derivatives(horizon);
        let fd1 = (price(mid + h1)? - price(mid - h1)?) / (2.0 * h1);
        let h2 = 1e-4;
        let mid2 = b.max(h2);
        let (_, a2) = econ.with_beta(mid2)?.bond_derivatives(horizon);
        let fd2 = (price(mid2 + h2)? - 2.0 * price(mid2)? + price(mid2 - h2)?) / (h2 * h2);
        worst.0 = worst.0.max(((fd1 - a1) / a1).abs());
        worst.1 = worst.1.max(((fd2 - a2) / a2).abs());
    }
    Ok(worst)
}
