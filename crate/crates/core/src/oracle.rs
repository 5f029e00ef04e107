//! Direct concave maximization over wealth coordinates.
//!
//! Every feasible plan is `c = ε + Aθ` where `θ` are the coordinates of
//! `W_k` in the orthonormal payoff bases. Surplus is linear in `θ`, so the
//! objective is concave and a damped Newton ascent with a Cholesky solve
//! converges to the unique maximizer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::optimizer::{finish, AgentSpec, SolveResult};
use crate::tree::AdaptedProcess;

struct Lifted {
    /// `s = s0 + B θ`
    b: DMatrix<f64>,
    s0: DVector<f64>,
    a: DMatrix<f64>,
    eps: DVector<f64>,
    weight: DVector<f64>,
}

fn lift(market: &Market, agent: &AgentSpec) -> Lifted {
    let tree = market.tree();
    let n = tree.len();
    let mut cols: Vec<(usize, usize)> = Vec::new();
    for a in 0..tree.level(tree.horizon()).start {
        for j in 0..market.atom(a).rank() {
            cols.push((a, j));
        }
    }
    let mut amat = DMatrix::zeros(n, cols.len());
    for (col, &(a, j)) in cols.iter().enumerate() {
        let q = &market.atom(a).basis[j];
        let mut inv = 0.0;
        for (ch, qv) in tree.children(a).zip(q) {
            amat[(ch, col)] = *qv;
            inv += tree.transition(ch) * market.spd_ratio(ch) * qv;
        }
        amat[(a, col)] = -inv;
    }
    let h = agent.habits.surplus_matrix(tree);
    let hmat = DMatrix::from_fn(n, n, |i, j| h[i][j]);
    let eps = DVector::from_column_slice(agent.endowment.values());
    let weight = DVector::from_fn(n, |i, _| {
        tree.node_probability(i) * (-agent.rho * tree.depth(i) as f64).exp()
    });
    Lifted {
        b: &hmat * &amat,
        s0: &hmat * &eps,
        a: amat,
        eps,
        weight,
    }
}

fn objective(l: &Lifted, s: &DVector<f64>, g: f64) -> f64 {
    s.iter()
        .zip(l.weight.iter())
        .map(|(s, w)| w * s.powf(1.0 - g) / (1.0 - g))
        .sum()
}

/// Barrier ascent on `max t` subject to `s(θ) ≥ t`, stopped as soon as a
/// strictly positive surplus is found.
fn phase_one(l: &Lifted, scale: f64) -> Result<DVector<f64>> {
    let d = l.b.ncols();
    let n = l.b.nrows();
    let mut theta = DVector::zeros(d);
    let mut t = l.s0.min() - scale;
    let mut mu = scale / n as f64;
    for _ in 0..40 {
        for _ in 0..100 {
            let s = &l.s0 + &l.b * &theta;
            let gap = s.add_scalar(-t);
            let inv = gap.map(|v| 1.0 / v);
            let inv2 = gap.map(|v| 1.0 / (v * v));
            // gradient and negative Hessian in (θ, t)
            let mut grad = DVector::zeros(d + 1);
            grad.rows_mut(0, d).copy_from(&(l.b.transpose() * &inv * mu));
            grad[d] = 1.0 - mu * inv.sum();
            let mut ext = DMatrix::zeros(n, d + 1);
            ext.columns_mut(0, d).copy_from(&l.b);
            ext.column_mut(d).fill(-1.0);
            let weighted = DMatrix::from_fn(n, d + 1, |i, j| ext[(i, j)] * inv2[i] * mu);
            let hess = ext.transpose() * weighted + DMatrix::identity(d + 1, d + 1) * 1e-14 * scale;
            let Some(ch) = hess.cholesky() else { break };
            let step = ch.solve(&grad);
            let dec = grad.dot(&step);
            let mut alpha = 1.0;
            let phi = |th: &DVector<f64>, tt: f64| {
                let g = (&l.s0 + &l.b * th).add_scalar(-tt);
                if g.iter().any(|v| *v <= 0.0) {
                    f64::NEG_INFINITY
                } else {
                    tt + mu * g.iter().map(|v| v.ln()).sum::<f64>()
                }
            };
            let f0 = phi(&theta, t);
            loop {
                let th = &theta + step.rows(0, d) * alpha;
                let tt = t + step[d] * alpha;
                if phi(&th, tt) >= f0 + 1e-4 * alpha * dec {
                    theta = th;
                    t = tt;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    break;
                }
            }
            if t > 0.0 {
                return Ok(theta);
            }
            if dec < 1e-20 * scale.max(1.0) || alpha < 1e-12 {
                break;
            }
        }
        mu *= 0.1;
    }
    Err(Error::Infeasible(
        "no trading strategy keeps consumption above the habit level".into(),
    ))
}

/// Maximizes utility directly over wealth coordinates.
pub fn brute_force_oracle(market: &Market, agent: &AgentSpec) -> Result<SolveResult> {
    let tree = market.tree();
    let l = lift(market, agent);
    let g = agent.gamma;
    let d = l.b.ncols();
    let scale = l.eps.amax().max(1e-300);
    let mut theta = if l.s0.min() > 0.0 {
        DVector::zeros(d)
    } else {
        phase_one(&l, scale)?
    };
    let mut iterations = 0;
    let mut polish = 0;
    for it in 0..500 {
        iterations = it;
        let s = &l.s0 + &l.b * &theta;
        let f = objective(&l, &s, g);
        let du = DVector::from_fn(s.len(), |i, _| l.weight[i] * s[i].powf(-g));
        let d2 = DVector::from_fn(s.len(), |i, _| g * l.weight[i] * s[i].powf(-g - 1.0));
        let grad = l.b.transpose() * &du;
        let weighted = DMatrix::from_fn(l.b.nrows(), d, |i, j| l.b[(i, j)] * d2[i]);
        let neg_hess = l.b.transpose() * weighted;
        let Some(ch) = neg_hess.cholesky() else {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: grad.amax(),
            });
        };
        let step = ch.solve(&grad);
        let dec = grad.dot(&step);
        let fscale = f.abs().max(1e-300);
        if dec <= 1e-30 * fscale {
            break;
        }
        if dec < 1e-10 * fscale {
            // objective changes are below rounding; finish with pure Newton
            let th = &theta + &step;
            if (&l.s0 + &l.b * &th).iter().all(|v| *v > 0.0) {
                theta = th;
                polish += 1;
                if polish < 6 {
                    continue;
                }
            }
            break;
        }
        let mut alpha = 1.0;
        let mut moved = false;
        while alpha > 1e-14 {
            let th = &theta + &step * alpha;
            let st = &l.s0 + &l.b * &th;
            if st.iter().all(|v| *v > 0.0) {
                let ft = objective(&l, &st, g);
                if ft >= f + 1e-4 * alpha * dec {
                    theta = th;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let c = &l.eps + &l.a * &theta;
    let c = AdaptedProcess::from_values(tree, c.iter().copied().collect())?;
    finish(market, agent, c, iterations, "oracle")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::habits::Habits;
    use crate::market::MarketSpec;
    use crate::tree::EventTree;

    fn bond_market(tree: EventTree) -> Market {
        Market::new(MarketSpec {
            interest: AdaptedProcess::zeros(&tree),
            tree,
            assets: vec![],
            classc_blocks: None,
            idio_factor: None,
        })
        .unwrap()
    }

    #[test]
    fn infeasible_habit_addiction() {
        // nothing today and nothing in one state tomorrow: borrowing is
        // impossible without defaulting there, so c_0 = 0 and no surplus
        let m = bond_market(EventTree::uniform(1, &[0.5, 0.5]).unwrap());
        let tree = m.tree();
        let eps = AdaptedProcess::from_values(tree, vec![0.0, 1.0, 0.0]).unwrap();
        let a = AgentSpec::new(tree, 2.0, 0.0, Habits::static_beta(1, 2.0).unwrap(), eps).unwrap();
        assert!(matches!(brute_force_oracle(&m, &a), Err(Error::Infeasible(_))));
    }

    #[test]
    fn phase_one_finds_interior_start() {
        // ε = (1, 0) with β = 2: zero trading leaves s_1 = -2, borrowing fixes it
        let m = bond_market(EventTree::uniform(1, &[1.0]).unwrap());
        let tree = m.tree();
        let eps = AdaptedProcess::from_values(tree, vec![1.0, 0.0]).unwrap();
        let a = AgentSpec::new(tree, 2.0, 0.0, Habits::static_beta(1, 2.0).unwrap(), eps).unwrap();
        let r = brute_force_oracle(&m, &a).unwrap();
        let s = a.habits.surplus(tree, &r.c);
        assert!(s.values().iter().all(|v| *v > 0.0));
        // c_0 + c_1 = 1 and s_0^{-2} = 3 s_1^{-2} with s_1 = 1 - 3 c_0
        let c0 = 1.0 / (3.0 + 3f64.sqrt());
        assert!((r.c.at(0) - c0).abs() < 1e-12);
        assert!((r.c.at(1) - (1.0 - c0)).abs() < 1e-12);
    }
}
