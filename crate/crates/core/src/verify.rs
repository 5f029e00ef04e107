//! Batch property runner behind `habitree verify`.
//!
//! A manifest lists suites of randomized instances. Each instance draws its
//! own generator seed from the base seed and its id, so results do not depend
//! on scheduling. Output is sorted by instance id.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::habit_floors;
use crate::equilibrium::hetero::{excess_demand, heterogeneous_equilibrium};
use crate::equilibrium::iid::IidEconomy;
use crate::equilibrium::{equilibrium_foc_residual, homogeneous_spd, Economy};
use crate::error::{Error, Result};
use crate::estimates::{bound_coefficients, check_sandwich};
use crate::habits::Habits;
use crate::market::{perturbed_spd, perturbed_spd_direct, Market};
use crate::optimizer::{solve_consumption, AgentSpec};
use crate::oracle::brute_force_oracle;
use crate::random::{self, TestRng};
use crate::tree::AdaptedProcess;

pub const BUNDLED_MANIFEST: &str = include_str!("data/verify_manifest.json");

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct Manifest {
    pub seed: u64,
    pub suites: Vec<Suite>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct Suite {
    pub check: String,
    pub count: usize,
    pub horizon: usize,
    pub max_children: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceOutcome {
    pub id: String,
    pub check: String,
    pub passed: bool,
    /// The measured quantity compared against the tolerance.
    pub metric: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Counts {
    pub passed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub counts: BTreeMap<String, Counts>,
    pub instances: Vec<InstanceOutcome>,
}

pub const CHECKS: [&str; 8] = [
    "tower",
    "spd",
    "oracle",
    "sandwich",
    "floors",
    "homogeneous",
    "heterogeneous",
    "iid",
];

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(text).map_err(|e| {
        Error::schema(format!("manifest:{}:{}", e.line(), e.column()), e.to_string())
    })?;
    for (i, s) in m.suites.iter().enumerate() {
        if !CHECKS.contains(&s.check.as_str()) {
            return Err(Error::schema(format!("suites[{i}].check"), format!("unknown check `{}`", s.check)));
        }
        if s.horizon == 0 || s.max_children == 0 {
            return Err(Error::schema(format!("suites[{i}]"), "horizon and max_children must be positive"));
        }
    }
    Ok(m)
}

/// SplitMix64 mixing of the base seed with the instance ordinal.
fn instance_seed(base: u64, suite: usize, i: usize) -> u64 {
    let mut z = base ^ ((suite as u64) << 32) ^ i as u64;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs every instance; `tol` scales all pass thresholds (1 keeps the
/// defaults).
pub fn run_manifest(manifest: &Manifest, seed: u64, tol: f64) -> VerifyReport {
    let jobs: Vec<(String, &Suite, u64)> = manifest
        .suites
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            (0..s.count).map(move |i| (format!("{}-{si:02}-{i:03}", s.check), s, instance_seed(seed, si, i)))
        })
        .collect();
    let mut instances: Vec<InstanceOutcome> = jobs
        .par_iter()
        .map(|(id, s, sd)| {
            let mut rng = random::rng(*sd);
            let (passed, metric, detail) = match run_check(s, &mut rng, tol) {
                Ok(x) => x,
                Err(e) => (false, f64::NAN, e.to_string()),
            };
            InstanceOutcome {
                id: id.clone(),
                check: s.check.clone(),
                passed,
                metric,
                detail,
            }
        })
        .collect();
    instances.sort_by(|a, b| a.id.cmp(&b.id));
    let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
    for o in &instances {
        let c = counts.entry(o.check.clone()).or_default();
        if o.passed {
            c.passed += 1;
        } else {
            c.failed += 1;
        }
    }
    let passed = instances.iter().filter(|o| o.passed).count();
    VerifyReport {
        seed,
        total: instances.len(),
        passed,
        failed: instances.len() - passed,
        counts,
        instances,
    }
}

type Outcome = (bool, f64, String);

fn below(metric: f64, limit: f64, what: &str) -> Outcome {
    (metric < limit, metric, format!("{what} {metric:.3e} (limit {limit:.1e})"))
}

fn run_check(s: &Suite, rng: &mut TestRng, tol: f64) -> Result<Outcome> {
    let (t, ch) = (s.horizon, s.max_children);
    match s.check.as_str() {
        "tower" => {
            let tree = random::random_tree(rng, t, ch);
            let x: Vec<f64> = tree.level(t).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut worst: f64 = 0.0;
            for m in 0..t {
                for k in 0..=m {
                    let direct = tree.cond_expectation(&x, t, k)?;
                    let inner = tree.cond_expectation(&x, t, m)?;
                    let twice = tree.cond_expectation(&inner, m, k)?;
                    for (a, b) in direct.iter().zip(&twice) {
                        worst = worst.max((a - b).abs());
                    }
                }
            }
            Ok(below(worst, 1e-12 * tol, "tower gap"))
        }
        "spd" => {
            let det = rng.gen_bool(0.5);
            let m = random::general_market(rng, t, ch, det);
            let a = random::random_agent(rng, m.tree(), 0.3, false);
            let p = m.pricing_error(m.spd());
            let back = perturbed_spd(m.tree(), m.spd(), &a.habits);
            let direct = perturbed_spd_direct(m.tree(), m.spd(), &a.habits);
            Ok(below(p.max(back.max_abs_diff(&direct)), 1e-10 * tol, "pricing/perturbation gap"))
        }
        "oracle" => {
            let det = rng.gen_bool(0.5);
            let m = random::general_market(rng, t, ch, det);
            let a = random::random_agent(rng, m.tree(), 0.3, false);
            let f = solve_consumption(&m, &a)?;
            let o = brute_force_oracle(&m, &a)?;
            let du = (f.diagnostics.utility - o.diagnostics.utility).abs();
            let dc = f.c.max_abs_diff(&o.c);
            Ok((
                du < 1e-8 * tol && dc < 1e-6 * tol,
                du.max(dc),
                format!("utility gap {du:.3e}, consumption gap {dc:.3e}"),
            ))
        }
        "sandwich" => {
            let m = if rng.gen_bool(0.5) {
                random::idiosyncratic_market(rng, t.min(2))
            } else {
                random::class_c_market(rng, t, ch)
            };
            let a = random::random_agent(rng, m.tree(), 0.3, false);
            let coef = bound_coefficients(&m, &a)?;
            let sol = solve_consumption(&m, &a)?;
            let rep = check_sandwich(&m, &coef, &sol);
            let v = if rep.vacuous { " (vacuous)" } else { "" };
            Ok((
                rep.holds(1e-9 * tol),
                rep.min_slack,
                format!("min slack {:.3e}{v}", rep.min_slack),
            ))
        }
        "floors" => {
            let det = rng.gen_bool(0.5);
            let m = random::general_market(rng, t, ch, det);
            let a = random::random_agent(rng, m.tree(), 0.3, false);
            // the floors are limits in ε_0; probe far out
            let mut eps = a.endowment.clone();
            eps.set(0, 1e6);
            let a = a.with_endowment(eps);
            let sol = solve_consumption(&m, &a)?;
            let f = habit_floors(&m, &a, &sol);
            let margin = f.c_margin.min(f.w_margin);
            Ok((f.holds, margin, format!("floor margin {margin:.3e}")))
        }
        "homogeneous" => {
            let tree = random::random_tree(rng, t, ch);
            let mut eps = AdaptedProcess::constant(&tree, 1.0);
            for n in 1..tree.len() {
                let p = tree.parent(n).expect("non-root");
                eps.set(n, eps.at(p) * rng.gen_range(1.05..1.6));
            }
            let beta = rng.gen_range(0.0..0.3);
            let a = AgentSpec::new(&tree, rng.gen_range(1.5..4.0), rng.gen_range(0.0..0.1), Habits::static_beta(t, beta)?, eps)?;
            let econ = Economy::new(tree, vec![a])?;
            match homogeneous_spd(&econ) {
                Ok(r) => {
                    let market = Market::complete_from_spd(econ.tree.clone(), r.m.clone())?;
                    let sol = solve_consumption(&market, &econ.agents[0])?;
                    let gap = sol.c.max_abs_diff(&econ.aggregate());
                    let foc = equilibrium_foc_residual(&econ, &r)?;
                    Ok(below(gap.max(foc), 1e-8 * tol, "self-consistency gap"))
                }
                Err(Error::Condition(msg)) => Ok((true, 0.0, format!("no equilibrium, rejected: {msg}"))),
                Err(e) => Err(e),
            }
        }
        "heterogeneous" => {
            let base = IidEconomy::example(0.0)?;
            let tree = base.tree(t)?;
            let eps = base.endowment(&tree);
            let beta = rng.gen_range(0.0..0.3);
            let h = Habits::static_beta(t, beta)?;
            let share = rng.gen_range(0.2..0.8);
            let a1 = AgentSpec::new(&tree, rng.gen_range(1.5..3.5), rng.gen_range(0.0..0.05), h.clone(), eps.scale(share))?;
            let a2 = AgentSpec::new(&tree, rng.gen_range(1.5..3.5), rng.gen_range(0.0..0.05), h, eps.scale(1.0 - share))?;
            let econ = Economy::new(tree, vec![a1, a2])?;
            let (r, trace) = heterogeneous_equilibrium(&econ)?;
            let h = excess_demand(&econ, &r.lambdas)?;
            let sup = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let walras = trace.walras.iter().fold(0.0f64, |m, x| m.max(*x));
            Ok((
                sup < 1e-10 * tol && walras < 1e-10 * tol,
                sup.max(walras),
                format!("excess demand {sup:.3e}, Walras {walras:.3e}"),
            ))
        }
        "iid" => {
            let k = 2 + rng.gen_range(0..ch.max(1));
            let values: Vec<f64> = (0..k).map(|_| rng.gen_range(1.2..3.0)).collect();
            let probs = {
                let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect::<Vec<_>>()
            };
            let beta = rng.gen_range(0.0..0.2);
            let econ = IidEconomy::new(values, probs, rng.gen_range(1.5..4.0), rng.gen_range(0.0..0.1), beta)?;
            let tree = econ.tree(t)?;
            let eps = econ.endowment(&tree);
            let s = econ.lucas_price_tree(t)?;
            let mut worst: f64 = 0.0;
            for nd in 0..tree.len() {
                let cf = econ.lucas_price(t, tree.depth(nd), econ.factor(&tree, nd), eps.at(nd))?;
                worst = worst.max((cf - s.at(nd)).abs() / cf.abs().max(1.0));
            }
            for n in 1..=t {
                let tr = econ.bond_price_tree(t, 0, n)?;
                worst = worst.max((econ.bond_price(t, 0, n, 1.0)? - tr[0]).abs());
            }
            Ok(below(worst, 1e-10 * tol, "closed form vs tree"))
        }
        other => Err(Error::schema("check", format!("unknown check `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_manifest_passes_and_is_deterministic() {
        let m = parse_manifest(BUNDLED_MANIFEST).unwrap();
        let a = run_manifest(&m, m.seed, 1.0);
        for o in a.instances.iter().filter(|o| !o.passed) {
            eprintln!("{} {}", o.id, o.detail);
        }
        assert_eq!(a.failed, 0);
        assert_eq!(a.counts.len(), CHECKS.len());
        let b = run_manifest(&m, m.seed, 1.0);
        assert_eq!(a.instances, b.instances);
    }

    #[test]
    fn unknown_check_is_rejected() {
        let bad = r#"{"seed": 1, "suites": [{"check": "nope", "count": 1, "horizon": 1, "max_children": 2}]}"#;
        assert!(matches!(parse_manifest(bad), Err(Error::Schema { .. })));
    }
}
