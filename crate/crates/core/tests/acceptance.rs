//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test -p habitree --test acceptance`. The process fails when
//! any criterion fails except for the check listed in `UNATTAINABLE`.

use std::time::{Duration, Instant};

use habitree::asymptotics::{log_grid, propensity_sweep};
use habitree::equilibrium::hetero::heterogeneous_equilibrium;
use habitree::equilibrium::iid::{
    beta_sensitivity, bond_derivative_check, example_bond_formula, example_equity_formula, figure_data, IidEconomy,
};
use habitree::equilibrium::{homogeneous_spd, Economy};
use habitree::estimates::{bound_coefficients, check_sandwich};
use habitree::habits::Habits;
use habitree::market::Market;
use habitree::optimizer::{solve_consumption, AgentSpec};
use habitree::oracle::brute_force_oracle;
use habitree::random;
use habitree::tree::AdaptedProcess;

/// The equity plot labels its right endpoint `0.93`, the value `0.9381` truncated, not
/// rounded; no correct implementation lands within 5e-3 of it.
const UNATTAINABLE: &[&str] = &["2:label-0.93"];

struct Check {
    key: String,
    ok: bool,
    detail: String,
}

struct Criterion {
    id: usize,
    title: &'static str,
    checks: Vec<Check>,
    elapsed: Duration,
}

fn check(key: impl Into<String>, ok: bool, detail: impl Into<String>) -> Check {
    Check {
        key: key.into(),
        ok,
        detail: detail.into(),
    }
}

fn within(key: &str, got: f64, want: f64, tol: f64) -> Check {
    let gap = (got - want).abs();
    check(key, gap <= tol, format!("{key}: {got:.10} vs {want:.10}, gap {gap:.2e} (tol {tol:.0e})"))
}

fn timed(id: usize, title: &'static str, budget: Duration, f: impl FnOnce() -> Vec<Check>) -> Criterion {
    let t0 = Instant::now();
    let mut checks = f();
    let elapsed = t0.elapsed();
    checks.push(check(
        format!("{id}:runtime"),
        elapsed <= budget,
        format!("runtime {:.2}s (budget {:.0}s)", elapsed.as_secs_f64(), budget.as_secs_f64()),
    ));
    Criterion {
        id,
        title,
        checks,
        elapsed,
    }
}

fn c1_bond_endpoints() -> Vec<Check> {
    let curve = figure_data(1).unwrap();
    let (b0, b1) = (curve[0].1, curve[100].1);
    vec![
        within("1:beta0-exact", b0, 25.0 / 288.0, 1e-12),
        within("1:beta1-exact", b1, 13.0 / 59.0, 1e-12),
        within("1:printed-formula-0", b0, example_bond_formula(0.0), 1e-12),
        within("1:printed-formula-1", b1, example_bond_formula(1.0), 1e-12),
        within("1:label-0.087", b0, 0.087, 5e-3),
        within("1:label-0.22", b1, 0.22, 5e-3),
    ]
}

fn c2_equity_endpoints() -> Vec<Check> {
    let curve = figure_data(2).unwrap();
    let mut out = Vec::new();
    for (i, beta, label) in [(0usize, 0.0, 0.41), (100, 1.0, 0.93)] {
        let printed = example_equity_formula(beta);
        let econ = IidEconomy::example(beta).unwrap();
        let finite = econ.lucas_price(50, 0, 1.0, 1.0).unwrap();
        out.push(within(&format!("2:T50-vs-printed-{beta}"), finite, printed, 1e-9));
        out.push(within(&format!("2:limit-vs-printed-{beta}"), curve[i].1, printed, 1e-9));
        out.push(within(&format!("2:label-{label}"), curve[i].1, label, 5e-3));
    }
    out.push(within("2:beta0-is-7/17", curve[0].1, 7.0 / 17.0, 1e-12));
    out.push(within("2:beta1-approx", curve[100].1, 0.93814, 1e-4));
    out
}

fn c3_sensitivity() -> Vec<Check> {
    let mut out = Vec::new();
    for f in [1u8, 2] {
        let curve = figure_data(f).unwrap();
        let s = beta_sensitivity(&curve).unwrap();
        let steps_ok = curve.windows(2).all(|w| w[1].0 > w[0].0 && ((w[1].0 - w[0].0) - 0.01).abs() < 1e-12);
        out.push(check(
            format!("3:figure{f}-shape"),
            s.increasing && s.convex && steps_ok,
            format!(
                "figure {f}: min step {:.3e}, min second difference {:.3e}",
                s.min_step, s.min_curvature
            ),
        ));
    }
    let econ = IidEconomy::example(0.0).unwrap();
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    for t in [1usize, 3] {
        let (r1, r2) = bond_derivative_check(&econ, t, &grid).unwrap();
        out.push(check(
            format!("3:bond-derivatives-T{t}"),
            r1 < 1e-6 && r2 < 1e-6,
            format!("T={t}: first derivative rel gap {r1:.2e}, second {r2:.2e}"),
        ));
    }
    out
}

fn c4_oracle() -> Vec<Check> {
    let mut rng = random::rng(404);
    let (mut du, mut dc) = (0.0f64, 0.0f64);
    let mut errors = 0;
    for i in 0..50 {
        let t = 1 + i % 3;
        let m = random::general_market(&mut rng, t, 3, i % 2 == 0);
        let a = random::random_agent(&mut rng, m.tree(), 0.3, false);
        match (solve_consumption(&m, &a), brute_force_oracle(&m, &a)) {
            (Ok(f), Ok(o)) => {
                du = du.max((f.diagnostics.utility - o.diagnostics.utility).abs());
                dc = dc.max(f.c.max_abs_diff(&o.c));
            }
            _ => errors += 1,
        }
    }
    vec![
        check("4:solved", errors == 0, format!("{errors} of 50 instances failed to solve")),
        check("4:utility", du < 1e-8, format!("max utility gap {du:.2e}")),
        check("4:consumption", dc < 1e-6, format!("max consumption gap {dc:.2e}")),
    ]
}

fn c5_sandwich() -> Vec<Check> {
    let mut rng = random::rng(505);
    let mut worst = f64::INFINITY;
    let mut vacuous = 0;
    for i in 0..100 {
        let m = if i % 2 == 0 {
            random::idiosyncratic_market(&mut rng, 2)
        } else {
            random::class_c_market(&mut rng, 3, 3)
        };
        let a = random::random_agent(&mut rng, m.tree(), 0.3, false);
        let coef = bound_coefficients(&m, &a).unwrap();
        let sol = solve_consumption(&m, &a).unwrap();
        let rep = check_sandwich(&m, &coef, &sol);
        vacuous += rep.vacuous as usize;
        worst = worst.min(rep.min_slack);
    }
    let mut width = 0.0f64;
    let mut det_slack = f64::INFINITY;
    for _ in 0..20 {
        let m = random::deterministic_market(&mut rng, 3);
        let a = random::random_agent(&mut rng, m.tree(), 0.3, false);
        let coef = bound_coefficients(&m, &a).unwrap();
        let sol = solve_consumption(&m, &a).unwrap();
        let rep = check_sandwich(&m, &coef, &sol);
        width = width.max(rep.max_width());
        det_slack = det_slack.min(rep.min_slack);
    }
    vec![
        check(
            "5:random-slack",
            worst >= -1e-9 && vacuous == 0,
            format!("min slack {worst:.2e} over 100 instances, {vacuous} vacuous"),
        ),
        check(
            "5:deterministic-tight",
            width <= 1e-9 && det_slack >= -1e-9,
            format!("deterministic max width {width:.2e}, min slack {det_slack:.2e}"),
        ),
    ]
}

fn c6_asymptotics() -> Vec<Check> {
    let grid = log_grid(1.0, 5.0, 1);
    let mut out = Vec::new();
    let mut rng = random::rng(606);
    let m = random::general_market(&mut rng, 2, 3, true);
    let a = random::random_agent(&mut rng, m.tree(), 0.3, false);
    let rep = propensity_sweep(&m, &a, &grid).unwrap();
    let rate = rep.fitted_rate.unwrap_or(f64::NAN);
    out.push(check(
        "6:deterministic-rate-slope",
        (-1.1..=-0.9).contains(&rate),
        format!("fitted log-log slope {rate:.4}"),
    ));

    let mut rng = random::rng(607);
    let m = random::general_market(&mut rng, 3, 3, false);
    let positive = m.spd().values().iter().all(|v| *v > 0.0);
    let a = random::random_agent(&mut rng, m.tree(), 0.3, false);
    let rep = propensity_sweep(&m, &a, &grid).unwrap();
    let last = rep.sweep.last().unwrap().err_c;
    let monotone = rep.sweep.windows(2).all(|w| w[1].err_c < w[0].err_c);
    out.push(check(
        "6:general-market",
        positive && !m.is_deterministic_rate() && monotone && last < 1e-4,
        format!("general market: monotone {monotone}, error at 1e5 {last:.2e}"),
    ));
    out
}

fn c7_homogeneous() -> Vec<Check> {
    let mut rng = random::rng(707);
    let mut gap = 0.0f64;
    let mut reduction = 0.0f64;
    for i in 0..10 {
        let tree = random::random_tree(&mut rng, 3, 3);
        let mut eps = AdaptedProcess::constant(&tree, 1.0);
        for n in 1..tree.len() {
            let p = tree.parent(n).unwrap();
            eps.set(n, eps.at(p) * (1.1 + 0.05 * ((n * 7 + i) % 5) as f64));
        }
        let (g, rho, beta) = (2.0 + 0.2 * i as f64, 0.01 * i as f64, 0.03 * i as f64);
        let a = AgentSpec::new(&tree, g, rho, Habits::static_beta(3, beta).unwrap(), eps.clone()).unwrap();
        let econ = Economy::new(tree.clone(), vec![a]).unwrap();
        let r = homogeneous_spd(&econ).unwrap();
        let market = Market::complete_from_spd(tree.clone(), r.m.clone()).unwrap();
        let sol = solve_consumption(&market, &econ.agents[0]).unwrap();
        gap = gap.max(sol.c.max_abs_diff(&eps));

        let a0 = AgentSpec::new(&tree, g, rho, Habits::none(3), eps.clone()).unwrap();
        let r0 = homogeneous_spd(&Economy::new(tree.clone(), vec![a0]).unwrap()).unwrap();
        for n in 0..tree.len() {
            let k = tree.depth(n) as f64;
            let want = (-rho * k).exp() * (eps.at(n) / eps.at(0)).powf(-g);
            reduction = reduction.max((r0.m.at(n) - want).abs());
        }
    }
    vec![
        check("7:self-consistency", gap < 1e-8, format!("max |c - eps| {gap:.2e}")),
        check("7:no-habit-reduction", reduction < 1e-12, format!("max SPD gap at beta=0 {reduction:.2e}")),
    ]
}

fn desk(g: (f64, f64), r: (f64, f64), beta: f64, share: f64, t: usize) -> Economy {
    let base = IidEconomy::example(0.0).unwrap();
    let tree = base.tree(t).unwrap();
    let eps = base.endowment(&tree);
    let h = Habits::static_beta(t, beta).unwrap();
    let a1 = AgentSpec::new(&tree, g.0, r.0, h.clone(), eps.scale(share)).unwrap();
    let a2 = AgentSpec::new(&tree, g.1, r.1, h, eps.scale(1.0 - share)).unwrap();
    Economy::new(tree, vec![a1, a2]).unwrap()
}

fn c8_heterogeneous() -> Vec<Check> {
    let mut out = Vec::new();
    let instances = [
        ((2.0, 3.0), (0.0, 0.05), 0.1, 0.6, 2),
        ((1.5, 4.0), (0.02, 0.0), 0.3, 0.3, 3),
        ((2.0, 0.5), (0.0, 0.1), 0.5, 0.5, 2),
    ];
    for (i, (g, r, b, s, t)) in instances.into_iter().enumerate() {
        let t0 = Instant::now();
        let e = desk(g, r, b, s, t);
        let res = heterogeneous_equilibrium(&e);
        let dt = t0.elapsed().as_secs_f64();
        match res {
            Ok((res, trace)) => {
                let h = res.excess_demand.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let w = trace.walras.iter().fold(0.0f64, |m, x| m.max(*x));
                out.push(check(
                    format!("8:desk{i}"),
                    h < 1e-10 && w < 1e-10 && dt < 30.0,
                    format!("desk {i}: |h| {h:.2e}, max Walras {w:.2e}, {dt:.2}s"),
                ));
            }
            Err(err) => out.push(check(format!("8:desk{i}"), false, format!("desk {i}: {err}"))),
        }
    }
    let e = desk((2.5, 2.5), (0.03, 0.03), 0.2, 0.5, 3);
    let a = AgentSpec::new(&e.tree, 2.5, 0.03, Habits::static_beta(3, 0.2).unwrap(), e.aggregate()).unwrap();
    let single = Economy::new(e.tree.clone(), vec![a]).unwrap();
    let hom = homogeneous_spd(&single).unwrap();
    let (two, _) = heterogeneous_equilibrium(&e).unwrap();
    let (one, _) = heterogeneous_equilibrium(&single).unwrap();
    let d2 = two.m.max_abs_diff(&hom.m);
    let d1 = one.m.max_abs_diff(&hom.m);
    out.push(check(
        "8:reproduces-homogeneous",
        d1 < 1e-9 && d2 < 1e-9,
        format!("SPD gap N=1 {d1:.2e}, identical N=2 {d2:.2e}"),
    ));
    out
}

fn c9_yield() -> Vec<Check> {
    let mut out = Vec::new();
    let econs = [
        IidEconomy::example(0.0).unwrap(),
        IidEconomy::example(0.5).unwrap(),
        IidEconomy::example(1.0).unwrap(),
        IidEconomy::new(vec![1.4, 1.8, 2.5], vec![0.3, 0.4, 0.3], 3.0, 0.04, 0.3).unwrap(),
    ];
    for (i, e) in econs.iter().enumerate() {
        let target = e.long_run_yield();
        let gaps: Vec<f64> = [10usize, 20, 50]
            .iter()
            .map(|&t| (-e.bond_price(t, 0, t, 1.0).unwrap().ln() / t as f64 - target).abs())
            .collect();
        let shrinking = gaps.windows(2).all(|w| w[1] < w[0]) || gaps.iter().all(|g| *g < 1e-14);
        out.push(check(
            format!("9:economy{i}"),
            gaps[2] < 2e-2 && shrinking,
            format!(
                "economy {i} (beta {}): gaps {:.3e}, {:.3e}, {:.3e}",
                e.beta, gaps[0], gaps[1], gaps[2]
            ),
        ));
    }
    // the tree sum agrees with the closed form on a horizon small enough to enumerate
    let e = &econs[1];
    let tree_price = e.bond_price_tree(8, 0, 8).unwrap()[0];
    let ratio = tree_price / e.bond_price(8, 0, 8, 1.0).unwrap();
    out.push(within("9:tree-over-closed-form", ratio, 1.0, 1e-12));
    out
}

fn main() {
    let s = Duration::from_secs;
    let criteria = vec![
        timed(1, "figure 1 bond endpoints", s(1), c1_bond_endpoints),
        timed(2, "figure 2 equity endpoints", s(5), c2_equity_endpoints),
        timed(3, "beta sensitivity", s(60), c3_sensitivity),
        timed(4, "oracle equivalence", s(60), c4_oracle),
        timed(5, "sandwich bounds", s(120), c5_sandwich),
        timed(6, "asymptotics", s(120), c6_asymptotics),
        timed(7, "homogeneous equilibrium", s(60), c7_homogeneous),
        timed(8, "heterogeneous equilibrium", s(120), c8_heterogeneous),
        timed(9, "long-run yield", s(60), c9_yield),
    ];
    let mut unexpected = Vec::new();
    for c in &criteria {
        let failed: Vec<&Check> = c.checks.iter().filter(|k| !k.ok).collect();
        let verdict = if failed.is_empty() { "PASS" } else { "FAIL" };
        let shown = if failed.is_empty() { c.checks.iter().collect() } else { failed.clone() };
        let detail: Vec<&str> = shown.iter().map(|k| k.detail.as_str()).collect();
        println!(
            "{verdict} criterion {} ({}) [{:.2}s]: {}",
            c.id,
            c.title,
            c.elapsed.as_secs_f64(),
            detail.join("; ")
        );
        for k in failed {
            if !UNATTAINABLE.contains(&k.key.as_str()) {
                unexpected.push(k.key.clone());
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
