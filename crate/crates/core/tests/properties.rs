use proptest::prelude::*;

use habitree::equilibrium::hetero::excess_demand;
use habitree::equilibrium::iid::IidEconomy;
use habitree::equilibrium::{homogeneous_spd, Economy};
use habitree::habits::Habits;
use habitree::io;
use habitree::market::{perturbed_spd, perturbed_spd_direct};
use habitree::optimizer::{evaluate_utility, solve_consumption, wealth_from_consumption, AgentSpec};
use habitree::random;
use habitree::tree::AdaptedProcess;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn tower_property(seed in any::<u64>(), t in 1usize..5, ch in 1usize..4) {
        let mut rng = random::rng(seed);
        let tree = random::random_tree(&mut rng, t, ch);
        let x: Vec<f64> = tree.level(t).map(|n| (n as f64 * 0.37).sin()).collect();
        for m in 0..t {
            for k in 0..=m {
                let direct = tree.cond_expectation(&x, t, k).unwrap();
                let inner = tree.cond_expectation(&x, t, m).unwrap();
                let twice = tree.cond_expectation(&inner, m, k).unwrap();
                for (a, b) in direct.iter().zip(&twice) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conditional_expectation_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = random::rng(seed);
        let tree = random::random_tree(&mut rng, 3, 3);
        let x: Vec<f64> = tree.level(3).map(|n| (n as f64).cos()).collect();
        let y: Vec<f64> = tree.level(3).map(|n| 1.0 / (1.0 + n as f64)).collect();
        let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let ex = tree.cond_expectation(&x, 3, 1).unwrap();
        let ey = tree.cond_expectation(&y, 3, 1).unwrap();
        let ez = tree.cond_expectation(&z, 3, 1).unwrap();
        for i in 0..ez.len() {
            prop_assert!((ez[i] - a * ex[i] - b * ey[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_spd_prices_every_asset(seed in any::<u64>(), det in any::<bool>()) {
        let mut rng = random::rng(seed);
        let m = random::general_market(&mut rng, 3, 3, det);
        prop_assert!(m.pricing_error(m.spd()) < 1e-10);
        prop_assert!((m.spd().at(0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn perturbed_spd_backward_equals_direct(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let m = random::general_market(&mut rng, 3, 3, false);
        let a = random::random_agent(&mut rng, m.tree(), 0.4, false);
        let back = perturbed_spd(m.tree(), m.spd(), &a.habits);
        let direct = perturbed_spd_direct(m.tree(), m.spd(), &a.habits);
        prop_assert!(back.max_abs_diff(&direct) < 1e-12 * (1.0 + back.values().iter().fold(0.0f64, |s, v| s.max(v.abs()))));
    }

    #[test]
    fn habits_surplus_round_trip(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let tree = random::random_tree(&mut rng, 3, 3);
        let a = random::random_agent(&mut rng, &tree, 0.5, false);
        let s = a.habits.surplus(&tree, &a.endowment);
        let back = a.habits.consumption(&tree, &s);
        prop_assert!(back.max_abs_diff(&a.endowment) < 1e-12);
    }
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn optimum_satisfies_budget_and_beats_neighbours(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let m = random::general_market(&mut rng, 2, 3, seed % 2 == 0);
        let a = random::random_agent(&mut rng, m.tree(), 0.3, false);
        let r = solve_consumption(&m, &a).unwrap();
        prop_assert!(r.diagnostics.foc_residual < 1e-9);
        let (_, gap) = wealth_from_consumption(&m, &a.endowment, &r.c);
        prop_assert!(gap.abs() < 1e-9);
        // shifting consumption along a replicable zero-cost direction lowers utility
        let tree = m.tree();
        let mut alt = r.c.clone();
        let kid = tree.children(0).start;
        let d = 1e-3 * r.c.at(0).min(r.c.at(kid));
        alt.set(0, r.c.at(0) - d);
        let bump = d * (1.0 + m.spec().interest.at(kid));
        for c in tree.children(0) {
            alt.set(c, alt.at(c) + bump);
        }
        if let Ok(u) = evaluate_utility(tree, &a, &alt) {
            prop_assert!(u <= r.diagnostics.utility + 1e-12);
        }
    }

    #[test]
    fn scaling_of_a_pure_initial_endowment(seed in any::<u64>(), t in 0.1f64..50.0) {
        let mut rng = random::rng(seed);
        let m = random::general_market(&mut rng, 2, 3, false);
        let a = random::random_agent(&mut rng, m.tree(), 0.3, false);
        let unit = AdaptedProcess::from_fn(m.tree(), |n| if n == 0 { 1.0 } else { 0.0 });
        let r1 = solve_consumption(&m, &a.with_endowment(unit.clone())).unwrap();
        let rt = solve_consumption(&m, &a.with_endowment(unit.scale(t))).unwrap();
        prop_assert!(rt.c.max_abs_diff(&r1.c.scale(t)) < 1e-9 * t.max(1.0));
    }

    #[test]
    fn excess_demand_is_walras_and_homogeneous(w in 0.05f64..0.95, g1 in 1.5f64..4.0, g2 in 1.5f64..4.0, beta in 0.0f64..0.4, eta in 0.2f64..5.0) {
        let base = IidEconomy::example(0.0).unwrap();
        let tree = base.tree(2).unwrap();
        let eps = base.endowment(&tree);
        let h = Habits::static_beta(2, beta).unwrap();
        let a1 = AgentSpec::new(&tree, g1, 0.01, h.clone(), eps.scale(0.5)).unwrap();
        let a2 = AgentSpec::new(&tree, g2, 0.03, h, eps.scale(0.5)).unwrap();
        let e = Economy::new(tree, vec![a1, a2]).unwrap();
        let lam = [w, 1.0 - w];
        let hv = excess_demand(&e, &lam).unwrap();
        let scale = hv.iter().fold(1.0f64, |s, x| s.max(x.abs()));
        let walras: f64 = lam.iter().zip(&hv).map(|(l, x)| l * x).sum();
        prop_assert!(walras.abs() < 1e-10 * scale);
        let hs = excess_demand(&e, &[eta * lam[0], eta * lam[1]]).unwrap();
        for (x, y) in hv.iter().zip(&hs) {
            prop_assert!((x - y).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn iid_closed_forms_match_tree(x1 in 1.3f64..2.0, x2 in 2.1f64..3.5, p in 0.1f64..0.9, g in 1.5f64..4.0, rho in 0.0f64..0.1, beta in 0.0f64..0.3, t in 1usize..5) {
        let e = IidEconomy::new(vec![x1, x2], vec![p, 1.0 - p], g, rho, beta).unwrap();
        let tree = e.tree(t).unwrap();
        let eps = e.endowment(&tree);
        let s = e.lucas_price_tree(t).unwrap();
        for nd in 0..tree.len() {
            let cf = e.lucas_price(t, tree.depth(nd), e.factor(&tree, nd), eps.at(nd)).unwrap();
            prop_assert!((cf - s.at(nd)).abs() < 1e-10 * cf.abs().max(1.0));
        }
        for n in 0..=t {
            let tr = e.bond_price_tree(t, 0, n).unwrap()[0];
            prop_assert!((tr - e.bond_price(t, 0, n, 1.0).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn equilibrium_json_round_trips(seed in any::<u64>()) {
        let base = IidEconomy::example(0.0).unwrap();
        let tree = base.tree(2).unwrap();
        let eps = base.endowment(&tree);
        let beta = (seed % 30) as f64 / 100.0;
        let a = AgentSpec::new(&tree, 2.0 + (seed % 7) as f64 / 3.0, 0.02, Habits::static_beta(2, beta).unwrap(), eps).unwrap();
        let e = Economy::new(tree.clone(), vec![a]).unwrap();
        let r = homogeneous_spd(&e).unwrap();
        let text = serde_json::to_string(&io::equilibrium_to_json(&tree, &r)).unwrap();
        let back = io::equilibrium_from_json(&tree, &io::parse_json(&text).unwrap()).unwrap();
        prop_assert_eq!(back, r);
    }
}
