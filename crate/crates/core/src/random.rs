//! Seeded generators for random trees, markets and agents.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::habits::Habits;
use crate::market::{Asset, Market, MarketSpec};
use crate::optimizer::AgentSpec;
use crate::tree::{AdaptedProcess, EventTree, NodeSpec, Partition};

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn probabilities(rng: &mut TestRng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn build(horizon: usize, children: impl Fn(&[usize]) -> Vec<f64>) -> EventTree {
    // ids encode the branch path, which also lets callers recover it
    let mut specs = vec![NodeSpec {
        id: "r".into(),
        parent: None,
        prob: 1.0,
    }];
    let mut frontier: Vec<(String, Vec<usize>)> = vec![("r".into(), vec![])];
    for _ in 0..horizon {
        let mut next = Vec::new();
        for (id, path) in &frontier {
            for (j, p) in children(path).into_iter().enumerate() {
                let cid = format!("{id}.{j}");
                let mut cp = path.clone();
                cp.push(j);
                specs.push(NodeSpec {
                    id: cid.clone(),
                    parent: Some(id.clone()),
                    prob: p,
                });
                next.push((cid, cp));
            }
        }
        frontier = next;
    }
    EventTree::new(horizon, specs).expect("generated tree is valid")
}

/// Random tree with between 1 and `max_children` children per node.
pub fn random_tree(rng: &mut TestRng, horizon: usize, max_children: usize) -> EventTree {
    let mut draws: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
    let mut order: Vec<Vec<usize>> = vec![vec![]];
    // draw breadth first so the result depends only on the seed
    for _ in 0..horizon {
        let mut next = Vec::new();
        for path in &order {
            let n = rng.gen_range(1..=max_children);
            let p = probabilities(rng, n);
            for j in 0..n {
                let mut c = path.clone();
                c.push(j);
                next.push(c);
            }
            draws.insert(path.clone(), p);
        }
        order = next;
    }
    build(horizon, |path| draws[path].clone())
}

/// Pricing market: independent positive payoffs priced by a positive kernel.
/// The aggregate SPD is the projection of the kernel and is retried until it
/// is positive.
pub fn general_market(rng: &mut TestRng, horizon: usize, max_children: usize, deterministic_rate: bool) -> Market {
    loop {
        let tree = random_tree(rng, horizon, max_children);
        let n_assets = rng.gen_range(0..max_children.max(1));
        if let Ok(m) = kernel_priced(rng, tree, n_assets, deterministic_rate) {
            return m;
        }
    }
}

fn random_rates(rng: &mut TestRng, tree: &EventTree, deterministic: bool) -> AdaptedProcess {
    let mut r = AdaptedProcess::zeros(tree);
    for k in 1..=tree.horizon() {
        let level_rate = rng.gen_range(0.0..0.06);
        for a in tree.level(k - 1) {
            let v = if deterministic { level_rate } else { rng.gen_range(0.0..0.06) };
            for c in tree.children(a) {
                r.set(c, v);
            }
        }
    }
    r
}

fn kernel_priced(rng: &mut TestRng, tree: EventTree, n_assets: usize, deterministic_rate: bool) -> Result<Market> {
    let interest = random_rates(rng, &tree, deterministic_rate);
    let mut zeta = AdaptedProcess::zeros(&tree);
    for a in 0..tree.level(tree.horizon()).start {
        let kids = tree.children(a);
        let raw: Vec<f64> = kids.clone().map(|_| rng.gen_range(0.8..1.25)).collect();
        let norm: f64 = kids
            .clone()
            .zip(&raw)
            .map(|(c, z)| tree.transition(c) * (1.0 + interest.at(c)) * z)
            .sum();
        for (c, z) in kids.zip(raw) {
            zeta.set(c, z / norm);
        }
    }
    let mut assets = Vec::new();
    for i in 0..n_assets {
        let mut prices = AdaptedProcess::zeros(&tree);
        let mut div = AdaptedProcess::zeros(&tree);
        for n in tree.level(tree.horizon()) {
            prices.set(n, rng.gen_range(0.5..2.0));
        }
        for n in 1..tree.len() {
            div.set(n, rng.gen_range(0.0..0.3));
        }
        for n in (0..tree.level(tree.horizon()).start).rev() {
            let v: f64 = tree
                .children(n)
                .map(|c| tree.transition(c) * zeta.at(c) * (prices.at(c) + div.at(c)))
                .sum();
            prices.set(n, v);
        }
        assets.push(Asset {
            name: format!("a{i}"),
            prices,
            dividends: div,
        });
    }
    Market::new(MarketSpec {
        tree,
        assets,
        interest,
        classc_blocks: None,
        idio_factor: None,
    })
}

/// Class-C market with a deterministic interest rate. Children of each node
/// are grouped into random blocks; payoffs and the SPD are block constant.
pub fn class_c_market(rng: &mut TestRng, horizon: usize, max_children: usize) -> Market {
    let tree = random_tree(rng, horizon, max_children);
    let interest = random_rates(rng, &tree, true);
    let t = horizon;
    let mut block_of = vec![0usize; tree.len()];
    let mut blocks: Vec<Vec<Vec<usize>>> = vec![vec![vec![0]]];
    for k in 1..=t {
        let mut level_blocks = Vec::new();
        for a in tree.level(k - 1) {
            let kids: Vec<usize> = tree.children(a).collect();
            let nb = rng.gen_range(1..=kids.len());
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); nb];
            for (i, &c) in kids.iter().enumerate() {
                // every block gets at least one child
                let g = if i < nb { i } else { rng.gen_range(0..nb) };
                groups[g].push(c);
            }
            for g in groups {
                for &c in &g {
                    block_of[c] = level_blocks.len();
                }
                level_blocks.push(g);
            }
        }
        blocks.push(level_blocks);
    }
    let mut zeta = AdaptedProcess::zeros(&tree);
    for k in 1..=t {
        let per_block: Vec<f64> = blocks[k].iter().map(|_| rng.gen_range(0.8..1.25)).collect();
        for a in tree.level(k - 1) {
            let kids = tree.children(a);
            let norm: f64 = kids
                .clone()
                .map(|c| tree.transition(c) * (1.0 + interest.at(c)) * per_block[block_of[c]])
                .sum();
            for c in kids {
                zeta.set(c, per_block[block_of[c]] / norm);
            }
        }
    }
    let n_assets = max_children.saturating_sub(1).max(1);
    let mut assets = Vec::new();
    for i in 0..n_assets {
        let mut prices = AdaptedProcess::zeros(&tree);
        let mut div = AdaptedProcess::zeros(&tree);
        for k in (1..=t).rev() {
            for n in tree.level(k) {
                if k < t {
                    let v: f64 = tree
                        .children(n)
                        .map(|c| tree.transition(c) * zeta.at(c) * (prices.at(c) + div.at(c)))
                        .sum();
                    prices.set(n, v);
                } else {
                    prices.set(n, rng.gen_range(0.5..1.5));
                }
            }
            // block-constant payoff v >= price, dividend makes up the gap
            for b in &blocks[k] {
                let top = b.iter().map(|&n| prices.at(n)).fold(0.0, f64::max);
                let v = top + rng.gen_range(0.0..0.5);
                for &n in b {
                    div.set(n, v - prices.at(n));
                }
            }
        }
        let v0: f64 = tree
            .children(0)
            .map(|c| tree.transition(c) * zeta.at(c) * (prices.at(c) + div.at(c)))
            .sum();
        prices.set(0, v0);
        assets.push(Asset {
            name: format!("a{i}"),
            prices,
            dividends: div,
        });
    }
    let parts: Vec<Partition> = blocks
        .into_iter()
        .enumerate()
        .map(|(k, b)| Partition { depth: k, blocks: b })
        .collect();
    let spec = MarketSpec {
        tree,
        assets,
        interest,
        classc_blocks: Some(parts),
        idio_factor: None,
    };
    match Market::new(spec.clone()) {
        Ok(m) => m,
        // payoff columns can be dependent by chance; fall back to inference
        Err(_) => Market::new(MarketSpec {
            classc_blocks: None,
            ..spec
        })
        .expect("block-constant kernel prices the market"),
    }
}

/// Product of a binary factor tree, complete for the traded assets, with
/// independent noise branches. Rates may be stochastic but factor driven.
pub fn idiosyncratic_market(rng: &mut TestRng, horizon: usize) -> Market {
    let mut fprob: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut noise: HashMap<Vec<usize>, Vec<(usize, Vec<f64>)>> = HashMap::new();
    // path entries alternate factor branch and noise index
    let mut paths: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..horizon {
        let mut next = Vec::new();
        for p in &paths {
            let fpath: Vec<usize> = p.iter().step_by(2).copied().collect();
            let pu = *fprob.entry(fpath).or_insert_with(|| rng.gen_range(0.25..0.75));
            let mut spec = Vec::new();
            for f in 0..2 {
                let ne = rng.gen_range(1..=2);
                let q = probabilities(rng, ne);
                let pf = if f == 0 { pu } else { 1.0 - pu };
                spec.push((ne, q.iter().map(|q| q * pf).collect::<Vec<_>>()));
            }
            for (f, (ne, _)) in spec.iter().enumerate() {
                for e in 0..*ne {
                    let mut c = p.clone();
                    c.push(f);
                    c.push(e);
                    next.push(c);
                }
            }
            noise.insert(p.clone(), spec);
        }
        paths = next;
    }
    let tree = build(horizon, |path| {
        // the tree builder sees flat child indices; expand them back
        let full = expand(&noise, path);
        noise[&full].iter().flat_map(|(_, q)| q.clone()).collect()
    });
    let full_paths: Vec<Vec<usize>> = (0..tree.len()).map(|n| full_path(&tree, &noise, n)).collect();
    let fkey = |n: usize| -> Vec<usize> { full_paths[n].iter().step_by(2).copied().collect() };

    let mut draw: HashMap<(u8, Vec<usize>), f64> = HashMap::new();
    let mut value = |tag: u8, key: Vec<usize>, lo: f64, hi: f64, rng: &mut TestRng| -> f64 {
        *draw.entry((tag, key)).or_insert_with(|| rng.gen_range(lo..hi))
    };
    let mut interest = AdaptedProcess::zeros(&tree);
    let mut zeta = AdaptedProcess::zeros(&tree);
    for n in 1..tree.len() {
        let pk = fkey(tree.parent(n).unwrap());
        interest.set(n, value(0, pk, 0.0, 0.06, rng));
        zeta.set(n, value(1, fkey(n), 0.8, 1.25, rng));
    }
    for a in 0..tree.level(horizon).start {
        let kids = tree.children(a);
        let norm: f64 = kids
            .clone()
            .map(|c| tree.transition(c) * (1.0 + interest.at(c)) * zeta.at(c))
            .sum();
        for c in kids {
            zeta.set(c, zeta.at(c) / norm);
        }
    }
    let mut prices = AdaptedProcess::zeros(&tree);
    let mut div = AdaptedProcess::zeros(&tree);
    for n in tree.level(horizon) {
        prices.set(n, value(2, fkey(n), 0.5, 2.0, rng));
    }
    for n in 1..tree.len() {
        div.set(n, value(3, fkey(n), 0.0, 0.3, rng));
    }
    for n in (0..tree.level(horizon).start).rev() {
        let v: f64 = tree
            .children(n)
            .map(|c| tree.transition(c) * zeta.at(c) * (prices.at(c) + div.at(c)))
            .sum();
        prices.set(n, v);
    }
    // snap factor-measurable prices exactly, removing summation-order noise
    let mut canon: HashMap<Vec<usize>, f64> = HashMap::new();
    for n in 0..tree.len() {
        let v = *canon.entry(fkey(n)).or_insert(prices.at(n));
        prices.set(n, v);
    }
    let mut fparts = Vec::new();
    for k in 0..=horizon {
        let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        for n in tree.level(k) {
            let key = fkey(n);
            match groups.iter_mut().find(|(g, _)| *g == key) {
                Some((_, v)) => v.push(n),
                None => groups.push((key, vec![n])),
            }
        }
        fparts.push(Partition {
            depth: k,
            blocks: groups.into_iter().map(|(_, v)| v).collect(),
        });
    }
    Market::new(MarketSpec {
        tree,
        assets: vec![Asset {
            name: "f".into(),
            prices,
            dividends: div,
        }],
        interest,
        classc_blocks: None,
        idio_factor: Some(fparts),
    })
    .expect("factor-priced market has a positive SPD")
}

fn expand(noise: &HashMap<Vec<usize>, Vec<(usize, Vec<f64>)>>, flat: &[usize]) -> Vec<usize> {
    let mut full = Vec::new();
    for &j in flat {
        let spec = &noise[&full];
        let mut idx = j;
        let mut f = 0;
        while idx >= spec[f].0 {
            idx -= spec[f].0;
            f += 1;
        }
        full.push(f);
        full.push(idx);
    }
    full
}

fn full_path(tree: &EventTree, noise: &HashMap<Vec<usize>, Vec<(usize, Vec<f64>)>>, n: usize) -> Vec<usize> {
    let path = tree.path(n);
    let flat: Vec<usize> = path[1..]
        .iter()
        .map(|&c| c - tree.children(tree.parent(c).unwrap()).start)
        .collect();
    expand(noise, &flat)
}

/// Single-path market with constant rate.
pub fn deterministic_market(rng: &mut TestRng, horizon: usize) -> Market {
    let tree = EventTree::uniform(horizon, &[1.0]).unwrap();
    let r = rng.gen_range(0.0..0.05);
    Market::new(MarketSpec {
        interest: AdaptedProcess::from_fn(&tree, |n| if n == 0 { 0.0 } else { r }),
        tree,
        assets: vec![],
        classc_blocks: None,
        idio_factor: None,
    })
    .expect("bond market is valid")
}

pub fn random_endowment(rng: &mut TestRng, tree: &EventTree) -> AdaptedProcess {
    AdaptedProcess::from_fn(tree, |_| rng.gen_range(0.2..2.0))
}

fn random_gamma(rng: &mut TestRng) -> f64 {
    loop {
        let g = rng.gen_range(0.5..4.0);
        if !(0.9..=1.1).contains(&g) {
            return g;
        }
    }
}

/// Random agent with habit entries at most `max_beta`. With `static_only`
/// the habit matrix has the one-lag form.
pub fn random_agent(rng: &mut TestRng, tree: &EventTree, max_beta: f64, static_only: bool) -> AgentSpec {
    let t = tree.horizon();
    let habits = if static_only || rng.gen_bool(0.3) {
        Habits::static_beta(t, rng.gen_range(0.0..=max_beta)).unwrap()
    } else {
        let rows = (1..=t)
            .map(|k| (0..k).map(|_| rng.gen_range(0.0..=max_beta)).collect())
            .collect();
        Habits::from_rows(rows).unwrap()
    };
    let gamma = random_gamma(rng);
    let rho = rng.gen_range(0.0..0.1);
    let eps = random_endowment(rng, tree);
    AgentSpec::new(tree, gamma, rho, habits, eps).expect("generated agent is valid")
}

/// Fails when a generated market has a non-positive SPD.
pub fn check_positive(m: &Market) -> Result<()> {
    if m.spd().values().iter().all(|v| *v > 0.0) {
        Ok(())
    } else {
        Err(Error::Market("generator produced a non-positive SPD".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{validate_market_class, MarketClass};

    #[test]
    fn generators_are_deterministic() {
        let a = random_tree(&mut rng(7), 3, 3);
        let b = random_tree(&mut rng(7), 3, 3);
        assert_eq!(a.len(), b.len());
        assert!((0..a.len()).all(|n| a.transition(n) == b.transition(n)));
    }

    #[test]
    fn generated_markets_have_expected_classes() {
        let mut r = rng(11);
        for _ in 0..10 {
            let m = class_c_market(&mut r, 3, 3);
            let c = validate_market_class(&m).unwrap();
            assert!(c.has(MarketClass::ClassC) && c.has(MarketClass::DeterministicRate));
            let m = idiosyncratic_market(&mut r, 2);
            let c = validate_market_class(&m).unwrap();
            assert!(c.has(MarketClass::Idiosyncratic), "{:?}", c.labels);
            assert!(c.has(MarketClass::ClassC));
            let m = general_market(&mut r, 3, 3, false);
            check_positive(&m).unwrap();
            assert!(m.pricing_error(m.spd()) < 1e-10);
        }
    }
}
