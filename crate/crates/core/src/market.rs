//! Securities, payoff spaces and state price densities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::habits::Habits;
use crate::tree::{AdaptedProcess, EventTree, Partition};

/// Relative tolerance for dropping dependent payoff columns.
pub const PRUNE_TOL: f64 = 1e-10;
/// Nodewise tolerance on pricing identities.
pub const PRICE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Asset {
    pub name: String,
    pub prices: AdaptedProcess,
    /// Zero at the root by convention.
    pub dividends: AdaptedProcess,
}

#[derive(Debug, Clone)]
pub struct MarketSpec {
    pub tree: EventTree,
    pub assets: Vec<Asset>,
    /// `r_k` stored at the depth-`k` nodes; the root entry is ignored.
    pub interest: AdaptedProcess,
    /// Intermediate partitions `H_k`, indexed by depth `1..=T`.
    pub classc_blocks: Option<Vec<Partition>>,
    /// Sub-filtration `F_k`, indexed by depth `0..=T`.
    pub idio_factor: Option<Vec<Partition>>,
}

/// Orthonormal bases of the payoff space and of its complement, restricted to
/// the children of one node. Inner products use transition probabilities.
#[derive(Debug, Clone)]
pub struct AtomBasis {
    pub node: usize,
    pub basis: Vec<Vec<f64>>,
    pub complement: Vec<Vec<f64>>,
    /// Payoff columns dropped as dependent (0 is the bond).
    pub pruned: Vec<usize>,
}

impl AtomBasis {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MarketClass {
    Complete,
    ClassC,
    Idiosyncratic,
    DeterministicRate,
    General,
}

impl MarketClass {
    pub fn label(self) -> &'static str {
        match self {
            MarketClass::Complete => "complete",
            MarketClass::ClassC => "classC",
            MarketClass::Idiosyncratic => "idiosyncratic",
            MarketClass::DeterministicRate => "deterministic-rate",
            MarketClass::General => "general",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub labels: Vec<MarketClass>,
    /// `H_k` for `k = 0..=T` (index 0 is the trivial partition) when class C.
    pub class_c: Option<Vec<Partition>>,
}

impl Classification {
    pub fn has(&self, c: MarketClass) -> bool {
        self.labels.contains(&c)
    }
}

#[derive(Debug, Clone)]
pub struct SpdPair {
    pub m: AdaptedProcess,
    pub mtilde: AdaptedProcess,
}

/// A validated market together with its payoff bases and aggregate SPD.
#[derive(Debug, Clone)]
pub struct Market {
    spec: MarketSpec,
    atoms: Vec<AtomBasis>,
    spd: AdaptedProcess,
}

fn dot(p: &[f64], x: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(x).zip(y).map(|((p, x), y)| p * x * y).sum()
}

/// Modified Gram-Schmidt with one re-orthogonalisation pass. Returns the
/// indices of the columns that were kept.
fn orthonormalize(p: &[f64], cols: &[Vec<f64>], basis: &mut Vec<Vec<f64>>, tol: f64) -> Vec<usize> {
    let mut kept = Vec::new();
    for (i, v) in cols.iter().enumerate() {
        if basis.len() == p.len() {
            break;
        }
        let norm0 = dot(p, v, v).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for q in basis.iter() {
                let a = dot(p, &w, q);
                w.iter_mut().zip(q).for_each(|(w, q)| *w -= a * q);
            }
        }
        let norm = dot(p, &w, &w).sqrt();
        if norm > tol * norm0 {
            w.iter_mut().for_each(|x| *x /= norm);
            basis.push(w);
            kept.push(i);
        }
    }
    kept
}

fn complement_of(p: &[f64], basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = p.len();
    let mut all = basis.to_vec();
    let units: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    orthonormalize(p, &units, &mut all, 1e-8);
    all.split_off(basis.len())
}

impl Market {
    pub fn new(spec: MarketSpec) -> Result<Self> {
        let tree = &spec.tree;
        let t = tree.horizon();
        if spec.interest.values().len() != tree.len() {
            return Err(Error::schema("interest", "one value per node required"));
        }
        for k in 1..=t {
            for node in tree.level(k) {
                let r = spec.interest.at(node);
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(Error::schema(
                        format!("interest.{}", tree.id(node)),
                        format!("rate {r} must be a non-negative number"),
                    ));
                }
                let first = tree.children(tree.parent(node).unwrap()).start;
                if (spec.interest.at(first) - r).abs() > 1e-12 {
                    return Err(Error::schema(
                        format!("interest.{}", tree.id(node)),
                        "interest must be predictable (equal across siblings)",
                    ));
                }
            }
        }
        for a in &spec.assets {
            for n in 0..tree.len() {
                let s = a.prices.at(n);
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::schema(
                        format!("assets.{}.prices.{}", a.name, tree.id(n)),
                        format!("price {s} must be positive"),
                    ));
                }
                let d = a.dividends.at(n);
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(Error::schema(
                        format!("assets.{}.dividends.{}", a.name, tree.id(n)),
                        format!("dividend {d} must be non-negative"),
                    ));
                }
            }
        }
        if let Some(h) = &spec.classc_blocks {
            if h.len() != t + 1 || h.iter().enumerate().any(|(k, p)| p.depth != k) {
                return Err(Error::schema("classC_blocks", "one partition per depth 1..T required"));
            }
            for p in &h[1..] {
                Partition::new(tree, p.depth, p.blocks.clone(), true)?;
            }
        }
        if let Some(f) = &spec.idio_factor {
            if f.len() != t + 1 || f.iter().enumerate().any(|(k, p)| p.depth != k) {
                return Err(Error::schema("idio_factor", "one partition per depth 0..T required"));
            }
        }

        let mut atoms = Vec::new();
        for node in 0..tree.level(t).start {
            let kids = tree.children(node);
            let p: Vec<f64> = kids.clone().map(|c| tree.transition(c)).collect();
            let mut cols = vec![kids.clone().map(|c| 1.0 + spec.interest.at(c)).collect::<Vec<_>>()];
            for a in &spec.assets {
                cols.push(kids.clone().map(|c| a.prices.at(c) + a.dividends.at(c)).collect());
            }
            let mut basis = Vec::new();
            let kept = orthonormalize(&p, &cols, &mut basis, PRUNE_TOL);
            let pruned = (0..cols.len()).filter(|i| !kept.contains(i)).collect();
            let complement = complement_of(&p, &basis);
            atoms.push(AtomBasis {
                node,
                basis,
                complement,
                pruned,
            });
        }
        let spd = AdaptedProcess::zeros(tree);
        let mut market = Market { spec, atoms, spd };
        market.spd = market.solve_aggregate_spd()?;
        Ok(market)
    }

    /// Complete market whose aggregate SPD is the given positive process.
    /// No securities are listed; the payoff space is all of `L²(G_k)`.
    pub fn complete_from_spd(tree: EventTree, spd: AdaptedProcess) -> Result<Self> {
        if spd.values().len() != tree.len() {
            return Err(Error::Depth("SPD must have one value per node".into()));
        }
        if (spd.at(0) - 1.0).abs() > 1e-12 {
            return Err(Error::Market(format!("SPD must satisfy M_0 = 1, got {}", spd.at(0))));
        }
        if let Some(n) = (0..tree.len()).find(|&n| !(spd.at(n) > 0.0) || !spd.at(n).is_finite()) {
            return Err(Error::Market(format!(
                "SPD must be positive, got {} at `{}`",
                spd.at(n),
                tree.id(n)
            )));
        }
        let mut interest = AdaptedProcess::zeros(&tree);
        let mut atoms = Vec::new();
        for node in 0..tree.level(tree.horizon()).start {
            let kids = tree.children(node);
            let p: Vec<f64> = kids.clone().map(|c| tree.transition(c)).collect();
            let ones = vec![vec![1.0; p.len()]];
            let mut basis = Vec::new();
            orthonormalize(&p, &ones, &mut basis, PRUNE_TOL);
            let rest = complement_of(&p, &basis);
            basis.extend(rest);
            let disc: f64 = kids.clone().map(|c| tree.transition(c) * spd.at(c)).sum::<f64>() / spd.at(node);
            for c in kids {
                interest.set(c, 1.0 / disc - 1.0);
            }
            atoms.push(AtomBasis {
                node,
                basis,
                complement: Vec::new(),
                pruned: Vec::new(),
            });
        }
        Ok(Market {
            spec: MarketSpec {
                tree,
                assets: Vec::new(),
                interest,
                classc_blocks: None,
                idio_factor: None,
            },
            atoms,
            spd,
        })
    }

    pub fn tree(&self) -> &EventTree {
        &self.spec.tree
    }

    pub fn spec(&self) -> &MarketSpec {
        &self.spec
    }

    pub fn horizon(&self) -> usize {
        self.spec.tree.horizon()
    }

    /// Aggregate SPD with `M_0 = 1`.
    pub fn spd(&self) -> &AdaptedProcess {
        &self.spd
    }

    /// Bases at the children of a non-leaf node.
    pub fn atom(&self, node: usize) -> &AtomBasis {
        &self.atoms[node]
    }

    /// Bases of `L_k`, one per depth-`(k-1)` atom.
    pub fn payoff_space_basis(&self, k: usize) -> Result<Vec<&AtomBasis>> {
        if k == 0 || k > self.horizon() {
            return Err(Error::Depth(format!("payoff space index {k} outside 1..=T")));
        }
        Ok(self.tree().level(k - 1).map(|n| &self.atoms[n]).collect())
    }

    /// `M_k / M_{k-1}` at a non-root node.
    pub fn spd_ratio(&self, node: usize) -> f64 {
        self.spd.at(node) / self.spd.at(self.tree().parent(node).unwrap())
    }

    fn transitions(&self, node: usize) -> Vec<f64> {
        self.tree().children(node).map(|c| self.tree().transition(c)).collect()
    }

    /// `P^L_k` applied to a depth-`k` variable.
    pub fn project_level(&self, y: &[f64], k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.horizon() || y.len() != self.tree().level_len(k) {
            return Err(Error::Depth(format!("cannot project onto L_{k}")));
        }
        let tree = self.tree();
        let base = tree.level(k).start;
        let mut out = vec![0.0; y.len()];
        for a in tree.level(k - 1) {
            let kids = tree.children(a);
            let p = self.transitions(a);
            let yy = &y[kids.start - base..kids.end - base];
            let o = &mut out[kids.start - base..kids.end - base];
            for q in &self.atoms[a].basis {
                let c = dot(&p, yy, q);
                o.iter_mut().zip(q).for_each(|(o, q)| *o += c * q);
            }
        }
        Ok(out)
    }

    /// Orthogonal projection of a depth-`m` variable onto `L_k`, `k <= m`.
    pub fn project(&self, x: &[f64], m: usize, k: usize) -> Result<Vec<f64>> {
        let y = self.tree().cond_expectation(x, m, k)?;
        self.project_level(&y, k)
    }

    fn solve_aggregate_spd(&self) -> Result<AdaptedProcess> {
        let tree = self.tree();
        let mut m = AdaptedProcess::zeros(tree);
        m.set(0, 1.0);
        for a in 0..tree.level(self.horizon()).start {
            let z = self.atom_spd_ratio(a)?;
            for (c, zc) in tree.children(a).zip(z) {
                m.set(c, m.at(a) * zc);
            }
        }
        Ok(m)
    }

    /// Solves for `z = M_k/M_{k-1}` on the children of `a` inside the span
    /// of the payoff basis.
    fn atom_spd_ratio(&self, a: usize) -> Result<Vec<f64>> {
        let tree = self.tree();
        let spec = &self.spec;
        let kids = tree.children(a);
        let p = self.transitions(a);
        let mut cols = vec![kids.clone().map(|c| 1.0 + spec.interest.at(c)).collect::<Vec<_>>()];
        let mut target = vec![1.0];
        for asset in &spec.assets {
            cols.push(kids.clone().map(|c| asset.prices.at(c) + asset.dividends.at(c)).collect());
            target.push(asset.prices.at(a));
        }
        let basis = &self.atoms[a].basis;
        let r = basis.len();
        let g = DMatrix::from_fn(cols.len(), r, |i, j| dot(&p, &cols[i], &basis[j]));
        let rhs = DVector::from_vec(target.clone());
        let svd = g.clone().svd(true, true);
        let coef = svd
            .solve(&rhs, 1e-13)
            .map_err(|e| Error::Market(format!("SPD system at `{}`: {e}", tree.id(a))))?;
        let resid = &g * &coef - &rhs;
        for (i, v) in resid.iter().enumerate() {
            if v.abs() > PRICE_TOL * target[i].abs().max(1.0) * 10.0 {
                return Err(Error::Market(format!(
                    "no state price density in the payoff span at `{}`: pricing of column {i} off by {v:.3e}",
                    tree.id(a)
                )));
            }
        }
        let z: Vec<f64> = (0..p.len())
            .map(|c| (0..r).map(|j| coef[j] * basis[j][c]).sum())
            .collect();
        if let Some(c) = z.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Market(format!(
                "aggregate SPD is not positive at `{}` ({:.3e}); such markets are not supported",
                tree.id(kids.start + c),
                z[c]
            )));
        }
        Ok(z)
    }

    /// Largest violation of the pricing identities for `M`.
    pub fn pricing_error(&self, m: &AdaptedProcess) -> f64 {
        let tree = self.tree();
        let spec = &self.spec;
        let mut err: f64 = 0.0;
        for a in 0..tree.level(self.horizon()).start {
            let kids = tree.children(a);
            let bond: f64 = kids
                .clone()
                .map(|c| tree.transition(c) * (1.0 + spec.interest.at(c)) * m.at(c))
                .sum();
            err = err.max((bond - m.at(a)).abs());
            for asset in &spec.assets {
                let v: f64 = kids
                    .clone()
                    .map(|c| tree.transition(c) * (asset.prices.at(c) + asset.dividends.at(c)) * m.at(c))
                    .sum();
                err = err.max((v - asset.prices.at(a) * m.at(a)).abs());
            }
        }
        err
    }

    pub fn is_deterministic_rate(&self) -> bool {
        let tree = self.tree();
        (1..=self.horizon()).all(|k| {
            let r0 = self.spec.interest.at(tree.level(k).start);
            tree.level(k).all(|n| (self.spec.interest.at(n) - r0).abs() <= 1e-12)
        })
    }

    pub fn is_complete(&self) -> bool {
        self.atoms
            .iter()
            .all(|a| a.rank() == self.tree().children(a.node).len())
    }

    /// Verifies given `H_k` blocks, or infers the finest partition on whose
    /// blocks every basis vector is constant. `None` when the projection is
    /// not a conditional expectation.
    pub fn class_c_partitions(&self) -> Result<Option<Vec<Partition>>> {
        let tree = self.tree();
        let t = self.horizon();
        let mut out = vec![Partition::trivial(tree, 0)];
        for k in 1..=t {
            let mut blocks: Vec<Vec<usize>> = Vec::new();
            if let Some(given) = &self.spec.classc_blocks {
                for a in tree.level(k - 1) {
                    let mine: Vec<Vec<usize>> = given[k]
                        .blocks
                        .iter()
                        .filter(|b| tree.parent(b[0]) == Some(a))
                        .cloned()
                        .collect();
                    if !self.blocks_match_span(a, &mine) {
                        return Err(Error::Market(format!(
                            "classC_blocks at depth {k} do not generate the payoff space under `{}`",
                            tree.id(a)
                        )));
                    }
                    blocks.extend(mine);
                }
            } else {
                for a in tree.level(k - 1) {
                    let mine = self.infer_blocks(a);
                    if !self.blocks_match_span(a, &mine) {
                        return Ok(None);
                    }
                    blocks.extend(mine);
                }
            }
            out.push(Partition::new(tree, k, blocks, true)?);
        }
        Ok(Some(out))
    }

    fn infer_blocks(&self, a: usize) -> Vec<Vec<usize>> {
        let basis = &self.atoms[a].basis;
        let kids: Vec<usize> = self.tree().children(a).collect();
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut reps: Vec<usize> = Vec::new();
        for (i, &c) in kids.iter().enumerate() {
            let found = reps.iter().position(|&j| {
                basis.iter().all(|q| (q[i] - q[j]).abs() <= 1e-9 * (1.0 + q[j].abs()))
            });
            match found {
                Some(b) => blocks[b].push(c),
                None => {
                    reps.push(i);
                    blocks.push(vec![c]);
                }
            }
        }
        blocks
    }

    /// Block indicators span exactly the payoff space at `a`.
    fn blocks_match_span(&self, a: usize, blocks: &[Vec<usize>]) -> bool {
        let ab = &self.atoms[a];
        if blocks.len() != ab.rank() {
            return false;
        }
        let tree = self.tree();
        let first = tree.children(a).start;
        let p = self.transitions(a);
        blocks.iter().all(|b| {
            let ind: Vec<f64> = (0..p.len())
                .map(|i| if b.contains(&(first + i)) { 1.0 } else { 0.0 })
                .collect();
            // residual of the indicator after projection on the complement
            ab.complement.iter().all(|q| dot(&p, &ind, q).abs() <= 1e-9)
        })
    }

    /// Checks the sub-filtration conditions for idiosyncratic incompleteness.
    fn check_idiosyncratic(&self) -> Result<bool> {
        let Some(f) = &self.spec.idio_factor else {
            return Ok(false);
        };
        let tree = self.tree();
        let spec = &self.spec;
        for (k, part) in f.iter().enumerate() {
            Partition::new(tree, k, part.blocks.clone(), false)?;
        }
        if f[0].blocks.len() != 1 {
            return Err(Error::schema("idio_factor", "F_0 must be trivial"));
        }
        let t = self.horizon();
        for k in 0..t {
            let outer = f[k].block_index(tree);
            let inner = f[k + 1].block_index(tree);
            // nesting: each F_{k+1} block sits inside one F_k block
            for b in &f[k + 1].blocks {
                let o = outer[tree.pos(tree.parent(b[0]).unwrap())];
                if b.iter().any(|&n| outer[tree.pos(tree.parent(n).unwrap())] != o) {
                    return Err(Error::schema(
                        format!("idio_factor[{}]", k + 1),
                        "F blocks are not nested in the previous depth",
                    ));
                }
            }
            // F-measurability of rates, prices and dividends at depth k+1
            for b in &f[k + 1].blocks {
                let n0 = b[0];
                let same = |x: &AdaptedProcess| b.iter().all(|&n| (x.at(n) - x.at(n0)).abs() <= 1e-12 * (1.0 + x.at(n0).abs()));
                if !same(&spec.interest)
                    || !spec.assets.iter().all(|a| same(&a.prices) && same(&a.dividends))
                {
                    return Ok(false);
                }
            }
            // condition (iii) on indicators of F_{k+1} blocks
            let nb = f[k + 1].blocks.len();
            for ob in &f[k].blocks {
                let probs: Vec<Vec<f64>> = ob
                    .iter()
                    .map(|&n| {
                        let mut v = vec![0.0; nb];
                        for c in tree.children(n) {
                            v[inner[tree.pos(c)]] += tree.transition(c);
                        }
                        v
                    })
                    .collect();
                if probs.iter().any(|v| v.iter().zip(&probs[0]).any(|(a, b)| (a - b).abs() > 1e-12)) {
                    return Ok(false);
                }
                // completeness w.r.t. F: payoffs span the successor blocks
                let succ: Vec<usize> = (0..nb).filter(|&j| probs[0][j] > 0.0).collect();
                let n0 = ob[0];
                let rep: Vec<usize> = succ
                    .iter()
                    .map(|&j| tree.children(n0).find(|&c| inner[tree.pos(c)] == j).unwrap())
                    .collect();
                let mut cols = vec![rep.iter().map(|&c| 1.0 + spec.interest.at(c)).collect::<Vec<_>>()];
                for a in &spec.assets {
                    cols.push(rep.iter().map(|&c| a.prices.at(c) + a.dividends.at(c)).collect());
                }
                let w: Vec<f64> = succ.iter().map(|&j| probs[0][j]).collect();
                let mut basis = Vec::new();
                orthonormalize(&w, &cols, &mut basis, PRUNE_TOL);
                if basis.len() != succ.len() {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Every label whose defining property holds.
pub fn validate_market_class(market: &Market) -> Result<Classification> {
    let mut labels = Vec::new();
    if market.is_complete() {
        labels.push(MarketClass::Complete);
    }
    let class_c = market.class_c_partitions()?;
    if class_c.is_some() {
        labels.push(MarketClass::ClassC);
    }
    if market.check_idiosyncratic()? {
        labels.push(MarketClass::Idiosyncratic);
    }
    if market.is_deterministic_rate() {
        labels.push(MarketClass::DeterministicRate);
    }
    if labels.is_empty() {
        labels.push(MarketClass::General);
    }
    Ok(Classification { labels, class_c })
}

/// `M̃_k = M_k + Σ_{m>k} β^(m)_k E[M̃_m | G_k]`, computed backward.
pub fn perturbed_spd(tree: &EventTree, m: &AdaptedProcess, habits: &Habits) -> AdaptedProcess {
    let t = tree.horizon();
    let mut mt = m.clone();
    // acc[l] is M̃_l kept at depth l while sweeping back
    for k in (0..t).rev() {
        let mut add = vec![0.0; tree.level_len(k)];
        for l in k + 1..=t {
            let b = habits.get(l, k);
            if b == 0.0 {
                continue;
            }
            let e = tree
                .cond_expectation(mt.level(tree, l), l, k)
                .expect("depths are in range");
            add.iter_mut().zip(e).for_each(|(a, e)| *a += b * e);
        }
        for (i, n) in tree.level(k).enumerate() {
            mt.set(n, m.at(n) + add[i]);
        }
    }
    mt
}

/// Same quantity from the explicit multi-sum over habit chains, enumerating
/// every intermediate index set. Exponential in `T`; meant for checking.
pub fn perturbed_spd_direct(tree: &EventTree, m: &AdaptedProcess, habits: &Habits) -> AdaptedProcess {
    let t = tree.horizon();
    let mut mt = m.clone();
    for k in 0..t {
        let mut add = vec![0.0; tree.level_len(k)];
        for l in k + 1..=t {
            let inner = l - k - 1;
            let mut coef = 0.0;
            for mask in 0u64..(1u64 << inner) {
                // chain l > s_1 > ... > s_j > k, with the s taken from the mask
                let mut prev = l;
                let mut prod = 1.0;
                for s in (k + 1..l).rev() {
                    if mask >> (s - k - 1) & 1 == 1 {
                        prod *= habits.get(prev, s);
                        prev = s;
                    }
                }
                prod *= habits.get(prev, k);
                coef += prod;
            }
            if coef != 0.0 {
                let e = tree.cond_expectation(m.level(tree, l), l, k).expect("depths are in range");
                add.iter_mut().zip(e).for_each(|(a, e)| *a += coef * e);
            }
        }
        for (i, n) in tree.level(k).enumerate() {
            mt.set(n, m.at(n) + add[i]);
        }
    }
    mt
}

pub fn spd_pair(market: &Market, habits: &Habits) -> SpdPair {
    let m = market.spd().clone();
    let mtilde = perturbed_spd(market.tree(), &m, habits);
    SpdPair { m, mtilde }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_market(s0: f64, up: f64, down: f64) -> Market {
        let tree = EventTree::uniform(1, &[0.5, 0.5]).unwrap();
        let prices = AdaptedProcess::from_values(&tree, vec![s0, up, down]).unwrap();
        Market::new(MarketSpec {
            assets: vec![Asset {
                name: "s".into(),
                prices,
                dividends: AdaptedProcess::zeros(&tree),
            }],
            interest: AdaptedProcess::zeros(&tree),
            tree,
            classc_blocks: None,
            idio_factor: None,
        })
        .unwrap()
    }

    #[test]
    fn bond_only_basis_is_constant() {
        let tree = EventTree::uniform(2, &[0.3, 0.7]).unwrap();
        let m = Market::new(MarketSpec {
            interest: AdaptedProcess::zeros(&tree),
            tree,
            assets: vec![],
            classc_blocks: None,
            idio_factor: None,
        })
        .unwrap();
        for a in m.payoff_space_basis(1).unwrap() {
            assert_eq!(a.rank(), 1);
            assert!(a.basis[0].iter().all(|v| (v - 1.0).abs() < 1e-14));
        }
        assert!(m.spd().values().iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn two_by_two_spd_by_hand() {
        // E[M]=1, E[M S]=3.5 with S in {3,4}: (M_u, M_d) solve m_u+m_d=2, 3m_u+4m_d=7
        let m = binary_market(3.5, 3.0, 4.0);
        assert_eq!(m.atom(0).rank(), 2);
        assert!((m.spd().at(1) - 1.0).abs() < 1e-12);
        assert!((m.spd().at(2) - 1.0).abs() < 1e-12);
        let m = binary_market(3.4, 3.0, 4.0);
        // 3m_u + 4(2 - m_u) = 6.8
        assert!((m.spd().at(1) - 1.2).abs() < 1e-12);
        assert!((m.spd().at(2) - 0.8).abs() < 1e-12);
        assert!(m.pricing_error(m.spd()) < 1e-12);
    }

    #[test]
    fn duplicated_bond_is_pruned() {
        let tree = EventTree::uniform(2, &[0.5, 0.5]).unwrap();
        let r = 0.05;
        let prices = AdaptedProcess::from_fn(&tree, |_| 1.0);
        let m = Market::new(MarketSpec {
            assets: vec![Asset {
                name: "dup".into(),
                prices,
                dividends: AdaptedProcess::from_fn(&tree, |n| if n == 0 { 0.0 } else { r }),
            }],
            interest: AdaptedProcess::constant(&tree, r),
            tree: tree.clone(),
            classc_blocks: None,
            idio_factor: None,
        })
        .unwrap();
        assert_eq!(m.atom(0).pruned, vec![1]);
        for n in 0..tree.len() {
            let want = (1.0f64 + r).powi(-(tree.depth(n) as i32));
            assert!((m.spd().at(n) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn arbitrage_is_rejected() {
        let tree = EventTree::uniform(1, &[0.5, 0.5]).unwrap();
        let prices = AdaptedProcess::from_values(&tree, vec![5.0, 3.0, 4.0]).unwrap();
        let r = Market::new(MarketSpec {
            assets: vec![Asset {
                name: "s".into(),
                prices,
                dividends: AdaptedProcess::zeros(&tree),
            }],
            interest: AdaptedProcess::zeros(&tree),
            tree,
            classc_blocks: None,
            idio_factor: None,
        });
        assert!(matches!(r, Err(Error::Market(_))));
    }

    #[test]
    fn complete_projection_is_identity() {
        let m = binary_market(3.4, 3.0, 4.0);
        let y = m.project_level(&[2.0, -1.0], 1).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-13 && (y[1] + 1.0).abs() < 1e-13);
        let c = validate_market_class(&m).unwrap();
        assert!(c.has(MarketClass::Complete) && c.has(MarketClass::ClassC));
        assert!(c.has(MarketClass::DeterministicRate));
    }

    #[test]
    fn perturbed_static_by_hand() {
        let tree = EventTree::uniform(2, &[0.5, 0.5]).unwrap();
        let one = AdaptedProcess::constant(&tree, 1.0);
        let b = 0.4;
        let mt = perturbed_spd(&tree, &one, &Habits::static_beta(2, b).unwrap());
        assert!((mt.at(0) - (1.0 + b + b * b)).abs() < 1e-15);
        assert!((mt.at(1) - (1.0 + b)).abs() < 1e-15);
        assert_eq!(mt.at(3), 1.0);
        let zero = perturbed_spd(&tree, &one, &Habits::none(2));
        assert_eq!(zero, one);
    }

    #[test]
    fn recursion_matches_chain_sum() {
        let tree = EventTree::uniform(3, &[0.2, 0.8]).unwrap();
        let m = AdaptedProcess::from_fn(&tree, |n| 1.0 / (1.0 + n as f64 * 0.07));
        let h = Habits::from_rows(vec![vec![0.3], vec![0.1, 0.4], vec![0.2, 0.05, 0.35]]).unwrap();
        let a = perturbed_spd(&tree, &m, &h);
        let b = perturbed_spd_direct(&tree, &m, &h);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
