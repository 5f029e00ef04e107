//! Finite probability space represented as a rooted event tree.
//!
//! Nodes are stored breadth first, so the atoms of the depth-`k` partition
//! occupy one contiguous index range and the children of any node are
//! contiguous in the next level. A random variable measurable at depth `k`
//! is a slice indexed by position within that level.

use std::collections::HashMap;
use std::ops::Range;

use crate::error::{Error, Result};

/// Tolerance on sums of transition probabilities.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Node {
    id: String,
    parent: Option<usize>,
    depth: usize,
    prob: f64,
    children: Range<usize>,
}

/// Raw node description before validation.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: String,
    pub parent: Option<String>,
    pub prob: f64,
}

#[derive(Debug, Clone)]
pub struct EventTree {
    nodes: Vec<Node>,
    levels: Vec<Range<usize>>,
    index: HashMap<String, usize>,
    uncond: Vec<f64>,
}

impl EventTree {
    /// Builds a tree from an unordered node list. The root is the unique node
    /// without a parent; its `prob` must be 1.
    pub fn new(horizon: usize, specs: Vec<NodeSpec>) -> Result<Self> {
        let mut by_id: HashMap<&str, usize> = HashMap::new();
        for (i, s) in specs.iter().enumerate() {
            if by_id.insert(s.id.as_str(), i).is_some() {
                return Err(Error::schema("nodes.id", format!("duplicate id `{}`", s.id)));
            }
        }
        let roots: Vec<usize> = (0..specs.len())
            .filter(|&i| specs[i].parent.is_none())
            .collect();
        if roots.len() != 1 {
            return Err(Error::schema(
                "nodes.parent",
                format!("expected exactly one root, found {}", roots.len()),
            ));
        }
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); specs.len()];
        for (i, s) in specs.iter().enumerate() {
            if let Some(p) = &s.parent {
                let &pi = by_id
                    .get(p.as_str())
                    .ok_or_else(|| Error::schema("nodes.parent", format!("unknown parent `{p}`")))?;
                kids[pi].push(i);
            }
            if !(s.prob > 0.0 && s.prob <= 1.0 + PROB_TOL) {
                return Err(Error::schema(
                    "nodes.prob",
                    format!("node `{}` has probability {} outside (0,1]", s.id, s.prob),
                ));
            }
        }

        // breadth-first relabelling
        let mut order = vec![roots[0]];
        let mut depth_of = vec![0usize];
        let mut head = 0;
        while head < order.len() {
            let cur = order[head];
            let d = depth_of[head];
            for &c in &kids[cur] {
                order.push(c);
                depth_of.push(d + 1);
            }
            head += 1;
        }
        if order.len() != specs.len() {
            return Err(Error::schema("nodes.parent", "nodes unreachable from the root (cycle?)"));
        }
        let mut new_of = vec![0usize; specs.len()];
        for (new, &old) in order.iter().enumerate() {
            new_of[old] = new;
        }

        let mut nodes = Vec::with_capacity(specs.len());
        for (new, &old) in order.iter().enumerate() {
            let s = &specs[old];
            let children = match kids[old].first() {
                Some(&f) => new_of[f]..new_of[f] + kids[old].len(),
                None => 0..0,
            };
            nodes.push(Node {
                id: s.id.clone(),
                parent: s.parent.as_ref().map(|p| new_of[by_id[p.as_str()]]),
                depth: depth_of[new],
                prob: s.prob,
                children,
            });
        }

        if (nodes[0].prob - 1.0).abs() > PROB_TOL {
            return Err(Error::schema("nodes.prob", "root probability must be 1"));
        }
        let max_depth = nodes.last().map(|n| n.depth).unwrap_or(0);
        if max_depth != horizon {
            return Err(Error::schema(
                "horizon",
                format!("horizon {horizon} but deepest node is at depth {max_depth}"),
            ));
        }
        for n in &nodes {
            if n.children.is_empty() {
                if n.depth != horizon {
                    return Err(Error::schema(
                        "nodes",
                        format!("leaf `{}` at depth {} < horizon {horizon}", n.id, n.depth),
                    ));
                }
            } else {
                let total: f64 = n.children.clone().map(|c| nodes[c].prob).sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::schema(
                        "nodes.prob",
                        format!("children of `{}` sum to {total}", n.id),
                    ));
                }
            }
        }

        let mut levels = vec![0..0; horizon + 1];
        let mut start = 0;
        for (k, level) in levels.iter_mut().enumerate() {
            let end = nodes[start..]
                .iter()
                .position(|n| n.depth != k)
                .map_or(nodes.len(), |p| start + p);
            *level = start..end;
            start = end;
        }

        let mut uncond = vec![1.0; nodes.len()];
        for i in 1..nodes.len() {
            uncond[i] = uncond[nodes[i].parent.unwrap()] * nodes[i].prob;
        }
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        Ok(EventTree {
            nodes,
            levels,
            index,
            uncond,
        })
    }

    /// Tree in which every node at depth `< horizon` has children with the
    /// given transition probabilities. Ids are the root `r` followed by the
    /// branch digits, e.g. `r01`.
    pub fn uniform(horizon: usize, probs: &[f64]) -> Result<Self> {
        let mut specs = vec![NodeSpec {
            id: "r".into(),
            parent: None,
            prob: 1.0,
        }];
        let mut frontier = vec!["r".to_string()];
        for _ in 0..horizon {
            let mut next = Vec::new();
            for p in &frontier {
                for (j, &q) in probs.iter().enumerate() {
                    let id = format!("{p}{}", branch_label(j));
                    specs.push(NodeSpec {
                        id: id.clone(),
                        parent: Some(p.clone()),
                        prob: q,
                    });
                    next.push(id);
                }
            }
            frontier = next;
        }
        EventTree::new(horizon, specs)
    }

    pub fn horizon(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn level(&self, k: usize) -> Range<usize> {
        self.levels[k].clone()
    }

    pub fn level_len(&self, k: usize) -> usize {
        self.levels[k].len()
    }

    pub fn depth(&self, node: usize) -> usize {
        self.nodes[node].depth
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.nodes[node].parent
    }

    pub fn children(&self, node: usize) -> Range<usize> {
        self.nodes[node].children.clone()
    }

    /// Transition probability from the parent.
    pub fn transition(&self, node: usize) -> f64 {
        self.nodes[node].prob
    }

    pub fn id(&self, node: usize) -> &str {
        &self.nodes[node].id
    }

    pub fn lookup(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    /// Position of `node` inside its depth level.
    pub fn pos(&self, node: usize) -> usize {
        node - self.levels[self.nodes[node].depth].start
    }

    /// Ancestor of `node` at depth `k <= depth(node)`.
    pub fn ancestor(&self, mut node: usize, k: usize) -> usize {
        while self.nodes[node].depth > k {
            node = self.nodes[node].parent.unwrap();
        }
        node
    }

    /// Unconditional probability of the atom `node`.
    pub fn node_probability(&self, node: usize) -> f64 {
        self.uncond[node]
    }

    /// Looks up the unconditional probability by id.
    pub fn probability_of(&self, id: &str) -> Result<f64> {
        Ok(self.node_probability(self.lookup(id)?))
    }

    /// Unconditional probabilities of the depth-`k` atoms.
    pub fn level_probabilities(&self, k: usize) -> &[f64] {
        &self.uncond[self.levels[k].clone()]
    }

    /// `E[X | G_k]` for `X` measurable at depth `m >= k`.
    pub fn cond_expectation(&self, x: &[f64], m: usize, k: usize) -> Result<Vec<f64>> {
        if k > m || m > self.horizon() {
            return Err(Error::Depth(format!(
                "conditional expectation onto depth {k} of a depth-{m} variable"
            )));
        }
        if x.len() != self.level_len(m) {
            return Err(Error::Depth(format!(
                "variable has {} values but depth {m} has {} atoms",
                x.len(),
                self.level_len(m)
            )));
        }
        let mut cur = x.to_vec();
        for d in (k..m).rev() {
            let base = self.levels[d + 1].start;
            cur = self
                .level(d)
                .map(|n| {
                    self.children(n)
                        .map(|c| self.nodes[c].prob * cur[c - base])
                        .sum()
                })
                .collect();
        }
        Ok(cur)
    }

    /// `E[X]` for `X` measurable at depth `m`.
    pub fn expectation(&self, x: &[f64], m: usize) -> Result<f64> {
        Ok(self.cond_expectation(x, m, 0)?[0])
    }

    /// `E[X | G_{k}]` evaluated at a single depth-`k` node, for `x` at depth `k+1`.
    pub fn one_step(&self, node: usize, x: &[f64]) -> f64 {
        let base = self.levels[self.nodes[node].depth + 1].start;
        self.children(node)
            .map(|c| self.nodes[c].prob * x[c - base])
            .sum()
    }

    /// Blockwise maximum of a depth-`m` variable over the descendants of each
    /// block of `partition`. The result is indexed by the partition's level.
    pub fn cond_esssup(&self, x: &[f64], m: usize, partition: &Partition) -> Result<Vec<f64>> {
        self.blockwise(x, m, partition, f64::NEG_INFINITY, f64::max)
    }

    pub fn cond_essinf(&self, x: &[f64], m: usize, partition: &Partition) -> Result<Vec<f64>> {
        self.blockwise(x, m, partition, f64::INFINITY, f64::min)
    }

    fn blockwise(
        &self,
        x: &[f64],
        m: usize,
        partition: &Partition,
        init: f64,
        op: fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        let d = partition.depth;
        if d > m || x.len() != self.level_len(m) {
            return Err(Error::Depth(format!(
                "partition at depth {d} cannot condition a depth-{m} variable of length {}",
                x.len()
            )));
        }
        let base_m = self.levels[m].start;
        let mut per_node = vec![init; self.level_len(d)];
        for n in self.level(m) {
            let a = self.pos(self.ancestor(n, d));
            per_node[a] = op(per_node[a], x[n - base_m]);
        }
        let mut out = vec![0.0; self.level_len(d)];
        for block in &partition.blocks {
            let v = block
                .iter()
                .map(|&n| per_node[self.pos(n)])
                .fold(init, op);
            for &n in block {
                out[self.pos(n)] = v;
            }
        }
        Ok(out)
    }

    /// `E[X | H]` where `H` is generated by `partition` (same depth as `x`).
    pub fn partition_expectation(&self, x: &[f64], partition: &Partition) -> Result<Vec<f64>> {
        let d = partition.depth;
        if x.len() != self.level_len(d) {
            return Err(Error::Depth("partition/variable depth mismatch".into()));
        }
        let mut out = vec![0.0; x.len()];
        for block in &partition.blocks {
            let mass: f64 = block.iter().map(|&n| self.uncond[n]).sum();
            let v = block
                .iter()
                .map(|&n| self.uncond[n] * x[self.pos(n)])
                .sum::<f64>()
                / mass;
            for &n in block {
                out[self.pos(n)] = v;
            }
        }
        Ok(out)
    }

    /// Nodes on the path from the root to `node`, root first.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut p = vec![node];
        let mut cur = node;
        while let Some(par) = self.nodes[cur].parent {
            p.push(par);
            cur = par;
        }
        p.reverse();
        p
    }

    /// Largest number of children of any node.
    pub fn max_branching(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }
}

fn branch_label(j: usize) -> String {
    if j < 10 {
        j.to_string()
    } else {
        format!("_{j}_")
    }
}

/// One value per tree node.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    values: Vec<f64>,
}

impl AdaptedProcess {
    pub fn zeros(tree: &EventTree) -> Self {
        Self::constant(tree, 0.0)
    }

    pub fn constant(tree: &EventTree, c: f64) -> Self {
        AdaptedProcess {
            values: vec![c; tree.len()],
        }
    }

    pub fn from_values(tree: &EventTree, values: Vec<f64>) -> Result<Self> {
        if values.len() != tree.len() {
            return Err(Error::Depth(format!(
                "process has {} values for {} nodes",
                values.len(),
                tree.len()
            )));
        }
        Ok(AdaptedProcess { values })
    }

    /// Builds a process from per-level values.
    pub fn from_levels(tree: &EventTree, levels: &[Vec<f64>]) -> Result<Self> {
        let mut values = Vec::with_capacity(tree.len());
        for (k, l) in levels.iter().enumerate() {
            if k > tree.horizon() || l.len() != tree.level_len(k) {
                return Err(Error::Depth(format!("bad level {k}")));
            }
            values.extend_from_slice(l);
        }
        if values.len() != tree.len() {
            return Err(Error::Depth("levels do not cover the tree".into()));
        }
        Ok(AdaptedProcess { values })
    }

    /// Process given by a function of the node index.
    pub fn from_fn(tree: &EventTree, f: impl FnMut(usize) -> f64) -> Self {
        AdaptedProcess {
            values: (0..tree.len()).map(f).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn set(&mut self, node: usize, v: f64) {
        self.values[node] = v;
    }

    pub fn level<'a>(&'a self, tree: &EventTree, k: usize) -> &'a [f64] {
        &self.values[tree.level(k)]
    }

    pub fn set_level(&mut self, tree: &EventTree, k: usize, v: &[f64]) {
        self.values[tree.level(k)].copy_from_slice(v);
    }

    pub fn scale(&self, t: f64) -> Self {
        AdaptedProcess {
            values: self.values.iter().map(|v| v * t).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        AdaptedProcess {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        AdaptedProcess {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Grouping of the depth-`depth` atoms into disjoint blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub depth: usize,
    /// Node indices per block.
    pub blocks: Vec<Vec<usize>>,
}

impl Partition {
    /// Validates that the blocks are disjoint, cover the level and each lie
    /// under a single parent when `same_parent` is set.
    pub fn new(tree: &EventTree, depth: usize, blocks: Vec<Vec<usize>>, same_parent: bool) -> Result<Self> {
        if depth > tree.horizon() {
            return Err(Error::schema("partition", format!("depth {depth} beyond horizon")));
        }
        let mut seen = vec![false; tree.level_len(depth)];
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::schema("partition", "empty block"));
            }
            for &n in b {
                if tree.depth(n) != depth {
                    return Err(Error::schema(
                        "partition",
                        format!("node `{}` is not at depth {depth}", tree.id(n)),
                    ));
                }
                let p = tree.pos(n);
                if seen[p] {
                    return Err(Error::schema(
                        "partition",
                        format!("node `{}` in more than one block", tree.id(n)),
                    ));
                }
                seen[p] = true;
            }
            if same_parent && depth > 0 {
                let par = tree.parent(b[0]);
                if b.iter().any(|&n| tree.parent(n) != par) {
                    return Err(Error::schema(
                        "partition",
                        format!("block containing `{}` spans several parents", tree.id(b[0])),
                    ));
                }
            }
        }
        if let Some(p) = seen.iter().position(|s| !s) {
            return Err(Error::schema(
                "partition",
                format!("node `{}` not covered", tree.id(tree.level(depth).start + p)),
            ));
        }
        Ok(Partition { depth, blocks })
    }

    /// The partition into single atoms.
    pub fn atoms(tree: &EventTree, depth: usize) -> Self {
        Partition {
            depth,
            blocks: tree.level(depth).map(|n| vec![n]).collect(),
        }
    }

    /// One block containing the whole level.
    pub fn trivial(tree: &EventTree, depth: usize) -> Self {
        Partition {
            depth,
            blocks: vec![tree.level(depth).collect()],
        }
    }

    /// Block index of every atom of the level, by position.
    pub fn block_index(&self, tree: &EventTree) -> Vec<usize> {
        let mut idx = vec![usize::MAX; tree.level_len(self.depth)];
        for (b, block) in self.blocks.iter().enumerate() {
            for &n in block {
                idx[tree.pos(n)] = b;
            }
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: &str, parent: Option<&str>, prob: f64) -> NodeSpec {
        NodeSpec {
            id: id.into(),
            parent: parent.map(Into::into),
            prob,
        }
    }

    fn skewed() -> EventTree {
        EventTree::new(
            2,
            vec![
                spec("r", None, 1.0),
                spec("u", Some("r"), 0.3),
                spec("d", Some("r"), 0.7),
                spec("uu", Some("u"), 0.4),
                spec("ud", Some("u"), 0.6),
                spec("du", Some("d"), 0.5),
                spec("dd", Some("d"), 0.5),
            ],
        )
        .unwrap()
    }

    #[test]
    fn node_probabilities() {
        let t = skewed();
        assert_eq!(t.node_probability(0), 1.0);
        assert!((t.probability_of("uu").unwrap() - 0.12).abs() < 1e-15);
        for k in 0..=2 {
            let s: f64 = t.level_probabilities(k).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let two = EventTree::uniform(1, &[0.5, 0.5]).unwrap();
        assert_eq!(two.probability_of("r0").unwrap(), 0.5);
        assert_eq!(two.probability_of("r1").unwrap(), 0.5);
        assert!(matches!(t.probability_of("zz"), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn input_order_does_not_matter() {
        let t = EventTree::new(
            1,
            vec![spec("b", Some("a"), 0.5), spec("a", None, 1.0), spec("c", Some("a"), 0.5)],
        )
        .unwrap();
        assert_eq!(t.id(0), "a");
        assert_eq!(t.level(1), 1..3);
    }

    #[test]
    fn rejects_bad_trees() {
        let bad_sum = EventTree::new(1, vec![spec("r", None, 1.0), spec("a", Some("r"), 0.4)]);
        assert!(bad_sum.is_err());
        let two_roots = EventTree::new(0, vec![spec("r", None, 1.0), spec("s", None, 1.0)]);
        assert!(two_roots.is_err());
        let short_leaf = EventTree::new(
            2,
            vec![
                spec("r", None, 1.0),
                spec("a", Some("r"), 0.5),
                spec("b", Some("r"), 0.5),
                spec("aa", Some("a"), 1.0),
            ],
        );
        assert!(short_leaf.is_err());
    }

    #[test]
    fn conditional_expectations() {
        let t = EventTree::uniform(1, &[0.5, 0.5]).unwrap();
        assert_eq!(t.cond_expectation(&[3.0, 4.0], 1, 0).unwrap(), vec![3.5]);
        assert_eq!(t.cond_expectation(&[3.0, 4.0], 1, 1).unwrap(), vec![3.0, 4.0]);
        let s = skewed();
        let c = s.cond_expectation(&[2.0; 4], 2, 1).unwrap();
        assert!(c.iter().all(|v| (v - 2.0).abs() < 1e-15));
        assert!(s.cond_expectation(&[1.0, 2.0], 1, 2).is_err());
    }

    #[test]
    fn esssup_essinf() {
        let t = EventTree::uniform(1, &[0.5, 0.5]).unwrap();
        let p = Partition::trivial(&t, 1);
        assert_eq!(t.cond_esssup(&[3.0, 4.0], 1, &p).unwrap(), vec![4.0, 4.0]);
        assert_eq!(t.cond_essinf(&[3.0, 4.0], 1, &p).unwrap(), vec![3.0, 3.0]);
        let t3 = EventTree::uniform(1, &[0.2, 0.3, 0.5]).unwrap();
        let root = Partition::trivial(&t3, 0);
        assert_eq!(t3.cond_esssup(&[1.0, 5.0, 2.0], 1, &root).unwrap(), vec![5.0]);
        let constant = t3.cond_essinf(&[7.0; 3], 1, &Partition::atoms(&t3, 1)).unwrap();
        assert_eq!(constant, vec![7.0; 3]);
        assert!(t3.cond_esssup(&[1.0], 0, &Partition::trivial(&t3, 1)).is_err());
    }

    #[test]
    fn partitions_validate() {
        let t = skewed();
        let uu = t.lookup("uu").unwrap();
        let du = t.lookup("du").unwrap();
        assert!(Partition::new(&t, 2, vec![vec![uu, du]], true).is_err());
        assert!(Partition::new(&t, 2, vec![vec![uu]], false).is_err());
    }
}
