//! Additive habit coefficients `β^(k)_l` and the consumption/surplus maps.

use crate::error::{Error, Result};
use crate::tree::{AdaptedProcess, EventTree};

/// Lower-triangular habit matrix. Row `k` holds `β^(k)_0, …, β^(k)_{k-1}`;
/// row 0 is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Habits {
    rows: Vec<Vec<f64>>,
}

impl Habits {
    pub fn none(horizon: usize) -> Self {
        Habits {
            rows: (0..=horizon).map(|k| vec![0.0; k]).collect(),
        }
    }

    /// Static habits: `β^(k)_{k-1} = β`, all other entries zero.
    pub fn static_beta(horizon: usize, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::schema("beta", format!("habit coefficient {beta} must be >= 0")));
        }
        let mut h = Habits::none(horizon);
        for k in 1..=horizon {
            h.rows[k][k - 1] = beta;
        }
        Ok(h)
    }

    /// Builds from rows `k = 1..=T`; row `k` must have `k` entries.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut all = vec![Vec::new()];
        for (i, r) in rows.into_iter().enumerate() {
            let k = i + 1;
            if r.len() != k {
                return Err(Error::schema(
                    format!("beta_matrix[{i}]"),
                    format!("row for period {k} needs {k} entries, got {}", r.len()),
                ));
            }
            if let Some(b) = r.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
                return Err(Error::schema(
                    format!("beta_matrix[{i}]"),
                    format!("habit coefficient {b} must be >= 0"),
                ));
            }
            all.push(r);
        }
        Ok(Habits { rows: all })
    }

    pub fn horizon(&self) -> usize {
        self.rows.len() - 1
    }

    /// `β^(k)_l`, zero outside the triangle.
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.rows.get(k).and_then(|r| r.get(l)).copied().unwrap_or(0.0)
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    /// Rows `1..=T`, the serialized form.
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows[1..]
    }

    /// Returns `Some(β)` when the matrix has the static one-lag form.
    pub fn as_static(&self) -> Option<f64> {
        let beta = self.get(1, 0);
        for k in 1..=self.horizon() {
            for l in 0..k {
                let expect = if l + 1 == k { beta } else { 0.0 };
                if self.rows[k][l] != expect {
                    return None;
                }
            }
        }
        Some(beta)
    }

    pub fn is_zero(&self) -> bool {
        self.rows.iter().flatten().all(|&b| b == 0.0)
    }

    /// Sum over strictly decreasing chains `l = t_0 > t_1 > … > t_j = k` of
    /// `β^(t_0)_{t_1} β^(t_1)_{t_2} ⋯`, with `chain_sum(l, l) = 1`.
    pub fn chain_sum(&self, l: usize, k: usize) -> f64 {
        if k > l {
            return 0.0;
        }
        // c[m] = chain sum from l down to m
        let mut c = vec![0.0; l + 1];
        c[l] = 1.0;
        for m in (k..l).rev() {
            c[m] = (m + 1..=l).map(|n| c[n] * self.get(n, m)).sum();
        }
        c[k]
    }

    /// `s_k = c_k − Σ_l β^(k)_l c_l` along each path.
    pub fn surplus(&self, tree: &EventTree, c: &AdaptedProcess) -> AdaptedProcess {
        let mut s = c.clone();
        for n in 0..tree.len() {
            let k = tree.depth(n);
            if k == 0 {
                continue;
            }
            let path = tree.path(n);
            let habit: f64 = (0..k).map(|l| self.get(k, l) * c.at(path[l])).sum();
            s.set(n, c.at(n) - habit);
        }
        s
    }

    /// Inverse of [`Habits::surplus`].
    pub fn consumption(&self, tree: &EventTree, s: &AdaptedProcess) -> AdaptedProcess {
        let mut c = s.clone();
        // breadth-first order visits ancestors first
        for n in 0..tree.len() {
            let k = tree.depth(n);
            if k == 0 {
                continue;
            }
            let path = tree.path(n);
            let habit: f64 = (0..k).map(|l| self.get(k, l) * c.at(path[l])).sum();
            c.set(n, s.at(n) + habit);
        }
        c
    }

    /// Dense matrix of the linear map `c ↦ s` in node order.
    pub fn surplus_matrix(&self, tree: &EventTree) -> Vec<Vec<f64>> {
        let n = tree.len();
        let mut h = vec![vec![0.0; n]; n];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
            let k = tree.depth(i);
            let path = tree.path(i);
            for l in 0..k {
                row[path[l]] -= self.get(k, l);
            }
        }
        h
    }
}
