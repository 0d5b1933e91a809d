//! Block-sparse symmetric positive definite systems with 3×3 blocks.
//!
//! Factorization is a right-looking block Cholesky after a minimum-degree
//! reordering of the block graph.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Vector3};

use crate::error::{MapError, Result};

/// Lower triangle of a symmetric block matrix.
#[derive(Debug, Clone, Default)]
pub struct BlockMatrix {
    n: usize,
    diag: Vec<Matrix3<f64>>,
    /// `lower[c]` holds blocks `(r, c)` with `r > c`.
    lower: Vec<BTreeMap<usize, Matrix3<f64>>>,
}

impl BlockMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            diag: vec![Matrix3::zeros(); n],
            lower: vec![BTreeMap::new(); n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Adds `block` at `(r, c)` and, implicitly, its transpose at `(c, r)`.
    pub fn add(&mut self, r: usize, c: usize, block: &Matrix3<f64>) {
        use std::cmp::Ordering::*;
        match r.cmp(&c) {
            Equal => self.diag[r] += block,
            Greater => *self.lower[c].entry(r).or_insert_with(Matrix3::zeros) += block,
            Less => *self.lower[r].entry(c).or_insert_with(Matrix3::zeros) += block.transpose(),
        }
    }

    pub fn diagonal(&self, k: usize) -> &Matrix3<f64> {
        &self.diag[k]
    }

    pub fn diagonal_mut(&mut self, k: usize) -> &mut Matrix3<f64> {
        &mut self.diag[k]
    }

    pub fn mul_vec(&self, x: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let mut y: Vec<Vector3<f64>> = (0..self.n).map(|k| self.diag[k] * x[k]).collect();
        for (c, col) in self.lower.iter().enumerate() {
            for (&r, b) in col {
                y[r] += b * x[c];
                y[c] += b.transpose() * x[r];
            }
        }
        y
    }

    fn neighbors(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.n];
        for (c, col) in self.lower.iter().enumerate() {
            for &r in col.keys() {
                adj[r].insert(c);
                adj[c].insert(r);
            }
        }
        adj
    }
}

/// Greedy minimum-degree elimination order of the block graph. Ties go to the
/// lower index.
pub fn minimum_degree_order(adj: &[BTreeSet<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut adj: Vec<BTreeSet<usize>> = adj.to_vec();
    let mut eliminated = vec![false; n];
    let mut heap: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = heap.pop_first() {
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().filter(|u| !eliminated[*u]).collect();
        for &u in &nbrs {
            heap.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
            for &w in &nbrs {
                if w != u {
                    adj[u].insert(w);
                }
            }
            heap.insert((adj[u].len(), u));
        }
        adj[v].clear();
    }
    order
}

/// Cholesky factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    /// position in the elimination order of each original block index
    position: Vec<usize>,
    order: Vec<usize>,
    diag: Vec<Matrix3<f64>>,
    /// `cols[k]`: blocks `L(r, k)`, `r > k`, in permuted indices
    cols: Vec<Vec<(usize, Matrix3<f64>)>>,
}

impl BlockCholesky {
    pub fn factor(a: &BlockMatrix) -> Result<Self> {
        let n = a.n;
        let order = minimum_degree_order(&a.neighbors());
        let mut position = vec![0; n];
        for (k, &v) in order.iter().enumerate() {
            position[v] = k;
        }
        let mut diag: Vec<Matrix3<f64>> = order.iter().map(|&v| a.diag[v]).collect();
        let mut work: Vec<BTreeMap<usize, Matrix3<f64>>> = vec![BTreeMap::new(); n];
        for (c, col) in a.lower.iter().enumerate() {
            for (&r, b) in col {
                let (pr, pc) = (position[r], position[c]);
                if pr > pc {
                    *work[pc].entry(pr).or_insert_with(Matrix3::zeros) += b;
                } else {
                    *work[pr].entry(pc).or_insert_with(Matrix3::zeros) += b.transpose();
                }
            }
        }
        let mut cols = Vec::with_capacity(n);
        for k in 0..n {
            let lkk = diag[k].cholesky().ok_or(MapError::SingularSystem)?.l();
            let lkk_inv_t = lkk.try_inverse().ok_or(MapError::SingularSystem)?.transpose();
            let col: Vec<(usize, Matrix3<f64>)> = std::mem::take(&mut work[k])
                .into_iter()
                .map(|(r, b)| (r, b * lkk_inv_t))
                .collect();
            for (x, (r, lr)) in col.iter().enumerate() {
                diag[*r] -= lr * lr.transpose();
                for (s, ls) in &col[..x] {
                    *work[*s].entry(*r).or_insert_with(Matrix3::zeros) -= lr * ls.transpose();
                }
            }
            diag[k] = lkk;
            cols.push(col);
        }
        Ok(Self {
            position,
            order,
            diag,
            cols,
        })
    }

    pub fn solve(&self, b: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let n = self.order.len();
        let mut y: Vec<Vector3<f64>> = self.order.iter().map(|&v| b[v]).collect();
        for k in 0..n {
            let yk = self.diag[k]
                .solve_lower_triangular(&y[k])
                .expect("factor diagonal is nonsingular");
            y[k] = yk;
            for (r, l) in &self.cols[k] {
                y[*r] -= l * yk;
            }
        }
        for k in (0..n).rev() {
            let mut v = y[k];
            for (r, l) in &self.cols[k] {
                v -= l.transpose() * y[*r];
            }
            y[k] = self.diag[k]
                .transpose()
                .solve_upper_triangular(&v)
                .expect("factor diagonal is nonsingular");
        }
        (0..n).map(|v| y[self.position[v]]).collect()
    }

    /// Number of stored off-diagonal blocks of the factor.
    pub fn fill(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }
}
