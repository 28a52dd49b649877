//! Direct solver for sparse symmetric positive-definite systems: reverse
//! Cuthill-McKee ordering followed by a banded Cholesky factorization.
//! Mesh Laplacians and P1 stiffness matrices stay narrow-banded after RCM,
//! so the factorization is exact, deterministic and fast at these sizes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Symmetric sparse matrix accumulated from (i, j, value) contributions.
/// Only one of (i, j)/(j, i) needs to be added; both are treated as present.
#[derive(Debug, Clone)]
pub struct SymSparse {
    n: usize,
    // Keyed on (max, min): lower triangle including diagonal.
    entries: BTreeMap<(usize, usize), f64>,
}

impl SymSparse {
    pub fn new(n: usize) -> Self {
        SymSparse {
            n,
            entries: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.n && j < self.n);
        let k = if i >= j { (i, j) } else { (j, i) };
        *self.entries.entry(k).or_insert(0.0) += v;
    }

    /// y = A x, using the symmetric completion of the stored lower triangle.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (&(i, j), &v) in &self.entries {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in self.entries.keys() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }
}

/// Cholesky factorization of an SPD `SymSparse` under an RCM permutation.
pub struct CholeskyFactor {
    n: usize,
    bandwidth: usize,
    // Row-major band: band[i * (bw + 1) + d] = L[i][i - d], d in 0..=bw.
    band: Vec<f64>,
    perm: Vec<usize>, // perm[new] = old
}

fn rcm_order(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let degree = |v: usize| adj[v].len();
    for seed0 in 0..n {
        if visited[seed0] {
            continue;
        }
        // Pseudo-peripheral start: two BFS sweeps from the lowest-degree
        // vertex of the component.
        let comp_seed = {
            let mut comp = Vec::new();
            let mut stack = vec![seed0];
            let mut seen = vec![false; n];
            seen[seed0] = true;
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &w in &adj[v] {
                    if !seen[w] && !visited[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            *comp
                .iter()
                .min_by_key(|&&v| (degree(v), v))
                .unwrap()
        };
        let far = bfs_last(adj, comp_seed, &visited);
        let start = bfs_last(adj, far, &visited);

        let mut queue = std::collections::VecDeque::new();
        queue.push_back(start);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree(w), w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_last(adj: &[Vec<usize>], start: usize, blocked: &[bool]) -> usize {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    seen[start] = true;
    queue.push_back(start);
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        last = v;
        let mut nbrs: Vec<usize> = adj[v]
            .iter()
            .copied()
            .filter(|&w| !seen[w] && !blocked[w])
            .collect();
        nbrs.sort_by_key(|&w| (adj[w].len(), w));
        for w in nbrs {
            seen[w] = true;
            queue.push_back(w);
        }
    }
    last
}

impl CholeskyFactor {
    pub fn factor(a: &SymSparse) -> Result<CholeskyFactor> {
        let n = a.n;
        let adj = a.adjacency();
        let perm = rcm_order(&adj);
        let mut inv_perm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }

        let mut bandwidth = 0usize;
        for &(i, j) in a.entries.keys() {
            let (pi, pj) = (inv_perm[i], inv_perm[j]);
            bandwidth = bandwidth.max(pi.abs_diff(pj));
        }

        let w = bandwidth + 1;
        let mut band = vec![0.0; n * w];
        for (&(i, j), &v) in &a.entries {
            let (pi, pj) = (inv_perm[i], inv_perm[j]);
            let (r, c) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            band[r * w + (r - c)] += v;
        }

        // In-place banded Cholesky: A = L L^T.
        for i in 0..n {
            let lo = i.saturating_sub(bandwidth);
            for j in lo..i {
                let mut s = band[i * w + (i - j)];
                let kmin = lo.max(j.saturating_sub(bandwidth));
                for k in kmin..j {
                    s -= band[i * w + (i - k)] * band[j * w + (j - k)];
                }
                band[i * w + (i - j)] = s / band[j * w];
            }
            let mut d = band[i * w];
            for k in lo..i {
                let l = band[i * w + (i - k)];
                d -= l * l;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::SingularSystem {
                    row: perm[i],
                    pivot: d,
                });
            }
            band[i * w] = d.sqrt();
        }

        Ok(CholeskyFactor {
            n,
            bandwidth,
            band,
            perm,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let (n, bw, w) = (self.n, self.bandwidth, self.bandwidth + 1);
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = rhs[self.perm[i]];
        }
        // Forward: L z = y.
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.band[i * w + (i - k)] * y[k];
            }
            y[i] = s / self.band[i * w];
        }
        // Backward: L^T x = z.
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = y[i];
            for k in (i + 1)..=hi {
                s -= self.band[k * w + (k - i)] * y[k];
            }
            y[i] = s / self.band[i * w];
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn solves_small_spd_system() {
        // Tridiagonal Laplacian-like matrix.
        let n = 50;
        let mut a = SymSparse::new(n);
        for i in 0..n {
            a.add(i, i, 2.5);
            if i + 1 < n {
                a.add(i, i + 1, -1.0);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.mul_vec(&x_true);
        let f = CholeskyFactor::factor(&a).unwrap();
        let x = f.solve(&b);
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn random_sparse_spd_residual() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 120;
        let mut a = SymSparse::new(n);
        for i in 0..n {
            a.add(i, i, 10.0 + rng.gen::<f64>());
        }
        for _ in 0..300 {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j {
                a.add(i, j, rng.gen_range(-0.5..0.5));
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let f = CholeskyFactor::factor(&a).unwrap();
        let x = f.solve(&b);
        let r = a.mul_vec(&x);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = SymSparse::new(2);
        a.add(0, 0, 1.0);
        a.add(1, 1, -1.0);
        assert!(matches!(
            CholeskyFactor::factor(&a),
            Err(Error::SingularSystem { .. })
        ));
    }
}
