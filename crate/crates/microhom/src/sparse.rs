//! Compressed-sparse-row matrices and a Jacobi-preconditioned conjugate
//! gradient solver, with an optional per-iteration projection used to solve
//! the singular periodic cell systems on the orthogonal complement of the
//! translation kernel.
//!
//! Assembly and the solver are strictly serial with a fixed reduction order,
//! which makes every solve bit-reproducible; parallelism belongs one level
//! up, across independent solves.

/// Symmetric sparse matrix in CSR layout with a precomputed pattern.
/// Duplicate scatter-adds accumulate; the pattern itself is immutable.
pub struct CsrMatrix {
    nrows: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from a per-row list of column indices (sorted, deduplicated).
    pub fn from_pattern(columns_per_row: Vec<Vec<usize>>) -> Self {
        let nrows = columns_per_row.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for mut cols in columns_per_row {
            cols.sort_unstable();
            cols.dedup();
            indices.extend_from_slice(&cols);
            indptr.push(indices.len());
        }
        let values = vec![0.0; indices.len()];
        CsrMatrix {
            nrows,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn clear(&mut self) {
        self.values.fill(0.0);
    }

    fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.indptr[row];
        let hi = self.indptr[row + 1];
        self.indices[lo..hi].binary_search(&col).ok().map(|p| lo + p)
    }

    /// Scatter-add into an existing pattern slot; panics if the entry is not
    /// part of the pattern (that is an assembly bug, not a runtime condition).
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        let s = self
            .slot(row, col)
            .unwrap_or_else(|| panic!("entry ({row},{col}) outside the assembled pattern"));
        self.values[s] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.slot(row, col).map(|s| self.values[s]).unwrap_or(0.0)
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for s in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[s] * x[self.indices[s]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.get(r, r)).collect()
    }

    /// Replace A by (A + Aᵀ)/2 to scrub round-off asymmetry before CG. The
    /// pattern must be structurally symmetric (true for all FEM assemblies
    /// here).
    pub fn symmetrize(&mut self) {
        for r in 0..self.nrows {
            for s in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[s];
                if c > r {
                    let t = self
                        .slot(c, r)
                        .expect("pattern must be structurally symmetric");
                    let avg = 0.5 * (self.values[s] + self.values[t]);
                    self.values[s] = avg;
                    self.values[t] = avg;
                }
            }
        }
    }

    /// Symmetric elimination of Dirichlet constraints: rows and columns of
    /// fixed dofs are cleared (diagonal set to 1), their contribution moved
    /// to the right-hand side, and `rhs` pinned to the fixed values. Keeps
    /// the matrix SPD on the free dofs.
    pub fn eliminate_dirichlet(&mut self, rhs: &mut [f64], fixed: &[Option<f64>]) {
        assert_eq!(fixed.len(), self.nrows);
        assert_eq!(rhs.len(), self.nrows);
        for r in 0..self.nrows {
            if let Some(v) = fixed[r] {
                for s in self.indptr[r]..self.indptr[r + 1] {
                    self.values[s] = if self.indices[s] == r { 1.0 } else { 0.0 };
                }
                rhs[r] = v;
            } else {
                for s in self.indptr[r]..self.indptr[r + 1] {
                    let c = self.indices[s];
                    if let Some(v) = fixed[c] {
                        rhs[r] -= self.values[s] * v;
                        self.values[s] = 0.0;
                    }
                }
            }
        }
    }

    /// Largest relative asymmetry |A - Aᵀ| / |A|, for diagnostics.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for r in 0..self.nrows {
            for s in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[s];
                scale = scale.max(self.values[s].abs());
                if c > r {
                    let t = self.get(c, r);
                    worst = worst.max((self.values[s] - t).abs());
                }
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    /// Convergence criterion: ‖r‖ ≤ rel_tol · ‖b‖.
    pub rel_tol: f64,
    pub max_iterations: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            rel_tol: 1e-10,
            max_iterations: 50_000,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgSummary {
    pub iterations: usize,
    /// Final relative residual ‖b − Ax‖ / ‖b‖.
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients. `project`, when given, is
/// applied to the right-hand side, the residual and every preconditioned
/// direction; supplying the orthogonal projection onto the complement of the
/// matrix kernel keeps the iteration on the subspace where A is positive
/// definite.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    inv_diag: &[f64],
    project: Option<&dyn Fn(&mut [f64])>,
    opts: &CgOptions,
) -> (Vec<f64>, CgSummary) {
    let n = a.nrows();
    let mut rhs = b.to_vec();
    if let Some(p) = project {
        p(&mut rhs);
    }
    let bnorm = dot(&rhs, &rhs).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (
            x,
            CgSummary {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        );
    }

    let mut r = rhs.clone();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(v, d)| v * d).collect();
    if let Some(p) = project {
        p(&mut z);
    }
    let mut p_dir = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];

    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < opts.max_iterations {
        iterations += 1;
        a.mul_vec(&p_dir, &mut q);
        let pq = dot(&p_dir, &q);
        if pq <= 0.0 {
            // not positive definite on this direction; bail with the current iterate
            break;
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p_dir[i];
            r[i] -= alpha * q[i];
        }
        if let Some(pj) = project {
            pj(&mut r);
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= opts.rel_tol {
            break;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        if let Some(pj) = project {
            pj(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p_dir[i] = z[i] + beta * p_dir[i];
        }
    }

    (
        x,
        CgSummary {
            iterations,
            relative_residual: rel,
            converged: rel <= opts.rel_tol,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1D Dirichlet Laplacian, tridiagonal.
    fn laplacian_1d(n: usize) -> CsrMatrix {
        let pattern: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut cols = vec![i];
                if i > 0 {
                    cols.push(i - 1);
                }
                if i + 1 < n {
                    cols.push(i + 1);
                }
                cols
            })
            .collect();
        let mut m = CsrMatrix::from_pattern(pattern);
        for i in 0..n {
            m.add(i, i, 2.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.add(i, i + 1, -1.0);
            }
        }
        m
    }

    #[test]
    fn cg_solves_spd_system() {
        let n = 50;
        let a = laplacian_1d(n);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        a.mul_vec(&x_true, &mut b);
        let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        let (x, info) = pcg(&a, &b, &inv_diag, None, &CgOptions {
            rel_tol: 1e-12,
            max_iterations: 10_000,
        });
        assert!(info.converged, "residual {:.3e}", info.relative_residual);
        let err: f64 = x
            .iter()
            .zip(&x_true)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-9, "error {err:.3e}");
    }

    /// Periodic Laplacian (singular, kernel = constants) solved with the
    /// zero-mean projection.
    #[test]
    fn cg_with_projection_handles_singular_system() {
        let n = 64;
        let pattern: Vec<Vec<usize>> = (0..n)
            .map(|i| vec![(i + n - 1) % n, i, (i + 1) % n])
            .collect();
        let mut a = CsrMatrix::from_pattern(pattern);
        for i in 0..n {
            a.add(i, i, 2.0);
            a.add(i, (i + 1) % n, -1.0);
            a.add(i, (i + n - 1) % n, -1.0);
        }
        // manufactured zero-mean solution
        let x_true: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let mut b = vec![0.0; n];
        a.mul_vec(&x_true, &mut b);
        let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        let project = |v: &mut [f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= mean);
        };
        let (x, info) = pcg(&a, &b, &inv_diag, Some(&project), &CgOptions {
            rel_tol: 1e-12,
            max_iterations: 10_000,
        });
        assert!(info.converged);
        let err: f64 = x
            .iter()
            .zip(&x_true)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-9, "error {err:.3e}");
    }

    #[test]
    fn symmetrize_averages_pairs() {
        let mut a = CsrMatrix::from_pattern(vec![vec![0, 1], vec![0, 1]]);
        a.add(0, 1, 1.0);
        a.add(1, 0, 3.0);
        assert!(a.asymmetry() > 0.0);
        a.symmetrize();
        assert_eq!(a.get(0, 1), 2.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let a = laplacian_1d(10);
        let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        let (x, info) = pcg(&a, &vec![0.0; 10], &inv_diag, None, &CgOptions::default());
        assert!(info.converged);
        assert_eq!(info.iterations, 0);
        assert!(x.iter().all(|v| *v == 0.0));
    }
}
