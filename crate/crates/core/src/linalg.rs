//! Sparse symmetric matrices over the interior unknowns of a grid, with a
//! banded Cholesky direct solver and a Jacobi-preconditioned CG fallback for
//! systems whose band is too wide.

use std::sync::Arc;

use crate::discretization::{Grid, NOT_INTERIOR};
use crate::error::{KmsError, Result};

/// CSR pattern of the P1 stiffness matrix restricted to interior nodes.
#[derive(Debug)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    diag_pos: Vec<usize>,
    bandwidth: usize,
    /// Per element, `(d+1)^2` positions into the value array; `usize::MAX`
    /// where a vertex lies on the boundary.
    elem_pos: Vec<usize>,
    local: usize,
}

impl SparsityPattern {
    pub(crate) fn from_grid(grid: &Grid) -> Self {
        let n = grid.interior_nodes().len();
        let d = grid.dim();
        let local = d + 1;
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in grid.elements() {
            for a in 0..local {
                let ia = grid.interior_index(e.verts[a]);
                if ia == NOT_INTERIOR {
                    continue;
                }
                for b in 0..local {
                    let ib = grid.interior_index(e.verts[b]);
                    if ib != NOT_INTERIOR {
                        rows[ia].push(ib);
                    }
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut diag_pos = Vec::with_capacity(n);
        let mut bandwidth = 0;
        row_ptr.push(0);
        for (i, mut r) in rows.into_iter().enumerate() {
            r.sort_unstable();
            r.dedup();
            for &j in &r {
                bandwidth = bandwidth.max(i.abs_diff(j));
                if j == i {
                    diag_pos.push(col_idx.len());
                }
                col_idx.push(j);
            }
            row_ptr.push(col_idx.len());
        }
        let mut pattern = Self {
            n,
            row_ptr,
            col_idx,
            diag_pos,
            bandwidth,
            elem_pos: Vec::new(),
            local,
        };
        let mut elem_pos = Vec::with_capacity(grid.elements().len() * local * local);
        for e in grid.elements() {
            for a in 0..local {
                let ia = grid.interior_index(e.verts[a]);
                for b in 0..local {
                    let ib = grid.interior_index(e.verts[b]);
                    if ia == NOT_INTERIOR || ib == NOT_INTERIOR {
                        elem_pos.push(usize::MAX);
                    } else {
                        elem_pos.push(pattern.position(ia, ib).expect("pattern covers elements"));
                    }
                }
            }
        }
        pattern.elem_pos = elem_pos;
        pattern
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    /// Value-array positions of the local element matrix of element `e`.
    pub(crate) fn element_positions(&self, e: usize) -> &[usize] {
        let l2 = self.local * self.local;
        &self.elem_pos[e * l2..(e + 1) * l2]
    }
}

/// Symmetric matrix stored with a full (both triangles) CSR pattern.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let nnz = pattern.nnz();
        Self {
            pattern,
            values: vec![0.0; nnz],
        }
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn add_diagonal(&mut self, i: usize, v: f64) {
        let pos = self.pattern.diag_pos[i];
        self.values[pos] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[k] * x[p.col_idx[k]];
            }
            *yi = s;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.pattern.diag_pos.iter().map(|&k| self.values[k]).collect()
    }
}

/// Cholesky factor of a banded SPD matrix, lower band stored row-wise.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    b: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &SymMatrix) -> Result<Self> {
        let n = a.pattern.n;
        let b = a.pattern.bandwidth;
        let w = b + 1;
        let mut l = vec![0.0; n * w];
        let p = &a.pattern;
        for i in 0..n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.col_idx[k];
                if j <= i {
                    l[i * w + (b + j - i)] = a.values[k];
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(b);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(b));
                let mut s = l[i * w + (b + j - i)];
                for k in klo..j {
                    s -= l[i * w + (b + k - i)] * l[j * w + (b + k - j)];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(KmsError::LinearSolve(format!(
                            "matrix not positive definite at row {i} (pivot {s:e})"
                        )));
                    }
                    l[i * w + b] = s.sqrt();
                } else {
                    l[i * w + (b + j - i)] = s / l[j * w + b];
                }
            }
        }
        Ok(Self { n, b, l })
    }

    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let mut s = y[i];
            for k in lo..i {
                s -= self.l[i * w + (b + k - i)] * y[k];
            }
            y[i] = s / self.l[i * w + b];
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s -= self.l[k * w + (b + i - k)] * y[k];
            }
            y[i] = s / self.l[i * w + b];
        }
        y
    }
}

/// Jacobi-preconditioned conjugate gradients. Returns the solution and the
/// iteration count.
pub fn pcg(a: &SymMatrix, rhs: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = rhs.len();
    let diag = a.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(KmsError::LinearSolve("nonpositive diagonal in CG".into()));
    }
    let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(KmsError::LinearSolve("CG breakdown: p^T A p <= 0".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= rel_tol * bnorm {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(KmsError::LinearSolve(format!("CG did not converge in {max_iter} iterations")))
}

/// Band factorization cost limit (multiply-adds) above which CG is used.
const BAND_FLOP_LIMIT: f64 = 4.0e9;

/// Solves `A x = rhs` for SPD `A`, directly when the band is affordable.
pub fn solve_spd(a: &SymMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.pattern.n as f64;
    let b = a.pattern.bandwidth as f64;
    if n * b * b <= BAND_FLOP_LIMIT {
        Ok(BandCholesky::factor(a)?.solve(rhs))
    } else {
        let max_iter = 20 * a.pattern.n + 100;
        pcg(a, rhs, 1e-13, max_iter).map(|(x, _)| x)
    }
}
