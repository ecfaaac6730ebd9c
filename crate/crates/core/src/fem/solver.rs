//! Symmetric positive definite solves with Dirichlet rows eliminated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sparse::CsrMatrix;

pub const RELATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("matrix is not positive definite (pivot {pivot} at reduced row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("conjugate gradient did not converge: {iterations} iterations, relative residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("non-finite value in solution")]
    NonFinite,
}

/// Linear solver backing every implicit step and the level-set update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// Banded Cholesky factorization; the structured node numbering keeps the band narrow.
    #[default]
    Cholesky,
    /// Conjugate gradient with a diagonal preconditioner.
    Pcg,
}

/// Lower-triangular band factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self, SolveError> {
        let n = a.n();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + j + bw - i] = v;
                }
            }
        }
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            for j in k0..=i {
                let row_i = &l[i * w + (k0 + bw - i)..i * w + (j + bw - i)];
                let row_j = &l[j * w + (k0 + bw - j)..j * w + bw];
                let dot: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
                let s = l[i * w + j + bw - i] - dot;
                if i == j {
                    if !(s > 0.0) {
                        return Err(SolveError::NotPositiveDefinite { row: i, pivot: s });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + j + bw - i] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            let mut s = y[i];
            for k in k0..i {
                s -= self.l[i * w + k + bw - i] * y[k];
            }
            y[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            y[i] /= self.l[i * w + bw];
            let yi = y[i];
            let k0 = i.saturating_sub(bw);
            for k in k0..i {
                y[k] -= self.l[i * w + k + bw - i] * yi;
            }
        }
        y
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Diagonally preconditioned CG. Returns the solution and the iteration count.
pub fn pcg(a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>) -> Result<(Vec<f64>, usize), SolveError> {
    let n = a.n();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let b_norm = norm(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let ax = a.mul_vec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, d)| ri * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let max_iter = 10 * n.max(1);
    let mut residual = norm(&r) / b_norm;
    for it in 0..max_iter {
        if residual <= RELATIVE_TOLERANCE {
            return Ok((x, it));
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolveError::NotPositiveDefinite { row: it, pivot: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        residual = norm(&r) / b_norm;
    }
    if residual <= RELATIVE_TOLERANCE {
        Ok((x, max_iter))
    } else {
        Err(SolveError::NotConverged { iterations: max_iter, residual })
    }
}

enum Prepared {
    Band(BandCholesky),
    Pcg,
}

/// SPD system `A x = b` with a set of fixed (Dirichlet) nodes eliminated symmetrically.
///
/// The reduced matrix is prepared once, so one instance serves every step that shares `A`.
pub struct DirichletSystem {
    full: CsrMatrix,
    fixed: Vec<bool>,
    free: Vec<usize>,
    reduced: CsrMatrix,
    prepared: Prepared,
}

impl DirichletSystem {
    pub fn new(a: CsrMatrix, fixed: &[bool], kind: SolverKind) -> Result<Self, SolveError> {
        let keep: Vec<bool> = fixed.iter().map(|f| !f).collect();
        let (reduced, free) = a.restrict(&keep);
        let prepared = match kind {
            SolverKind::Cholesky => Prepared::Band(BandCholesky::factor(&reduced)?),
            SolverKind::Pcg => Prepared::Pcg,
        };
        Ok(Self { full: a, fixed: fixed.to_vec(), free, reduced, prepared })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.full
    }

    pub fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    fn solve_reduced(&self, b: &[f64]) -> Result<Vec<f64>, SolveError> {
        let x = match &self.prepared {
            Prepared::Band(chol) => {
                let mut x = chol.solve(b);
                // iterative refinement until the reduced residual meets the tolerance
                let b_norm = norm(b);
                for _ in 0..3 {
                    let ax = self.reduced.mul_vec(&x);
                    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
                    if b_norm == 0.0 || norm(&r) <= RELATIVE_TOLERANCE * b_norm {
                        break;
                    }
                    let dx = chol.solve(&r);
                    x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
                }
                x
            }
            Prepared::Pcg => pcg(&self.reduced, b, None)?.0,
        };
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(SolveError::NonFinite)
        }
    }

    /// Solves with every fixed node held at `fixed_value`; `rhs` has full length and its fixed
    /// entries are ignored.
    pub fn solve(&self, rhs: &[f64], fixed_value: f64) -> Result<Vec<f64>, SolveError> {
        let mut lifted = vec![0.0; self.full.n()];
        for (i, &f) in self.fixed.iter().enumerate() {
            if f {
                lifted[i] = fixed_value;
            }
        }
        let coupling = if fixed_value != 0.0 { self.full.mul_vec(&lifted) } else { vec![0.0; self.full.n()] };
        let b: Vec<f64> = self.free.iter().map(|&i| rhs[i] - coupling[i]).collect();
        let x = self.solve_reduced(&b)?;
        for (k, &i) in self.free.iter().enumerate() {
            lifted[i] = x[k];
        }
        Ok(lifted)
    }

    /// Solution that vanishes on fixed nodes (adjoint and homogeneous problems).
    pub fn solve_homogeneous(&self, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        self.solve(rhs, 0.0)
    }

    /// Relative residual of the reduced system for a full-length solution `x`.
    pub fn reduced_residual(&self, rhs: &[f64], x: &[f64]) -> f64 {
        let ax = self.full.mul_vec(x);
        let (mut r2, mut b2) = (0.0, 0.0);
        let lifted: Vec<f64> = x.iter().zip(&self.fixed).map(|(v, &f)| if f { *v } else { 0.0 }).collect();
        let coupling = self.full.mul_vec(&lifted);
        for &i in &self.free {
            r2 += (rhs[i] - ax[i]).powi(2);
            b2 += (rhs[i] - coupling[i]).powi(2);
        }
        if b2 == 0.0 {
            r2.sqrt()
        } else {
            (r2 / b2).sqrt()
        }
    }
}
