//! Fixed-stencil sparse matrices and Krylov solvers.

use rayon::prelude::*;

use super::PdeError;

const CHUNK: usize = 8192;

/// Sparse matrix whose rows share one set of index offsets.
///
/// Row `i`, slot `s` couples node `i` to node `i + offsets[s]`. Rows of
/// boundary nodes are zero and never read out of range.
#[derive(Clone, Debug)]
pub struct StencilMatrix {
    pub offsets: Vec<isize>,
    pub vals: Vec<f64>,
}

impl StencilMatrix {
    pub fn zeros(offsets: Vec<isize>, nodes: usize) -> Self {
        let vals = vec![0.0; offsets.len() * nodes];
        Self { offsets, vals }
    }

    pub fn slots(&self) -> usize {
        self.offsets.len()
    }

    pub fn slot_of(&self, offset: isize) -> Option<usize> {
        self.offsets.iter().position(|o| *o == offset)
    }

    /// Adds `v` to entry `(row, row + offset)`.
    pub fn add(&mut self, row: usize, offset: isize, v: f64) {
        let s = self.slot_of(offset).expect("offset outside the stencil");
        let i = row * self.slots() + s;
        self.vals[i] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let off = col as isize - row as isize;
        self.slot_of(off).map_or(0.0, |s| self.vals[row * self.slots() + s])
    }

    pub fn diag(&self, row: usize) -> f64 {
        self.get(row, row)
    }

    /// `y[i] = sum_s vals[i, s] x[i + off_s]` on masked rows, 0 elsewhere.
    pub fn apply(&self, x: &[f64], y: &mut [f64], mask: &[bool]) {
        let s = self.slots();
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(c, ys)| {
            let base = c * CHUNK;
            for (k, yi) in ys.iter_mut().enumerate() {
                let i = base + k;
                if !mask[i] {
                    *yi = 0.0;
                    continue;
                }
                let row = &self.vals[i * s..(i + 1) * s];
                let mut acc = 0.0;
                for (v, o) in row.iter().zip(&self.offsets) {
                    acc += v * x[(i as isize + o) as usize];
                }
                *yi = acc;
            }
        });
    }
}

/// Dot product with a reduction order independent of the thread count.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Square operator for the Krylov solvers.
pub trait LinearOperator: Sync {
    fn len(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 20_000 }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi += a * xi);
}

fn precondition(inv_diag: &[f64], r: &[f64], z: &mut [f64]) {
    z.par_iter_mut().zip(r.par_iter().zip(inv_diag.par_iter())).for_each(|(zi, (ri, di))| *zi = ri * di);
}

fn inverse_diagonal(op: &impl LinearOperator) -> Vec<f64> {
    op.diagonal().into_iter().map(|v| if v != 0.0 { 1.0 / v } else { 1.0 }).collect()
}

fn residual(op: &impl LinearOperator, b: &[f64], x: &[f64], r: &mut [f64]) {
    op.apply(x, r);
    r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite operators.
pub fn cg(op: &impl LinearOperator, b: &[f64], x: &mut [f64], cfg: SolverConfig) -> Result<SolveStats, PdeError> {
    let bn = norm2(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let n = op.len();
    let inv = inverse_diagonal(op);
    let mut r = vec![0.0; n];
    residual(op, b, x, &mut r);
    let mut z = vec![0.0; n];
    precondition(&inv, &r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = norm2(&r) / bn;
    for it in 0..cfg.max_iter {
        if rel <= cfg.tol {
            return Ok(SolveStats { iterations: it, relative_residual: rel });
        }
        op.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 || !pq.is_finite() {
            return Err(PdeError::Solver { iterations: it, residual: rel });
        }
        let alpha = rz / pq;
        axpy(x, alpha, &p);
        axpy(&mut r, -alpha, &q);
        precondition(&inv, &r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        rel = norm2(&r) / bn;
    }
    // recompute the true residual before giving up
    residual(op, b, x, &mut r);
    rel = norm2(&r) / bn;
    if rel <= cfg.tol {
        Ok(SolveStats { iterations: cfg.max_iter, relative_residual: rel })
    } else {
        Err(PdeError::Solver { iterations: cfg.max_iter, residual: rel })
    }
}

/// Right-Jacobi-preconditioned BiCGStab for general operators.
pub fn bicgstab(
    op: &impl LinearOperator,
    b: &[f64],
    x: &mut [f64],
    cfg: SolverConfig,
) -> Result<SolveStats, PdeError> {
    let bn = norm2(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let n = op.len();
    let inv = inverse_diagonal(op);
    let mut r = vec![0.0; n];
    residual(op, b, x, &mut r);
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut rel = norm2(&r) / bn;
    let mut it = 0;
    while it < cfg.max_iter {
        if rel <= cfg.tol {
            // guard against drift between the recursive and true residual
            residual(op, b, x, &mut r);
            rel = norm2(&r) / bn;
            if rel <= cfg.tol {
                return Ok(SolveStats { iterations: it, relative_residual: rel });
            }
        }
        it += 1;
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut()
            .zip(r.par_iter().zip(v.par_iter()))
            .for_each(|(pi, (ri, vi))| *pi = ri + beta * (*pi - omega * vi));
        precondition(&inv, &p, &mut y);
        op.apply(&y, &mut v);
        let r0v = dot(&r0, &v);
        if r0v == 0.0 || !r0v.is_finite() {
            break;
        }
        alpha = rho / r0v;
        s.par_iter_mut().zip(r.par_iter().zip(v.par_iter())).for_each(|(si, (ri, vi))| *si = ri - alpha * vi);
        axpy(x, alpha, &y);
        let sn = norm2(&s) / bn;
        if sn <= cfg.tol {
            std::mem::swap(&mut r, &mut s);
            rel = sn;
            continue;
        }
        precondition(&inv, &s, &mut z);
        op.apply(&z, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 || !tt.is_finite() {
            break;
        }
        omega = dot(&t, &s) / tt;
        axpy(x, omega, &z);
        r.par_iter_mut().zip(s.par_iter().zip(t.par_iter())).for_each(|(ri, (si, ti))| *ri = si - omega * ti);
        rel = norm2(&r) / bn;
        if omega == 0.0 {
            break;
        }
    }
    residual(op, b, x, &mut r);
    rel = norm2(&r) / bn;
    if rel <= cfg.tol {
        Ok(SolveStats { iterations: it, relative_residual: rel })
    } else {
        Err(PdeError::Solver { iterations: it, residual: rel })
    }
}
