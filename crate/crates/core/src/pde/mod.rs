//! Finite-volume discretization of the generator and its dual on boxes with
//! absorbing boundary, implicit-Euler evolution and the mass, Green and
//! duality probes built on it.

mod assemble;
mod grid;
pub mod linalg;
mod probes;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::testfn::TestFunction;

pub use assemble::{assemble, DiscreteOperator, SystemOperator};
pub use grid::Grid;
pub use linalg::{SolveStats, SolverConfig};
pub use probes::{
    conservativeness_probe, green_probe, GreenCurve, MAX_INCREMENT_RATIO, GreenProbeSpec, GreenVerdict, MassCurve, MassProbeSpec,
    MassVerdict,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("assembly failed at {location:?}: {detail}")]
    Assembly { location: Vec<f64>, detail: String },
    #[error("linear solver stopped after {iterations} iterations at relative residual {residual:e}")]
    Solver { iterations: usize, residual: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Implicit-Euler solve `(M - dt K) f = M f_prev` with the matching Krylov method.
fn implicit_step(
    op: &DiscreteOperator,
    rhs: &[f64],
    x: &mut [f64],
    m: f64,
    k: f64,
    dual: bool,
) -> Result<SolveStats, PdeError> {
    let sys = op.system(m, k, dual);
    let cfg = SolverConfig::default();
    if op.is_symmetric() {
        linalg::cg(&sys, rhs, x, cfg)
    } else {
        linalg::bicgstab(&sys, rhs, x, cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evolution {
    pub values: Vec<f64>,
    pub steps: usize,
    pub solver_iterations: usize,
    /// Largest excursion above `sup f0` over all steps.
    pub overshoot: f64,
    /// Largest excursion below `inf f0` over all steps.
    pub undershoot: f64,
}

/// Implicit-Euler approximation of `T_t f0` on the grid.
pub fn evolve(op: &DiscreteOperator, f0: &[f64], t: f64, dt: f64) -> Result<Evolution, PdeError> {
    evolve_with(op, f0, t, dt, false)
}

/// As [`evolve`], for the generator or its dual.
pub fn evolve_with(op: &DiscreteOperator, f0: &[f64], t: f64, dt: f64, dual: bool) -> Result<Evolution, PdeError> {
    if !(dt > 0.0 && t >= 0.0) {
        return Err(PdeError::Precondition(format!("need dt > 0 and t >= 0, got dt = {dt}, t = {t}")));
    }
    if f0.len() != op.len() {
        return Err(PdeError::Precondition(format!("vector length {} vs {} nodes", f0.len(), op.len())));
    }
    let mut f: Vec<f64> = f0.iter().zip(&op.mask).map(|(v, m)| if *m { *v } else { 0.0 }).collect();
    let interior = || f0.iter().zip(&op.mask).filter(|(_, m)| **m).map(|(v, _)| *v);
    let sup0 = interior().fold(f64::NEG_INFINITY, f64::max);
    let inf0 = interior().fold(f64::INFINITY, f64::min);
    let steps = (t / dt).ceil() as usize;
    let dt = if steps > 0 { t / steps as f64 } else { dt };
    let (mut over, mut under, mut iters) = (0.0f64, 0.0f64, 0);
    let mut rhs = vec![0.0; f.len()];
    for _ in 0..steps {
        for (i, r) in rhs.iter_mut().enumerate() {
            *r = if op.mask[i] { op.mu[i] * f[i] } else { 0.0 };
        }
        let stats = implicit_step(op, &rhs, &mut f, 1.0, dt, dual)?;
        iters += stats.iterations;
        for (v, m) in f.iter().zip(&op.mask) {
            if *m {
                over = over.max(v - sup0);
                under = under.max(inf0 - v);
            }
        }
    }
    Ok(Evolution { values: f, steps, solver_iterations: iters, overshoot: over, undershoot: under })
}

/// Solves `(alpha M - K) u = M g`, the resolvent `G_alpha g` on the grid.
pub fn resolvent(op: &DiscreteOperator, g: &[f64], alpha: f64) -> Result<(Vec<f64>, SolveStats), PdeError> {
    let rhs: Vec<f64> = g.iter().zip(&op.mu).zip(&op.mask).map(|((v, m), i)| if *i { v * m } else { 0.0 }).collect();
    let mut u = vec![0.0; op.len()];
    let stats = implicit_step(op, &rhs, &mut u, alpha, 1.0, false)?;
    Ok((u, stats))
}

/// `sum_i (L_h f)_i mu_i` for `f` vanishing within two cells of the boundary.
pub fn invariance_residual(op: &DiscreteOperator, f: &[f64]) -> Result<f64, PdeError> {
    if f.len() != op.len() {
        return Err(PdeError::Precondition(format!("vector length {} vs {} nodes", f.len(), op.len())));
    }
    for (i, v) in f.iter().enumerate() {
        if *v != 0.0 && op.grid.boundary_distance(i) < 2 {
            return Err(PdeError::Precondition(format!(
                "test vector is nonzero within 2h of the boundary at {:?}",
                op.grid.coord(i)
            )));
        }
    }
    let kf = op.apply_k(f, false);
    Ok(kf.iter().sum())
}

/// Random smooth vector: a sum of up to three Gaussian bumps inside the box.
fn random_bumps(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = grid.d;
    let count = rng.random_range(1..=3);
    let fns: Vec<(TestFunction, f64)> = (0..count)
        .map(|_| {
            let sigma = rng.random_range(0.1..0.3) * grid.r;
            let radius = 2.5 * sigma;
            let reach = (0.8 * grid.r - radius).max(0.0);
            let center = (0..d).map(|_| rng.random_range(-1.0..=1.0) * reach).collect();
            (TestFunction::gaussian(center, sigma, radius), rng.random_range(-1.0..1.0))
        })
        .collect();
    grid.sample(|x| fns.iter().map(|(f, a)| a * f.value(x)).sum())
}

/// Max over random smooth pairs of `|<L_h f, g>_mu - <f, L'_h g>_mu|` with
/// `f`, `g` normalized in the `mu`-norm.
pub fn duality_residual(op: &DiscreteOperator, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut f = random_bumps(&op.grid, &mut rng);
        let mut g = random_bumps(&op.grid, &mut rng);
        for v in [&mut f, &mut g] {
            let nrm = op.mu_inner(v, v).sqrt();
            if nrm > 0.0 {
                v.iter_mut().for_each(|x| *x /= nrm);
            }
        }
        worst = worst.max(duality_gap(op, &f, &g));
    }
    worst
}

/// `|<L_h f, g>_mu - <f, L'_h g>_mu|` for one pair.
pub fn duality_gap(op: &DiscreteOperator, f: &[f64], g: &[f64]) -> f64 {
    let lf = op.apply(f, false);
    let lg = op.apply(g, true);
    (op.mu_inner(&lf, g) - op.mu_inner(f, &lg)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::CoefficientField;

    fn flat(d: usize) -> CoefficientField {
        CoefficientField::builder(d)
            .diffusion(move |_, m| {
                m.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..d {
                    m[i * d + i] = 1.0;
                }
            })
            .build()
            .unwrap()
    }

    #[test]
    fn flat_operator_is_half_laplacian() {
        let g = Grid::new(2, 1.0, 0.25).unwrap();
        let op = assemble(&flat(2), &g).unwrap();
        let c = g.node_at(&[0.0, 0.0]).unwrap();
        let h2 = 0.0625;
        assert!((op.k_sym.diag(c) / op.mu[c] * h2 + 2.0).abs() < 1e-14);
        assert!((op.k_sym.get(c, c + 1) / op.mu[c] * h2 - 0.5).abs() < 1e-14);
        assert!(op.is_symmetric());
    }

    #[test]
    fn quadratic_is_exact_away_from_boundary() {
        for d in [2, 3] {
            let g = Grid::new(d, 1.0, 0.25).unwrap();
            let op = assemble(&flat(d), &g).unwrap();
            let f = g.sample(|x| x.iter().map(|v| v * v).sum());
            let lf = op.apply(&f, false);
            for i in 0..g.len() {
                if g.boundary_distance(i) >= 2 {
                    assert!((lf[i] - d as f64).abs() < 1e-10, "d={d}: {}", lf[i]);
                }
            }
        }
    }

    #[test]
    fn zero_inputs_give_zero() {
        let g = Grid::new(2, 2.0, 0.25).unwrap();
        let op = assemble(&flat(2), &g).unwrap();
        let z = vec![0.0; g.len()];
        assert_eq!(invariance_residual(&op, &z).unwrap(), 0.0);
        let e = evolve(&op, &z, 0.5, 0.1).unwrap();
        assert!(e.values.iter().all(|v| *v == 0.0));
        let (u, _) = resolvent(&op, &z, 0.5).unwrap();
        assert!(u.iter().all(|v| *v == 0.0));
        assert_eq!(duality_gap(&op, &z, &g.sample(|x| x[0])), 0.0);
    }

    #[test]
    fn boundary_support_is_rejected() {
        let g = Grid::new(2, 1.0, 0.25).unwrap();
        let op = assemble(&flat(2), &g).unwrap();
        let f = g.sample(|_| 1.0);
        assert!(matches!(invariance_residual(&op, &f), Err(PdeError::Precondition(_))));
    }

    #[test]
    fn degenerate_face_is_reported() {
        let field = CoefficientField::builder(2)
            .diffusion(|x, m| {
                let s = if x[0] > 0.3 { 0.0 } else { 1.0 };
                m.copy_from_slice(&[s, 0.0, 0.0, s]);
            })
            .build()
            .unwrap();
        let g = Grid::new(2, 1.0, 0.25).unwrap();
        match assemble(&field, &g) {
            Err(PdeError::Assembly { location, .. }) => assert!(location[0] > 0.3),
            other => panic!("{other:?}"),
        }
    }
}
