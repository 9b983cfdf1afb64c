//! Radial shell quadrature for integrals against Lebesgue measure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailQuadratureSpec {
    pub r_max: f64,
    /// Sub-shells per dyadic shell `[2^k, 2^{k+1}]`.
    pub sub_shells: usize,
    /// Radial midpoint nodes per sub-shell.
    pub radial_nodes: usize,
    /// Angular nodes (d = 2: angles; d = 3: split into polar and azimuthal).
    pub angular_nodes: usize,
    /// Quasi-random points per sub-shell for d > 3.
    pub qmc_points: usize,
}

impl Default for TailQuadratureSpec {
    fn default() -> Self {
        Self { r_max: 1024.0, sub_shells: 4, radial_nodes: 16, angular_nodes: 256, qmc_points: 4096 }
    }
}

impl TailQuadratureSpec {
    pub fn with_r_max(mut self, r_max: f64) -> Self {
        self.r_max = r_max;
        self
    }
}

/// Integrals over consecutive radial intervals `[edges[i], edges[i+1]]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShellIntegrals {
    pub edges: Vec<f64>,
    pub values: Vec<f64>,
    pub sub_shells: usize,
}

impl ShellIntegrals {
    /// Integral over the unit ball followed by dyadic shells `[2^k, 2^{k+1}]`.
    pub fn dyadic(&self) -> Vec<f64> {
        let mut out = vec![self.values[0]];
        out.extend(self.values[1..].chunks(self.sub_shells).map(|c| c.iter().sum::<f64>()));
        out
    }

    /// `(r, integral over B_r)` at every edge `r >= 1`.
    pub fn ball_integrals(&self) -> Vec<(f64, f64)> {
        let mut acc = 0.0;
        self.values
            .iter()
            .zip(&self.edges[1..])
            .map(|(v, r)| {
                acc += v;
                (*r, acc)
            })
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Integrates `g` over `B_{r_max}` split at `0, 1, 2^{1/s}, 2^{2/s}, ..., r_max`.
pub fn radial_integrals<F>(d: usize, spec: &TailQuadratureSpec, g: F) -> ShellIntegrals
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let s = spec.sub_shells.max(1);
    let mut edges = vec![0.0, 1.0];
    let mut j = 1;
    loop {
        let r = 2f64.powf(j as f64 / s as f64);
        if r > spec.r_max * (1.0 + 1e-12) {
            break;
        }
        edges.push(r);
        j += 1;
    }
    let values = edges
        .windows(2)
        .enumerate()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(i, w)| {
            let nr = if *i == 0 { spec.radial_nodes * 4 } else { spec.radial_nodes };
            shell_integral(d, w[0], w[1], nr, spec, &g)
        })
        .collect();
    ShellIntegrals { edges, values, sub_shells: s }
}

fn shell_integral<F>(d: usize, a: f64, b: f64, nr: usize, spec: &TailQuadratureSpec, g: &F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let dr = (b - a) / nr as f64;
    match d {
        2 => {
            let nt = spec.angular_nodes;
            let dt = std::f64::consts::TAU / nt as f64;
            let mut sum = 0.0;
            let mut x = [0.0; 2];
            for i in 0..nr {
                let r = a + (i as f64 + 0.5) * dr;
                let mut ring = 0.0;
                for k in 0..nt {
                    let t = (k as f64 + 0.5) * dt;
                    x[0] = r * t.cos();
                    x[1] = r * t.sin();
                    ring += g(&x);
                }
                sum += ring * r;
            }
            sum * dr * dt
        }
        3 => {
            let nu = (spec.angular_nodes / 8).max(4);
            let np = (spec.angular_nodes / 4).max(8);
            let (du, dp) = (2.0 / nu as f64, std::f64::consts::TAU / np as f64);
            let mut sum = 0.0;
            let mut x = [0.0; 3];
            for i in 0..nr {
                let r = a + (i as f64 + 0.5) * dr;
                let mut sphere = 0.0;
                for ku in 0..nu {
                    let z = -1.0 + (ku as f64 + 0.5) * du;
                    let rho = (1.0 - z * z).sqrt();
                    for kp in 0..np {
                        let p = (kp as f64 + 0.5) * dp;
                        x[0] = r * rho * p.cos();
                        x[1] = r * rho * p.sin();
                        x[2] = r * z;
                        sphere += g(&x);
                    }
                }
                sum += sphere * r * r;
            }
            sum * dr * du * dp
        }
        _ => qmc_shell(d, a, b, spec.qmc_points, g),
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    std::f64::consts::PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0 + 1.0)
}

fn qmc_shell<F>(d: usize, a: f64, b: f64, n: usize, g: &F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert!(d < PRIMES.len(), "quasi-Monte Carlo supports d < {}", PRIMES.len());
    let normal = Normal::standard();
    let (ad, bd) = (a.powi(d as i32), b.powi(d as i32));
    let mut x = vec![0.0; d];
    let mut sum = 0.0;
    for i in 1..=n as u64 {
        let r = (ad + halton(i, PRIMES[0]) * (bd - ad)).powf(1.0 / d as f64);
        for (k, xk) in x.iter_mut().enumerate() {
            *xk = normal.inverse_cdf(halton(i, PRIMES[k + 1]));
        }
        let nrm = crate::coeff::norm(&x);
        x.iter_mut().for_each(|v| *v *= r / nrm);
        sum += g(&x);
    }
    sum / n as f64 * unit_ball_volume(d) * (bd - ad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_volumes() {
        let spec = TailQuadratureSpec { r_max: 8.0, ..Default::default() };
        for d in [2, 3, 4] {
            let q = radial_integrals(d, &spec, |_| 1.0);
            for (r, v) in q.ball_integrals() {
                let exact = unit_ball_volume(d) * r.powi(d as i32);
                let tol = match d { 2 => 1e-9, 3 => 1e-3, _ => 1e-2 };
                assert!((v - exact).abs() <= tol * exact, "d={d} r={r}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn gaussian_mass() {
        let spec = TailQuadratureSpec { r_max: 16.0, ..Default::default() };
        let q = radial_integrals(2, &spec, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        assert!((q.total() - std::f64::consts::PI).abs() < 1e-4);
        let q3 = radial_integrals(3, &spec, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp());
        assert!((q3.total() - std::f64::consts::PI.powf(1.5)).abs() < 1e-3);
    }
}
