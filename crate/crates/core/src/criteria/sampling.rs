//! Deterministic sample points on spheres and around singular points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::{CoefficientField, FieldError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    /// Candidate inner radii for the exterior bounds.
    pub n0_candidates: Vec<f64>,
    /// Largest shell radius; shells sit at powers of two up to this value.
    pub r_max: f64,
    /// Number of direction samples per shell.
    pub directions: usize,
    pub seed: u64,
    /// Distances `2^-1, ..., 2^-levels` probed around each singular point.
    pub singular_levels: usize,
    /// Singular points within this radius are probed.
    pub singular_reach: f64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            n0_candidates: vec![2.0, 4.0, 8.0, 16.0],
            r_max: 1024.0,
            directions: 512,
            seed: 0x5eed,
            singular_levels: 14,
            singular_reach: 4.0,
        }
    }
}

impl SamplingSpec {
    pub fn with_r_max(mut self, r_max: f64) -> Self {
        self.r_max = r_max;
        self
    }

    /// Exterior shell radii `2^k` with `2 <= 2^k <= r_max`.
    pub fn exterior_radii(&self) -> Vec<f64> {
        dyadic(1, self.r_max)
    }

    /// All shell radii `2^k` from `1/8` to `r_max`.
    pub fn all_radii(&self) -> Vec<f64> {
        dyadic(-3, self.r_max)
    }

    /// Unit direction vectors, identical for every shell.
    pub fn directions(&self, d: usize) -> Vec<Vec<f64>> {
        unit_directions(d, self.directions, self.seed)
    }
}

fn dyadic(k0: i32, r_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = k0;
    loop {
        let r = 2f64.powi(k);
        if r > r_max * (1.0 + 1e-12) {
            break;
        }
        out.push(r);
        k += 1;
    }
    out
}

/// Deterministic unit directions: equispaced angles (d = 2), a Fibonacci
/// lattice (d = 3) or normalized Gaussians (d > 3), each offset by the seed.
pub fn unit_directions(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match d {
        2 => {
            let offset: f64 = rng.random::<f64>() * std::f64::consts::TAU / n as f64;
            (0..n)
                .map(|k| {
                    let t = offset + std::f64::consts::TAU * k as f64 / n as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect()
        }
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let offset: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            (0..n)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
                    let s = (1.0 - z * z).sqrt();
                    let t = offset + golden * k as f64;
                    vec![s * t.cos(), s * t.sin(), z]
                })
                .collect()
        }
        _ => (0..n)
            .map(|_| {
                let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let nrm = crate::coeff::norm(&v);
                v.iter_mut().for_each(|e| *e /= nrm);
                v
            })
            .collect(),
    }
}

/// Maximum of a sampled quantity over one set of points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShellMax {
    /// Shell radius, or inverse distance for near-singular levels.
    pub scale: f64,
    pub value: f64,
    pub point: Vec<f64>,
    /// Samples dropped because they sit on the singular set.
    pub flagged: usize,
    /// Samples whose value was NaN.
    pub undefined: usize,
}

/// Evaluates `q` at every point of every shell and keeps per-shell maxima.
///
/// `q` may return `Err(NearSingular)` to drop a sample; other errors and NaN
/// values are counted as undefined, `+inf` is kept as a value.
pub fn shell_maxima<F>(radii: &[f64], dirs: &[Vec<f64>], q: F) -> Vec<ShellMax>
where
    F: Fn(&[f64]) -> Result<f64, FieldError> + Sync,
{
    radii
        .par_iter()
        .map(|&r| {
            let pts = dirs.iter().map(|u| u.iter().map(|c| c * r).collect::<Vec<f64>>());
            max_over(r, pts, &q)
        })
        .collect()
}

pub(crate) fn max_over<F, I>(scale: f64, pts: I, q: &F) -> ShellMax
where
    F: Fn(&[f64]) -> Result<f64, FieldError>,
    I: Iterator<Item = Vec<f64>>,
{
    let mut best = ShellMax { scale, value: f64::NEG_INFINITY, point: vec![], flagged: 0, undefined: 0 };
    for x in pts {
        match q(&x) {
            Ok(v) if v.is_nan() => best.undefined += 1,
            Ok(v) => {
                if v > best.value || best.point.is_empty() {
                    best.value = v;
                    best.point = x;
                }
            }
            Err(FieldError::NearSingular { .. }) => best.flagged += 1,
            Err(_) => best.undefined += 1,
        }
    }
    best
}

/// Per-level maxima of `q` at distance `2^-j` from the declared singular
/// points within reach, `j = 1..=levels`. Scale is `2^j`.
pub fn singular_maxima<F>(field: &CoefficientField, spec: &SamplingSpec, q: F) -> Vec<ShellMax>
where
    F: Fn(&[f64]) -> Result<f64, FieldError> + Sync,
{
    let d = field.dim();
    let Some(set) = field.singular_set() else {
        return vec![];
    };
    let centers = set.points_within(spec.singular_reach, d);
    if centers.is_empty() {
        return vec![];
    }
    let dirs = unit_directions(d, 16, spec.seed ^ 0x51e6);
    (1..=spec.singular_levels)
        .into_par_iter()
        .map(|j| {
            let delta = 2f64.powi(-(j as i32));
            let pts = centers.iter().flat_map(|c| {
                dirs.iter().map(move |u| c.iter().zip(u).map(|(a, b)| a + delta * b).collect())
            });
            max_over(1.0 / delta, pts, &q)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directions_are_unit_and_deterministic() {
        for d in [2, 3, 5] {
            let a = unit_directions(d, 64, 7);
            let b = unit_directions(d, 64, 7);
            assert_eq!(a, b);
            for u in &a {
                assert!((crate::coeff::norm(u) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn radii_ladders() {
        let s = SamplingSpec::default();
        let ext = s.exterior_radii();
        assert_eq!(ext.first(), Some(&2.0));
        assert_eq!(ext.last(), Some(&1024.0));
        assert_eq!(ext.len(), 10);
        assert_eq!(s.all_radii()[0], 0.125);
    }
}
