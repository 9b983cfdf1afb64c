//! Smooth compactly supported test functions.

use crate::coeff::QuadratureSpec;

#[derive(Clone, Debug, PartialEq)]
enum Profile {
    /// `exp(1 - 1/(1 - t^2))` with `t = |x - c| / radius`.
    Bump,
    /// `exp(-|x - c|^2 / (2 sigma^2))` times a smooth cutoff reaching zero at `radius`.
    Gaussian { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    center: Vec<f64>,
    radius: f64,
    amplitude: f64,
    profile: Profile,
}

/// Smooth transition: 1 on `[0, 1/2]`, 0 on `[1, inf)`, returns value and derivative.
fn cutoff(t: f64) -> (f64, f64) {
    if t <= 0.5 {
        return (1.0, 0.0);
    }
    if t >= 1.0 {
        return (0.0, 0.0);
    }
    let s = 2.0 * t - 1.0; // in (0, 1)
    let g = |u: f64| if u <= 0.0 { 0.0 } else { (-1.0 / u).exp() };
    let dg = |u: f64| if u <= 0.0 { 0.0 } else { (-1.0 / u).exp() / (u * u) };
    let (a, b) = (g(1.0 - s), g(s));
    let (da, db) = (-dg(1.0 - s), dg(s));
    let v = a / (a + b);
    let dv = (da * (a + b) - a * (da + db)) / ((a + b) * (a + b));
    (v, 2.0 * dv)
}

impl TestFunction {
    pub fn bump(center: Vec<f64>, radius: f64, amplitude: f64) -> Self {
        Self { center, radius, amplitude, profile: Profile::Bump }
    }

    /// Gaussian with width `sigma`, smoothly cut off at `radius`.
    pub fn gaussian(center: Vec<f64>, sigma: f64, radius: f64) -> Self {
        Self { center, radius, amplitude: 1.0, profile: Profile::Gaussian { sigma } }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Axis-aligned box containing the support.
    pub fn support_box(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.center.iter().map(|c| c - self.radius).collect(),
            self.center.iter().map(|c| c + self.radius).collect(),
        )
    }

    /// Value and radial derivative as functions of `r = |x - c|`.
    fn radial(&self, r: f64) -> (f64, f64) {
        if r >= self.radius {
            return (0.0, 0.0);
        }
        match self.profile {
            Profile::Bump => {
                let t = r / self.radius;
                let q = 1.0 - t * t;
                let v = self.amplitude * (1.0 - 1.0 / q).exp();
                // d/dr exp(1 - 1/q) = exp(..) * (-2t / q^2) / radius
                (v, v * (-2.0 * t / (q * q)) / self.radius)
            }
            Profile::Gaussian { sigma } => {
                let g = (-r * r / (2.0 * sigma * sigma)).exp();
                let dg = -r / (sigma * sigma) * g;
                let (c, dc) = cutoff(r / self.radius);
                let v = self.amplitude * g * c;
                (v, self.amplitude * (dg * c + g * dc / self.radius))
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = dist(x, &self.center);
        self.radial(r).0
    }

    /// Writes the gradient; returns `false` (and zeros) outside the support.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        let r = dist(x, &self.center);
        if r >= self.radius {
            out.iter_mut().for_each(|v| *v = 0.0);
            return false;
        }
        let (_, dr) = self.radial(r);
        if r == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
        } else {
            for (k, o) in out.iter_mut().enumerate() {
                *o = dr * (x[k] - self.center[k]) / r;
            }
        }
        true
    }

    /// Midpoint-rule integral over the quadrature box.
    pub fn integral_midpoint(&self, quad: &QuadratureSpec) -> f64 {
        let d = self.dim();
        let n = quad.nodes_per_axis;
        let widths: Vec<f64> = (0..d).map(|k| (quad.hi[k] - quad.lo[k]) / n as f64).collect();
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        let mut sum = 0.0;
        for _ in 0..n.pow(d as u32) {
            for k in 0..d {
                x[k] = quad.lo[k] + (idx[k] as f64 + 0.5) * widths[k];
            }
            sum += self.value(&x);
            for k in 0..d {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
            }
        }
        sum * widths.iter().product::<f64>()
    }
}

fn dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}
