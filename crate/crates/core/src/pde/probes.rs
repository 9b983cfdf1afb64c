use serde::Serialize;

use crate::coeff::CoefficientField;
use crate::criteria::growth::ls_slope;
use crate::testfn::TestFunction;

use super::{assemble, evolve, resolvent, Grid, PdeError};

/// Mass at the probe point must reach this value for a conservative verdict.
pub const MASS_THRESHOLD: f64 = 0.999;
const MONOTONE_TOL: f64 = 1e-8;
/// Successive deficits shrinking by less than this factor count as a plateau.
const PLATEAU_RATIO: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassProbeSpec {
    pub radii: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    pub h: f64,
    pub x0: Vec<f64>,
}

impl MassProbeSpec {
    pub fn new(d: usize) -> Self {
        Self { radii: vec![2.0, 4.0, 6.0, 8.0], t: 1.0, dt: 0.01, h: 0.25, x0: vec![0.0; d] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassVerdict {
    Conservative,
    NonConservative,
    Inconclusive,
}

impl MassVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            MassVerdict::Conservative => "conservative",
            MassVerdict::NonConservative => "non-conservative",
            MassVerdict::Inconclusive => "inconclusive",
        }
    }
}

/// `(T_t^{(R)} 1)(x0)` over nested boxes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassCurve {
    pub radii: Vec<f64>,
    pub masses: Vec<f64>,
    pub t: f64,
    pub h: f64,
    pub x0: Vec<f64>,
    /// Fit of `1 - mass ~ a exp(-b R)` over positive deficits.
    pub fit_a: Option<f64>,
    pub fit_b: Option<f64>,
    pub verdict: MassVerdict,
    /// Largest excursion of the evolved values outside `[0, 1]`.
    pub max_excursion: f64,
    pub notes: Vec<String>,
}

impl MassCurve {
    pub fn csv(&self) -> String {
        let mut s = String::from("R,mass\n");
        for (r, m) in self.radii.iter().zip(&self.masses) {
            s.push_str(&format!("{r},{m}\n"));
        }
        s
    }
}

fn decide_mass(masses: &[f64]) -> (MassVerdict, String) {
    if masses.windows(2).any(|w| w[0] > w[1] + MONOTONE_TOL) {
        return (MassVerdict::Inconclusive, "mass decreases as the domain grows".into());
    }
    let n = masses.len();
    if n < 2 {
        return (MassVerdict::Inconclusive, "need at least two radii".into());
    }
    let last = masses[n - 1];
    let deficit = |m: f64| (1.0 - m).max(0.0);
    let (dl, dp) = (deficit(last), deficit(masses[n - 2]));
    if last >= MASS_THRESHOLD && (dl <= PLATEAU_RATIO * dp || dl < 1e-6) {
        (MassVerdict::Conservative, format!("mass {last:.6} and deficit still shrinking"))
    } else if last < MASS_THRESHOLD && dp > 0.0 && dl / dp >= PLATEAU_RATIO {
        (MassVerdict::NonConservative, format!("mass plateaus at {last:.6} below {MASS_THRESHOLD}"))
    } else {
        (MassVerdict::Inconclusive, format!("mass {last:.6} without a clear trend"))
    }
}

/// Evolves `f0 = 1` on each box and reads the value at `x0`.
pub fn conservativeness_probe(field: &CoefficientField, spec: &MassProbeSpec) -> Result<MassCurve, PdeError> {
    let d = field.dim();
    let mut radii = spec.radii.clone();
    radii.sort_by(|a, b| a.total_cmp(b));
    let mut masses = vec![];
    let mut excursion: f64 = 0.0;
    let mut notes = vec![format!("probe at one point {:?} and one horizon t = {}", spec.x0, spec.t)];
    for &r in &radii {
        let grid = Grid::new(d, r, spec.h)?;
        let x0 = grid
            .node_at(&spec.x0)
            .filter(|i| grid.is_interior(*i))
            .ok_or_else(|| PdeError::Precondition(format!("x0 = {:?} is not an interior node for R = {r}", spec.x0)))?;
        let op = assemble(field, &grid)?;
        let f0 = grid.sample(|_| 1.0);
        let ev = evolve(&op, &f0, spec.t, spec.dt)?;
        let lo = ev.values.iter().zip(&op.mask).filter(|(_, m)| **m).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
        excursion = excursion.max(ev.overshoot).max(-lo);
        masses.push(ev.values[x0]);
    }
    let (mut verdict, why) = decide_mass(&masses);
    notes.push(why);
    if excursion > 1e-8 {
        notes.push(format!("evolved values leave [0, 1] by {excursion:e}"));
        verdict = MassVerdict::Inconclusive;
    }
    let pts: Vec<(f64, f64)> =
        radii.iter().zip(&masses).filter(|(_, m)| 1.0 - **m > 1e-14).map(|(r, m)| (*r, (1.0 - m).ln())).collect();
    let (fit_a, fit_b) = if pts.len() >= 2 {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let slope = ls_slope(&xs, &ys);
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        (Some((my - slope * mx).exp()), Some(-slope))
    } else {
        (None, None)
    };
    Ok(MassCurve { radii, masses, t: spec.t, h: spec.h, x0: spec.x0.clone(), fit_a, fit_b, verdict, max_excursion: excursion, notes })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GreenProbeSpec {
    /// Decreasing resolvent parameters.
    pub alphas: Vec<f64>,
    pub h: f64,
    /// Largest number of cells per axis; caps the domain radius.
    pub max_cells: usize,
    pub x0: Vec<f64>,
    /// Nonnegative source `g`.
    #[serde(skip)]
    pub source: TestFunction,
}

impl GreenProbeSpec {
    pub fn new(d: usize) -> Self {
        Self {
            alphas: (0..=if d == 2 { 6 } else { 7 }).map(|j| 4f64.powi(-j)).collect(),
            h: 1.0,
            max_cells: if d == 2 { 512 } else { 128 },
            x0: vec![0.0; d],
            source: TestFunction::bump(vec![0.0; d], 2.0, 1.0),
        }
    }

    /// Domain radius for `alpha`: `max(8, 4 / sqrt(alpha))` on the grid, capped.
    pub fn radius_for(&self, alpha: f64) -> (f64, bool) {
        let want = (4.0 / alpha.sqrt()).max(8.0);
        let cells = (2.0 * want / self.h).ceil() as usize;
        let cells = cells + cells % 2;
        if cells > self.max_cells {
            let capped = self.max_cells - self.max_cells % 2;
            (capped as f64 * self.h / 2.0, true)
        } else {
            (cells as f64 * self.h / 2.0, false)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreenVerdict {
    RecurrentSignature,
    TransientSignature,
    Inconclusive,
}

impl GreenVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            GreenVerdict::RecurrentSignature => "recurrent-signature",
            GreenVerdict::TransientSignature => "transient-signature",
            GreenVerdict::Inconclusive => "inconclusive",
        }
    }
}

/// Growth threshold of `G_{alpha/4} / G_alpha` for the recurrent signature.
pub const RECURRENT_RATIO: f64 = 1.15;
/// Tail ratio bound for the transient signature.
pub const TRANSIENT_RATIO: f64 = 1.02;
/// On a capped domain, a transient signature stands only if the gain from
/// doubling the box shrinks at least by this factor: `G(R) - G(R/2)` against
/// `G(R/2) - G(R/4)` is about 1/2 for a finite Green function and about 1 for
/// logarithmic growth.
pub const MAX_INCREMENT_RATIO: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GreenCurve {
    pub alphas: Vec<f64>,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// `values[j + 1] / values[j]`.
    pub ratios: Vec<f64>,
    pub capped: bool,
    /// `(G(R) - G(R/2)) / (G(R/2) - G(R/4))` at the last alpha, computed when the domain is capped.
    pub increment_ratio: Option<f64>,
    pub verdict: GreenVerdict,
    pub notes: Vec<String>,
}

impl GreenCurve {
    pub fn csv(&self) -> String {
        let mut s = String::from("alpha,R,value\n");
        for ((a, r), v) in self.alphas.iter().zip(&self.radii).zip(&self.values) {
            s.push_str(&format!("{a},{r},{v}\n"));
        }
        s
    }
}

fn decide_green(values: &[f64], ratios: &[f64]) -> (GreenVerdict, String) {
    if values.iter().any(|v| !(*v > 0.0)) {
        return (GreenVerdict::Inconclusive, "non-positive resolvent value".into());
    }
    if ratios.iter().any(|r| *r < 1.0 - 1e-9) {
        return (GreenVerdict::Inconclusive, "resolvent decreases as alpha decreases".into());
    }
    if ratios.len() < 2 {
        return (GreenVerdict::Inconclusive, "need at least three alphas".into());
    }
    let tail = &ratios[ratios.len() / 2..];
    if tail.iter().all(|r| *r >= RECURRENT_RATIO) {
        return (GreenVerdict::RecurrentSignature, format!("tail ratios {tail:.4?} stay above {RECURRENT_RATIO}"));
    }
    let last = *ratios.last().unwrap();
    let decreasing = tail.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    if last <= TRANSIENT_RATIO && decreasing {
        return (GreenVerdict::TransientSignature, format!("tail ratios {tail:.4?} settle within {TRANSIENT_RATIO}"));
    }
    (GreenVerdict::Inconclusive, format!("tail ratios {tail:.4?} fit neither signature"))
}

fn green_setup(
    field: &CoefficientField,
    spec: &GreenProbeSpec,
    r: f64,
) -> Result<(super::DiscreteOperator, Vec<f64>, usize), PdeError> {
    let grid = Grid::new(field.dim(), r, spec.h)?;
    let x0 = grid
        .node_at(&spec.x0)
        .filter(|i| grid.is_interior(*i))
        .ok_or_else(|| PdeError::Precondition(format!("x0 = {:?} is not an interior node", spec.x0)))?;
    let g = grid.sample(|x| spec.source.value(x));
    if g.iter().any(|v| *v < 0.0) || g.iter().all(|v| *v == 0.0) {
        return Err(PdeError::Precondition("source must be nonnegative and nonzero on the grid".into()));
    }
    Ok((assemble(field, &grid)?, g, x0))
}

/// Resolvent values `G_alpha g(x0)` along a decreasing schedule with the
/// domain growing like `alpha^{-1/2}`.
pub fn green_probe(field: &CoefficientField, spec: &GreenProbeSpec) -> Result<GreenCurve, PdeError> {
    if spec.alphas.windows(2).any(|w| w[1] >= w[0]) || spec.alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(PdeError::Precondition("alphas must be positive and strictly decreasing".into()));
    }
    let mut values = vec![];
    let mut radii = vec![];
    let mut capped = false;
    let mut notes = vec![];
    let mut cached: Option<(f64, super::DiscreteOperator, Vec<f64>, usize)> = None;
    for &alpha in &spec.alphas {
        let (r, cap) = spec.radius_for(alpha);
        capped |= cap;
        if cached.as_ref().map(|c| c.0) != Some(r) {
            let (op, g, x0) = green_setup(field, spec, r)?;
            cached = Some((r, op, g, x0));
        }
        let (_, op, g, x0) = cached.as_ref().unwrap();
        let (u, _) = resolvent(op, g, alpha)?;
        values.push(u[*x0]);
        radii.push(r);
    }
    let ratios: Vec<f64> = values.windows(2).map(|w| w[1] / w[0]).collect();
    let (mut verdict, why) = decide_green(&values, &ratios);
    notes.push(why);
    let mut increment_ratio = None;
    if capped {
        notes.push(format!("domain capped at {} cells per axis", spec.max_cells));
        let (r, alpha) = (*radii.last().unwrap(), *spec.alphas.last().unwrap());
        let shrink = |k: f64| ((r / spec.h / k).ceil() * spec.h).max(4.0 * spec.h);
        let at = |radius: f64| -> Result<f64, PdeError> {
            let (op, g, x0) = green_setup(field, spec, radius)?;
            Ok(resolvent(&op, &g, alpha)?.0[x0])
        };
        let (half, quarter) = (at(shrink(2.0))?, at(shrink(4.0))?);
        let q = (values.last().unwrap() - half) / (half - quarter);
        increment_ratio = Some(q);
        if verdict == GreenVerdict::TransientSignature && !(q <= MAX_INCREMENT_RATIO) {
            notes.push(format!("doubling the capped box keeps adding {q:.3} of the previous gain"));
            verdict = GreenVerdict::Inconclusive;
        }
    }
    Ok(GreenCurve { alphas: spec.alphas.clone(), radii, values, ratios, capped, increment_ratio, verdict, notes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_decisions() {
        assert_eq!(decide_mass(&[0.8, 0.99, 0.99999, 1.0]).0, MassVerdict::Conservative);
        assert_eq!(decide_mass(&[0.5, 0.62, 0.64, 0.645]).0, MassVerdict::NonConservative);
        assert_eq!(decide_mass(&[0.9, 0.8]).0, MassVerdict::Inconclusive);
    }

    #[test]
    fn green_decisions() {
        let rec = [1.0, 1.3, 1.6, 1.9, 2.2];
        let r: Vec<f64> = rec.windows(2).map(|w| w[1] / w[0]).collect();
        assert_eq!(decide_green(&rec, &r).0, GreenVerdict::RecurrentSignature);
        let tr = [1.0, 1.2, 1.25, 1.26, 1.261];
        let r: Vec<f64> = tr.windows(2).map(|w| w[1] / w[0]).collect();
        assert_eq!(decide_green(&tr, &r).0, GreenVerdict::TransientSignature);
        let bad = [1.0, 0.5, 0.6];
        let r: Vec<f64> = bad.windows(2).map(|w| w[1] / w[0]).collect();
        assert_eq!(decide_green(&bad, &r).0, GreenVerdict::Inconclusive);
    }

    #[test]
    fn radius_schedule() {
        let s = GreenProbeSpec::new(2);
        assert_eq!(s.radius_for(1.0), (8.0, false));
        assert_eq!(s.radius_for(1.0 / 64.0), (32.0, false));
        let s3 = GreenProbeSpec::new(3);
        assert_eq!(s3.radius_for(1.0 / 4096.0), (64.0, true));
    }
}
