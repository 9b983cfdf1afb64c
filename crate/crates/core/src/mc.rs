//! Euler-Maruyama simulation of the diffusion generated by a coefficient
//! field, with exit-time, explosion and occupation statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coeff::{cholesky_in_place, norm, CoefficientField, DriftWorkspace};

/// Default fraction of exiting paths above which the exit curve counts as a plateau.
pub const PLATEAU_THRESHOLD: f64 = 0.01;
/// Largest tolerated fraction of aborted paths.
pub const MAX_ABORTED: f64 = 0.05;
/// Smallest number of in-window samples accepted by [`occupation`].
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("step failed at {location:?}: {detail}")]
    Step { location: Vec<f64>, detail: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("only {samples} samples fell into the window, need at least {needed}")]
    InsufficientData { samples: usize, needed: usize },
}

/// Law of the starting point.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    Point(Vec<f64>),
    /// Uniform on the box `[lo, hi]`.
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl Start {
    fn dim(&self) -> usize {
        match self {
            Start::Point(x) => x.len(),
            Start::Uniform { lo, .. } => lo.len(),
        }
    }

    /// Largest norm a starting point can have.
    fn reach(&self) -> f64 {
        match self {
            Start::Point(x) => norm(x),
            Start::Uniform { lo, hi } => {
                lo.iter().zip(hi).map(|(a, b)| a.abs().max(b.abs()).powi(2)).sum::<f64>().sqrt()
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Start::Point(x) => x.clone(),
            Start::Uniform { lo, hi } => lo.iter().zip(hi).map(|(a, b)| rng.random_range(*a..=*b)).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdeSpec {
    pub field: CoefficientField,
    /// Replace the drift `b` by `b / (1 + sqrt(dt) |b|)`.
    pub taming: bool,
    pub dt: f64,
    pub start: Start,
    pub horizon: f64,
    /// Path `i` draws from stream `i` of the ChaCha8 generator seeded with this value.
    pub seed: u64,
    /// Record the state every this many steps; 0 records nothing.
    pub record_every: usize,
    /// Multiplies the diffusion factor; 1 for the actual process.
    pub noise_scale: f64,
}

impl SdeSpec {
    pub fn new(field: CoefficientField, x0: Vec<f64>, dt: f64, horizon: f64, seed: u64) -> Self {
        Self {
            field,
            taming: false,
            dt,
            start: Start::Point(x0),
            horizon,
            seed,
            record_every: 0,
            noise_scale: 1.0,
        }
    }

    pub fn with_taming(mut self, on: bool) -> Self {
        self.taming = on;
        self
    }

    pub fn with_start(mut self, start: Start) -> Self {
        self.start = start;
        self
    }

    pub fn with_recording(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn with_noise_scale(mut self, s: f64) -> Self {
        self.noise_scale = s;
        self
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn validate(&self) -> Result<(), McError> {
        let d = self.field.dim();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(McError::Precondition(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(McError::Precondition(format!("horizon must be finite and >= 0, got {}", self.horizon)));
        }
        if self.start.dim() != d {
            return Err(McError::Precondition(format!("start has dimension {}, field {d}", self.start.dim())));
        }
        if let Start::Uniform { lo, hi } = &self.start {
            if lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                return Err(McError::Precondition("uniform start box has lo > hi".into()));
            }
        }
        Ok(())
    }
}

/// Reusable buffers for [`Stepper::step`].
struct Stepper<'a> {
    spec: &'a SdeSpec,
    ws: DriftWorkspace,
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a SdeSpec) -> Self {
        let d = spec.field.dim();
        Self { spec, ws: DriftWorkspace::new(d), drift: vec![0.0; d], sigma: vec![0.0; d * d] }
    }

    /// Advances `x` in place by one step driven by the standard normal vector `g`.
    fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<(), McError> {
        let spec = self.spec;
        let d = x.len();
        let dt = spec.dt;
        spec.field
            .forward_drift_into(x, &mut self.ws, &mut self.drift)
            .map_err(|e| McError::Step { location: x.to_vec(), detail: e.to_string() })?;
        let mut scale = dt;
        if spec.taming {
            scale /= 1.0 + dt.sqrt() * norm(&self.drift);
        }
        spec.field.diffusion_into(x, &mut self.sigma);
        if !cholesky_in_place(&mut self.sigma, d) {
            return Err(McError::Step {
                location: x.to_vec(),
                detail: "diffusion matrix is not positive definite".into(),
            });
        }
        let noise = spec.noise_scale * dt.sqrt();
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..=i {
                s += self.sigma[i * d + j] * g[j];
            }
            x[i] += self.drift[i] * scale + noise * s;
        }
        Ok(())
    }
}

/// One Euler-Maruyama step `x + b(x) dt + sigma(x) sqrt(dt) g`, with
/// `sigma` the lower Cholesky factor of `A`.
pub fn em_step(spec: &SdeSpec, x: &[f64], gaussian: &[f64]) -> Result<Vec<f64>, McError> {
    let d = spec.field.dim();
    if x.len() != d || gaussian.len() != d {
        return Err(McError::Precondition(format!("expected {d}-vectors, got {} and {}", x.len(), gaussian.len())));
    }
    let mut y = x.to_vec();
    Stepper::new(spec).step(&mut y, gaussian)?;
    Ok(y)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord {
    /// First time the path was seen outside each ladder radius.
    pub exit_times: Vec<Option<f64>>,
    pub final_position: Vec<f64>,
    /// The step that failed, if any.
    pub aborted: Option<String>,
    /// Recorded states, flattened; record `j` is taken after step `(j + 1) * record_every`.
    #[serde(skip)]
    pub states: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryEnsemble {
    pub dim: usize,
    pub dt: f64,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
    pub record_every: usize,
    pub ladder: Vec<f64>,
    pub paths: Vec<PathRecord>,
}

fn run_path(spec: &SdeSpec, ladder: &[f64], index: u64) -> PathRecord {
    let d = spec.field.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let mut x = spec.start.draw(&mut rng);
    let mut g = vec![0.0; d];
    let mut stepper = Stepper::new(spec);
    let mut exit_times = vec![None; ladder.len()];
    let mut next_radius = 0;
    let mut states = Vec::new();
    let mut aborted = None;
    let steps = spec.steps();
    for k in 1..=steps {
        g.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        if let Err(e) = stepper.step(&mut x, &g) {
            aborted = Some(e.to_string());
            break;
        }
        let r = norm(&x);
        let t = k as f64 * spec.dt;
        if !r.is_finite() {
            if next_radius == ladder.len() {
                aborted = Some(format!("state left floating-point range at t = {t}"));
                break;
            }
            exit_times[next_radius..].iter_mut().for_each(|e| *e = Some(t));
            next_radius = ladder.len();
        }
        while next_radius < ladder.len() && r >= ladder[next_radius] {
            exit_times[next_radius] = Some(t);
            next_radius += 1;
        }
        if !ladder.is_empty() && next_radius == ladder.len() {
            break;
        }
        if spec.record_every > 0 && k % spec.record_every == 0 {
            states.extend_from_slice(&x);
        }
    }
    PathRecord { exit_times, final_position: x, aborted, states }
}

/// Simulates `n_paths` independent paths and records the first exit time
/// from each ball of the radius ladder. A path stops after leaving the
/// largest radius.
pub fn simulate_ensemble(spec: &SdeSpec, n_paths: usize, ladder: &[f64]) -> Result<TrajectoryEnsemble, McError> {
    spec.validate()?;
    if ladder.windows(2).any(|w| !(w[0] < w[1])) || ladder.iter().any(|r| !(*r > 0.0)) {
        return Err(McError::Precondition(format!("radius ladder must be positive and increasing: {ladder:?}")));
    }
    if let Some(r0) = ladder.first() {
        if spec.start.reach() >= *r0 {
            return Err(McError::Precondition(format!("start reaches {} >= smallest radius {r0}", spec.start.reach())));
        }
    }
    let paths = (0..n_paths as u64).into_par_iter().map(|i| run_path(spec, ladder, i)).collect();
    Ok(TrajectoryEnsemble {
        dim: spec.field.dim(),
        dt: spec.dt,
        horizon: spec.horizon,
        steps: spec.steps(),
        seed: spec.seed,
        record_every: spec.record_every,
        ladder: ladder.to_vec(),
        paths,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExitStats {
    pub radius: f64,
    pub exited: usize,
    /// Paths still inside at the horizon.
    pub censored: usize,
    pub aborted: usize,
    /// Mean over exited paths.
    pub mean: f64,
    pub std_err: f64,
}

impl TrajectoryEnsemble {
    pub fn aborted(&self) -> usize {
        self.paths.iter().filter(|p| p.aborted.is_some()).count()
    }

    pub fn exit_stats(&self, rung: usize) -> ExitStats {
        let times: Vec<f64> = self.paths.iter().filter_map(|p| p.exit_times[rung]).collect();
        let aborted = self.paths.iter().filter(|p| p.aborted.is_some() && p.exit_times[rung].is_none()).count();
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        ExitStats {
            radius: self.ladder[rung],
            exited: times.len(),
            censored: self.paths.len() - times.len() - aborted,
            aborted,
            mean,
            std_err: (var / n).sqrt(),
        }
    }

    /// Summary rows `radius,exited,censored,mean,std_err`.
    pub fn exit_csv(&self) -> String {
        let mut s = String::from("radius,exited,censored,aborted,mean_exit_time,std_err\n");
        for k in 0..self.ladder.len() {
            let e = self.exit_stats(k);
            s.push_str(&format!("{},{},{},{},{},{}\n", e.radius, e.exited, e.censored, e.aborted, e.mean, e.std_err));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplosionVerdict {
    ConservativeSignature,
    ExplosionSignature,
    Inconclusive,
}

impl ExplosionVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ConservativeSignature => "conservative-signature",
            Self::ExplosionSignature => "explosion-signature",
            Self::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExplosionReport {
    pub horizon: f64,
    pub radii: Vec<f64>,
    /// Fraction of paths that left `B_R` by the horizon.
    pub fractions: Vec<f64>,
    pub aborted_fraction: f64,
    /// `fraction ~ a exp(-b R^2)` over the positive fractions, when at least two exist.
    pub tail_fit: Option<(f64, f64)>,
    pub threshold: f64,
    pub verdict: ExplosionVerdict,
    pub notes: Vec<String>,
}

impl ExplosionReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("R,exit_fraction\n");
        for (r, f) in self.radii.iter().zip(&self.fractions) {
            s.push_str(&format!("{r},{f}\n"));
        }
        s
    }
}

/// Exit fractions along the ladder at horizon `t`.
///
/// Decay below [`PLATEAU_THRESHOLD`] signals conservativeness; fractions that
/// stay above it with less than a halving across the ladder signal explosion.
pub fn explosion_probe(ens: &TrajectoryEnsemble, t: f64) -> Result<ExplosionReport, McError> {
    if ens.ladder.len() < 3 {
        return Err(McError::Precondition(format!("ladder needs at least 3 radii, got {}", ens.ladder.len())));
    }
    if t > ens.horizon + 1e-12 {
        return Err(McError::Precondition(format!("horizon {t} exceeds the simulated {}", ens.horizon)));
    }
    let n = ens.paths.len().max(1) as f64;
    let fractions: Vec<f64> = (0..ens.ladder.len())
        .map(|k| ens.paths.iter().filter(|p| p.exit_times[k].is_some_and(|e| e <= t + 1e-12)).count() as f64 / n)
        .collect();
    let aborted_fraction = ens.aborted() as f64 / n;
    let pts: Vec<(f64, f64)> =
        ens.ladder.iter().zip(&fractions).filter(|(_, f)| **f > 0.0).map(|(r, f)| (r * r, f.ln())).collect();
    let tail_fit = (pts.len() >= 2).then(|| {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let b = -crate::criteria::growth::ls_slope(&xs, &ys);
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        ((ym + b * xm).exp(), b)
    });
    let mut notes = Vec::new();
    let last = *fractions.last().unwrap();
    let first = fractions[0];
    let non_increasing = fractions.windows(2).all(|w| w[1] <= w[0]);
    let verdict = if aborted_fraction > MAX_ABORTED {
        notes.push(format!("{:.1}% of paths aborted", 100.0 * aborted_fraction));
        ExplosionVerdict::Inconclusive
    } else if last < PLATEAU_THRESHOLD && non_increasing {
        ExplosionVerdict::ConservativeSignature
    } else if last >= PLATEAU_THRESHOLD && last >= 0.5 * first {
        ExplosionVerdict::ExplosionSignature
    } else {
        notes.push("exit fractions neither vanish nor plateau along the ladder".into());
        ExplosionVerdict::Inconclusive
    };
    Ok(ExplosionReport {
        horizon: t,
        radii: ens.ladder.clone(),
        fractions,
        aborted_fraction,
        tail_fit,
        threshold: PLATEAU_THRESHOLD,
        verdict,
        notes,
    })
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Window {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Window {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, McError> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(McError::Precondition(format!("invalid window {lo:?} .. {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(d: usize, half_width: f64) -> Self {
        Self { lo: vec![-half_width; d], hi: vec![half_width; d] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupationHistogram {
    pub window: Window,
    pub bins: usize,
    /// Bin edges per axis, `bins + 1` each.
    pub edges: Vec<Vec<f64>>,
    /// Row-major counts with axis 0 varying fastest.
    pub counts: Vec<u64>,
    /// `counts / (samples * bin volume)`.
    pub density: Vec<f64>,
    pub samples: usize,
    pub burn_in: usize,
}

impl OccupationHistogram {
    pub fn bin_volume(&self) -> f64 {
        self.edges.iter().map(|e| e[1] - e[0]).product()
    }

    /// Center of the bin with flat index `i`.
    pub fn center(&self, mut i: usize) -> Vec<f64> {
        self.edges
            .iter()
            .map(|e| {
                let k = i % self.bins;
                i /= self.bins;
                0.5 * (e[k] + e[k + 1])
            })
            .collect()
    }

    /// Rows of bin center coordinates followed by the density.
    pub fn csv(&self) -> String {
        let d = self.window.dim();
        let mut s: String = (0..d).map(|k| format!("x{},", k + 1)).collect();
        s.push_str("density\n");
        for (i, v) in self.density.iter().enumerate() {
            for c in self.center(i) {
                s.push_str(&format!("{c},"));
            }
            s.push_str(&format!("{v}\n"));
        }
        s
    }
}

/// Histogram of recorded states taken after `burn_in` steps that fall into `window`.
pub fn occupation(
    ens: &TrajectoryEnsemble,
    window: &Window,
    bins: usize,
    burn_in: usize,
) -> Result<OccupationHistogram, McError> {
    let d = ens.dim;
    if window.dim() != d || bins == 0 {
        return Err(McError::Precondition(format!("window of dimension {} with {bins} bins", window.dim())));
    }
    if ens.record_every == 0 {
        return Err(McError::Precondition("ensemble recorded no states".into()));
    }
    if burn_in >= ens.steps {
        return Err(McError::Precondition(format!("burn-in {burn_in} is not below the {} steps per path", ens.steps)));
    }
    let edges: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let w = (window.hi[k] - window.lo[k]) / bins as f64;
            (0..=bins).map(|j| window.lo[k] + j as f64 * w).collect()
        })
        .collect();
    let mut counts = vec![0u64; bins.pow(d as u32)];
    let first = burn_in.div_ceil(ens.record_every).max(1) - 1;
    for p in &ens.paths {
        for x in p.states.chunks_exact(d).skip(first) {
            let mut idx = 0;
            let mut stride = 1;
            let mut inside = true;
            for k in 0..d {
                let t = (x[k] - window.lo[k]) / (window.hi[k] - window.lo[k]);
                if !(0.0..1.0).contains(&t) {
                    inside = false;
                    break;
                }
                idx += ((t * bins as f64) as usize).min(bins - 1) * stride;
                stride *= bins;
            }
            if inside {
                counts[idx] += 1;
            }
        }
    }
    let samples: u64 = counts.iter().sum();
    if (samples as usize) < MIN_SAMPLES {
        return Err(McError::InsufficientData { samples: samples as usize, needed: MIN_SAMPLES });
    }
    let vol: f64 = edges.iter().map(|e| e[1] - e[0]).product();
    let density = counts.iter().map(|c| *c as f64 / (samples as f64 * vol)).collect();
    Ok(OccupationHistogram { window: window.clone(), bins, edges, counts, density, samples: samples as usize, burn_in })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
const GL_NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GL_WEIGHTS: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];

/// Bin masses of `reference` normalized to one over the histogram window.
pub fn reference_masses(
    hist: &OccupationHistogram,
    reference: impl Fn(&[f64]) -> f64,
) -> Result<Vec<f64>, McError> {
    let d = hist.window.dim();
    let half: Vec<f64> = hist.edges.iter().map(|e| 0.5 * (e[1] - e[0])).collect();
    let q = GL_NODES.len();
    let mut y = vec![0.0; d];
    let mut masses = Vec::with_capacity(hist.counts.len());
    for i in 0..hist.counts.len() {
        let c = hist.center(i);
        let mut m = 0.0;
        for j in 0..q.pow(d as u32) {
            let mut w = 1.0;
            let mut jj = j;
            for k in 0..d {
                let l = jj % q;
                jj /= q;
                y[k] = c[k] + half[k] * GL_NODES[l];
                w *= GL_WEIGHTS[l];
            }
            let v = reference(&y);
            if !(v > 0.0 && v.is_finite()) {
                return Err(McError::Precondition(format!("reference is {v} at {y:?}, must be positive")));
            }
            m += w * v;
        }
        masses.push(m);
    }
    let total: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|m| *m /= total);
    Ok(masses)
}

/// L1 distance on the window between the empirical density and the
/// window-normalized reference density, both as bin averages.
pub fn density_compare(hist: &OccupationHistogram, reference: impl Fn(&[f64]) -> f64) -> Result<f64, McError> {
    let masses = reference_masses(hist, reference)?;
    let n = hist.samples as f64;
    Ok(hist.counts.iter().zip(&masses).map(|(c, m)| (*c as f64 / n - m).abs()).sum())
}
