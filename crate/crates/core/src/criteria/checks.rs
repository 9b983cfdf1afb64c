use serde::Serialize;

use super::classify::{Finiteness, MuFiniteness};
use super::growth::{assess_growth, assess_tail_sum, Growth, TailSum, MARGIN};
use super::quadrature::{radial_integrals, ShellIntegrals, TailQuadratureSpec};
use super::sampling::{shell_maxima, singular_maxima, SamplingSpec, ShellMax};
use super::{
    CoeffConstants, CriteriaError, CriterionId, CriterionVerdict, GrowthFit, Verdict,
    VolumeConstants, Witness,
};
use crate::coeff::{min_eigenvalue, norm, CoefficientField, FieldError, MatrixPart};

const ALPHA_GRID: usize = 20; // alpha = 0, 0.05, ..., 0.95
const BETA_STEP: f64 = 0.25;
const BETA_MAX: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prop44Variant {
    I,
    II,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    Takeda,
    Sturm,
    Sectorial,
}

/// Raw coefficient values at a point.
struct Sample {
    rho: f64,
    a: Vec<f64>,
    c: Vec<f64>,
    b: Vec<f64>,
}

impl Sample {
    fn at(field: &CoefficientField, x: &[f64]) -> Self {
        let d = field.dim();
        let mut a = vec![0.0; d * d];
        let mut c = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        field.diffusion_into(x, &mut a);
        field.antisymmetric_into(x, &mut c);
        field.bbar_into(x, &mut b);
        Self { rho: field.rho_raw(x), a, c, b }
    }
}

/// Max absolute entry; NaN if any entry is NaN.
fn abs_max(m: &[f64]) -> f64 {
    let mut out: f64 = 0.0;
    for v in m {
        if v.is_nan() {
            return f64::NAN;
        }
        out = out.max(v.abs());
    }
    out
}

/// Smallest eigenvalue, `0` when entries overflowed and NaN when undefined.
fn phi(m: &[f64], d: usize) -> f64 {
    if m.iter().any(|v| v.is_nan()) {
        return f64::NAN;
    }
    if m.iter().any(|v| v.is_infinite()) {
        return 0.0;
    }
    min_eigenvalue(m, d)
}

/// `|C|^2 / Phi_A`, infinite when `Phi_A <= 0` and `C != 0`.
fn c_over_phi(c: f64, ph: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else if ph > 0.0 {
        c * c / ph
    } else {
        f64::INFINITY
    }
}

fn q_growth_volume(field: &CoefficientField, x: &[f64]) -> f64 {
    let d = field.dim();
    let s = Sample::at(field, x);
    let ph = phi(&s.a, d);
    let b2: f64 = s.b.iter().map(|v| v * v).sum();
    abs_max(&s.a) + c_over_phi(abs_max(&s.c), ph) + b2
}

fn q_log_growth(field: &CoefficientField, x: &[f64]) -> f64 {
    let d = field.dim();
    let s = Sample::at(field, x);
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let mut axx = 0.0;
    for i in 0..d {
        for j in 0..d {
            axx += x[i] * s.a[i * d + j] * x[j];
        }
    }
    let bx: f64 = s.b.iter().zip(x).map(|(u, v)| u * v).sum();
    axx / r2 + c_over_phi(abs_max(&s.c), phi(&s.a, d)) + bx.abs() * r2.sqrt().ln()
}

fn volume_integrals(field: &CoefficientField, r_max: f64) -> ShellIntegrals {
    let spec = TailQuadratureSpec::default().with_r_max(r_max);
    radial_integrals(field.dim(), &spec, |x| field.rho_raw(x))
}

/// `mu(B_r)` at the dyadic radii `1, 2, 4, ...`.
fn dyadic_ball_masses(q: &ShellIntegrals) -> Vec<(f64, f64)> {
    q.ball_integrals().into_iter().step_by(q.sub_shells).collect()
}

fn witness_from(stats: &[ShellMax], index: usize, shape: impl Fn(f64) -> f64, bound: f64) -> Witness {
    let s = &stats[index];
    let r = norm(&s.point);
    let sh = shape(s.scale);
    Witness { point: s.point.clone(), radius: r, lhs: s.value * sh, rhs: bound * sh }
}

fn scaled(stats: &[ShellMax], f: impl Fn(f64) -> f64) -> Vec<ShellMax> {
    stats.iter().map(|s| ShellMax { value: s.value / f(s.scale), ..s.clone() }).collect()
}

fn exterior(stats: &[ShellMax], n0: f64) -> Vec<ShellMax> {
    stats.iter().filter(|s| s.scale >= n0).cloned().collect()
}

/// Smallest exponent on the grid for which `stats / scale^e` is bounded.
/// Returns the exponent with its growth decision, or the decision at the
/// largest exponent when none fits.
fn fit_exponent(stats: &[ShellMax], grid: &[f64], shape: impl Fn(f64, f64) -> f64) -> (Option<f64>, Growth) {
    let mut last = Growth::Inconclusive { reason: "empty exponent grid".into() };
    for &e in grid {
        let g = assess_growth(&scaled(stats, |r| shape(r, e)));
        if g.is_bounded() {
            return (Some(e), g);
        }
        last = g;
    }
    (None, last)
}

fn alpha_grid() -> Vec<f64> {
    (0..ALPHA_GRID).map(|k| k as f64 * 0.05).collect()
}

fn beta_grid() -> Vec<f64> {
    (0..=(BETA_MAX / BETA_STEP) as usize).map(|k| k as f64 * BETA_STEP).collect()
}

/// Volume growth and pointwise growth bound of the first conservativeness criterion.
pub fn check_thm31_i(field: &CoefficientField, spec: &SamplingSpec) -> (CriterionVerdict, GrowthFit) {
    let id = CriterionId::GrowthVolume;
    let dirs = spec.directions(field.dim());
    let radii = spec.exterior_radii();
    let stats = shell_maxima(&radii, &dirs, |x| Ok(q_growth_volume(field, x)));

    // volume bound
    let vol = volume_integrals(field, spec.r_max);
    let masses = dyadic_ball_masses(&vol);
    let mass_seq: Vec<ShellMax> = masses
        .iter()
        .map(|(r, m)| ShellMax { scale: *r, value: *m, point: vec![*r], flagged: 0, undefined: usize::from(m.is_nan()) })
        .collect();
    let (beta, vol_growth) = fit_exponent(&mass_seq, &beta_grid(), |r, b| r.powf(b));
    let volume_constants = match (beta, &vol_growth) {
        (Some(b), Growth::Bounded { sup, .. }) => Some(VolumeConstants { c1: *sup, c2: 0.0, beta: b }),
        _ => None,
    };

    // pointwise bound, best inner radius
    let shape = |r: f64, a: f64| r.powf(2.0 * a);
    let mut best: Option<(f64, f64, f64)> = None; // (n0, alpha, sup)
    let mut failure: Option<(Vec<ShellMax>, Growth)> = None;
    for &n0 in &spec.n0_candidates {
        let ext = exterior(&stats, n0);
        let (alpha, g) = fit_exponent(&ext, &alpha_grid(), shape);
        match (alpha, &g) {
            (Some(a), Growth::Bounded { sup, .. }) => {
                if best.is_none_or(|(_, ba, _)| a < ba) {
                    best = Some((n0, a, *sup));
                }
            }
            _ => {
                if failure.is_none() {
                    let last = 0.05 * (ALPHA_GRID - 1) as f64;
                    failure = Some((scaled(&ext, |r| shape(r, last)), g));
                }
            }
        }
    }
    let coeff_constants = best.map(|(n0, alpha, c1)| CoeffConstants { c1, alpha, n0 });
    let margins = match best {
        Some((_, alpha, c1)) => {
            stats.iter().map(|s| MARGIN * c1 * shape(s.scale, alpha) - s.value).collect()
        }
        None => vec![],
    };
    let fit = GrowthFit { radii: radii.clone(), volume_constants: volume_constants.clone(), coeff_constants: coeff_constants.clone(), margins };

    let mut v = match (&volume_constants, &coeff_constants) {
        (Some(vc), Some(cc)) => CriterionVerdict::new(id, Verdict::Holds)
            .constant("C1", cc.c1)
            .constant("alpha", cc.alpha)
            .constant("N0", cc.n0)
            .constant("c1", vc.c1)
            .constant("c2", vc.c2)
            .constant("beta", vc.beta),
        _ => {
            let alpha_last = 0.05 * (ALPHA_GRID - 1) as f64;
            if let (None, Some((ext, Growth::Unbounded { index, bound, .. }))) = (&coeff_constants, &failure) {
                let w = witness_from(ext, *index, |r| shape(r, alpha_last), *bound);
                CriterionVerdict::new(id, Verdict::FailsOnWitness)
                    .with_witness(w)
                    .constant("alpha", alpha_last)
                    .note("pointwise coefficient bound grows faster than |x|^(2 alpha) for every alpha < 1")
            } else if let (None, Growth::Unbounded { index, bound, .. }) = (&volume_constants, &vol_growth) {
                let m = &mass_seq[*index];
                let sh = m.scale.powf(BETA_MAX);
                CriterionVerdict::new(id, Verdict::FailsOnWitness)
                    .with_witness(Witness { point: vec![m.scale], radius: m.scale, lhs: m.value, rhs: bound * sh })
                    .constant("beta", BETA_MAX)
                    .note("volume growth is faster than any fitted power")
            } else {
                CriterionVerdict::new(id, Verdict::Undetermined).note("no growth fit could be certified")
            }
        }
    };
    if volume_constants.is_none() {
        v = v.note("volume bound not fitted");
    }
    (v, fit)
}

/// Summability of the weighted coefficient integrand over dyadic shells.
pub fn check_thm31_ii(
    field: &CoefficientField,
    quad: &TailQuadratureSpec,
) -> Result<CriterionVerdict, CriteriaError> {
    let id = CriterionId::Integrability;
    let d = field.dim();
    let q = radial_integrals(d, quad, |x| {
        let s = Sample::at(field, x);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let core = abs_max(&s.a) + c_over_phi(abs_max(&s.c), phi(&s.a, d));
        let val = core / (1.0 + r2) + norm(&s.b) / (1.0 + r2.sqrt());
        if s.rho == 0.0 && val.is_finite() {
            0.0
        } else {
            s.rho * val
        }
    });
    let shells = q.dyadic();
    if shells.iter().any(|v| v.is_nan()) {
        return Err(CriteriaError::Evaluation {
            criterion: id.code(),
            detail: "non-finite integrand inside the quadrature domain".into(),
        });
    }
    let v = match assess_tail_sum(&shells) {
        TailSum::Summable { slope } => CriterionVerdict::new(id, Verdict::Holds)
            .constant("integral_estimate", shells.iter().sum())
            .constant("tail_slope", slope),
        TailSum::Divergent { slope } => {
            let n = shells.len();
            let k0 = n / 2;
            let outer = 2f64.powi(n as i32 - 1);
            let envelope = shells[k0] * 2f64.powf(-0.2 * (n - 1 - k0) as f64);
            let mut point = vec![0.0; d];
            point[0] = outer;
            CriterionVerdict::new(id, Verdict::FailsOnWitness)
                .with_witness(Witness { point, radius: outer, lhs: shells[n - 1], rhs: envelope })
                .constant("tail_slope", slope)
                .note("dyadic shell contributions do not decay")
        }
        TailSum::Undetermined { slope } => {
            CriterionVerdict::new(id, Verdict::Undetermined).constant("tail_slope", slope)
        }
    };
    Ok(v)
}

/// Finiteness of `mu` from dyadic shell masses.
pub fn mu_finiteness(field: &CoefficientField, quad: &TailQuadratureSpec) -> MuFiniteness {
    let q = radial_integrals(field.dim(), quad, |x| field.rho_raw(x));
    let shells = q.dyadic();
    let estimate = shells.iter().sum();
    let (state, slope) = match assess_tail_sum(&shells) {
        TailSum::Summable { slope } => (Finiteness::Finite, slope),
        TailSum::Divergent { slope } => (Finiteness::Infinite, slope),
        TailSum::Undetermined { slope } => (Finiteness::Unknown, slope),
    };
    MuFiniteness { state, estimate, tail_slope: slope }
}

/// Growth below `K (|x| ln|x|)^2` outside `B_{N0}`, `N0 >= 2`.
pub fn check_thm33(field: &CoefficientField, spec: &SamplingSpec) -> CriterionVerdict {
    let id = CriterionId::LogGrowth;
    let dirs = spec.directions(field.dim());
    let stats = shell_maxima(&spec.exterior_radii(), &dirs, |x| Ok(q_log_growth(field, x)));
    let shape = |r: f64| (r * r.ln()).powi(2);
    let mut first_fail = None;
    for &n0 in spec.n0_candidates.iter().filter(|n| **n >= 2.0) {
        let ext = scaled(&exterior(&stats, n0), shape);
        match assess_growth(&ext) {
            Growth::Bounded { sup, .. } => {
                return CriterionVerdict::new(id, Verdict::Holds)
                    .constant("K", sup)
                    .constant("N0", n0)
                    .note("Lr-unique for r in (1, 2]");
            }
            g => {
                if first_fail.is_none() {
                    first_fail = Some((ext, g));
                }
            }
        }
    }
    match first_fail {
        Some((ext, Growth::Unbounded { index, bound, .. })) => CriterionVerdict::new(id, Verdict::FailsOnWitness)
            .with_witness(witness_from(&ext, index, shape, bound)),
        _ => CriterionVerdict::new(id, Verdict::Undetermined),
    }
}

/// Runs a growth decision on shell maxima and the near-singular levels.
struct Bounds {
    shells: Vec<ShellMax>,
    singular: Vec<ShellMax>,
}

impl Bounds {
    fn sample(field: &CoefficientField, spec: &SamplingSpec, q: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let dirs = spec.directions(field.dim());
        let f = |x: &[f64]| Ok(q(x));
        Self { shells: shell_maxima(&spec.all_radii(), &dirs, f), singular: singular_maxima(field, spec, f) }
    }

    fn sample_fallible(
        field: &CoefficientField,
        spec: &SamplingSpec,
        q: impl Fn(&[f64]) -> Result<f64, FieldError> + Sync,
    ) -> Self {
        let dirs = spec.directions(field.dim());
        Self { shells: shell_maxima(&spec.all_radii(), &dirs, &q), singular: singular_maxima(field, spec, &q) }
    }

    /// Combined decision, sup over everything, and a witness when unbounded.
    fn decide(&self) -> (Growth, f64, Option<Witness>) {
        let g1 = assess_growth(&self.shells);
        let g2 = if self.singular.is_empty() {
            Growth::Bounded { sup: f64::NEG_INFINITY, index: 0 }
        } else {
            assess_growth(&self.singular)
        };
        let sup = self
            .shells
            .iter()
            .chain(&self.singular)
            .map(|s| s.value)
            .filter(|v| !v.is_nan())
            .fold(f64::NEG_INFINITY, f64::max);
        for (g, stats) in [(&g1, &self.shells), (&g2, &self.singular)] {
            if let Growth::Unbounded { index, bound, .. } = g {
                let s = &stats[*index];
                let w = Witness { point: s.point.clone(), radius: norm(&s.point), lhs: s.value, rhs: *bound };
                return (g.clone(), sup, Some(w));
            }
        }
        for g in [&g1, &g2] {
            if let Growth::Inconclusive { .. } = g {
                return (g.clone(), sup, None);
            }
        }
        (Growth::Bounded { sup, index: 0 }, sup, None)
    }
}

fn require_zero_bbar(field: &CoefficientField, id: CriterionId) -> Result<(), CriteriaError> {
    if field.bbar_is_zero() {
        Ok(())
    } else {
        Err(CriteriaError::Precondition {
            criterion: id.code(),
            detail: "the divergence-free drift must be identically zero".into(),
        })
    }
}

/// Combines named bound checks: holds iff all bounded, fails on the first unbounded.
fn combine(id: CriterionId, parts: &[(&str, &Bounds)]) -> CriterionVerdict {
    let mut v = CriterionVerdict::new(id, Verdict::Holds);
    let mut undetermined = false;
    for (name, b) in parts {
        let (g, sup, w) = b.decide();
        match g {
            Growth::Bounded { .. } => v = v.constant(name, sup),
            Growth::Unbounded { .. } => {
                let mut out = CriterionVerdict::new(id, Verdict::FailsOnWitness)
                    .note(format!("{name} is unbounded"));
                if let Some(w) = w {
                    out = out.with_witness(w);
                }
                return out;
            }
            Growth::Inconclusive { reason } => {
                undetermined = true;
                v = v.note(format!("{name}: {reason}"));
            }
        }
    }
    if undetermined {
        v.verdict = Verdict::Undetermined;
    }
    v
}

/// Uniform ellipticity and boundedness of `rho A`, boundedness of `rho C`.
pub fn check_s2(field: &CoefficientField, spec: &SamplingSpec) -> Result<CriterionVerdict, CriteriaError> {
    let id = CriterionId::UniformBounds;
    require_zero_bbar(field, id)?;
    let d = field.dim();
    let upper = Bounds::sample(field, spec, |x| {
        let s = Sample::at(field, x);
        (s.rho * abs_max(&s.a)).max(s.rho * abs_max(&s.c))
    });
    let lower = Bounds::sample(field, spec, |x| {
        let s = Sample::at(field, x);
        1.0 / (s.rho * phi(&s.a, d))
    });
    let mut v = combine(id, &[("M", &upper), ("inverse_theta", &lower)]);
    if let Some(it) = v.constants.remove("inverse_theta") {
        v.constants.insert("theta".into(), 1.0 / it);
    }
    Ok(v)
}

/// Uniform bounds together with a one-sided density bound.
pub fn check_thm43(field: &CoefficientField, spec: &SamplingSpec) -> Result<CriterionVerdict, CriteriaError> {
    let id = CriterionId::DimensionDichotomy;
    let s2 = check_s2(field, spec)?;
    let upper = Bounds::sample(field, spec, |x| field.rho_raw(x));
    let lower = Bounds::sample(field, spec, |x| 1.0 / field.rho_raw(x));
    let (gu, su, wu) = upper.decide();
    let (gl, sl, _) = lower.decide();
    let flag = |g: &Growth| if g.is_bounded() { 1.0 } else { 0.0 };
    let base = |verdict| {
        CriterionVerdict::new(id, verdict)
            .constant("dim", field.dim() as f64)
            .constant("rho_upper_bounded", flag(&gu))
            .constant("rho_lower_bounded", flag(&gl))
    };
    let v = match s2.verdict {
        Verdict::FailsOnWitness => {
            let mut v = base(Verdict::FailsOnWitness).note("uniform bounds fail");
            v.witness = s2.witness;
            v
        }
        Verdict::Undetermined => base(Verdict::Undetermined).note("uniform bounds undetermined"),
        Verdict::Holds if gu.is_bounded() || gl.is_bounded() => {
            let mut v = base(Verdict::Holds);
            if gu.is_bounded() {
                v = v.constant("rho_sup", su);
            }
            if gl.is_bounded() {
                v = v.constant("rho_inf", 1.0 / sl);
            }
            v
        }
        Verdict::Holds if gu.is_unbounded() && gl.is_unbounded() => {
            let mut v = base(Verdict::FailsOnWitness).note("neither rho nor 1/rho is bounded");
            v.witness = wu;
            v
        }
        Verdict::Holds => base(Verdict::Undetermined).note("density bounds undetermined"),
    };
    Ok(v)
}

/// Density and coefficient bounds implying a unique invariant measure.
pub fn check_prop44(
    field: &CoefficientField,
    variant: Prop44Variant,
    spec: &SamplingSpec,
) -> Result<CriterionVerdict, CriteriaError> {
    let d = field.dim();
    match variant {
        Prop44Variant::I => {
            let id = CriterionId::BoundedDensity;
            require_zero_bbar(field, id)?;
            let rho_up = Bounds::sample(field, spec, |x| field.rho_raw(x));
            let rho_lo = Bounds::sample(field, spec, |x| 1.0 / field.rho_raw(x));
            let a_up = Bounds::sample(field, spec, |x| {
                let s = Sample::at(field, x);
                abs_max(&s.a).max(abs_max(&s.c))
            });
            let a_lo = Bounds::sample(field, spec, |x| {
                let s = Sample::at(field, x);
                1.0 / phi(&s.a, d)
            });
            let mut v = combine(
                id,
                &[("c2", &rho_up), ("inverse_c1", &rho_lo), ("Lambda", &a_up), ("inverse_lambda", &a_lo)],
            );
            for (k, name) in [("inverse_c1", "c1"), ("inverse_lambda", "lambda")] {
                if let Some(iv) = v.constants.remove(k) {
                    v.constants.insert(name.into(), 1.0 / iv);
                }
            }
            Ok(v)
        }
        Prop44Variant::II => {
            let id = CriterionId::FactoredDensity;
            require_zero_bbar(field, id)?;
            let dirs = spec.directions(d);
            let radii = spec.all_radii();
            let up = shell_maxima(&radii, &dirs, |x| Ok(field.rho_raw(x)));
            let lo = shell_maxima(&radii, &dirs, |x| Ok(1.0 / field.rho_raw(x)));
            let delta_grid: Vec<f64> = beta_grid().into_iter().skip(1).collect();
            let (delta, gd) = fit_exponent(&up, &delta_grid, |r, e| 1.0 + r.powf(e));
            let (alpha, ga) = fit_exponent(&lo, &alpha_grid(), |r, a| (1.0 + r).powf(2.0 * a));
            let upper_shape = |r: f64| 1.0 + r.powf(BETA_MAX);
            let lower_shape = |r: f64| (1.0 + r).powf(1.9);
            if let Growth::Unbounded { index, bound, .. } = &gd {
                let w = witness_from(&scaled(&up, upper_shape), *index, upper_shape, *bound);
                return Ok(CriterionVerdict::new(id, Verdict::FailsOnWitness)
                    .with_witness(w)
                    .note("polynomial upper density bound violated"));
            }
            if let Growth::Unbounded { index, bound, .. } = &ga {
                let w = witness_from(&scaled(&lo, lower_shape), *index, lower_shape, *bound);
                return Ok(CriterionVerdict::new(id, Verdict::FailsOnWitness)
                    .with_witness(w)
                    .note("polynomial lower density bound violated"));
            }
            let (Some(delta), Some(alpha)) = (delta, alpha) else {
                return Ok(CriterionVerdict::new(id, Verdict::Undetermined).note("density bounds undetermined"));
            };
            let base = CriterionVerdict::new(id, Verdict::Holds).constant("delta", delta).constant("alpha", alpha);
            let Some(fact) = field.meta().factorization.clone() else {
                let mut v = base.note("no factorization A = Atilde/rho, C = Ctilde/rho declared");
                v.verdict = Verdict::Undetermined;
                return Ok(v);
            };
            let at_up = Bounds::sample(field, spec, |x| {
                let mut m = vec![0.0; d * d];
                (fact.a_tilde)(x, &mut m);
                let mut c = vec![0.0; d * d];
                (fact.c_tilde)(x, &mut c);
                abs_max(&m).max(abs_max(&c))
            });
            let at_lo = Bounds::sample(field, spec, |x| {
                let mut m = vec![0.0; d * d];
                (fact.a_tilde)(x, &mut m);
                1.0 / phi(&m, d)
            });
            let mut v = combine(id, &[("Lambda", &at_up), ("inverse_lambda", &at_lo)]);
            if let Some(iv) = v.constants.remove("inverse_lambda") {
                v.constants.insert("lambda".into(), 1.0 / iv);
            }
            v.constants.insert("delta".into(), delta);
            v.constants.insert("alpha".into(), alpha);
            Ok(v)
        }
    }
}

/// Comparison criteria from the symmetric and sectorial settings.
pub fn check_comparison(field: &CoefficientField, which: Comparison, spec: &SamplingSpec) -> CriterionVerdict {
    let d = field.dim();
    let meta = field.meta();
    match which {
        Comparison::Takeda => {
            let id = CriterionId::Takeda;
            if !meta.lebesgue {
                return CriterionVerdict::new(id, Verdict::Undetermined).note("requires mu = dx");
            }
            let b = Bounds::sample(field, spec, |x| {
                let s = Sample::at(field, x);
                let neg: Vec<f64> = s.a.iter().map(|v| -v).collect();
                let top = -phi(&neg, d);
                let r = norm(x);
                top / ((2.0 + r).powi(2) * (2.0 + r).ln())
            });
            combine(id, &[("M", &b)])
        }
        Comparison::Sturm => {
            let id = CriterionId::Sturm;
            if !meta.identity_diffusion {
                return CriterionVerdict::new(id, Verdict::Undetermined).note("requires A = id");
            }
            let vol = volume_integrals(field, spec.r_max);
            let balls = vol.ball_integrals();
            let f = |r: f64, m: f64| r / m.max(std::f64::consts::E).ln();
            // trapezoid over sub-shell edges, grouped into dyadic shells
            let mut shells = vec![];
            for chunk in balls.windows(2).collect::<Vec<_>>().chunks(vol.sub_shells) {
                let s: f64 = chunk
                    .iter()
                    .map(|w| 0.5 * (f(w[0].0, w[0].1) + f(w[1].0, w[1].1)) * (w[1].0 - w[0].0))
                    .sum();
                shells.push(s);
            }
            match assess_tail_sum(&shells) {
                TailSum::Divergent { slope } => {
                    CriterionVerdict::new(id, Verdict::Holds).constant("tail_slope", slope)
                }
                TailSum::Summable { slope } => {
                    let (r, m) = *balls.last().unwrap_or(&(0.0, 0.0));
                    let mut point = vec![0.0; d];
                    point[0] = r;
                    CriterionVerdict::new(id, Verdict::FailsOnWitness)
                        .with_witness(Witness { point, radius: r, lhs: m.ln(), rhs: r })
                        .constant("tail_slope", slope)
                        .note("r / ln mu(B_r) is integrable")
                }
                TailSum::Undetermined { slope } => {
                    CriterionVerdict::new(id, Verdict::Undetermined).constant("tail_slope", slope)
                }
            }
        }
        Comparison::Sectorial => {
            let id = CriterionId::Sectorial;
            if !meta.lebesgue {
                return CriterionVerdict::new(id, Verdict::Undetermined).note("requires mu = dx");
            }
            let b = Bounds::sample_fallible(field, spec, |x| {
                let s = Sample::at(field, x);
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let mut axx = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        axx += x[i] * s.a[i * d + j] * x[j];
                    }
                }
                let dc = field.row_divergence(MatrixPart::C, x)?;
                let dcx: f64 = dc.iter().zip(x).map(|(u, v)| u * v).sum();
                let lhs = if r2 > 0.0 { axx / r2 } else { 0.0 } + dcx.abs();
                Ok(lhs / ((r2 + 1.0) * ((r2 + 1.0).ln() + 1.0)))
            });
            combine(id, &[("M", &b)])
        }
    }
}

/// All criteria on one field.
#[derive(Clone, Debug, Serialize)]
pub struct CriteriaReport {
    pub verdicts: Vec<CriterionVerdict>,
    pub growth_fit: GrowthFit,
    pub mu_finite: MuFiniteness,
    /// Criteria that could not be evaluated, with the reason.
    pub errors: Vec<(String, String)>,
}

pub fn evaluate_all(field: &CoefficientField, spec: &SamplingSpec) -> CriteriaReport {
    let quad = TailQuadratureSpec::default().with_r_max(spec.r_max);
    let mut verdicts = vec![];
    let mut errors = vec![];
    let (v, growth_fit) = check_thm31_i(field, spec);
    verdicts.push(v);
    let mut push = |id: CriterionId, r: Result<CriterionVerdict, CriteriaError>| match r {
        Ok(v) => verdicts.push(v),
        Err(e) => {
            errors.push((id.code().to_string(), e.to_string()));
            verdicts.push(CriterionVerdict::new(id, Verdict::Undetermined).note(e.to_string()));
        }
    };
    push(CriterionId::Integrability, check_thm31_ii(field, &quad));
    push(CriterionId::LogGrowth, Ok(check_thm33(field, spec)));
    push(CriterionId::UniformBounds, check_s2(field, spec));
    push(CriterionId::DimensionDichotomy, check_thm43(field, spec));
    push(CriterionId::BoundedDensity, check_prop44(field, Prop44Variant::I, spec));
    push(CriterionId::FactoredDensity, check_prop44(field, Prop44Variant::II, spec));
    for c in [Comparison::Takeda, Comparison::Sturm, Comparison::Sectorial] {
        let v = check_comparison(field, c, spec);
        push(v.id, Ok(v));
    }
    let mu_finite = mu_finiteness(field, &quad);
    CriteriaReport { verdicts, growth_fit, mu_finite, errors }
}
