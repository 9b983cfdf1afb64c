//! Coefficient fields of divergence-form operators
//!
//! A field bundles the density `rho`, the symmetric diffusion matrix `A`, the
//! anti-symmetric matrix `C` and the `mu`-divergence-free drift `Bbar` of
//!
//! ```text
//! L f = (1/2rho) div(rho (A + C) grad f) + <Bbar, grad f>
//! ```
//!
//! together with optional analytic first derivatives. Missing derivatives are
//! replaced by central differences with the scale-aware step
//! `h_fd = 1e-5 * max(1, |x|)`.
//!
//! Matrices are passed around as row-major `d*d` slices. All evaluation is
//! pure; a field can be shared across threads.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::testfn::TestFunction;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes a `d`-vector into the output slice.
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Writes a row-major `d*d` matrix into the output slice.
pub type MatrixFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("dimension must be at least 2, got {0}")]
    InvalidDimension(usize),
    #[error("non-finite {what} at x = {x:?}")]
    NonFinite { what: &'static str, x: Vec<f64> },
    #[error("density must be positive, rho({x:?}) = {value}")]
    NonPositiveDensity { x: Vec<f64>, value: f64 },
    #[error("structural violation at x = {x:?}: {detail}")]
    Structural { x: Vec<f64>, detail: String },
    #[error("derivative sample at x = {x:?} lies within {step:e} of the singular set (distance {distance:e})")]
    NearSingular { x: Vec<f64>, distance: f64, step: f64 },
    #[error("quadrature domain does not contain the test function support: {0}")]
    Domain(String),
    #[error("missing builder input: {0}")]
    Missing(&'static str),
}

pub type FieldResult<T> = Result<T, FieldError>;

/// Points where derivatives of the coefficients are not meaningful.
pub trait SingularSet: Send + Sync + fmt::Debug {
    /// Euclidean distance from `x` to the set.
    fn distance(&self, x: &[f64]) -> f64;
    /// Points of the set inside the closed ball of the given radius.
    fn points_within(&self, radius: f64, dim: usize) -> Vec<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DerivativeMode {
    /// Use analytic closures when present, central differences otherwise.
    Analytic,
    /// Always use central differences.
    CentralDifference,
}

/// Which matrix the row divergence is taken of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixPart {
    A,
    C,
    APlusC,
    APlusCt,
}

/// Declared factorization `A = Atilde / rho`, `C = Ctilde / rho`.
#[derive(Clone)]
pub struct Factorization {
    pub a_tilde: MatrixFn,
    pub c_tilde: MatrixFn,
}

impl fmt::Debug for Factorization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Factorization { .. }")
    }
}

/// Structural metadata that criteria use as preconditions.
#[derive(Clone, Debug, Default)]
pub struct FieldMeta {
    /// `rho` is identically one, so `mu = dx`.
    pub lebesgue: bool,
    /// `A` is identically the identity matrix.
    pub identity_diffusion: bool,
    pub factorization: Option<Factorization>,
}

#[derive(Clone)]
pub struct CoefficientField {
    dim: usize,
    rho: ScalarFn,
    grad_log_rho: Option<VectorFn>,
    a: MatrixFn,
    div_a: Option<VectorFn>,
    c: Option<MatrixFn>,
    div_c: Option<VectorFn>,
    bbar: Option<VectorFn>,
    mode: DerivativeMode,
    singular: Option<Arc<dyn SingularSet>>,
    meta: FieldMeta,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("dim", &self.dim)
            .field("has_c", &self.c.is_some())
            .field("has_bbar", &self.bbar.is_some())
            .field("mode", &self.mode)
            .field("singular", &self.singular)
            .field("meta", &self.meta)
            .finish()
    }
}

pub struct FieldBuilder {
    dim: usize,
    rho: Option<ScalarFn>,
    grad_log_rho: Option<VectorFn>,
    a: Option<MatrixFn>,
    div_a: Option<VectorFn>,
    c: Option<MatrixFn>,
    div_c: Option<VectorFn>,
    bbar: Option<VectorFn>,
    mode: DerivativeMode,
    singular: Option<Arc<dyn SingularSet>>,
    meta: FieldMeta,
}

impl FieldBuilder {
    pub fn rho(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.rho = Some(Arc::new(f));
        self
    }

    /// Analytic `grad(ln rho) = grad(rho) / rho`.
    pub fn grad_log_rho(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.grad_log_rho = Some(Arc::new(f));
        self
    }

    pub fn diffusion(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.a = Some(Arc::new(f));
        self
    }

    /// Analytic row divergence of `A`.
    pub fn div_diffusion(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.div_a = Some(Arc::new(f));
        self
    }

    pub fn antisymmetric(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.c = Some(Arc::new(f));
        self
    }

    /// Analytic row divergence of `C`.
    pub fn div_antisymmetric(
        mut self,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.div_c = Some(Arc::new(f));
        self
    }

    pub fn divergence_free_drift(
        mut self,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.bbar = Some(Arc::new(f));
        self
    }

    pub fn derivative_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn singular_set(mut self, s: Arc<dyn SingularSet>) -> Self {
        self.singular = Some(s);
        self
    }

    pub fn meta(mut self, meta: FieldMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn build(self) -> FieldResult<CoefficientField> {
        if self.dim < 2 {
            return Err(FieldError::InvalidDimension(self.dim));
        }
        Ok(CoefficientField {
            dim: self.dim,
            rho: self.rho.unwrap_or_else(|| Arc::new(|_: &[f64]| 1.0)),
            grad_log_rho: self.grad_log_rho,
            a: self.a.ok_or(FieldError::Missing("diffusion matrix A"))?,
            div_a: self.div_a,
            c: self.c,
            div_c: self.div_c,
            bbar: self.bbar,
            mode: self.mode,
            singular: self.singular,
            meta: self.meta,
        })
    }
}

/// The four drift vectors at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftSample {
    /// `beta^{rho, A + C^T}`
    pub beta: Vec<f64>,
    /// `beta^{rho, A + C}`
    pub beta_dual: Vec<f64>,
    /// `beta^{rho, A + C^T} + Bbar`
    pub total: Vec<f64>,
    /// `beta^{rho, A + C} - Bbar`
    pub total_dual: Vec<f64>,
}

/// Scratch buffers for allocation-free drift evaluation in hot loops.
#[derive(Clone, Debug)]
pub struct DriftWorkspace {
    mat: Vec<f64>,
    mat2: Vec<f64>,
    div: Vec<f64>,
    glr: Vec<f64>,
    shifted: Vec<f64>,
}

impl DriftWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            mat: vec![0.0; dim * dim],
            mat2: vec![0.0; dim * dim],
            div: vec![0.0; dim],
            glr: vec![0.0; dim],
            shifted: vec![0.0; dim],
        }
    }
}

/// Scale-aware central-difference step.
pub fn fd_step(x: &[f64]) -> f64 {
    1e-5 * norm(x).max(1.0)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_finite(what: &'static str, x: &[f64], vals: &[f64]) -> FieldResult<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FieldError::NonFinite { what, x: x.to_vec() })
    }
}

impl CoefficientField {
    pub fn builder(dim: usize) -> FieldBuilder {
        FieldBuilder {
            dim,
            rho: None,
            grad_log_rho: None,
            a: None,
            div_a: None,
            c: None,
            div_c: None,
            bbar: None,
            mode: DerivativeMode::Analytic,
            singular: None,
            meta: FieldMeta::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn meta(&self) -> &FieldMeta {
        &self.meta
    }

    pub fn derivative_mode(&self) -> DerivativeMode {
        self.mode
    }

    /// Same field with a different derivative mode.
    pub fn with_derivative_mode(&self, mode: DerivativeMode) -> Self {
        Self { mode, ..self.clone() }
    }

    /// Same field with `C` replaced by `s * C`.
    pub fn with_scaled_antisymmetric(&self, s: f64) -> Self {
        let mut out = self.clone();
        if let Some(c) = self.c.clone() {
            out.c = Some(Arc::new(move |x: &[f64], m: &mut [f64]| {
                c(x, m);
                m.iter_mut().for_each(|v| *v *= s);
            }));
        }
        if let Some(dc) = self.div_c.clone() {
            out.div_c = Some(Arc::new(move |x: &[f64], v: &mut [f64]| {
                dc(x, v);
                v.iter_mut().for_each(|e| *e *= s);
            }));
        }
        out
    }

    pub fn has_antisymmetric(&self) -> bool {
        self.c.is_some()
    }

    /// `Bbar` is declared identically zero.
    pub fn bbar_is_zero(&self) -> bool {
        self.bbar.is_none()
    }

    pub fn singular_set(&self) -> Option<&Arc<dyn SingularSet>> {
        self.singular.as_ref()
    }

    pub fn singular_distance(&self, x: &[f64]) -> f64 {
        self.singular.as_ref().map_or(f64::INFINITY, |s| s.distance(x))
    }

    /// Raw density value, no validation.
    pub fn rho_raw(&self, x: &[f64]) -> f64 {
        (self.rho)(x)
    }

    pub fn rho(&self, x: &[f64]) -> FieldResult<f64> {
        let v = (self.rho)(x);
        if !v.is_finite() {
            return Err(FieldError::NonFinite { what: "rho", x: x.to_vec() });
        }
        if v <= 0.0 {
            return Err(FieldError::NonPositiveDensity { x: x.to_vec(), value: v });
        }
        Ok(v)
    }

    /// Writes `A(x)` into `out` without validation.
    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.a)(x, out)
    }

    /// Writes `C(x)` (zero when absent) into `out` without validation.
    pub fn antisymmetric_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.c {
            Some(c) => c(x, out),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    /// Writes `Bbar(x)` (zero when absent) into `out` without validation.
    pub fn bbar_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.bbar {
            Some(b) => b(x, out),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    pub fn diffusion(&self, x: &[f64]) -> FieldResult<Vec<f64>> {
        let mut m = vec![0.0; self.dim * self.dim];
        self.diffusion_into(x, &mut m);
        check_finite("A", x, &m)?;
        Ok(m)
    }

    pub fn antisymmetric(&self, x: &[f64]) -> FieldResult<Vec<f64>> {
        let mut m = vec![0.0; self.dim * self.dim];
        self.antisymmetric_into(x, &mut m);
        check_finite("C", x, &m)?;
        Ok(m)
    }

    pub fn bbar(&self, x: &[f64]) -> FieldResult<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        self.bbar_into(x, &mut v);
        check_finite("Bbar", x, &v)?;
        Ok(v)
    }

    /// Smallest eigenvalue of `A(x)`.
    pub fn phi_a(&self, x: &[f64]) -> FieldResult<f64> {
        let m = self.diffusion(x)?;
        Ok(min_eigenvalue(&m, self.dim))
    }

    fn guard_singular(&self, x: &[f64]) -> FieldResult<f64> {
        let step = fd_step(x);
        let dist = self.singular_distance(x);
        if dist <= step {
            return Err(FieldError::NearSingular { x: x.to_vec(), distance: dist, step });
        }
        Ok(step)
    }

    /// Row divergence `(div B)_i = sum_j d_j b_ij` of the selected matrix.
    pub fn row_divergence(&self, which: MatrixPart, x: &[f64]) -> FieldResult<Vec<f64>> {
        let mut ws = DriftWorkspace::new(self.dim);
        let mut out = vec![0.0; self.dim];
        self.row_divergence_into(which, x, &mut ws, &mut out)?;
        Ok(out)
    }

    fn row_divergence_into(
        &self,
        which: MatrixPart,
        x: &[f64],
        ws: &mut DriftWorkspace,
        out: &mut [f64],
    ) -> FieldResult<()> {
        let step = self.guard_singular(x)?;
        let analytic = self.mode == DerivativeMode::Analytic;
        let (want_a, c_sign) = match which {
            MatrixPart::A => (true, 0.0),
            MatrixPart::C => (false, 1.0),
            MatrixPart::APlusC => (true, 1.0),
            MatrixPart::APlusCt => (true, -1.0),
        };
        out.iter_mut().for_each(|v| *v = 0.0);
        if want_a {
            match (&self.div_a, analytic) {
                (Some(f), true) => f(x, &mut ws.div),
                _ => fd_row_divergence(&*self.a, x, step, ws, self.dim),
            }
            check_finite("div A", x, &ws.div)?;
            out.iter_mut().zip(&ws.div).for_each(|(o, d)| *o += d);
        }
        if c_sign != 0.0 {
            if let Some(c) = &self.c {
                match (&self.div_c, analytic) {
                    (Some(f), true) => f(x, &mut ws.div),
                    _ => fd_row_divergence(&**c, x, step, ws, self.dim),
                }
                check_finite("div C", x, &ws.div)?;
                out.iter_mut().zip(&ws.div).for_each(|(o, d)| *o += c_sign * d);
            }
        }
        Ok(())
    }

    /// Central-difference row divergence with an explicit step; no singular guard.
    pub fn row_divergence_fd(&self, which: MatrixPart, x: &[f64], step: f64) -> Vec<f64> {
        let d = self.dim;
        let mut ws = DriftWorkspace::new(d);
        let mut out = vec![0.0; d];
        let c_sign = match which {
            MatrixPart::A => 0.0,
            MatrixPart::C | MatrixPart::APlusC => 1.0,
            MatrixPart::APlusCt => -1.0,
        };
        if which != MatrixPart::C {
            fd_row_divergence(&*self.a, x, step, &mut ws, d);
            out.iter_mut().zip(&ws.div).for_each(|(o, v)| *o += v);
        }
        if let Some(c) = &self.c {
            if c_sign != 0.0 {
                fd_row_divergence(&**c, x, step, &mut ws, d);
                out.iter_mut().zip(&ws.div).for_each(|(o, v)| *o += c_sign * v);
            }
        }
        out
    }

    /// `grad(ln rho)(x)`.
    pub fn grad_log_rho(&self, x: &[f64]) -> FieldResult<Vec<f64>> {
        let mut ws = DriftWorkspace::new(self.dim);
        self.grad_log_rho_into(x, &mut ws)?;
        Ok(ws.glr.clone())
    }

    /// `grad(rho)(x) = rho * grad(ln rho)`.
    pub fn grad_rho(&self, x: &[f64]) -> FieldResult<Vec<f64>> {
        let r = self.rho(x)?;
        Ok(self.grad_log_rho(x)?.into_iter().map(|g| r * g).collect())
    }

    fn grad_log_rho_into(&self, x: &[f64], ws: &mut DriftWorkspace) -> FieldResult<()> {
        let step = self.guard_singular(x)?;
        match (&self.grad_log_rho, self.mode) {
            (Some(f), DerivativeMode::Analytic) => f(x, &mut ws.glr),
            _ => {
                ws.shifted.copy_from_slice(x);
                for j in 0..self.dim {
                    ws.shifted[j] = x[j] + step;
                    let up = self.rho(&ws.shifted)?.ln();
                    ws.shifted[j] = x[j] - step;
                    let dn = self.rho(&ws.shifted)?.ln();
                    ws.shifted[j] = x[j];
                    ws.glr[j] = (up - dn) / (2.0 * step);
                }
            }
        }
        check_finite("grad ln rho", x, &ws.glr)
    }

    /// `beta^{rho,B} = 1/2 div B + 1/(2 rho) B grad rho` for `B = A + s C`.
    fn beta_into(
        &self,
        c_sign: f64,
        x: &[f64],
        ws: &mut DriftWorkspace,
        out: &mut [f64],
    ) -> FieldResult<()> {
        let d = self.dim;
        let which = if c_sign > 0.0 { MatrixPart::APlusC } else { MatrixPart::APlusCt };
        // row divergence goes into `out`, then the density term is added
        self.row_divergence_into(which, x, ws, out)?;
        self.grad_log_rho_into(x, ws)?;
        (self.a)(x, &mut ws.mat);
        check_finite("A", x, &ws.mat)?;
        self.antisymmetric_into(x, &mut ws.mat2);
        check_finite("C", x, &ws.mat2)?;
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += (ws.mat[i * d + j] + c_sign * ws.mat2[i * d + j]) * ws.glr[j];
            }
            out[i] = 0.5 * out[i] + 0.5 * acc;
        }
        Ok(())
    }

    /// Forward drift `beta^{rho, A + C^T} + Bbar`, the drift of the SDE.
    pub fn forward_drift_into(
        &self,
        x: &[f64],
        ws: &mut DriftWorkspace,
        out: &mut [f64],
    ) -> FieldResult<()> {
        self.beta_into(-1.0, x, ws, out)?;
        if let Some(b) = &self.bbar {
            b(x, &mut ws.div);
            check_finite("Bbar", x, &ws.div)?;
            out.iter_mut().zip(&ws.div).for_each(|(o, v)| *o += v);
        }
        Ok(())
    }

    /// `beta^{rho,B}` for `B = A` (the symmetric part only).
    pub fn beta_symmetric(&self, x: &[f64]) -> FieldResult<Vec<f64>> {
        let no_c = Self { c: None, div_c: None, ..self.clone() };
        let mut ws = DriftWorkspace::new(self.dim);
        let mut out = vec![0.0; self.dim];
        no_c.beta_into(1.0, x, &mut ws, &mut out)?;
        Ok(out)
    }

    pub fn beta_drift(&self, x: &[f64]) -> FieldResult<DriftSample> {
        let d = self.dim;
        self.rho(x)?;
        let mut ws = DriftWorkspace::new(d);
        let mut beta = vec![0.0; d];
        let mut beta_dual = vec![0.0; d];
        self.beta_into(-1.0, x, &mut ws, &mut beta)?;
        self.beta_into(1.0, x, &mut ws, &mut beta_dual)?;
        let mut total = vec![0.0; d];
        self.forward_drift_into(x, &mut ws, &mut total)?;
        let b = self.bbar(x)?;
        let total_dual = beta_dual.iter().zip(&b).map(|(u, v)| u - v).collect();
        Ok(DriftSample { beta, beta_dual, total, total_dual })
    }

    /// Checks symmetry of `A`, anti-symmetry of `C`, positivity of `rho` and `Phi_A`.
    pub fn check_structure(&self, x: &[f64]) -> FieldResult<()> {
        let d = self.dim;
        self.rho(x)?;
        let a = self.diffusion(x)?;
        let c = self.antisymmetric(x)?;
        for i in 0..d {
            if c[i * d + i] != 0.0 {
                return Err(FieldError::Structural {
                    x: x.to_vec(),
                    detail: format!("C has nonzero diagonal entry c[{i}][{i}] = {}", c[i * d + i]),
                });
            }
            for j in (i + 1)..d {
                let (aij, aji) = (a[i * d + j], a[j * d + i]);
                let scale = aij.abs().max(aji.abs()).max(1.0);
                if (aij - aji).abs() > SYMMETRY_TOL * scale {
                    return Err(FieldError::Structural {
                        x: x.to_vec(),
                        detail: format!("A not symmetric at ({i},{j}): {aij} vs {aji}"),
                    });
                }
                let (cij, cji) = (c[i * d + j], c[j * d + i]);
                let scale = cij.abs().max(cji.abs()).max(1.0);
                if (cij + cji).abs() > SYMMETRY_TOL * scale {
                    return Err(FieldError::Structural {
                        x: x.to_vec(),
                        detail: format!("C not anti-symmetric at ({i},{j}): {cij} vs {cji}"),
                    });
                }
            }
        }
        let phi = min_eigenvalue(&a, d);
        if !(phi > 0.0) {
            return Err(FieldError::Structural {
                x: x.to_vec(),
                detail: format!("A not positive definite, smallest eigenvalue {phi}"),
            });
        }
        Ok(())
    }

    /// Midpoint-rule value of `int <Bbar, grad f> rho dx` over the quadrature box.
    pub fn divergence_free_residual(
        &self,
        testfn: &TestFunction,
        quad: &QuadratureSpec,
    ) -> FieldResult<f64> {
        let d = self.dim;
        quad.validate(d)?;
        if testfn.dim() != d {
            return Err(FieldError::Domain(format!(
                "test function has dimension {} but the field has {d}",
                testfn.dim()
            )));
        }
        let (lo, hi) = testfn.support_box();
        for k in 0..d {
            if lo[k] < quad.lo[k] || hi[k] > quad.hi[k] {
                return Err(FieldError::Domain(format!(
                    "support [{}, {}] exceeds [{}, {}] along axis {k}",
                    lo[k], hi[k], quad.lo[k], quad.hi[k]
                )));
            }
        }
        if self.bbar.is_none() {
            return Ok(0.0);
        }
        let n = quad.nodes_per_axis;
        let widths: Vec<f64> = (0..d).map(|k| (quad.hi[k] - quad.lo[k]) / n as f64).collect();
        let cell: f64 = widths.iter().product();
        let mut x = vec![0.0; d];
        let mut grad = vec![0.0; d];
        let mut b = vec![0.0; d];
        let mut idx = vec![0usize; d];
        let mut sum = 0.0;
        let total = n.pow(d as u32);
        for _ in 0..total {
            for k in 0..d {
                x[k] = quad.lo[k] + (idx[k] as f64 + 0.5) * widths[k];
            }
            if testfn.gradient_into(&x, &mut grad) {
                self.bbar_into(&x, &mut b);
                check_finite("Bbar", &x, &b)?;
                let r = self.rho(&x)?;
                sum += r * b.iter().zip(&grad).map(|(u, v)| u * v).sum::<f64>();
            }
            for k in 0..d {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(sum * cell)
    }
}

fn fd_row_divergence(
    m: &(dyn Fn(&[f64], &mut [f64]) + Send + Sync),
    x: &[f64],
    step: f64,
    ws: &mut DriftWorkspace,
    d: usize,
) {
    ws.div.iter_mut().for_each(|v| *v = 0.0);
    ws.shifted.copy_from_slice(x);
    for j in 0..d {
        ws.shifted[j] = x[j] + step;
        m(&ws.shifted, &mut ws.mat);
        ws.shifted[j] = x[j] - step;
        m(&ws.shifted, &mut ws.mat2);
        ws.shifted[j] = x[j];
        for i in 0..d {
            ws.div[i] += (ws.mat[i * d + j] - ws.mat2[i * d + j]) / (2.0 * step);
        }
    }
}

/// Box for midpoint-rule quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes_per_axis: usize,
}

impl QuadratureSpec {
    pub fn cube(dim: usize, half_width: f64, nodes_per_axis: usize) -> Self {
        Self { lo: vec![-half_width; dim], hi: vec![half_width; dim], nodes_per_axis }
    }

    fn validate(&self, d: usize) -> FieldResult<()> {
        if self.lo.len() != d || self.hi.len() != d || self.nodes_per_axis == 0 {
            return Err(FieldError::Domain("quadrature box has wrong shape".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(h > l)) {
            return Err(FieldError::Domain("quadrature box is empty".into()));
        }
        Ok(())
    }
}

/// Max absolute entry of a matrix.
pub fn sup_norm(m: &[f64]) -> FieldResult<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FieldError::NonFinite { what: "matrix entry", x: vec![] });
    }
    Ok(m.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())))
}

/// Smallest eigenvalue of a symmetric row-major `d*d` matrix.
///
/// Closed form for `d <= 3`, symmetric QR iteration otherwise. Only the upper
/// triangle is read.
pub fn min_eigenvalue(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => {
            let (a, b, c) = (m[0], m[1], m[3]);
            let mean = 0.5 * (a + c);
            let half = 0.5 * (a - c);
            mean - half.hypot(b)
        }
        3 => min_eigenvalue_3(m),
        _ => {
            let mat = DMatrix::from_fn(d, d, |i, j| if i <= j { m[i * d + j] } else { m[j * d + i] });
            SymmetricEigen::new(mat).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
        }
    }
}

fn min_eigenvalue_3(m: &[f64]) -> f64 {
    let (a11, a12, a13, a22, a23, a33) = (m[0], m[1], m[2], m[4], m[5], m[8]);
    let p1 = a12 * a12 + a13 * a13 + a23 * a23;
    let q = (a11 + a22 + a33) / 3.0;
    if p1 == 0.0 {
        return a11.min(a22).min(a33);
    }
    let p2 = (a11 - q).powi(2) + (a22 - q).powi(2) + (a33 - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let (b11, b22, b33) = ((a11 - q) / p, (a22 - q) / p, (a33 - q) / p);
    let (b12, b13, b23) = (a12 / p, a13 / p, a23 / p);
    let det = b11 * (b22 * b33 - b23 * b23) - b12 * (b12 * b33 - b23 * b13)
        + b13 * (b12 * b23 - b22 * b13);
    let r = (det / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    // eigenvalues q + 2p cos(phi + 2k pi / 3); k = 1 gives the smallest
    q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
}

/// In-place lower Cholesky factor of a row-major `d*d` matrix.
///
/// Returns `false` when the matrix is not positive definite.
pub fn cholesky_in_place(m: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut s = m[j * d + j];
        for k in 0..j {
            s -= m[j * d + k] * m[j * d + k];
        }
        if !(s > 0.0) {
            return false;
        }
        let diag = s.sqrt();
        m[j * d + j] = diag;
        for i in (j + 1)..d {
            let mut t = m[i * d + j];
            for k in 0..j {
                t -= m[i * d + k] * m[j * d + k];
            }
            m[i * d + j] = t / diag;
        }
        for k in (j + 1)..d {
            m[j * d + k] = 0.0;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

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

    fn constant_matrix(d: usize, vals: Vec<f64>) -> CoefficientField {
        CoefficientField::builder(d)
            .diffusion(move |_, m| m.copy_from_slice(&vals))
            .build()
            .unwrap()
    }

    /// Brute force: minimise the Rayleigh quotient over a fine angle grid.
    fn rayleigh_min_2d(m: &[f64]) -> f64 {
        (0..200_000)
            .map(|k| {
                let t = std::f64::consts::PI * k as f64 / 200_000.0;
                let (c, s) = (t.cos(), t.sin());
                m[0] * c * c + 2.0 * m[1] * c * s + m[3] * s * s
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn phi_a_examples() {
        let f = constant_matrix(2, vec![2.0, 0.0, 0.0, 3.0]);
        assert_eq!(f.phi_a(&[0.3, -1.0]).unwrap(), 2.0);
        assert_eq!(flat(3).phi_a(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
        let m = [2.0, 1.0, 1.0, 2.0];
        let oracle = rayleigh_min_2d(&m);
        assert!((oracle - 1.0).abs() < 1e-9);
        let f = constant_matrix(2, m.to_vec());
        assert!((f.phi_a(&[5.0, 5.0]).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn phi_a_non_finite_reports_location() {
        let f = constant_matrix(2, vec![f64::NAN, 0.0, 0.0, 1.0]);
        match f.phi_a(&[1.0, 2.0]) {
            Err(FieldError::NonFinite { x, .. }) => assert_eq!(x, vec![1.0, 2.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn min_eigenvalue_3d_and_higher_match_reference() {
        let m3 = [4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0];
        let reference = {
            let mat = DMatrix::from_row_slice(3, 3, &m3);
            SymmetricEigen::new(mat).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        assert!((min_eigenvalue(&m3, 3) - reference).abs() < 1e-12);
        // block diagonal 4x4: eigenvalues of [[2,1],[1,2]] and diag(5, 0.5)
        let m4 = [
            2.0, 1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.5,
        ];
        assert!((min_eigenvalue(&m4, 4) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(sup_norm(&[0.0, 5.0, -5.0, 0.0]).unwrap(), 5.0);
        assert_eq!(sup_norm(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(sup_norm(&[1.0, -4.0, 4.0, 1.0]).unwrap(), 4.0);
        assert!(sup_norm(&[f64::INFINITY, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn row_divergence_examples() {
        let f = flat(2);
        assert_eq!(f.row_divergence(MatrixPart::A, &[0.4, 0.1]).unwrap(), vec![0.0, 0.0]);

        // C = [[0, x1], [-x1, 0]]: div C^T = (-d2 phi, d1 phi) = (0, 1)
        let g = CoefficientField::builder(2)
            .diffusion(|_, m| m.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]))
            .antisymmetric(|x, m| m.copy_from_slice(&[0.0, x[0], -x[0], 0.0]))
            .derivative_mode(DerivativeMode::CentralDifference)
            .build()
            .unwrap();
        let v = g.row_divergence(MatrixPart::APlusCt, &[0.7, -2.0]).unwrap();
        assert!(v[0].abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9, "{v:?}");

        // B = exp(|x|^2) I at (1, 0): (2e, 0)
        let h = CoefficientField::builder(2)
            .diffusion(|x, m| {
                let s = (x[0] * x[0] + x[1] * x[1]).exp();
                m.copy_from_slice(&[s, 0.0, 0.0, s]);
            })
            .build()
            .unwrap();
        let v = h.row_divergence(MatrixPart::A, &[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((v[0] - 2.0 * e).abs() < 1e-8 && v[1].abs() < 1e-8, "{v:?}");
    }

    #[test]
    fn fd_row_divergence_is_second_order() {
        let f = CoefficientField::builder(2)
            .diffusion(|x, m| {
                let s = (0.5 * x[0]).sin() + 2.0 + x[1] * x[1] * x[1];
                m.copy_from_slice(&[s, 0.1 * x[0] * x[0] * x[0], 0.1 * x[0] * x[0] * x[0], 1.0 + s])
            })
            .div_diffusion(|x, v| {
                v[0] = 0.5 * (0.5 * x[0]).cos() + 0.0;
                v[1] = 0.3 * x[0] * x[0] + 3.0 * x[1] * x[1];
            })
            .build()
            .unwrap();
        let x = [0.8, -0.6];
        let exact = f.row_divergence(MatrixPart::A, &x).unwrap();
        let err = |h: f64| {
            let v = f.row_divergence_fd(MatrixPart::A, &x, h);
            v.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        assert!(e1 / e2 >= 3.0, "{e1} {e2}");
    }

    #[test]
    fn beta_drift_examples() {
        let f = flat(3);
        let s = f.beta_drift(&[1.0, -2.0, 0.3]).unwrap();
        assert!(s.total.iter().all(|v| *v == 0.0));

        // OU density with identity diffusion: beta = -x
        let ou = CoefficientField::builder(2)
            .rho(|x| (-(x[0] * x[0] + x[1] * x[1])).exp())
            .diffusion(|_, m| m.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]))
            .derivative_mode(DerivativeMode::CentralDifference)
            .build()
            .unwrap();
        let s = ou.beta_drift(&[1.0, 0.0]).unwrap();
        assert!((s.beta[0] + 1.0).abs() < 1e-8 && s.beta[1].abs() < 1e-8, "{s:?}");
    }

    #[test]
    fn beta_drift_rejects_nonpositive_density() {
        let f = CoefficientField::builder(2)
            .rho(|x| x[0])
            .diffusion(|_, m| m.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]))
            .build()
            .unwrap();
        assert!(matches!(
            f.beta_drift(&[-1.0, 0.0]),
            Err(FieldError::NonPositiveDensity { .. })
        ));
    }

    #[test]
    fn check_structure_catches_violations() {
        let bad_a = constant_matrix(2, vec![1.0, 0.5, 0.4, 1.0]);
        assert!(bad_a.check_structure(&[0.0, 0.0]).is_err());
        let bad_c = CoefficientField::builder(2)
            .diffusion(|_, m| m.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]))
            .antisymmetric(|_, m| m.copy_from_slice(&[0.0, 1.0, 1.0, 0.0]))
            .build()
            .unwrap();
        assert!(bad_c.check_structure(&[0.0, 0.0]).is_err());
        let indefinite = constant_matrix(2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(indefinite.check_structure(&[0.0, 0.0]).is_err());
        assert!(flat(2).check_structure(&[3.0, 4.0]).is_ok());
        assert!(matches!(
            CoefficientField::builder(1).diffusion(|_, m| m[0] = 1.0).build(),
            Err(FieldError::InvalidDimension(1))
        ));
    }

    #[test]
    fn cholesky_reconstructs() {
        let mut m = vec![4.0, 2.0, 0.4, 2.0, 3.0, 0.1, 0.4, 0.1, 2.0];
        let orig = m.clone();
        assert!(cholesky_in_place(&mut m, 3));
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| m[i * 3 + k] * m[j * 3 + k]).sum();
                assert!((v - orig[i * 3 + j]).abs() < 1e-12);
            }
        }
        let mut bad = vec![1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_in_place(&mut bad, 2));
    }

    #[test]
    fn divergence_free_residual_examples() {
        let bump = TestFunction::gaussian(vec![0.0, 0.0], 0.5, 2.0);
        let quad = QuadratureSpec::cube(2, 2.5, 200);
        assert_eq!(flat(2).divergence_free_residual(&bump, &quad).unwrap(), 0.0);

        let rot = CoefficientField::builder(2)
            .diffusion(|_, m| m.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]))
            .divergence_free_drift(|x, b| {
                b[0] = -x[1];
                b[1] = x[0];
            })
            .build()
            .unwrap();
        assert!(rot.divergence_free_residual(&bump, &quad).unwrap().abs() < 1e-12);

        // Bbar = (x1, 0): int x1 d1 f = -int f
        let shear = CoefficientField::builder(2)
            .diffusion(|_, m| m.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]))
            .divergence_free_drift(|x, b| {
                b[0] = x[0];
                b[1] = 0.0;
            })
            .build()
            .unwrap();
        let r = shear.divergence_free_residual(&bump, &quad).unwrap();
        let mass = bump.integral_midpoint(&quad);
        assert!((r + mass).abs() < 1e-6 * mass, "{r} vs {mass}");
        assert!(r.abs() > 1e-3);

        let small = QuadratureSpec::cube(2, 1.0, 50);
        assert!(matches!(
            shear.divergence_free_residual(&bump, &small),
            Err(FieldError::Domain(_))
        ));
    }
}
