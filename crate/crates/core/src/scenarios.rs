//! Named coefficient families with expected conclusions.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::coeff::{CoefficientField, Factorization, FieldMeta, SingularSet};
use crate::criteria::Classification;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("unknown scenario '{id}'; known ids: {}", known.join(", "))]
    UnknownId { id: String, known: Vec<String> },
    #[error("invalid parameter for '{id}': {detail}")]
    InvalidParam { id: String, detail: String },
}

/// Conclusions that can be predicted for a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Conclusion {
    Conservative,
    MuInvariant,
    MuUniqueInfinitesimal,
    MuUniqueInvariant,
    Dichotomy,
}

impl Conclusion {
    pub fn as_str(self) -> &'static str {
        match self {
            Conclusion::Conservative => "conservative",
            Conclusion::MuInvariant => "mu_invariant",
            Conclusion::MuUniqueInfinitesimal => "mu_unique_infinitesimal",
            Conclusion::MuUniqueInvariant => "mu_unique_invariant",
            Conclusion::Dichotomy => "dichotomy",
        }
    }
}

impl Conclusion {
    /// Value of this conclusion in a classification, as a label.
    pub fn observed(self, c: &Classification) -> &'static str {
        match self {
            Conclusion::Conservative => c.conservative.value.as_str(),
            Conclusion::MuInvariant => c.mu_invariant.value.as_str(),
            Conclusion::MuUniqueInfinitesimal => c.mu_unique_infinitesimal.value.as_str(),
            Conclusion::MuUniqueInvariant => c.mu_unique_invariant.value.as_str(),
            Conclusion::Dichotomy => c.dichotomy.value.as_str(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Expectation {
    pub conclusion: Conclusion,
    /// Same vocabulary as the classification (`yes`, `no`, `recurrent`, ...).
    pub value: &'static str,
    /// Which result predicts the value.
    pub anchor: &'static str,
}

fn expect(conclusion: Conclusion, value: &'static str, anchor: &'static str) -> Expectation {
    Expectation { conclusion, value, anchor }
}

/// Scenario parameters; unused ones are ignored by a given family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Params {
    pub dim: usize,
    /// Integrability exponent of the bump chain, `p > d`.
    pub p: Option<f64>,
    /// Logarithmic exponent of the Davies family, `beta > 1`.
    pub beta: Option<f64>,
    /// Potential preset for the gradient-drift family: `bounded` or `finite`.
    pub preset: Option<String>,
}

impl Params {
    pub fn dim(dim: usize) -> Self {
        Self { dim, p: None, beta: None, preset: None }
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = Some(p);
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn with_preset(mut self, preset: &str) -> Self {
        self.preset = Some(preset.to_string());
        self
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::dim(2)
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub id: &'static str,
    pub params: Params,
    pub field: CoefficientField,
    pub expected: Vec<Expectation>,
    /// Largest radius at which the coefficients stay in floating-point range.
    pub r_max: f64,
    /// Tamed Euler steps are the default for singular drifts.
    pub taming: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamSchema {
    pub name: &'static str,
    pub default: &'static str,
    pub description: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub description: &'static str,
    pub params: Vec<ParamSchema>,
    pub expected: String,
}

const DIM: ParamSchema = ParamSchema { name: "dim", default: "2", description: "dimension, >= 2" };
const P: ParamSchema = ParamSchema { name: "p", default: "3 (d = 2), d + 1 otherwise", description: "integrability exponent, > d" };

pub const IDS: [&str; 7] = [
    "flat-bm",
    "gaussian-ou",
    "example-4.3",
    "gradient-drift",
    "bump-chain-gradient",
    "bump-chain-antisymmetric",
    "davies",
];

pub fn list() -> Vec<CatalogEntry> {
    let entry = |id: &'static str, description: &'static str, params: Vec<ParamSchema>| {
        let expected = build(id, &Params::default())
            .map(|s| {
                s.expected
                    .iter()
                    .map(|e| format!("{}={}", e.conclusion.as_str(), e.value))
                    .collect::<Vec<_>>()
                    .join(", ")
            })
            .unwrap_or_default();
        CatalogEntry { id, description, params, expected }
    };
    vec![
        entry("flat-bm", "Brownian motion: rho = 1, A = I", vec![DIM]),
        entry("gaussian-ou", "Ornstein-Uhlenbeck: rho = exp(-|x|^2), A = I", vec![DIM]),
        entry("example-4.3", "rho = exp(-|x|^2), A = exp(|x|^2) I, zero drift", vec![DIM]),
        entry(
            "gradient-drift",
            "A = I, rho = exp(2 phi), drift grad phi",
            vec![
                DIM,
                ParamSchema {
                    name: "preset",
                    default: "bounded",
                    description: "bounded: phi = sin(x1) cos(x2) / 2; finite: phi = -|x|^2",
                },
            ],
        ),
        entry("bump-chain-gradient", "A = I, rho = exp(2 phi) with a chain of singular bumps", vec![DIM, P]),
        entry("bump-chain-antisymmetric", "rho = 1, A = I, c_1d = phi = -c_d1 with the bump chain", vec![DIM, P]),
        entry(
            "davies",
            "rho = 1, A = (1 + |x|^2) ln(1 + |x|)^beta I",
            vec![DIM, ParamSchema { name: "beta", default: "2", description: "log exponent, > 1" }],
        ),
    ]
}

fn identity(d: usize) -> impl Fn(&[f64], &mut [f64]) + Send + Sync + Clone {
    move |_: &[f64], m: &mut [f64]| {
        m.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
    }
}

fn scaled_identity(d: usize, m: &mut [f64], s: f64) {
    m.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..d {
        m[i * d + i] = s;
    }
}

fn sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dichotomy_by_dim(d: usize, anchor: &'static str) -> Expectation {
    expect(Conclusion::Dichotomy, if d == 2 { "recurrent" } else { "transient" }, anchor)
}

pub fn build(id: &str, params: &Params) -> Result<Scenario, ScenarioError> {
    let d = params.dim;
    let invalid = |detail: String| ScenarioError::InvalidParam { id: id.to_string(), detail };
    if d < 2 {
        return Err(invalid(format!("dim must be >= 2, got {d}")));
    }
    let meta_flat = FieldMeta { lebesgue: true, identity_diffusion: true, factorization: None };
    let scenario = |id: &'static str, field: CoefficientField, expected, r_max, taming| Scenario {
        id,
        params: params.clone(),
        field,
        expected,
        r_max,
        taming,
    };
    let built = match id {
        "flat-bm" => {
            let field = CoefficientField::builder(d)
                .diffusion(identity(d))
                .div_diffusion(|_, v| v.iter_mut().for_each(|e| *e = 0.0))
                .grad_log_rho(|_, v| v.iter_mut().for_each(|e| *e = 0.0))
                .meta(meta_flat)
                .build()
                .map_err(|e| invalid(e.to_string()))?;
            let expected = vec![
                expect(Conclusion::Conservative, "yes", "THM31_I: constant coefficients, polynomial volume"),
                expect(Conclusion::MuInvariant, "yes", "THM31_I: conservativeness makes mu invariant"),
                dichotomy_by_dim(d, "THM43: uniform bounds with bounded density"),
                expect(Conclusion::MuUniqueInvariant, "yes", "PROP44_I: bounded density and coefficients"),
            ];
            scenario("flat-bm", field, expected, 1024.0, false)
        }
        "gaussian-ou" => {
            let field = CoefficientField::builder(d)
                .rho(|x| (-sq(x)).exp())
                .grad_log_rho(|x, v| v.iter_mut().zip(x).for_each(|(o, xi)| *o = -2.0 * xi))
                .diffusion(identity(d))
                .div_diffusion(|_, v| v.iter_mut().for_each(|e| *e = 0.0))
                .meta(FieldMeta { lebesgue: false, identity_diffusion: true, factorization: None })
                .build()
                .map_err(|e| invalid(e.to_string()))?;
            let expected = vec![
                expect(Conclusion::Conservative, "yes", "THM31_I / THM33 with finite mu"),
                expect(Conclusion::Dichotomy, "recurrent", "THM33: log growth bound with finite mu"),
                expect(Conclusion::MuUniqueInvariant, "yes", "recurrence implies uniqueness"),
            ];
            // exp(-|x|^2) leaves the normal range just past |x| = 26.6
            scenario("gaussian-ou", field, expected, 26.0, false)
        }
        "example-4.3" => {
            let field = CoefficientField::builder(d)
                .rho(|x| (-sq(x)).exp())
                .grad_log_rho(|x, v| v.iter_mut().zip(x).for_each(|(o, xi)| *o = -2.0 * xi))
                .diffusion(move |x, m| scaled_identity(d, m, sq(x).exp()))
                .div_diffusion(|x, v| {
                    let e = sq(x).exp();
                    v.iter_mut().zip(x).for_each(|(o, xi)| *o = 2.0 * xi * e);
                })
                .meta(FieldMeta {
                    lebesgue: false,
                    identity_diffusion: false,
                    factorization: Some(Factorization {
                        a_tilde: Arc::new(identity(d)),
                        c_tilde: Arc::new(|_: &[f64], m: &mut [f64]| m.iter_mut().for_each(|v| *v = 0.0)),
                    }),
                })
                .build()
                .map_err(|e| invalid(e.to_string()))?;
            let mut expected = vec![
                expect(Conclusion::MuUniqueInfinitesimal, "yes", "S2: rho A = I"),
                dichotomy_by_dim(d, "THM43: uniform bounds with bounded density"),
            ];
            if d >= 3 {
                expected.push(expect(Conclusion::Conservative, "no", "THM43: d >= 3, bounded integrable density"));
                expected.push(expect(
                    Conclusion::MuUniqueInvariant,
                    "no-invariant-exists",
                    "THM43: d >= 3, bounded integrable density",
                ));
            }
            // exp(|x|^2) overflows just past |x| = 26.6
            scenario("example-4.3", field, expected, 26.0, false)
        }
        "gradient-drift" => {
            let preset = params.preset.as_deref().unwrap_or("bounded");
            match preset {
                "bounded" => {
                    let phi = |x: &[f64]| 0.5 * x[0].sin() * x[1].cos();
                    let grad = |x: &[f64], g: &mut [f64]| {
                        g.iter_mut().for_each(|v| *v = 0.0);
                        g[0] = 0.5 * x[0].cos() * x[1].cos();
                        g[1] = -0.5 * x[0].sin() * x[1].sin();
                    };
                    let field = gradient_drift_field(d, phi, grad).map_err(|e| invalid(e.to_string()))?;
                    let expected = vec![
                        expect(Conclusion::Conservative, "yes", "THM31_I: bounded density, A = I"),
                        expect(Conclusion::MuUniqueInvariant, "yes", "PROP44_I: bounded potential"),
                        dichotomy_by_dim(d, "THM43: uniform bounds with bounded density"),
                    ];
                    scenario("gradient-drift", field, expected, 1024.0, false)
                }
                "finite" => {
                    let field = gradient_drift_field(d, |x| -sq(x), |x, g| {
                        g.iter_mut().zip(x).for_each(|(o, xi)| *o = -2.0 * xi)
                    })
                    .map_err(|e| invalid(e.to_string()))?;
                    let expected = vec![
                        expect(Conclusion::Conservative, "yes", "THM33 with finite mu"),
                        expect(Conclusion::Dichotomy, "recurrent", "THM33: log growth bound with finite mu"),
                        expect(Conclusion::MuUniqueInvariant, "yes", "recurrence implies uniqueness"),
                    ];
                    scenario("gradient-drift", field, expected, 16.0, false)
                }
                other => return Err(invalid(format!("preset must be 'bounded' or 'finite', got '{other}'"))),
            }
        }
        "bump-chain-gradient" | "bump-chain-antisymmetric" => {
            let p = params.p.unwrap_or(if d == 2 { 3.0 } else { d as f64 + 1.0 });
            if !(p > d as f64) {
                return Err(invalid(format!("p must exceed the dimension {d}, got {p}")));
            }
            let chain = BumpChain::new(d, p);
            if id == "bump-chain-gradient" {
                let (c1, c2) = (chain.clone(), chain.clone());
                let field = CoefficientField::builder(d)
                    .rho(move |x| (2.0 * c1.phi(x)).exp())
                    .grad_log_rho(move |x, g| {
                        c2.grad_phi(x, g);
                        g.iter_mut().for_each(|v| *v *= 2.0);
                    })
                    .diffusion(identity(d))
                    .div_diffusion(|_, v| v.iter_mut().for_each(|e| *e = 0.0))
                    .singular_set(Arc::new(BumpCenters))
                    .meta(FieldMeta { lebesgue: false, identity_diffusion: true, factorization: None })
                    .build()
                    .map_err(|e| invalid(e.to_string()))?;
                let expected = vec![
                    expect(Conclusion::MuUniqueInvariant, "yes", "PROP44_I: 1 <= phi <= 1 + sup psi"),
                    expect(Conclusion::Conservative, "yes", "THM31_I: bounded density, A = I"),
                    dichotomy_by_dim(d, "THM43: uniform bounds with bounded density"),
                ];
                scenario("bump-chain-gradient", field, expected, 1024.0, true)
            } else {
                let (c1, c2) = (chain.clone(), chain.clone());
                let field = CoefficientField::builder(d)
                    .diffusion(identity(d))
                    .div_diffusion(|_, v| v.iter_mut().for_each(|e| *e = 0.0))
                    .grad_log_rho(|_, v| v.iter_mut().for_each(|e| *e = 0.0))
                    .antisymmetric(move |x, m| {
                        m.iter_mut().for_each(|v| *v = 0.0);
                        let f = c1.phi(x);
                        m[d - 1] = f;
                        m[(d - 1) * d] = -f;
                    })
                    .div_antisymmetric(move |x, v| {
                        let mut g = vec![0.0; d];
                        c2.grad_phi(x, &mut g);
                        v.iter_mut().for_each(|e| *e = 0.0);
                        v[0] = g[d - 1];
                        v[d - 1] = -g[0];
                    })
                    .singular_set(Arc::new(BumpCenters))
                    .meta(meta_flat)
                    .build()
                    .map_err(|e| invalid(e.to_string()))?;
                let expected = vec![
                    expect(Conclusion::MuUniqueInvariant, "yes", "PROP44_I: rho = 1, A = I, bounded C"),
                    expect(Conclusion::Conservative, "yes", "THM31_I: bounded C"),
                    dichotomy_by_dim(d, "THM43: uniform bounds with bounded density"),
                ];
                scenario("bump-chain-antisymmetric", field, expected, 1024.0, true)
            }
        }
        "davies" => {
            let beta = params.beta.unwrap_or(2.0);
            if !(beta > 1.0) {
                return Err(invalid(format!("beta must exceed 1, got {beta}")));
            }
            let field = CoefficientField::builder(d)
                .diffusion(move |x, m| {
                    let r = sq(x).sqrt();
                    scaled_identity(d, m, (1.0 + r * r) * r.ln_1p().powf(beta));
                })
                .div_diffusion(move |x, v| {
                    let r = sq(x).sqrt();
                    if r == 0.0 {
                        v.iter_mut().for_each(|e| *e = 0.0);
                        return;
                    }
                    let l = r.ln_1p();
                    let dr = 2.0 * r * l.powf(beta) + (1.0 + r * r) * beta * l.powf(beta - 1.0) / (1.0 + r);
                    v.iter_mut().zip(x).for_each(|(o, xi)| *o = dr * xi / r);
                })
                .grad_log_rho(|_, v| v.iter_mut().for_each(|e| *e = 0.0))
                .meta(FieldMeta { lebesgue: true, identity_diffusion: false, factorization: None })
                .build()
                .map_err(|e| invalid(e.to_string()))?;
            let expected = vec![expect(Conclusion::Conservative, "no", "superquadratic diffusion growth with mu = dx")];
            scenario("davies", field, expected, 1024.0, false)
        }
        _ => {
            return Err(ScenarioError::UnknownId {
                id: id.to_string(),
                known: IDS.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    Ok(built)
}

/// Gradient drift field `A = I`, `rho = exp(2 phi)` for a user potential.
pub fn gradient_drift_field(
    d: usize,
    phi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    grad_phi: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
) -> Result<CoefficientField, crate::coeff::FieldError> {
    CoefficientField::builder(d)
        .rho(move |x| (2.0 * phi(x)).exp())
        .grad_log_rho(move |x, g| {
            grad_phi(x, g);
            g.iter_mut().for_each(|v| *v *= 2.0);
        })
        .diffusion(identity(d))
        .div_diffusion(|_, v| v.iter_mut().for_each(|e| *e = 0.0))
        .meta(FieldMeta { lebesgue: false, identity_diffusion: true, factorization: None })
        .build()
}

/// Gaussian density with the rotation drift `Bbar = (-x2, x1, 0, ...)`,
/// which is `mu`-divergence free. Not part of the catalog.
pub fn rotating_gaussian(d: usize) -> Result<CoefficientField, crate::coeff::FieldError> {
    CoefficientField::builder(d)
        .rho(|x| (-sq(x)).exp())
        .grad_log_rho(|x, v| v.iter_mut().zip(x).for_each(|(o, xi)| *o = -2.0 * xi))
        .diffusion(identity(d))
        .div_diffusion(|_, v| v.iter_mut().for_each(|e| *e = 0.0))
        .divergence_free_drift(|x, b| {
            b.iter_mut().for_each(|v| *v = 0.0);
            b[0] = -x[1];
            b[1] = x[0];
        })
        .meta(FieldMeta { lebesgue: false, identity_diffusion: true, factorization: None })
        .build()
}

/// `phi(x) = 1 + sum_{k >= 0} psi(x - k e1)` with `psi = eta(|x|) |x|^gamma`.
#[derive(Clone, Debug)]
pub struct BumpChain {
    pub gamma: f64,
}

impl BumpChain {
    pub fn new(d: usize, p: f64) -> Self {
        Self { gamma: 2.0 * (1.0 - d as f64 / p) }
    }

    /// C^1 cutoff: 1 on `[0, 1/4]`, 0 on `[1/2, inf)`, cubic in between.
    pub fn eta(t: f64) -> (f64, f64) {
        if t <= 0.25 {
            (1.0, 0.0)
        } else if t >= 0.5 {
            (0.0, 0.0)
        } else {
            let s = (t - 0.25) * 4.0;
            (1.0 - 3.0 * s * s + 2.0 * s * s * s, (-6.0 * s + 6.0 * s * s) * 4.0)
        }
    }

    /// Radial profile `psi(r)` and its derivative.
    pub fn psi(&self, r: f64) -> (f64, f64) {
        let (e, de) = Self::eta(r);
        if e == 0.0 && de == 0.0 {
            return (0.0, 0.0);
        }
        let rg = r.powf(self.gamma);
        let drg = if r > 0.0 { self.gamma * r.powf(self.gamma - 1.0) } else { f64::INFINITY };
        (e * rg, de * rg + e * drg)
    }

    /// Upper bound of `psi`, attained on `[0, 1/2]`.
    pub fn psi_max(&self) -> f64 {
        (0..=2000).map(|k| self.psi(0.5 * k as f64 / 2000.0).0).fold(0.0, f64::max)
    }

    /// Index and offset of the only bump that can be nonzero at `x`.
    fn nearest(x: &[f64]) -> (f64, f64) {
        let k = x[0].round().max(0.0);
        let r2 = (x[0] - k).powi(2) + x[1..].iter().map(|v| v * v).sum::<f64>();
        (k, r2.sqrt())
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        let (_, r) = Self::nearest(x);
        1.0 + self.psi(r).0
    }

    /// Gradient of `phi`; zero at a bump center where it is undefined.
    pub fn grad_phi(&self, x: &[f64], g: &mut [f64]) {
        let (k, r) = Self::nearest(x);
        g.iter_mut().for_each(|v| *v = 0.0);
        if r == 0.0 || r >= 0.5 {
            return;
        }
        let (_, dpsi) = self.psi(r);
        g[0] = dpsi * (x[0] - k) / r;
        for i in 1..x.len() {
            g[i] = dpsi * x[i] / r;
        }
    }
}

/// Bump centers `k e1`, `k = 0, 1, 2, ...`.
#[derive(Clone, Copy, Debug)]
pub struct BumpCenters;

impl SingularSet for BumpCenters {
    fn distance(&self, x: &[f64]) -> f64 {
        BumpChain::nearest(x).1
    }

    fn points_within(&self, radius: f64, dim: usize) -> Vec<Vec<f64>> {
        (0..=radius.floor() as usize)
            .map(|k| {
                let mut p = vec![0.0; dim];
                p[0] = k as f64;
                p
            })
            .collect()
    }
}
