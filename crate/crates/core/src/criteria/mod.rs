//! Sampled evaluation of the explicit hypotheses behind the conservativeness,
//! uniqueness and recurrence criteria, and the rule-based classifier that
//! combines them.

mod checks;
mod classify;
pub mod growth;
pub mod quadrature;
pub mod sampling;

use std::collections::BTreeMap;

use serde::{Serialize, Serializer};
use thiserror::Error;

pub use checks::{
    check_comparison, check_prop44, check_s2, check_thm31_i, check_thm31_ii, check_thm33,
    check_thm43, evaluate_all, mu_finiteness, Comparison, CriteriaReport, Prop44Variant,
};
pub use classify::{
    classify, Classification, ConsistencyError, Dichotomy, Finiteness, MuFiniteness, Resolved,
    Tri, UniqueInvariant,
};
pub use quadrature::TailQuadratureSpec;
pub use sampling::SamplingSpec;

/// Identifiers of the evaluated criteria.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CriterionId {
    /// Volume growth plus pointwise coefficient growth below `|x|^{2 alpha}`.
    GrowthVolume,
    /// Weighted coefficient integrability.
    Integrability,
    /// Coefficient growth below `(|x| ln|x|)^2`.
    LogGrowth,
    /// Uniform ellipticity and boundedness of `rho A` and `rho C`.
    UniformBounds,
    /// Uniform bounds plus a one-sided bound on the density.
    DimensionDichotomy,
    /// Two-sided bounded density with uniformly elliptic, bounded coefficients.
    BoundedDensity,
    /// Polynomially bounded density with factored coefficients.
    FactoredDensity,
    Takeda,
    Sturm,
    Sectorial,
}

impl CriterionId {
    pub const ALL: [CriterionId; 10] = [
        CriterionId::GrowthVolume,
        CriterionId::Integrability,
        CriterionId::LogGrowth,
        CriterionId::UniformBounds,
        CriterionId::DimensionDichotomy,
        CriterionId::BoundedDensity,
        CriterionId::FactoredDensity,
        CriterionId::Takeda,
        CriterionId::Sturm,
        CriterionId::Sectorial,
    ];

    pub fn code(self) -> &'static str {
        match self {
            CriterionId::GrowthVolume => "THM31_I",
            CriterionId::Integrability => "THM31_II",
            CriterionId::LogGrowth => "THM33",
            CriterionId::UniformBounds => "S2",
            CriterionId::DimensionDichotomy => "THM43",
            CriterionId::BoundedDensity => "PROP44_I",
            CriterionId::FactoredDensity => "PROP44_II",
            CriterionId::Takeda => "CMP_TAKEDA",
            CriterionId::Sturm => "CMP_STURM",
            CriterionId::Sectorial => "CMP_SECTORIAL",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }

    /// Short statement of the hypothesis and what it implies.
    pub fn anchor(self) -> &'static str {
        match self {
            CriterionId::GrowthVolume => {
                "mu(B_r) <= c1 r^beta + c2 and |A| + |C|^2/Phi_A + |Bbar|^2 <= C1 |x|^(2 alpha), alpha < 1 => conservative, mu invariant"
            }
            CriterionId::Integrability => {
                "(|A| + |C|^2/Phi_A)/(1+|x|^2) + |Bbar|/(1+|x|) in L1(mu) => conservative, mu invariant"
            }
            CriterionId::LogGrowth => {
                "<Ax,x>/|x|^2 + |C|^2/Phi_A + |<Bbar,x>| ln|x| <= K (|x| ln|x|)^2 => Lr-unique, recurrent if mu finite"
            }
            CriterionId::UniformBounds => {
                "Bbar = 0, theta <= rho A <= M, |rho C| <= M => mu unique infinitesimally invariant"
            }
            CriterionId::DimensionDichotomy => {
                "uniform bounds and rho or 1/rho bounded => recurrent if d = 2, transient if d >= 3; no invariant measure if also d >= 3 and rho bounded integrable"
            }
            CriterionId::BoundedDensity => {
                "c1 <= rho <= c2, lambda <= A <= Lambda, |C| <= Lambda => mu unique invariant"
            }
            CriterionId::FactoredDensity => {
                "c1/(1+|x|)^(2 alpha) <= rho <= c2 (1+|x|^delta), A = Atilde/rho, C = Ctilde/rho => mu unique invariant"
            }
            CriterionId::Takeda => "sup eig A <= M (2+|x|)^2 ln(2+|x|), mu = dx => conservative",
            CriterionId::Sturm => "int_1^inf r / ln mu(B_r) dr = inf, A = id => conservative",
            CriterionId::Sectorial => {
                "<Ax,x>/|x|^2 + |<div C,x>| <= M (|x|^2+1)(ln(|x|^2+1)+1), mu = dx => conservative"
            }
        }
    }

    /// Comparison criteria are reported but never feed the classifier.
    pub fn is_advisory(self) -> bool {
        matches!(self, CriterionId::Takeda | CriterionId::Sturm | CriterionId::Sectorial)
    }
}

impl Serialize for CriterionId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    FailsOnWitness,
    Undetermined,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::FailsOnWitness => "fails-on-witness",
            Verdict::Undetermined => "undetermined",
        }
    }
}

impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

/// Sample at which a bound is violated, with both sides of the inequality.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub radius: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriterionVerdict {
    pub id: CriterionId,
    pub anchor: &'static str,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub constants: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl CriterionVerdict {
    pub(crate) fn new(id: CriterionId, verdict: Verdict) -> Self {
        Self {
            id,
            anchor: id.anchor(),
            verdict,
            witness: None,
            constants: BTreeMap::new(),
            notes: vec![],
        }
    }

    pub(crate) fn constant(mut self, key: &str, v: f64) -> Self {
        self.constants.insert(key.to_string(), v);
        self
    }

    pub(crate) fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }

    pub(crate) fn with_witness(mut self, w: Witness) -> Self {
        self.witness = Some(w);
        self
    }

    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Holds
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeConstants {
    pub c1: f64,
    pub c2: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoeffConstants {
    pub c1: f64,
    pub alpha: f64,
    pub n0: f64,
}

/// Fitted constants of the volume and pointwise growth bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthFit {
    pub radii: Vec<f64>,
    pub volume_constants: Option<VolumeConstants>,
    pub coeff_constants: Option<CoeffConstants>,
    /// Per-radius slack of the pointwise bound; negative means violated.
    pub margins: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriteriaError {
    #[error("precondition failed for {criterion}: {detail}")]
    Precondition { criterion: &'static str, detail: String },
    #[error("evaluation error in {criterion}: {detail}")]
    Evaluation { criterion: &'static str, detail: String },
}
