//! Rule-based combination of criterion verdicts into conclusions.

use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use super::{CriterionId, CriterionVerdict, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tri {
    Yes,
    No,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UniqueInvariant {
    Yes,
    NoInvariantExists,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dichotomy {
    Recurrent,
    Transient,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Finiteness {
    Finite,
    Infinite,
    Unknown,
}

macro_rules! labelled {
    ($t:ty { $($v:ident => $s:literal),* $(,)? }) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$v => $s),* }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }
    };
}

labelled!(Tri { Yes => "yes", No => "no", Unknown => "unknown" });
labelled!(UniqueInvariant { Yes => "yes", NoInvariantExists => "no-invariant-exists", Unknown => "unknown" });
labelled!(Dichotomy { Recurrent => "recurrent", Transient => "transient", Unknown => "unknown" });
labelled!(Finiteness { Finite => "finite", Infinite => "infinite", Unknown => "unknown" });

/// Quadrature-based decision on whether `mu` is finite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MuFiniteness {
    pub state: Finiteness,
    /// Mass of the sampled ball.
    pub estimate: f64,
    pub tail_slope: f64,
}

impl MuFiniteness {
    pub fn unknown() -> Self {
        Self { state: Finiteness::Unknown, estimate: f64::NAN, tail_slope: f64::NAN }
    }
}

/// A conclusion with the rules that produced it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved<T> {
    pub value: T,
    pub provenance: Vec<String>,
}

impl<T> Resolved<T> {
    fn unknown(value: T) -> Self {
        Self { value, provenance: vec![] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Classification {
    pub conservative: Resolved<Tri>,
    pub mu_invariant: Resolved<Tri>,
    pub mu_unique_infinitesimal: Resolved<Tri>,
    pub mu_unique_invariant: Resolved<UniqueInvariant>,
    pub dichotomy: Resolved<Dichotomy>,
    pub l1_unique: Resolved<Tri>,
    pub mu_finite: Resolved<Finiteness>,
    pub mu_mass_estimate: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("inconsistent derivations for {field}: {first_value} ({first}) vs {second_value} ({second})")]
pub struct ConsistencyError {
    pub field: &'static str,
    pub first_value: String,
    pub first: String,
    pub second_value: String,
    pub second: String,
}

trait Unknown: Copy + PartialEq + fmt::Display {
    const UNKNOWN: Self;
}
impl Unknown for Tri {
    const UNKNOWN: Self = Tri::Unknown;
}
impl Unknown for UniqueInvariant {
    const UNKNOWN: Self = UniqueInvariant::Unknown;
}
impl Unknown for Dichotomy {
    const UNKNOWN: Self = Dichotomy::Unknown;
}

/// Sets a conclusion; returns whether anything changed.
fn set<T: Unknown>(
    name: &'static str,
    slot: &mut Resolved<T>,
    value: T,
    why: &str,
) -> Result<bool, ConsistencyError> {
    if slot.value == T::UNKNOWN {
        slot.value = value;
        slot.provenance.push(why.to_string());
        return Ok(true);
    }
    if slot.value != value {
        return Err(ConsistencyError {
            field: name,
            first_value: slot.value.to_string(),
            first: slot.provenance.join("; "),
            second_value: value.to_string(),
            second: why.to_string(),
        });
    }
    Ok(false)
}

fn holds(verdicts: &[CriterionVerdict], id: CriterionId) -> Option<&CriterionVerdict> {
    verdicts.iter().find(|v| v.id == id && v.verdict == Verdict::Holds)
}

/// Applies the implication rules until nothing changes.
///
/// Failed criteria carry no information: the hypotheses are sufficient, not
/// necessary. Comparison criteria are ignored.
pub fn classify(
    dim: usize,
    verdicts: &[CriterionVerdict],
    mu_finite: &MuFiniteness,
) -> Result<Classification, ConsistencyError> {
    let mut c = Classification {
        conservative: Resolved::unknown(Tri::Unknown),
        mu_invariant: Resolved::unknown(Tri::Unknown),
        mu_unique_infinitesimal: Resolved::unknown(Tri::Unknown),
        mu_unique_invariant: Resolved::unknown(UniqueInvariant::Unknown),
        dichotomy: Resolved::unknown(Dichotomy::Unknown),
        l1_unique: Resolved::unknown(Tri::Unknown),
        mu_finite: Resolved {
            value: mu_finite.state,
            provenance: vec!["shell quadrature of mu".into()],
        },
        mu_mass_estimate: mu_finite.estimate,
    };
    let finite = mu_finite.state == Finiteness::Finite;

    // direct consequences of criteria
    for id in [CriterionId::GrowthVolume, CriterionId::Integrability] {
        if holds(verdicts, id).is_some() {
            let why = format!("{} holds", id.code());
            set("conservative", &mut c.conservative, Tri::Yes, &why)?;
            set("mu_invariant", &mut c.mu_invariant, Tri::Yes, &why)?;
            set("l1_unique", &mut c.l1_unique, Tri::Yes, &why)?;
        }
    }
    if holds(verdicts, CriterionId::LogGrowth).is_some() && finite {
        set("dichotomy", &mut c.dichotomy, Dichotomy::Recurrent, "THM33 holds and mu finite")?;
    }
    if holds(verdicts, CriterionId::UniformBounds).is_some() {
        set("mu_unique_infinitesimal", &mut c.mu_unique_infinitesimal, Tri::Yes, "S2 holds")?;
    }
    if let Some(v) = holds(verdicts, CriterionId::DimensionDichotomy) {
        if dim == 2 {
            set("dichotomy", &mut c.dichotomy, Dichotomy::Recurrent, "THM43 holds, d = 2")?;
        } else if dim >= 3 {
            set("dichotomy", &mut c.dichotomy, Dichotomy::Transient, "THM43 holds, d >= 3")?;
            let bounded = v.constants.get("rho_upper_bounded").copied() == Some(1.0);
            if finite && bounded {
                let why = "THM43 holds, d >= 3, rho bounded and integrable";
                set("conservative", &mut c.conservative, Tri::No, why)?;
                set("mu_invariant", &mut c.mu_invariant, Tri::No, why)?;
                set(
                    "mu_unique_invariant",
                    &mut c.mu_unique_invariant,
                    UniqueInvariant::NoInvariantExists,
                    why,
                )?;
            }
        }
    }
    for id in [CriterionId::BoundedDensity, CriterionId::FactoredDensity] {
        if holds(verdicts, id).is_some() {
            let why = format!("{} holds", id.code());
            set("mu_unique_invariant", &mut c.mu_unique_invariant, UniqueInvariant::Yes, &why)?;
            set("mu_unique_infinitesimal", &mut c.mu_unique_infinitesimal, Tri::Yes, &why)?;
            set("mu_invariant", &mut c.mu_invariant, Tri::Yes, &why)?;
            set("conservative", &mut c.conservative, Tri::Yes, &why)?;
        }
    }

    // closure under the general equivalences
    loop {
        let mut changed = false;
        if finite {
            if c.conservative.value == Tri::Yes {
                changed |= set("dichotomy", &mut c.dichotomy, Dichotomy::Recurrent, "mu finite and conservative")?;
                changed |= set("mu_invariant", &mut c.mu_invariant, Tri::Yes, "mu finite and conservative")?;
            }
            if c.conservative.value == Tri::No {
                changed |= set("dichotomy", &mut c.dichotomy, Dichotomy::Transient, "mu finite and not conservative")?;
                changed |= set("mu_invariant", &mut c.mu_invariant, Tri::No, "mu finite and not conservative")?;
            }
            if c.dichotomy.value == Dichotomy::Recurrent {
                changed |= set("conservative", &mut c.conservative, Tri::Yes, "mu finite and recurrent")?;
            }
            if c.dichotomy.value == Dichotomy::Transient {
                changed |= set("conservative", &mut c.conservative, Tri::No, "mu finite and transient")?;
            }
            match c.mu_invariant.value {
                Tri::Yes => changed |= set("conservative", &mut c.conservative, Tri::Yes, "mu finite and invariant")?,
                Tri::No => changed |= set("conservative", &mut c.conservative, Tri::No, "mu finite and not invariant")?,
                Tri::Unknown => {}
            }
        }
        if c.dichotomy.value == Dichotomy::Recurrent {
            let why = "recurrence implies uniqueness";
            changed |= set("mu_unique_infinitesimal", &mut c.mu_unique_infinitesimal, Tri::Yes, why)?;
            changed |= set("mu_unique_invariant", &mut c.mu_unique_invariant, UniqueInvariant::Yes, why)?;
            changed |= set("mu_invariant", &mut c.mu_invariant, Tri::Yes, why)?;
        }
        match c.mu_unique_invariant.value {
            UniqueInvariant::Yes => {
                changed |= set("mu_invariant", &mut c.mu_invariant, Tri::Yes, "mu is the unique invariant measure")?
            }
            UniqueInvariant::NoInvariantExists => {
                changed |= set("mu_invariant", &mut c.mu_invariant, Tri::No, "no invariant measure exists")?
            }
            UniqueInvariant::Unknown => {}
        }
        match (c.mu_invariant.value, c.l1_unique.value) {
            (Tri::Yes, _) => changed |= set("l1_unique", &mut c.l1_unique, Tri::Yes, "mu invariant")?,
            (_, Tri::Yes) => changed |= set("mu_invariant", &mut c.mu_invariant, Tri::Yes, "L1-unique")?,
            _ => {}
        }
        if c.mu_invariant.value == Tri::No && c.l1_unique.value == Tri::Yes {
            return Err(ConsistencyError {
                field: "l1_unique",
                first_value: "yes".into(),
                first: c.l1_unique.provenance.join("; "),
                second_value: "mu not invariant".into(),
                second: c.mu_invariant.provenance.join("; "),
            });
        }
        if !changed {
            break;
        }
    }
    Ok(c)
}
