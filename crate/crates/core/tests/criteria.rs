use std::collections::BTreeMap;

use divlab::coeff::{CoefficientField, FieldMeta};
use divlab::criteria::*;
use divlab::scenarios::{build, Params};
use proptest::prelude::*;

fn scalar_field(d: usize, a: impl Fn(f64) -> f64 + Send + Sync + 'static) -> CoefficientField {
    CoefficientField::builder(d)
        .diffusion(move |x, m| {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            m.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..d {
                m[i * d + i] = a(r);
            }
        })
        .meta(FieldMeta { lebesgue: true, identity_diffusion: false, factorization: None })
        .build()
        .unwrap()
}

fn scenario(id: &str, d: usize) -> (CoefficientField, SamplingSpec) {
    let s = build(id, &Params::dim(d)).unwrap();
    let spec = SamplingSpec::default().with_r_max(s.r_max);
    (s.field, spec)
}

fn assert_witness(v: &CriterionVerdict) {
    assert_eq!(v.verdict, Verdict::FailsOnWitness, "{:?}", v);
    let w = v.witness.as_ref().expect("failing verdict carries a witness");
    assert!(w.lhs > w.rhs, "witness must violate the bound: {w:?}");
    assert!(w.point.iter().all(|x| x.is_finite()));
}

#[test]
fn growth_volume_flat_holds_with_zero_exponent() {
    let (f, spec) = scenario("flat-bm", 2);
    let (v, fit) = check_thm31_i(&f, &spec);
    assert!(v.holds());
    assert_eq!(v.constants["alpha"], 0.0);
    assert!((v.constants["C1"] - 1.0).abs() < 1e-12);
    let vol = fit.volume_constants.unwrap();
    assert!((vol.beta - 2.0).abs() < 1e-12);
    assert!(fit.radii.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn growth_volume_bounded_antisymmetric_bumps_hold() {
    let (f, spec) = scenario("bump-chain-antisymmetric", 2);
    let (v, _) = check_thm31_i(&f, &spec);
    assert!(v.holds());
    assert!(v.constants["alpha"] < 1.0);
}

#[test]
fn growth_volume_davies_fails_with_direct_oracle() {
    let (f, spec) = scenario("davies", 2);
    let (v, _) = check_thm31_i(&f, &spec);
    assert_witness(&v);
    // |A|(r) / r^(2 alpha) along r = 2^k keeps growing even for alpha = 0.95
    let ratios: Vec<f64> = (4..=10)
        .map(|k| {
            let r = 2f64.powi(k);
            (1.0 + r * r) * r.ln_1p().powi(2) / r.powf(1.9)
        })
        .collect();
    assert!(ratios.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn integrability_gaussian_holds_and_flat_plane_fails() {
    let quad = TailQuadratureSpec::default().with_r_max(16.0);
    let (ou, _) = scenario("gaussian-ou", 2);
    let v = check_thm31_ii(&ou, &quad).unwrap();
    assert!(v.holds());
    // oracle: the integrand is e^{-r^2} / (1 + r^2), radial integral by Simpson
    let n = 20000;
    let h = 16.0 / n as f64;
    let g = |r: f64| (-r * r).exp() / (1.0 + r * r) * std::f64::consts::TAU * r;
    let simpson: f64 = (0..n)
        .map(|i| {
            let a = i as f64 * h;
            h / 6.0 * (g(a) + 4.0 * g(a + h / 2.0) + g(a + h))
        })
        .sum();
    assert!((v.constants["integral_estimate"] - simpson).abs() < 1e-3 * simpson);

    let (flat, _) = scenario("flat-bm", 2);
    let quad = TailQuadratureSpec::default();
    assert_witness(&check_thm31_ii(&flat, &quad).unwrap());
}

#[test]
fn integrability_bounded_coefficients_finite_mass_hold() {
    let (f, _) = scenario("gradient-drift", 3);
    let finite = build("gradient-drift", &Params::dim(3).with_preset("finite")).unwrap();
    let quad = TailQuadratureSpec::default().with_r_max(finite.r_max);
    assert!(check_thm31_ii(&finite.field, &quad).unwrap().holds());
    assert_eq!(mu_finiteness(&finite.field, &quad).state, Finiteness::Finite);
    assert_eq!(mu_finiteness(&f, &TailQuadratureSpec::default()).state, Finiteness::Infinite);
}

#[test]
fn log_growth_examples() {
    let (ou, spec) = scenario("gaussian-ou", 2);
    let v = check_thm33(&ou, &spec);
    assert!(v.holds());
    assert!(v.constants["K"] <= 1.0);

    let boundary = scalar_field(2, |r: f64| if r < 3.0 { 3.0 * 3.0 * 3f64.ln().powi(2) } else { r * r * r.ln().powi(2) });
    let v = check_thm33(&boundary, &SamplingSpec::default());
    assert!(v.holds(), "{v:?}");
    // oracle: the ratio is exactly 1 outside B_3 and bounded inside the sampled annulus
    let k = v.constants["K"];
    assert!((1.0..10.0).contains(&k), "K = {k}");

    let quartic = scalar_field(2, |r: f64| r.powi(4));
    let v = check_thm33(&quartic, &SamplingSpec::default());
    assert_witness(&v);
    let w = v.witness.unwrap();
    let r = w.radius;
    assert!(r.powi(4) > 10.0 * (r * r.ln()).powi(2));
}

#[test]
fn uniform_bounds_examples() {
    let (ex, spec) = scenario("example-4.3", 3);
    let v = check_s2(&ex, &spec).unwrap();
    assert!(v.holds());
    assert!((v.constants["theta"] - 1.0).abs() < 1e-9 && (v.constants["M"] - 1.0).abs() < 1e-9);

    let (bumps, spec) = scenario("bump-chain-antisymmetric", 2);
    assert!(check_s2(&bumps, &spec).unwrap().holds());

    let growing = scalar_field(2, |r: f64| 1.0 + r * r);
    assert_witness(&check_s2(&growing, &SamplingSpec::default()).unwrap());

    let drift = CoefficientField::builder(2)
        .diffusion(|_, m| m.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]))
        .divergence_free_drift(|x, b| {
            b[0] = -x[1];
            b[1] = x[0];
        })
        .build()
        .unwrap();
    assert!(matches!(check_s2(&drift, &SamplingSpec::default()), Err(CriteriaError::Precondition { .. })));
}

#[test]
fn bounded_density_examples() {
    let (g, spec) = scenario("gradient-drift", 2);
    assert!(check_prop44(&g, Prop44Variant::I, &spec).unwrap().holds());
    let (flat, spec) = scenario("flat-bm", 2);
    assert!(check_prop44(&flat, Prop44Variant::I, &spec).unwrap().holds());

    let (ou, spec) = scenario("gaussian-ou", 2);
    assert_witness(&check_prop44(&ou, Prop44Variant::I, &spec).unwrap());
    // oracle: e^{-r^2} drops below c / (1 + r)^(2 alpha) for any fixed c, alpha
    let r: f64 = 16.0;
    assert!((-r * r).exp() < 1e-6 / (1.0 + r).powi(40));

    let (ex, spec) = scenario("example-4.3", 2);
    assert_eq!(check_prop44(&ex, Prop44Variant::II, &spec).unwrap().verdict, Verdict::FailsOnWitness);
    let v = check_prop44(&flat, Prop44Variant::II, &SamplingSpec::default()).unwrap();
    assert_eq!(v.verdict, Verdict::Undetermined);
}

#[test]
fn factored_density_holds_for_polynomial_density() {
    let d = 2;
    let rho = |x: &[f64]| (1.0 + x.iter().map(|v| v * v).sum::<f64>()).powf(-0.4);
    let f = CoefficientField::builder(d)
        .rho(rho)
        .diffusion(move |x, m| {
            let s = 1.0 / rho(x);
            m.copy_from_slice(&[s, 0.0, 0.0, s]);
        })
        .meta(FieldMeta {
            lebesgue: false,
            identity_diffusion: false,
            factorization: Some(divlab::coeff::Factorization {
                a_tilde: std::sync::Arc::new(|_: &[f64], m: &mut [f64]| m.copy_from_slice(&[1.0, 0.0, 0.0, 1.0])),
                c_tilde: std::sync::Arc::new(|_: &[f64], m: &mut [f64]| m.iter_mut().for_each(|v| *v = 0.0)),
            }),
        })
        .build()
        .unwrap();
    let v = check_prop44(&f, Prop44Variant::II, &SamplingSpec::default()).unwrap();
    assert!(v.holds(), "{v:?}");
}

#[test]
fn comparison_examples() {
    let (flat, spec) = scenario("flat-bm", 2);
    assert!(check_comparison(&flat, Comparison::Takeda, &spec).holds());
    assert!(check_comparison(&flat, Comparison::Sturm, &spec).holds());
    // oracle: int_2^R r / ln(pi r^2) dr grows without bound
    let partial = |big: f64| {
        let n = 100_000;
        let h = (big - 2.0) / n as f64;
        (0..n).map(|i| 2.0 + (i as f64 + 0.5) * h).map(|r| r / (std::f64::consts::PI * r * r).ln() * h).sum::<f64>()
    };
    assert!(partial(1024.0) > 2.0 * partial(512.0));

    let (bumps, spec) = scenario("bump-chain-antisymmetric", 2);
    let v = check_comparison(&bumps, Comparison::Sectorial, &spec);
    assert_witness(&v);
    let w = v.witness.unwrap();
    let k = w.point[0].round();
    let off = ((w.point[0] - k).powi(2) + w.point[1].powi(2)).sqrt();
    assert!(off < 0.05, "witness should sit near a bump center: {:?}", w.point);
    assert!(check_thm31_i(&bumps, &spec).0.holds());

    let (ou, spec) = scenario("gaussian-ou", 2);
    assert_eq!(check_comparison(&ou, Comparison::Takeda, &spec).verdict, Verdict::Undetermined);
    let (ex, spec) = scenario("example-4.3", 2);
    assert_eq!(check_comparison(&ex, Comparison::Sturm, &spec).verdict, Verdict::Undetermined);
}

#[test]
fn classification_examples() {
    let (ou, spec) = scenario("gaussian-ou", 2);
    let rep = evaluate_all(&ou, &spec);
    let c = classify(2, &rep.verdicts, &rep.mu_finite).unwrap();
    assert_eq!(c.conservative.value, Tri::Yes);
    assert_eq!(c.dichotomy.value, Dichotomy::Recurrent);
    assert_eq!(c.mu_unique_invariant.value, UniqueInvariant::Yes);

    let (ex, spec) = scenario("example-4.3", 3);
    let rep = evaluate_all(&ex, &spec);
    let c = classify(3, &rep.verdicts, &rep.mu_finite).unwrap();
    assert_eq!(c.dichotomy.value, Dichotomy::Transient);
    assert_eq!(c.conservative.value, Tri::No);
    assert_eq!(c.mu_unique_invariant.value, UniqueInvariant::NoInvariantExists);
    assert_eq!(c.mu_unique_infinitesimal.value, Tri::Yes);
}

#[test]
fn scenario_expectations_match_classifier() {
    for id in divlab::scenarios::IDS {
        for d in [2, 3] {
            let s = build(id, &Params::dim(d)).unwrap();
            let spec = SamplingSpec::default().with_r_max(s.r_max);
            let rep = evaluate_all(&s.field, &spec);
            let c = classify(d, &rep.verdicts, &rep.mu_finite).unwrap();
            for e in &s.expected {
                let got = e.conclusion.observed(&c);
                // the classifier may stay silent, but must never contradict
                assert!(got == e.value || got == "unknown", "{id} d={d} {:?}: {got}", e.conclusion);
            }
        }
    }
}

#[test]
fn evaluation_is_deterministic() {
    let (f, spec) = scenario("bump-chain-antisymmetric", 2);
    let a = evaluate_all(&f, &spec);
    let b = evaluate_all(&f, &spec);
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

fn verdict(id: CriterionId, v: Verdict, constants: &[(&str, f64)]) -> CriterionVerdict {
    let mut cv: CriterionVerdict = bare_verdict(id, v);
    cv.constants = constants.iter().map(|(k, x)| (k.to_string(), *x)).collect::<BTreeMap<_, _>>();
    cv
}

fn bare_verdict(id: CriterionId, v: Verdict) -> CriterionVerdict {
    CriterionVerdict { id, anchor: id.anchor(), verdict: v, witness: None, constants: BTreeMap::new(), notes: vec![] }
}

fn arb_verdict() -> impl Strategy<Value = Verdict> {
    prop_oneof![Just(Verdict::Holds), Just(Verdict::FailsOnWitness), Just(Verdict::Undetermined)]
}

fn arb_finiteness() -> impl Strategy<Value = Finiteness> {
    prop_oneof![Just(Finiteness::Finite), Just(Finiteness::Infinite), Just(Finiteness::Unknown)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn classification_invariants(
        dim in 2usize..5,
        vs in proptest::collection::vec(arb_verdict(), 10),
        bounded in any::<bool>(),
        fin in arb_finiteness(),
    ) {
        let verdicts: Vec<CriterionVerdict> = CriterionId::ALL
            .iter()
            .zip(&vs)
            .map(|(id, v)| verdict(*id, *v, &[("rho_upper_bounded", if bounded { 1.0 } else { 0.0 })]))
            .collect();
        let mu = MuFiniteness { state: fin, estimate: 1.0, tail_slope: 0.0 };
        if let Ok(c) = classify(dim, &verdicts, &mu) {
            if fin == Finiteness::Finite && c.conservative.value == Tri::Yes {
                prop_assert_eq!(c.dichotomy.value, Dichotomy::Recurrent);
            }
            prop_assert_eq!(c.l1_unique.value == Tri::Yes, c.mu_invariant.value == Tri::Yes);
            for id in CriterionId::ALL.iter().filter(|i| i.is_advisory()) {
                // advisory verdicts never change the outcome
                let mut flipped = verdicts.clone();
                for v in flipped.iter_mut().filter(|v| v.id == *id) {
                    v.verdict = Verdict::Undetermined;
                }
                prop_assert_eq!(&classify(dim, &flipped, &mu).unwrap(), &c);
            }
            // failed and undetermined criteria carry the same information
            let mut relabelled = verdicts.clone();
            for v in relabelled.iter_mut().filter(|v| v.verdict == Verdict::FailsOnWitness) {
                v.verdict = Verdict::Undetermined;
            }
            prop_assert_eq!(&classify(dim, &relabelled, &mu).unwrap(), &c);
        }
    }

    #[test]
    fn all_unknown_stays_unknown(dim in 2usize..6) {
        let verdicts: Vec<CriterionVerdict> =
            CriterionId::ALL.iter().map(|id| verdict(*id, Verdict::Undetermined, &[])).collect();
        let c = classify(dim, &verdicts, &MuFiniteness::unknown()).unwrap();
        prop_assert_eq!(c.conservative.value, Tri::Unknown);
        prop_assert_eq!(c.dichotomy.value, Dichotomy::Unknown);
        prop_assert_eq!(c.mu_unique_invariant.value, UniqueInvariant::Unknown);
        prop_assert_eq!(c.mu_unique_infinitesimal.value, Tri::Unknown);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scaling_antisymmetric_part_keeps_growth_volume(s in 0.01f64..=1.0) {
        let (f, spec) = scenario("bump-chain-antisymmetric", 2);
        prop_assume!(check_thm31_i(&f, &spec).0.holds());
        let (v, _) = check_thm31_i(&f.with_scaled_antisymmetric(s), &spec);
        prop_assert!(v.holds());
    }

    #[test]
    fn bounded_diffusion_always_satisfies_growth_volume(
        lo in 0.1f64..2.0,
        amp in 0.0f64..5.0,
        freq in 0.1f64..4.0,
        d in 2usize..4,
    ) {
        let f = CoefficientField::builder(d)
            .diffusion(move |x, m| {
                m.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..d {
                    m[i * d + i] = lo + amp * (freq * x[i]).sin().powi(2);
                }
            })
            .build()
            .unwrap();
        let spec = SamplingSpec { directions: 64, ..SamplingSpec::default() };
        prop_assert!(check_thm31_i(&f, &spec).0.holds());
    }
}
