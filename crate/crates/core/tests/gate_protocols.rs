use std::f64::consts::PI;

use proptest::prelude::*;
use si_rydberg::gates::*;
use si_rydberg::units::DecoherenceRates;

#[test]
fn resonant_truth_table_in_the_blockade_limit() {
    // phases (−,−,−,+) on (|11⟩,|10⟩,|01⟩,|00⟩)
    let p = make_resonant_blockade(1.0).unwrap();
    let amps = qubit_phases(&p, 1e4, 1e-11).unwrap();
    for (a, sign) in amps.iter().zip([1.0, -1.0, -1.0, -1.0]) {
        assert!((a.norm() - 1.0).abs() < 1e-3);
        let d = (a.arg() - if sign > 0.0 { 0.0 } else { PI }).rem_euclid(2.0 * PI);
        assert!(d.min(2.0 * PI - d) < 1e-3, "{a}");
    }
}

#[test]
fn ideal_gates_reach_unit_fidelity() {
    let none = DecoherenceRates::none();
    let u = 50.0;
    let p = make_blockade_inspired(INSPIRED_RABI_OVER_U * u, INSPIRED_DETUNING_RATIO, INSPIRED_XI).unwrap();
    assert!(run_protocol(&p, u, &none, true).unwrap().fidelity > 1.0 - 1e-6);
    let p = make_off_resonant_blockade(1.0, LEVINE_DETUNING_RATIO, LEVINE_XI).unwrap();
    assert!(run_protocol(&p, 1e4, &none, true).unwrap().fidelity > 1.0 - 1e-4);
    let p = make_resonant_blockade(1.0).unwrap();
    assert!(run_protocol(&p, 1e4, &none, true).unwrap().fidelity > 1.0 - 1e-4);
}

#[test]
fn decoherence_costs_fidelity_in_proportion_to_duration() {
    let rates = DecoherenceRates::unit();
    let mut last = 0.0;
    for u in [1e2, 1e3, 1e4] {
        let p = make_blockade_inspired(INSPIRED_RABI_OVER_U * u, INSPIRED_DETUNING_RATIO, INSPIRED_XI).unwrap();
        let r = run_protocol(&p, u, &rates, true).unwrap();
        assert!(r.fidelity > last);
        last = r.fidelity;
        // infidelity about 7/(u/γ) near the optimum
        let scaled = (1.0 - r.fidelity) * u;
        assert!(scaled > 3.0 && scaled < 15.0, "u={u}: {scaled}");
    }
}

#[test]
fn durations() {
    let p = make_resonant_blockade(2.0).unwrap();
    assert!((p.gate_duration() - 2.0 * PI).abs() < 1e-12);
    let p = make_blockade_inspired(1.0, 0.0, 0.0).unwrap();
    assert!((p.gate_duration() - 4.0 * PI).abs() < 1e-12);
    assert!(make_blockade_inspired(0.0, 0.3, 1.0).is_err());
    assert!(make_off_resonant_blockade(-1.0, 0.3, 1.0).is_err());
}

#[test]
fn protocol_kinds_parse_by_name() {
    for k in ProtocolKind::ALL {
        assert_eq!(ProtocolKind::parse(k.name()), Some(k));
    }
    assert_eq!(ProtocolKind::parse("jaksch"), Some(ProtocolKind::ResonantBlockade));
    assert_eq!(ProtocolKind::parse("nope"), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn global_phase_and_mirror_leave_fidelity_unchanged(om in 5.0f64..40.0, u in 2.0f64..40.0) {
        let p = make_blockade_inspired(om, INSPIRED_DETUNING_RATIO, INSPIRED_XI).unwrap();
        let a = run_protocol(&p, u, &DecoherenceRates::unit(), true).unwrap().fidelity;
        prop_assert!((0.0..=1.0 + 1e-9).contains(&a));
        let b = run_protocol(&p.with_phase_rotation(0.7), u, &DecoherenceRates::unit(), true).unwrap().fidelity;
        prop_assert!((a - b).abs() < 1e-6);
        let c = run_protocol(&p.mirrored(), -u, &DecoherenceRates::unit(), true).unwrap().fidelity;
        prop_assert!((a - c).abs() < 1e-6);
    }
}
