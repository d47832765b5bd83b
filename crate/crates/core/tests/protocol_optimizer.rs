use si_rydberg::gates::*;
use si_rydberg::optimize::*;
use si_rydberg::units::DecoherenceRates;

#[test]
fn refinement_from_the_default_shape_recovers_its_constants() {
    let u = 1e5;
    let spec = OptimizationSpec::new(ProtocolKind::BlockadeInspired, u);
    let rec = optimize_from(
        &spec,
        &DecoherenceRates::unit(),
        INSPIRED_RABI_OVER_U * u * 0.98,
        INSPIRED_DETUNING_RATIO * 1.03,
        INSPIRED_XI + 0.03,
    )
    .unwrap();
    assert!((rec.rabi_over_u() / 1.45747 - 1.0).abs() < 0.01, "{rec:?}");
    assert!((rec.detuning_ratio() / 0.28757 - 1.0).abs() < 0.01, "{rec:?}");
    assert!((rec.xi / 1.5306 - 1.0).abs() < 0.01, "{rec:?}");
    assert!(certify(&rec, &DecoherenceRates::unit()).unwrap());
}

#[test]
fn global_search_is_no_worse_than_the_default_shape() {
    let u = 1e3;
    let rates = DecoherenceRates::unit();
    let rec = optimize(&OptimizationSpec::new(ProtocolKind::BlockadeInspired, u), &rates).unwrap();
    let (f, _) =
        evaluate(ProtocolKind::BlockadeInspired, INSPIRED_RABI_OVER_U * u, INSPIRED_DETUNING_RATIO, INSPIRED_XI, u, &rates, 1e-9)
            .unwrap();
    assert!(rec.fidelity >= f - 1e-9, "{} < {f}", rec.fidelity);
    assert!((rec.rabi_over_u() - 1.46).abs() < 0.05);
}

#[test]
fn curve_is_monotone_and_rabi_tracks_u() {
    let grid = [1e2, 1e3, 1e4];
    let recs = optimal_curve(ProtocolKind::BlockadeInspired, &grid, &DecoherenceRates::unit()).unwrap();
    for w in recs.windows(2) {
        assert!(w[1].infidelity() < w[0].infidelity());
    }
    let x: Vec<f64> = recs.iter().map(|r| r.interaction_over_gamma.ln()).collect();
    let y: Vec<f64> = recs.iter().map(|r| r.infidelity().ln()).collect();
    let (slope, _) = linear_fit(&x, &y);
    assert!((slope + 1.0).abs() < 0.1, "{slope}");
    assert!(recs.iter().all(|r| (r.rabi_over_u() - 1.47).abs() < 0.15));
}

#[test]
fn rabi_error_is_cheap_at_high_interaction() {
    let u = 1e4;
    let rates = DecoherenceRates::unit();
    let spec = OptimizationSpec::new(ProtocolKind::BlockadeInspired, u);
    let rec = optimize_from(&spec, &rates, INSPIRED_RABI_OVER_U * u, INSPIRED_DETUNING_RATIO, INSPIRED_XI).unwrap();
    let scan = robustness_scan_rabi_at(&rec, &[0.9, 1.0, 1.1], &rates).unwrap();
    let f0 = scan[1].1;
    assert!(scan.iter().all(|&(_, f)| f <= f0 + 1e-12));
    assert!(scan.iter().all(|&(_, f)| f0 - f < 0.01), "{scan:?}");
    let det = robustness_scan_detuning_at(&rec, &[0.0, 0.1], &rates).unwrap();
    assert!(det[1].1 > det[0].1);
}

#[test]
fn invalid_specs_are_rejected() {
    let rates = DecoherenceRates::unit();
    let mut spec = OptimizationSpec::new(ProtocolKind::ResonantBlockade, 1e2);
    spec.free_parameters.xi = true;
    assert!(matches!(optimize(&spec, &rates), Err(OptimizeError::InvalidSpec(_))));
    assert!(optimal_curve(ProtocolKind::ResonantBlockade, &[1e3, 1e2], &rates).is_err());
}
