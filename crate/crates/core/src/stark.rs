//! Field response of donor states: perturbative multivalley Stark shifts,
//! induced dipoles, tunnelling ionization and the largest safe field.
//!
//! Fields are in V/μm, energies in meV, dipoles in e·nm and rates in 1/s.
//! With these units e·F·d in meV is simply F·d.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::fem::{assemble_and_solve, stark_sweep, FemError, FieldTerm, SolverConfig};
use crate::multivalley::{ManifoldLabel, ValleyManifold};
use crate::units::{EffectiveAtomicUnits, PhysicalConstants};

/// Intermediate states closer than this (meV) are left out of the sums.
pub const DEGENERACY_FLOOR_MEV: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StarkError {
    #[error("catalog lacks states coupling to {0} along the field")]
    CatalogInsufficient(String),
    #[error("invalid ionization model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Solver(#[from] FemError),
}

/// Second-order Stark response of one catalog state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarkResponse {
    pub state: String,
    pub field_axis: [f64; 3],
    /// (field, shift) pairs.
    pub shifts: Vec<(f64, f64)>,
    /// Shift = −polarizability·F², in meV/(V/μm)².
    pub polarizability: f64,
    /// Intermediate states dropped by the degeneracy floor.
    pub excluded: usize,
}

impl StarkResponse {
    pub fn shift(&self, field: f64) -> f64 {
        -self.polarizability * field * field
    }

    /// p(F) = −d shift/dF from central differences with one Richardson step.
    pub fn dipole_moment(&self, field: f64) -> f64 {
        let h = 1e-3 * field.abs().max(1e-2);
        let d = |h: f64| (self.shift(field + h) - self.shift(field - h)) / (2.0 * h);
        -(4.0 * d(0.5 * h) - d(h)) / 3.0
    }
}

fn normalize(axis: [f64; 3]) -> Result<[f64; 3], StarkError> {
    let n = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(StarkError::InvalidArgument("field axis must be a nonzero vector".into()));
    }
    Ok(axis.map(|x| x / n))
}

/// Second-order shift of catalog state `state` for a field along `axis`,
/// sampled at `fields`. Fails when no dipole-coupled state lies above.
pub fn perturbative_stark(catalog: &Catalog, state: usize, axis: [f64; 3], fields: &[f64]) -> Result<StarkResponse, StarkError> {
    let axis = normalize(axis)?;
    let d = catalog.dipoles_from(state);
    let ea = catalog.states[state].energy_mev;
    let mut alpha = 0.0;
    let mut excluded = 0;
    let mut coupled_above = false;
    for (k, sk) in catalog.states.iter().enumerate() {
        let dk: f64 = (0..3).map(|i| axis[i] * d[k][i]).sum();
        if dk.abs() < 1e-12 {
            continue;
        }
        let gap = sk.energy_mev - ea;
        if gap.abs() < DEGENERACY_FLOOR_MEV {
            excluded += 1;
            continue;
        }
        coupled_above |= gap > 0.0;
        alpha += dk * dk / gap;
    }
    // the dominant partners (2s above 2p0, p states above 1s) lie higher
    if !coupled_above {
        return Err(StarkError::CatalogInsufficient(catalog.states[state].label.clone()));
    }
    let mut r = StarkResponse {
        state: catalog.states[state].label.clone(),
        field_axis: axis,
        shifts: Vec::new(),
        polarizability: alpha,
        excluded,
    };
    r.shifts = fields.iter().map(|&f| (f, r.shift(f))).collect();
    Ok(r)
}

/// Zero-field states solved per direct sweep: enough to track the lowest
/// few levels through avoided crossings.
const DIRECT_STATES: usize = 8;

/// Stark shift of an m = 0 catalog state for a field along z from direct
/// field-on envelope solves (meV at each field in V/μm).
///
/// Cross-valley terms are dropped, so the field only mixes the state with
/// envelopes of its own valley pair. The central cell differs between
/// the A1, E and T2 parts of that pair; each part is solved directly with
/// its own depth and weighted by the squared valley projection.
pub fn direct_multivalley_shift(catalog: &Catalog, state: usize, fields: &[f64]) -> Result<Vec<f64>, StarkError> {
    let s = &catalog.states[state];
    let level = &catalog.levels[s.level];
    if level.m != 0 {
        return Err(StarkError::InvalidArgument("direct shifts need an m = 0 state".into()));
    }
    let units = EffectiveAtomicUnits::from_constants(&catalog.constants);
    let (ha, fu) = (units.hartree_mev(&catalog.constants), units.field_unit_v_per_um());
    let weights: Vec<(Option<ManifoldLabel>, f64)> = match level.central_cell {
        Some(own) => vec![(Some(own), 1.0)],
        None => [
            (ManifoldLabel::A1, vec![ValleyManifold::a1()]),
            (ManifoldLabel::E, vec![ValleyManifold::e(0), ValleyManifold::e(1)]),
            (ManifoldLabel::T2, (0..3).map(ValleyManifold::t2).collect()),
        ]
        .into_iter()
        .map(|(label, members)| (Some(label), members.iter().map(|m| s.manifold.dipole_weight(m, 2).powi(2)).sum()))
        .filter(|(_, w): &(Option<ManifoldLabel>, f64)| *w > 1e-12)
        .collect(),
    };
    let target = &catalog.envelopes[s.envelope];
    let mut total = vec![0.0; fields.len()];
    for (cc, w) in weights {
        let cfg = SolverConfig {
            eigenpair_count: DIRECT_STATES,
            check_convergence: false,
            field: Some(FieldTerm::new(0.0)),
            ..catalog.solver_config(cc)
        };
        let zero = assemble_and_solve(&cfg)?;
        let (index, best) = zero
            .iter()
            .enumerate()
            .map(|(i, z)| (i, z.overlap(target).abs()))
            .fold((0, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
        if best < 0.9 {
            return Err(StarkError::InvalidArgument(format!("state not found in the direct spectrum (overlap {best})")));
        }
        let au: Vec<f64> = fields.iter().map(|f| f / fu).collect();
        let e = stark_sweep(&cfg, index, &au)?;
        for (t, ei) in total.iter_mut().zip(e) {
            *t += w * (ei - zero[index].energy) * ha;
        }
    }
    Ok(total)
}

/// Hydrogenic tunnelling model of one state in parabolic quantum numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonizationModel {
    pub principal_n: u32,
    pub magnetic_m: i32,
    pub parabolic_n1: u32,
    pub parabolic_n2: u32,
    /// Binding energy of the state, meV.
    pub binding_energy: f64,
    /// Tunnelling mass in units of m_e ([100] transverse mass).
    pub tunneling_mass: f64,
    /// Ground binding of the hydrogenic reference atom that fixes the
    /// field and rate units, meV. Defaults to n²·E_b.
    pub reference_binding: f64,
}

impl IonizationModel {
    pub fn new(n: u32, m: i32, n1: u32, n2: u32, binding_energy: f64, tunneling_mass: f64) -> Result<Self, StarkError> {
        if n != n1 + n2 + m.unsigned_abs() + 1 {
            return Err(StarkError::InvalidModel(format!("n = {n} but n1 + n2 + |m| + 1 = {}", n1 + n2 + m.unsigned_abs() + 1)));
        }
        if !(binding_energy > 0.0 && tunneling_mass > 0.0) {
            return Err(StarkError::InvalidModel("binding energy and mass must be positive".into()));
        }
        Ok(Self {
            principal_n: n,
            magnetic_m: m,
            parabolic_n1: n1,
            parabolic_n2: n2,
            binding_energy,
            tunneling_mass,
            reference_binding: (n * n) as f64 * binding_energy,
        })
    }

    /// Parabolic numbers for the labelled state: 2p0 → (2, 0, 1, 0), any
    /// 1s manifold → (1, 0, 0, 0).
    pub fn for_state(label: &str, binding_energy: f64, tunneling_mass: f64) -> Result<Self, StarkError> {
        match label {
            "2p0" => Self::new(2, 0, 1, 0, binding_energy, tunneling_mass),
            l if l.starts_with("1s") => Self::new(1, 0, 0, 0, binding_energy, tunneling_mass),
            other => Err(StarkError::InvalidModel(format!("no parabolic numbers for {other}"))),
        }
    }

    fn joules(mev: f64, c: &PhysicalConstants) -> f64 {
        mev * 1e-3 * c.electron_charge
    }

    /// α = 4√(2m)E^{3/2}/(3eħ) of the reference atom, V/μm.
    pub fn atomic_field_alpha(&self, c: &PhysicalConstants) -> f64 {
        atomic_field(self.reference_binding, self.tunneling_mass, c)
    }

    /// ω = 12 E/ħ of the reference atom, 1/s.
    pub fn attempt_rate_omega(&self, c: &PhysicalConstants) -> f64 {
        12.0 * Self::joules(self.reference_binding, c) / c.hbar
    }

    /// τ_B = 2πħ/E_b of the state itself, s.
    pub fn bohr_period(&self, c: &PhysicalConstants) -> f64 {
        2.0 * std::f64::consts::PI * c.hbar / Self::joules(self.binding_energy, c)
    }
}

fn atomic_field(binding_mev: f64, mass: f64, c: &PhysicalConstants) -> f64 {
    let e = binding_mev * 1e-3 * c.electron_charge;
    let m = mass * c.electron_mass;
    4.0 * (2.0 * m).sqrt() * e.powf(1.5) / (3.0 * c.electron_charge * c.hbar) * 1e-6
}

fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Excited-state tunnelling rate (1/s) at `field` (V/μm), clamped at 1/τ_B.
/// The hydrogenic formula is evaluated in units of the reference atom:
/// field unit 3α/2 and rate unit 2E_ref/ħ. Past its maximum the formula
/// is held at the peak value so the rate stays monotone.
pub fn ionization_rate_excited(model: &IonizationModel, field: f64, c: &PhysicalConstants) -> f64 {
    let floor = 1.0 / model.bohr_period(c);
    if field <= 0.0 {
        return 0.0;
    }
    let n = model.principal_n as f64;
    let (n1, n2, m) = (model.parabolic_n1, model.parabolic_n2, model.magnetic_m.unsigned_abs());
    let peak = 2.0 / (3.0 * n.powi(3) * (2 * n2 + m + 1) as f64);
    let f = (field / (1.5 * model.atomic_field_alpha(c))).min(peak);
    let n3f = n.powi(3) * f;
    let ln_y = -3.0 * n.ln() - ln_factorial(n2) - ln_factorial(n2 + m)
        + (2 * n2 + m + 1) as f64 * (4.0 / n3f).ln()
        - 2.0 / (3.0 * n3f)
        + 3.0 * (n1 as f64 - n2 as f64);
    let unit = 2.0 * IonizationModel::joules(model.reference_binding, c) / c.hbar;
    (unit * ln_y.exp()).min(floor)
}

/// Ground-state tunnelling rate (ωα/F)·exp(−α/F), clamped at 1/τ_B and
/// held at its F = α maximum beyond that field.
pub fn ionization_rate_ground(binding_energy: f64, tunneling_mass: f64, field: f64, c: &PhysicalConstants) -> f64 {
    if field <= 0.0 {
        return 0.0;
    }
    let alpha = atomic_field(binding_energy, tunneling_mass, c);
    let field = field.min(alpha);
    let e = binding_energy * 1e-3 * c.electron_charge;
    let omega = 12.0 * e / c.hbar;
    let floor = e / (2.0 * std::f64::consts::PI * c.hbar);
    (omega * alpha / field * (-alpha / field).exp()).min(floor)
}

/// P = 1 − exp(−lifetime·rate(field)).
pub fn ionization_probability(rate: impl Fn(f64) -> f64, lifetime: f64, field: f64) -> f64 {
    -(-lifetime * rate(field)).exp_m1()
}

/// Field at which the classical saddle reaches the bound level,
/// E_b²/(4 Z V₀), V/μm.
pub fn classical_threshold(binding_energy: f64, nuclear_charge: f64, c: &PhysicalConstants) -> f64 {
    binding_energy * binding_energy / (4.0 * nuclear_charge * c.coulomb_mev_nm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafeField {
    /// V/μm.
    pub field: f64,
    pub classical_threshold: f64,
    /// Whether the result was limited by the classical threshold.
    pub capped: bool,
}

/// Largest field whose ionization probability within `lifetime` stays at
/// or below `budget`, never above the classical threshold.
pub fn max_applicable_field(
    model: &IonizationModel,
    nuclear_charge: f64,
    lifetime: f64,
    budget: f64,
    c: &PhysicalConstants,
) -> Result<SafeField, StarkError> {
    if !(budget > 0.0 && budget < 1.0) {
        return Err(StarkError::InvalidArgument("budget must lie in (0, 1)".into()));
    }
    if !(lifetime > 0.0) {
        return Err(StarkError::InvalidArgument("lifetime must be positive".into()));
    }
    let threshold = classical_threshold(model.binding_energy, nuclear_charge, c);
    let p = |f: f64| ionization_probability(|x| ionization_rate_excited(model, x, c), lifetime, f);
    if p(threshold) <= budget {
        return Ok(SafeField { field: threshold, classical_threshold: threshold, capped: true });
    }
    let (mut lo, mut hi) = (threshold * 1e-6, threshold);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if p(mid) > budget {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo - 1.0 < 1e-12 {
            break;
        }
    }
    Ok(SafeField { field: lo, classical_threshold: threshold, capped: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn ground_formula_is_the_n1_case() {
        let m = IonizationModel::new(1, 0, 0, 0, 45.59, 0.191).unwrap();
        for f in [0.5, 1.0, 3.0, 10.0] {
            let a = ionization_rate_excited(&m, f, &c());
            let b = ionization_rate_ground(45.59, 0.191, f, &c());
            assert!((a / b - 1.0).abs() < 1e-10, "{a} {b}");
        }
    }

    #[test]
    fn quantum_numbers_are_checked() {
        assert!(IonizationModel::new(2, 0, 0, 0, 10.0, 0.191).is_err());
        assert!(IonizationModel::new(2, 1, 0, 0, 10.0, 0.191).is_ok());
        assert!(IonizationModel::for_state("3d", 1.0, 0.191).is_err());
    }

    #[test]
    fn rate_limits() {
        let m = IonizationModel::new(2, 0, 1, 0, 11.59, 0.191).unwrap();
        assert_eq!(ionization_rate_excited(&m, 0.0, &c()), 0.0);
        assert!(ionization_rate_excited(&m, 1e-3, &c()) < 1e-100);
        let floor = 1.0 / m.bohr_period(&c());
        assert_eq!(ionization_rate_excited(&m, 1e4, &c()), floor);
        assert!(ionization_rate_ground(45.0, 0.191, 1e-3, &c()) < 1e-100);
    }

    #[test]
    fn probability_definition() {
        assert_eq!(ionization_probability(|_| 0.0, 1e-9, 1.0), 0.0);
        let p = ionization_probability(|_| 2.0e9, 0.5e-9, 1.0);
        assert!((p - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn classical_threshold_for_phosphorus_2p0() {
        let t = classical_threshold(45.59 - 34.0, 1.0, &c());
        assert!((t - 0.266).abs() < 0.005, "{t}");
    }

    #[test]
    fn budget_near_one_is_capped() {
        let m = IonizationModel::new(2, 0, 1, 0, 11.59, 0.191).unwrap();
        let s = max_applicable_field(&m, 1.0, 235e-12, 1.0 - 1e-12, &c()).unwrap();
        assert!(s.capped);
        assert_eq!(s.field, s.classical_threshold);
        assert!(max_applicable_field(&m, 1.0, 235e-12, 1.0, &c()).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rate_is_monotone(f in 0.01f64..5e3, df in 1e-3f64..1e3) {
                let c = PhysicalConstants::default();
                let m = IonizationModel::new(2, 0, 1, 0, 11.59, 0.191).unwrap();
                let a = ionization_rate_excited(&m, f, &c);
                let b = ionization_rate_excited(&m, f + df, &c);
                prop_assert!(b >= a);
                let floor = 1.0 / m.bohr_period(&c);
                prop_assert!(a <= floor);
            }

            #[test]
            fn probability_monotone_in_lifetime(f in 0.1f64..0.3, t in 1e-12f64..1e-9) {
                let c = PhysicalConstants::default();
                let m = IonizationModel::new(2, 0, 1, 0, 11.59, 0.191).unwrap();
                let r = |x: f64| ionization_rate_excited(&m, x, &c);
                prop_assert!(ionization_probability(r, 2.0 * t, f) >= ionization_probability(r, t, f));
                prop_assert!(ionization_probability(r, t, f * 1.1) >= ionization_probability(r, t, f));
            }

            #[test]
            fn dipole_is_odd_in_field(alpha in 0.1f64..100.0, f in 0.01f64..1.0) {
                let r = StarkResponse { state: "x".into(), field_axis: [0.0, 0.0, 1.0], shifts: vec![], polarizability: alpha, excluded: 0 };
                let p = r.dipole_moment(f);
                let q = r.dipole_moment(-f);
                prop_assert!((p + q).abs() <= 1e-6 * p.abs());
                prop_assert!((p - 2.0 * alpha * f).abs() <= 1e-6 * p.abs());
            }
        }
    }
}
