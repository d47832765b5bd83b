//! Two-donor Lindblad dynamics on the 9-dimensional space
//! {|0⟩,|1⟩,|r⟩} ⊗ {|0⟩,|1⟩,|r⟩}.
//!
//! The basis index of |a b⟩ is `3a + b` with levels 0, 1 and r = 2.
//! Rates are in units of γ_se and ħ = 1.

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::units::DecoherenceRates;

pub type C64 = Complex64;
pub type Mat9 = SMatrix<C64, 9, 9>;
pub type Vec9 = SVector<C64, 9>;

pub const DIM: usize = 9;
pub const ZERO: usize = 0;
pub const ONE: usize = 1;
pub const RYD: usize = 2;

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-9;

/// Default local error tolerance for [`evolve`].
pub const DEFAULT_TOL: f64 = 1e-9;

#[inline]
pub fn basis_index(a: usize, b: usize) -> usize {
    3 * a + b
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LindbladError {
    #[error("step size underflow at t = {time} (h = {step})")]
    IntegrationFailure { time: f64, step: f64 },
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: Mat9,
}

impl DensityMatrix {
    /// Wraps a matrix after checking Hermiticity, unit trace and positivity.
    pub fn new(entries: Mat9) -> Result<Self, LindbladError> {
        let rho = Self { entries };
        rho.validate()?;
        Ok(rho)
    }

    pub fn from_matrix_unchecked(entries: Mat9) -> Self {
        Self { entries }
    }

    /// |ψ⟩⟨ψ| for a (not necessarily normalized) nonzero vector.
    pub fn from_pure(psi: &Vec9) -> Self {
        let n = psi.norm();
        let v = psi / C64::new(n, 0.0);
        Self { entries: v * v.adjoint() }
    }

    pub fn from_basis(index: usize) -> Self {
        let mut v = Vec9::zeros();
        v[index] = C64::new(1.0, 0.0);
        Self::from_pure(&v)
    }

    pub fn maximally_mixed() -> Self {
        Self { entries: Mat9::identity() / C64::new(DIM as f64, 0.0) }
    }

    pub fn matrix(&self) -> &Mat9 {
        &self.entries
    }

    pub fn into_matrix(self) -> Mat9 {
        self.entries
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs(&(self.entries - self.entries.adjoint()))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (self.entries + self.entries.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().min()
    }

    pub fn purity(&self) -> f64 {
        (self.entries * self.entries).trace().re
    }

    pub fn population(&self, index: usize) -> f64 {
        self.entries[(index, index)].re
    }

    pub fn populations(&self) -> [f64; DIM] {
        std::array::from_fn(|i| self.population(i))
    }

    pub fn validate(&self) -> Result<(), LindbladError> {
        if self.entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LindbladError::InvalidState("non-finite entry".into()));
        }
        let herm = self.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(LindbladError::InvalidState(format!("hermiticity error {herm:e}")));
        }
        let tr = self.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(LindbladError::InvalidState(format!("trace {tr}")));
        }
        let lam = self.min_eigenvalue();
        if lam < -POSITIVITY_TOL {
            return Err(LindbladError::InvalidState(format!("eigenvalue {lam:e}")));
        }
        Ok(())
    }

    /// U ρ U†.
    pub fn conjugate_by(&self, u: &Mat9) -> Self {
        Self { entries: u * self.entries * u.adjoint() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveParameters {
    pub rabi_1: C64,
    pub rabi_2: C64,
    pub detuning: f64,
    pub interaction: f64,
}

impl DriveParameters {
    pub fn idle(interaction: f64) -> Self {
        Self { rabi_1: C64::new(0.0, 0.0), rabi_2: C64::new(0.0, 0.0), detuning: 0.0, interaction }
    }

    pub fn is_finite(&self) -> bool {
        [self.rabi_1.re, self.rabi_1.im, self.rabi_2.re, self.rabi_2.im, self.detuning, self.interaction]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// H = Σ_i (Ω_i/2 |1⟩⟨r| + Ω_i*/2 |r⟩⟨1| − Δ|r⟩⟨r|)_i + u|rr⟩⟨rr|.
pub fn build_hamiltonian(p: &DriveParameters) -> Mat9 {
    let mut h = Mat9::zeros();
    for x in 0..3 {
        // donor 1 acts on the first factor, donor 2 on the second
        let (o1, r1) = (basis_index(ONE, x), basis_index(RYD, x));
        h[(o1, r1)] += p.rabi_1 * 0.5;
        h[(r1, o1)] += p.rabi_1.conj() * 0.5;
        h[(r1, r1)] -= p.detuning;
        let (o2, r2) = (basis_index(x, ONE), basis_index(x, RYD));
        h[(o2, r2)] += p.rabi_2 * 0.5;
        h[(r2, o2)] += p.rabi_2.conj() * 0.5;
        h[(r2, r2)] -= p.detuning;
    }
    let rr = basis_index(RYD, RYD);
    h[(rr, rr)] += p.interaction;
    h
}

#[derive(Debug, Clone, PartialEq)]
struct SparseOp {
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    fn from_dense(m: &Mat9) -> Self {
        let mut entries = Vec::new();
        for i in 0..DIM {
            for j in 0..DIM {
                if m[(i, j)] != C64::new(0.0, 0.0) {
                    entries.push((i, j, m[(i, j)]));
                }
            }
        }
        Self { entries }
    }

    /// out += L ρ L†
    #[inline]
    fn sandwich_into(&self, rho: &Mat9, out: &mut Mat9) {
        for &(i, k, a) in &self.entries {
            for &(j, l, b) in &self.entries {
                out[(i, j)] += a * rho[(k, l)] * b.conj();
            }
        }
    }
}

/// The four jump operators: dephasing on donor 1 and 2, then spontaneous
/// emission |r⟩ → |1⟩ on donor 1 and 2.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpOperatorSet {
    pub operators: Vec<Mat9>,
    sparse: Vec<SparseOp>,
}

impl JumpOperatorSet {
    pub fn new(rates: &DecoherenceRates) -> Self {
        let sde = C64::new(rates.gamma_de.max(0.0).sqrt(), 0.0);
        let sse = C64::new(rates.gamma_se.max(0.0).sqrt(), 0.0);
        let mut deph1 = Mat9::zeros();
        let mut deph2 = Mat9::zeros();
        let mut se1 = Mat9::zeros();
        let mut se2 = Mat9::zeros();
        for x in 0..3 {
            deph1[(basis_index(RYD, x), basis_index(RYD, x))] = sde;
            deph1[(basis_index(ONE, x), basis_index(ONE, x))] = -sde;
            deph2[(basis_index(x, RYD), basis_index(x, RYD))] = sde;
            deph2[(basis_index(x, ONE), basis_index(x, ONE))] = -sde;
            se1[(basis_index(ONE, x), basis_index(RYD, x))] = sse;
            se2[(basis_index(x, ONE), basis_index(x, RYD))] = sse;
        }
        Self::from_operators(vec![deph1, deph2, se1, se2])
    }

    pub fn from_operators(operators: Vec<Mat9>) -> Self {
        let sparse = operators.iter().map(SparseOp::from_dense).collect();
        Self { operators, sparse }
    }

    pub fn empty() -> Self {
        Self::from_operators(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }
}

/// Precomputed generator: H_eff and the sparse jump list.
#[derive(Debug, Clone)]
pub struct Lindbladian {
    heff: Mat9,
    jumps: Vec<SparseOp>,
    scale: f64,
}

impl Lindbladian {
    pub fn new(p: &DriveParameters, jumps: &JumpOperatorSet) -> Self {
        let h = build_hamiltonian(p);
        let mut decay = Mat9::zeros();
        for l in &jumps.operators {
            decay += l.adjoint() * l;
        }
        let heff = h - decay * C64::new(0.0, 0.5);
        let scale = (0..DIM)
            .map(|i| (0..DIM).map(|j| heff[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
            + jumps.operators.iter().map(|l| l.norm_squared()).sum::<f64>();
        Self { heff, jumps: jumps.sparse.clone(), scale }
    }

    /// dρ/dt for a Hermitian ρ. Uses ρ H_eff† = (H_eff ρ)† so one product suffices.
    #[inline]
    pub fn apply(&self, rho: &Mat9) -> Mat9 {
        let a = self.heff * rho;
        let mut out = (a.adjoint() - a) * C64::new(0.0, 1.0);
        for j in &self.jumps {
            j.sandwich_into(rho, &mut out);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvolveStats {
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand–Prince 5(4) tableau (autonomous, so the nodes c_i are not needed).
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Largest entry modulus.
pub fn max_abs(m: &Mat9) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// y + h Σ c_i k_i
#[inline]
fn combine(y: &Mat9, h: f64, terms: &[(f64, &Mat9)]) -> Mat9 {
    let mut out = *y;
    for &(c, k) in terms {
        let s = c * h;
        for (o, v) in out.iter_mut().zip(k.iter()) {
            *o += v * s;
        }
    }
    out
}

fn check_args(duration: f64, tol: f64) -> Result<(), LindbladError> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(LindbladError::InvalidArgument(format!("duration {duration}")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(LindbladError::InvalidArgument(format!("tolerance {tol}")));
    }
    Ok(())
}

/// Adaptive integration of the master equation over `duration`, stopping
/// exactly at each of the ascending `stops` (relative times within
/// `[0, duration]`) and handing the state to `observe`.
pub fn integrate(
    gen: &Lindbladian,
    rho0: &Mat9,
    duration: f64,
    tol: f64,
    stops: &[f64],
    mut observe: impl FnMut(usize, &Mat9),
) -> Result<(Mat9, EvolveStats), LindbladError> {
    check_args(duration, tol)?;
    let mut stats = EvolveStats::default();
    let mut y = *rho0;
    let mut t = 0.0;
    let mut next_stop = 0;
    while next_stop < stops.len() && stops[next_stop] <= 0.0 {
        observe(next_stop, &y);
        next_stop += 1;
    }
    if duration == 0.0 || gen.scale == 0.0 {
        for i in next_stop..stops.len() {
            observe(i, &y);
        }
        return Ok((y, stats));
    }
    let mut h = (0.05 / gen.scale).min(duration);
    let h_min = 1e-14 * duration.max(1.0 / gen.scale);
    let mut k1 = gen.apply(&y);
    let max_steps = 50_000_000usize;
    while t < duration {
        let target = if next_stop < stops.len() { stops[next_stop].min(duration) } else { duration };
        let mut lands = false;
        let mut step = h;
        if t + step >= target * (1.0 - 1e-14) {
            step = target - t;
            lands = true;
        }
        let k2 = gen.apply(&combine(&y, step, &[(A21, &k1)]));
        let k3 = gen.apply(&combine(&y, step, &[(A31, &k1), (A32, &k2)]));
        let k4 = gen.apply(&combine(&y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = gen.apply(&combine(&y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = gen.apply(&combine(
            &y,
            step,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        ));
        let y_new = combine(&y, step, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
        let k7 = gen.apply(&y_new);
        let err_mat = combine(
            &Mat9::zeros(),
            step,
            &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
        );
        let err = max_abs(&err_mat) / tol;
        if err <= 1.0 {
            stats.accepted += 1;
            t = if lands { target } else { t + step };
            y = y_new;
            k1 = k7;
            while next_stop < stops.len() && stops[next_stop] <= t {
                observe(next_stop, &y);
                next_stop += 1;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            // a landing step may be artificially short; do not shrink h on it
            h = if lands { h.max(step * factor) } else { step * factor };
        } else {
            stats.rejected += 1;
            h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            if h < h_min {
                return Err(LindbladError::IntegrationFailure { time: t, step: h });
            }
        }
        if stats.accepted + stats.rejected > max_steps {
            return Err(LindbladError::IntegrationFailure { time: t, step: h });
        }
    }
    while next_stop < stops.len() {
        observe(next_stop, &y);
        next_stop += 1;
    }
    Ok((y, stats))
}

/// Evolves ρ₀ for `duration` under the given drive and jump operators.
pub fn evolve(
    rho0: &DensityMatrix,
    p: &DriveParameters,
    jumps: &JumpOperatorSet,
    duration: f64,
    tol: f64,
) -> Result<DensityMatrix, LindbladError> {
    evolve_with_stats(rho0, p, jumps, duration, tol).map(|(r, _)| r)
}

pub fn evolve_with_stats(
    rho0: &DensityMatrix,
    p: &DriveParameters,
    jumps: &JumpOperatorSet,
    duration: f64,
    tol: f64,
) -> Result<(DensityMatrix, EvolveStats), LindbladError> {
    rho0.validate()?;
    if !p.is_finite() {
        return Err(LindbladError::InvalidArgument("non-finite drive parameters".into()));
    }
    let gen = Lindbladian::new(p, jumps);
    let (m, stats) = integrate(&gen, rho0.matrix(), duration, tol, &[], |_, _| {})?;
    Ok((DensityMatrix::from_matrix_unchecked(m), stats))
}

/// |Φ+⟩ = (|00⟩ + |11⟩)/√2.
pub fn phi_plus() -> Vec9 {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut v = Vec9::zeros();
    v[basis_index(ZERO, ZERO)] = s;
    v[basis_index(ONE, ONE)] = s;
    v
}

/// ⟨ψ|ρ|ψ⟩.
pub fn overlap(rho: &Mat9, psi: &Vec9) -> f64 {
    (psi.adjoint() * rho * psi)[(0, 0)].re
}

/// ⟨Φ+|ρ|Φ+⟩.
pub fn bell_fidelity(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    let (a, b) = (basis_index(ZERO, ZERO), basis_index(ONE, ONE));
    (0.5 * (m[(a, a)] + m[(a, b)] + m[(b, a)] + m[(b, b)]).re).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn interaction_only_hamiltonian() {
        let h = build_hamiltonian(&DriveParameters::idle(5.0));
        for i in 0..DIM {
            for j in 0..DIM {
                let expect = if i == 8 && j == 8 { 5.0 } else { 0.0 };
                assert_eq!(h[(i, j)], c(expect));
            }
        }
    }

    #[test]
    fn rabi_coupling_on_first_donor() {
        let mut p = DriveParameters::idle(0.0);
        p.rabi_1 = c(2.0);
        let h = build_hamiltonian(&p);
        for x in 0..3 {
            assert_eq!(h[(basis_index(ONE, x), basis_index(RYD, x))], c(1.0));
            assert_eq!(h[(basis_index(RYD, x), basis_index(ONE, x))], c(1.0));
        }
        assert_eq!(h.iter().filter(|z| z.norm() > 0.0).count(), 6);
    }

    #[test]
    fn detuning_sign() {
        let mut p = DriveParameters::idle(0.0);
        p.detuning = 0.7;
        let h = build_hamiltonian(&p);
        assert_eq!(h[(basis_index(RYD, ZERO), basis_index(RYD, ZERO))], c(-0.7));
        assert_eq!(h[(basis_index(RYD, RYD), basis_index(RYD, RYD))], c(-1.4));
    }

    #[test]
    fn bell_fidelity_examples() {
        let phi = DensityMatrix::from_pure(&phi_plus());
        assert!((bell_fidelity(&phi) - 1.0).abs() < 1e-15);
        assert!((bell_fidelity(&DensityMatrix::from_basis(0)) - 0.5).abs() < 1e-15);
        assert!((bell_fidelity(&DensityMatrix::maximally_mixed()) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn zero_generator_leaves_state_unchanged() {
        let mut v = Vec9::zeros();
        for i in 0..DIM {
            v[i] = C64::new(0.1 * i as f64 + 0.3, -0.05 * i as f64);
        }
        let rho = DensityMatrix::from_pure(&v);
        let jumps = JumpOperatorSet::new(&DecoherenceRates::none());
        let out = evolve(&rho, &DriveParameters::idle(0.0), &jumps, 3.7, 1e-9).unwrap();
        assert!(max_abs(&(out.matrix() - rho.matrix())) < 1e-10);
    }

    #[test]
    fn spontaneous_decay_matches_exponential() {
        let rho = DensityMatrix::from_basis(basis_index(RYD, ZERO));
        let jumps = JumpOperatorSet::new(&DecoherenceRates::unit());
        for &t in &[0.3, 1.0, 2.5] {
            let out = evolve(&rho, &DriveParameters::idle(0.0), &jumps, t, 1e-10).unwrap();
            let pr = out.population(basis_index(RYD, ZERO));
            assert!((pr - (-t as f64).exp()).abs() < 1e-6, "t={t} p={pr}");
            // decay feeds |1⟩, never |0⟩
            assert!((out.population(basis_index(ONE, ZERO)) - (1.0 - (-t as f64).exp())).abs() < 1e-6);
        }
    }

    #[test]
    fn coherence_decays_at_one_and_a_half_gamma() {
        let mut v = Vec9::zeros();
        v[basis_index(ONE, ZERO)] = c(1.0);
        v[basis_index(RYD, ZERO)] = c(1.0);
        let rho = DensityMatrix::from_pure(&v);
        let jumps = JumpOperatorSet::new(&DecoherenceRates::unit());
        for &t in &[0.2, 1.0, 2.0] {
            let out = evolve(&rho, &DriveParameters::idle(0.0), &jumps, t, 1e-10).unwrap();
            let coh = out.matrix()[(basis_index(ONE, ZERO), basis_index(RYD, ZERO))].norm();
            assert!((coh - 0.5 * (-1.5 * t as f64).exp()).abs() < 1e-6, "t={t} coh={coh}");
        }
    }

    #[test]
    fn doubly_excited_state_never_populates_ground() {
        let rho = DensityMatrix::from_basis(basis_index(RYD, RYD));
        let jumps = JumpOperatorSet::new(&DecoherenceRates::unit());
        let out = evolve(&rho, &DriveParameters::idle(3.0), &jumps, 4.0, 1e-9).unwrap();
        let zero_pop: f64 = (0..3)
            .map(|x| out.population(basis_index(ZERO, x)) + out.population(basis_index(x, ZERO)))
            .sum();
        assert!(zero_pop.abs() < 1e-10);
    }

    #[test]
    fn invalid_initial_state_is_rejected() {
        let bad = DensityMatrix::from_matrix_unchecked(Mat9::identity());
        let jumps = JumpOperatorSet::empty();
        assert!(matches!(
            evolve(&bad, &DriveParameters::idle(0.0), &jumps, 1.0, 1e-9),
            Err(LindbladError::InvalidState(_))
        ));
    }

    #[test]
    fn observer_hits_requested_times() {
        let rho = DensityMatrix::from_basis(basis_index(RYD, ZERO));
        let gen = Lindbladian::new(&DriveParameters::idle(0.0), &JumpOperatorSet::new(&DecoherenceRates::unit()));
        let stops = [0.0, 0.5, 1.0, 2.0];
        let mut seen = vec![0.0; 4];
        integrate(&gen, rho.matrix(), 2.0, 1e-10, &stops, |i, m| {
            seen[i] = m[(6, 6)].re;
        })
        .unwrap();
        for (i, &t) in stops.iter().enumerate() {
            assert!((seen[i] - (-t as f64).exp()).abs() < 1e-7);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn state_from(seed: &[f64]) -> DensityMatrix {
            let mut v = Vec9::zeros();
            for i in 0..DIM {
                v[i] = C64::new(seed[2 * i], seed[2 * i + 1]);
            }
            if v.norm() < 1e-6 {
                v[0] = c(1.0);
            }
            DensityMatrix::from_pure(&v)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn hamiltonian_is_hermitian(
                a in -5.0f64..5.0, b in -5.0f64..5.0, c2 in -5.0f64..5.0,
                d in -5.0f64..5.0, delta in -5.0f64..5.0, u in -50.0f64..50.0
            ) {
                let p = DriveParameters { rabi_1: C64::new(a, b), rabi_2: C64::new(c2, d), detuning: delta, interaction: u };
                let h = build_hamiltonian(&p);
                prop_assert_eq!(max_abs(&(h - h.adjoint())), 0.0);
            }

            #[test]
            fn evolution_preserves_density_matrix_invariants(
                seed in proptest::collection::vec(-1.0f64..1.0, 18),
                om in 0.5f64..20.0, xi in 0.0f64..6.28, delta in -5.0f64..5.0,
                u in -40.0f64..40.0, t in 0.05f64..1.5
            ) {
                let rho = state_from(&seed);
                let p = DriveParameters { rabi_1: C64::from_polar(om, xi), rabi_2: C64::new(om, 0.0), detuning: delta, interaction: u };
                let jumps = JumpOperatorSet::new(&DecoherenceRates::unit());
                let out = evolve(&rho, &p, &jumps, t, 1e-9).unwrap();
                prop_assert!((out.trace() - c(1.0)).norm() < 1e-9);
                prop_assert!(out.hermiticity_error() < 1e-10);
                prop_assert!(out.min_eigenvalue() > -1e-9);
            }

            #[test]
            fn closed_evolution_conserves_purity(
                seed in proptest::collection::vec(-1.0f64..1.0, 18),
                om in 0.5f64..20.0, delta in -5.0f64..5.0, u in -40.0f64..40.0, t in 0.05f64..1.5
            ) {
                let rho = state_from(&seed);
                let p = DriveParameters { rabi_1: c(om), rabi_2: C64::new(0.0, om), detuning: delta, interaction: u };
                let out = evolve(&rho, &p, &JumpOperatorSet::new(&DecoherenceRates::none()), t, 1e-10).unwrap();
                prop_assert!((out.purity() - 1.0).abs() < 1e-8);
            }

            #[test]
            fn halving_tolerance_is_consistent(
                om in 1.0f64..20.0, delta in -3.0f64..3.0, u in 1.0f64..40.0, t in 0.1f64..1.0
            ) {
                let s = C64::new(0.5, 0.0);
                let mut v = Vec9::zeros();
                for &(a, b) in &[(0, 0), (0, 1), (1, 0), (1, 1)] {
                    v[basis_index(a, b)] = s;
                }
                let rho = DensityMatrix::from_pure(&v);
                let p = DriveParameters { rabi_1: c(om), rabi_2: c(om), detuning: delta, interaction: u };
                let jumps = JumpOperatorSet::new(&DecoherenceRates::unit());
                let tol = 1e-8;
                let f1 = bell_fidelity(&evolve(&rho, &p, &jumps, t, tol).unwrap());
                let f2 = bell_fidelity(&evolve(&rho, &p, &jumps, t, tol / 2.0).unwrap());
                prop_assert!((f1 - f2).abs() <= tol, "{} vs {}", f1, f2);
            }
        }
    }
}
