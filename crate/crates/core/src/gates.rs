//! Pulse protocols for the controlled-phase gate and their execution on the
//! Lindblad engine.
//!
//! Three sequences are provided: the resonant π–2π–π blockade gate, the
//! two-pulse off-resonant blockade gate, and the blockade-inspired gate that
//! times its pulses to the unblockaded Rabi cycle. All start from |++⟩.
//!
//! The ideal gate is a CZ up to single-qubit phases, so the output of the
//! pulses is compared against CZ|++⟩ after a perfect local phase gate
//! P_φ ⊗ P_φ; that is the Bell state |Φ+⟩ up to a Hadamard on donor 2.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lindblad::{
    basis_index, bell_fidelity, integrate, DensityMatrix, DriveParameters, JumpOperatorSet,
    LindbladError, Lindbladian, Mat9, Vec9, C64, DEFAULT_TOL, DIM, ONE, ZERO,
};
use crate::units::DecoherenceRates;

pub const LEVINE_DETUNING_RATIO: f64 = 0.377371;
pub const LEVINE_XI: f64 = 3.90242;
pub const INSPIRED_DETUNING_RATIO: f64 = 0.28757;
pub const INSPIRED_XI: f64 = 1.5306;
pub const INSPIRED_RABI_OVER_U: f64 = 1.45747;

/// Number of population samples recorded across a protocol.
pub const TRACE_SAMPLES: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("Rabi frequency must be positive, got {0}")]
    NonPositiveRabi(f64),
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error(transparent)]
    Lindblad(#[from] LindbladError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolKind {
    ResonantBlockade,
    OffResonantBlockade,
    BlockadeInspired,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] =
        [Self::ResonantBlockade, Self::OffResonantBlockade, Self::BlockadeInspired];

    pub fn name(&self) -> &'static str {
        match self {
            Self::ResonantBlockade => "resonant",
            Self::OffResonantBlockade => "off-resonant",
            Self::BlockadeInspired => "inspired",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resonant" | "resonant-blockade" | "jaksch" => Some(Self::ResonantBlockade),
            "off-resonant" | "off-resonant-blockade" | "levine" => Some(Self::OffResonantBlockade),
            "inspired" | "blockade-inspired" => Some(Self::BlockadeInspired),
            _ => None,
        }
    }

    /// Builds the protocol from (Ω, Δ/Ω, ξ). The resonant gate ignores the last two.
    pub fn build(&self, rabi: f64, detuning_ratio: f64, xi: f64) -> Result<PulseProtocol, GateError> {
        match self {
            Self::ResonantBlockade => make_resonant_blockade(rabi),
            Self::OffResonantBlockade => make_off_resonant_blockade(rabi, detuning_ratio, xi),
            Self::BlockadeInspired => make_blockade_inspired(rabi, detuning_ratio, xi),
        }
    }

    /// Default (Δ/Ω, ξ) for the kind.
    pub fn default_shape(&self) -> (f64, f64) {
        match self {
            Self::ResonantBlockade => (0.0, 0.0),
            Self::OffResonantBlockade => (LEVINE_DETUNING_RATIO, LEVINE_XI),
            Self::BlockadeInspired => (INSPIRED_DETUNING_RATIO, INSPIRED_XI),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    pub rabi_magnitude: f64,
    pub phase: f64,
    pub detuning: f64,
    pub duration: f64,
    pub addressing: [bool; 2],
}

impl PulseSegment {
    pub fn validate(&self) -> Result<(), GateError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(GateError::InvalidProtocol(format!("segment duration {}", self.duration)));
        }
        if !(self.addressing[0] || self.addressing[1]) {
            return Err(GateError::InvalidProtocol("segment addresses no donor".into()));
        }
        if !(self.rabi_magnitude.is_finite() && self.phase.is_finite() && self.detuning.is_finite()) {
            return Err(GateError::InvalidProtocol("non-finite segment parameter".into()));
        }
        Ok(())
    }

    pub fn drive(&self, interaction: f64) -> DriveParameters {
        let om = C64::from_polar(self.rabi_magnitude, self.phase);
        let zero = C64::new(0.0, 0.0);
        DriveParameters {
            rabi_1: if self.addressing[0] { om } else { zero },
            rabi_2: if self.addressing[1] { om } else { zero },
            detuning: self.detuning,
            interaction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseProtocol {
    pub kind: ProtocolKind,
    pub segments: Vec<PulseSegment>,
    /// Fixed local phase used when the phase is not re-optimized.
    pub local_phase: Option<f64>,
}

impl PulseProtocol {
    pub fn gate_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn validate(&self) -> Result<(), GateError> {
        for s in &self.segments {
            s.validate()?;
        }
        let n = self.segments.len();
        match self.kind {
            ProtocolKind::ResonantBlockade if n != 3 => {
                Err(GateError::InvalidProtocol(format!("resonant gate needs 3 segments, got {n}")))
            }
            ProtocolKind::OffResonantBlockade | ProtocolKind::BlockadeInspired if n != 2 => {
                Err(GateError::InvalidProtocol(format!("two-pulse gate needs 2 segments, got {n}")))
            }
            _ => Ok(()),
        }
    }

    /// Adds `offset · Ω` to the detuning of every segment, keeping the timing.
    pub fn with_detuning_offset(&self, offset: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.segments {
            s.detuning += offset * s.rabi_magnitude;
        }
        out
    }

    /// Flips the detuning sign, which maps the gate for interaction u onto −u.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.segments {
            s.detuning = -s.detuning;
            s.phase = -s.phase;
        }
        out
    }

    /// Rotates every segment phase by the same angle.
    pub fn with_phase_rotation(&self, angle: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.segments {
            s.phase += angle;
        }
        out
    }
}

fn check_rabi(rabi: f64) -> Result<(), GateError> {
    if rabi > 0.0 && rabi.is_finite() {
        Ok(())
    } else {
        Err(GateError::NonPositiveRabi(rabi))
    }
}

/// π on donor 1, 2π on donor 2, π on donor 1, all on resonance.
pub fn make_resonant_blockade(rabi: f64) -> Result<PulseProtocol, GateError> {
    check_rabi(rabi)?;
    let seg = |turns: f64, addressing| PulseSegment {
        rabi_magnitude: rabi,
        phase: 0.0,
        detuning: 0.0,
        duration: turns * PI / rabi,
        addressing,
    };
    Ok(PulseProtocol {
        kind: ProtocolKind::ResonantBlockade,
        segments: vec![seg(1.0, [true, false]), seg(2.0, [false, true]), seg(1.0, [true, false])],
        local_phase: None,
    })
}

fn two_pulse(kind: ProtocolKind, rabi: f64, detuning_ratio: f64, xi: f64, tau: f64) -> PulseProtocol {
    let seg = |phase| PulseSegment {
        rabi_magnitude: rabi,
        phase,
        detuning: detuning_ratio * rabi,
        duration: tau,
        addressing: [true, true],
    };
    PulseProtocol { kind, segments: vec![seg(0.0), seg(xi)], local_phase: None }
}

/// Two global pulses of length τ = 2π/√(2Ω²+Δ²), the second with phase ξ.
pub fn make_off_resonant_blockade(
    rabi: f64,
    detuning_ratio: f64,
    xi: f64,
) -> Result<PulseProtocol, GateError> {
    check_rabi(rabi)?;
    let delta = detuning_ratio * rabi;
    let tau = 2.0 * PI / (2.0 * rabi * rabi + delta * delta).sqrt();
    Ok(two_pulse(ProtocolKind::OffResonantBlockade, rabi, detuning_ratio, xi, tau))
}

/// Two global pulses of length τ = 2π/√(Ω²+Δ²), the second with phase ξ.
pub fn make_blockade_inspired(
    rabi: f64,
    detuning_ratio: f64,
    xi: f64,
) -> Result<PulseProtocol, GateError> {
    check_rabi(rabi)?;
    let delta = detuning_ratio * rabi;
    let tau = 2.0 * PI / (rabi * rabi + delta * delta).sqrt();
    Ok(two_pulse(ProtocolKind::BlockadeInspired, rabi, detuning_ratio, xi, tau))
}

/// |++⟩ with |+⟩ = (|0⟩+|1⟩)/√2.
pub fn initial_state() -> DensityMatrix {
    let mut v = Vec9::zeros();
    for &(a, b) in &[(ZERO, ZERO), (ZERO, ONE), (ONE, ZERO), (ONE, ONE)] {
        v[basis_index(a, b)] = C64::new(0.5, 0.0);
    }
    DensityMatrix::from_pure(&v)
}

/// CZ|++⟩ = (|00⟩+|01⟩+|10⟩−|11⟩)/2.
pub fn cz_target() -> Vec9 {
    let mut v = Vec9::zeros();
    v[basis_index(ZERO, ZERO)] = C64::new(0.5, 0.0);
    v[basis_index(ZERO, ONE)] = C64::new(0.5, 0.0);
    v[basis_index(ONE, ZERO)] = C64::new(0.5, 0.0);
    v[basis_index(ONE, ONE)] = C64::new(-0.5, 0.0);
    v
}

/// P_φ ⊗ P_φ with P_φ = diag(1, e^{iφ}, 1), as a diagonal.
pub fn local_phase_diagonal(phi: f64) -> [C64; DIM] {
    let p = [C64::new(1.0, 0.0), C64::from_polar(1.0, phi), C64::new(1.0, 0.0)];
    std::array::from_fn(|k| p[k / 3] * p[k % 3])
}

/// Hadamard on the qubit subspace of donor 2, identity on |r⟩.
pub fn hadamard_on_second() -> Mat9 {
    let mut h = Mat9::zeros();
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    for a in 0..3 {
        h[(basis_index(a, 0), basis_index(a, 0))] = s;
        h[(basis_index(a, 0), basis_index(a, 1))] = s;
        h[(basis_index(a, 1), basis_index(a, 0))] = s;
        h[(basis_index(a, 1), basis_index(a, 1))] = -s;
        h[(basis_index(a, 2), basis_index(a, 2))] = C64::new(1.0, 0.0);
    }
    h
}

/// The complete perfect local correction: P_φ ⊗ P_φ, then the Hadamard on donor 2.
pub fn local_correction(phi: f64) -> Mat9 {
    let d = local_phase_diagonal(phi);
    let mut p = Mat9::zeros();
    for k in 0..DIM {
        p[(k, k)] = d[k];
    }
    hadamard_on_second() * p
}

/// ⟨ψ|D ρ D†|ψ⟩ for diagonal D.
fn phased_overlap(rho: &Mat9, psi: &Vec9, diag: &[C64; DIM]) -> f64 {
    let w: [C64; DIM] = std::array::from_fn(|i| psi[i].conj() * diag[i]);
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..DIM {
        if w[i] == C64::new(0.0, 0.0) {
            continue;
        }
        for j in 0..DIM {
            acc += w[i] * rho[(i, j)] * w[j].conj();
        }
    }
    acc.re
}

/// Bell fidelity after the perfect local correction with phase φ.
pub fn corrected_fidelity(rho: &DensityMatrix, phi: f64) -> f64 {
    phased_overlap(rho.matrix(), &cz_target(), &local_phase_diagonal(phi)).clamp(0.0, 1.0)
}

/// Maximizes a 2π-periodic function: 720-point scan, then golden section
/// inside the bracketing grid cells.
pub fn maximize_periodic(f: impl Fn(f64) -> f64) -> f64 {
    const N: usize = 720;
    let step = 2.0 * PI / N as f64;
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for i in 0..N {
        let v = f(i as f64 * step);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let (mut a, mut b) = ((best_i as f64 - 1.0) * step, (best_i as f64 + 1.0) * step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let x = if f(x) >= best { x } else { best_i as f64 * step };
    x.rem_euclid(2.0 * PI)
}

/// φ maximizing ⟨Φ+|(P_φ⊗P_φ) ρ (P_φ⊗P_φ)†|Φ+⟩.
pub fn optimal_local_phase(rho: &DensityMatrix) -> f64 {
    let phi = crate::lindblad::phi_plus();
    maximize_periodic(|x| phased_overlap(rho.matrix(), &phi, &local_phase_diagonal(x)))
}

/// φ maximizing [`corrected_fidelity`].
pub fn optimal_correction_phase(rho: &DensityMatrix) -> f64 {
    let t = cz_target();
    maximize_periodic(|x| phased_overlap(rho.matrix(), &t, &local_phase_diagonal(x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTrace {
    pub times: Vec<f64>,
    pub populations: Vec<[f64; DIM]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateResult {
    /// State after the pulses, before the local correction.
    pub final_state: DensityMatrix,
    pub fidelity: f64,
    pub gate_duration: f64,
    pub local_phase: f64,
    pub population_traces: Option<PopulationTrace>,
}

impl GateResult {
    /// The state after the local correction; its [`bell_fidelity`] equals `fidelity`.
    pub fn corrected_state(&self) -> DensityMatrix {
        self.final_state.conjugate_by(&local_correction(self.local_phase))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub tol: f64,
    pub optimize_local_phase: bool,
    pub record_traces: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, optimize_local_phase: true, record_traces: false }
    }
}

/// Runs the protocol from |++⟩ and scores it against the Bell state.
pub fn run_protocol(
    protocol: &PulseProtocol,
    interaction: f64,
    rates: &DecoherenceRates,
    optimize_local_phase: bool,
) -> Result<GateResult, GateError> {
    run_protocol_with(
        protocol,
        interaction,
        rates,
        &RunOptions { optimize_local_phase, ..RunOptions::default() },
    )
}

pub fn run_protocol_with(
    protocol: &PulseProtocol,
    interaction: f64,
    rates: &DecoherenceRates,
    opts: &RunOptions,
) -> Result<GateResult, GateError> {
    protocol.validate()?;
    let rho = evolve_protocol(protocol, interaction, rates, opts.tol, opts.record_traces)?;
    let (rho, traces) = rho;
    let local_phase = if opts.optimize_local_phase {
        optimal_correction_phase(&rho)
    } else {
        protocol.local_phase.unwrap_or(0.0)
    };
    let fidelity = corrected_fidelity(&rho, local_phase);
    Ok(GateResult {
        final_state: rho,
        fidelity,
        gate_duration: protocol.gate_duration(),
        local_phase,
        population_traces: traces,
    })
}

/// Runs the pulses only, starting from an arbitrary state.
pub fn evolve_segments(
    protocol: &PulseProtocol,
    rho0: &DensityMatrix,
    interaction: f64,
    rates: &DecoherenceRates,
    tol: f64,
) -> Result<DensityMatrix, GateError> {
    protocol.validate()?;
    let jumps = JumpOperatorSet::new(rates);
    let mut m = *rho0.matrix();
    for seg in &protocol.segments {
        let gen = Lindbladian::new(&seg.drive(interaction), &jumps);
        m = integrate(&gen, &m, seg.duration, tol, &[], |_, _| {})?.0;
    }
    Ok(DensityMatrix::from_matrix_unchecked(m))
}

fn evolve_protocol(
    protocol: &PulseProtocol,
    interaction: f64,
    rates: &DecoherenceRates,
    tol: f64,
    record: bool,
) -> Result<(DensityMatrix, Option<PopulationTrace>), GateError> {
    if !record {
        let rho = evolve_segments(protocol, &initial_state(), interaction, rates, tol)?;
        return Ok((rho, None));
    }
    let jumps = JumpOperatorSet::new(rates);
    let total = protocol.gate_duration();
    let times: Vec<f64> =
        (0..TRACE_SAMPLES).map(|k| total * k as f64 / (TRACE_SAMPLES - 1) as f64).collect();
    let mut populations = vec![[0.0; DIM]; TRACE_SAMPLES];
    let mut m = *initial_state().matrix();
    let mut start = 0.0;
    let mut next = 0;
    let last = protocol.segments.len() - 1;
    for (si, seg) in protocol.segments.iter().enumerate() {
        let end = if si == last { total } else { start + seg.duration };
        let first = next;
        while next < TRACE_SAMPLES && (times[next] < end || si == last) {
            next += 1;
        }
        let stops: Vec<f64> = times[first..next].iter().map(|t| (t - start).max(0.0)).collect();
        let gen = Lindbladian::new(&seg.drive(interaction), &jumps);
        m = integrate(&gen, &m, seg.duration, tol, &stops, |i, r| {
            populations[first + i] = std::array::from_fn(|k| r[(k, k)].re);
        })?
        .0;
        start = end;
    }
    Ok((
        DensityMatrix::from_matrix_unchecked(m),
        Some(PopulationTrace { times, populations }),
    ))
}

/// Diagonal of the gate unitary on (|00⟩, |01⟩, |10⟩, |11⟩), read off from
/// coherences with |00⟩ in a decoherence-free run. Only meaningful when the
/// protocol leaves |00⟩ untouched, as the resonant gate does.
pub fn qubit_phases(
    protocol: &PulseProtocol,
    interaction: f64,
    tol: f64,
) -> Result<[C64; 4], GateError> {
    let states = [(ZERO, ZERO), (ZERO, ONE), (ONE, ZERO), (ONE, ONE)];
    let mut out = [C64::new(0.0, 0.0); 4];
    let z = basis_index(ZERO, ZERO);
    for (k, &(a, b)) in states.iter().enumerate() {
        let idx = basis_index(a, b);
        if idx == z {
            let rho = evolve_segments(protocol, &DensityMatrix::from_basis(z), interaction, &DecoherenceRates::none(), tol)?;
            out[k] = C64::new(rho.population(z).sqrt(), 0.0);
            continue;
        }
        let mut v = Vec9::zeros();
        v[z] = C64::new(1.0, 0.0);
        v[idx] = C64::new(1.0, 0.0);
        let rho = evolve_segments(protocol, &DensityMatrix::from_pure(&v), interaction, &DecoherenceRates::none(), tol)?;
        out[k] = rho.matrix()[(idx, z)] * 2.0;
    }
    Ok(out)
}

/// Fidelity with the literal Bell overlap, no Hadamard: provided for
/// comparison with [`corrected_fidelity`].
pub fn literal_bell_fidelity(rho: &DensityMatrix, phi: f64) -> f64 {
    let d = local_phase_diagonal(phi);
    let mut p = Mat9::zeros();
    for k in 0..DIM {
        p[(k, k)] = d[k];
    }
    bell_fidelity(&rho.conjugate_by(&p))
}
