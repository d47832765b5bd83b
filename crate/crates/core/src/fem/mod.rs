//! Single-valley effective-mass envelope solver.
//!
//! The anisotropic donor problem is rescaled along the valley axis
//! (z' = z/√γ), written in polar coordinates with F = Φ(φ) Y(η, θ)/r' and
//! the radius compressed as r' = r₀ tan η. The resulting 2D generalized
//! eigenproblem is discretized with bilinear elements and solved by
//! shift-invert Lanczos. All quantities are in effective atomic units.

mod assemble;
mod eigen;

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use assemble::{assemble, integrate_pair, interpolate, Boundary, Grid, Potential};
use eigen::lowest_eigenpairs;

/// Relative change of the ground energy on a half-resolution mesh above
/// which a mesh is rejected.
pub const MESH_CONVERGENCE_TOL: f64 = 0.005;
/// Minimum overlap for identifying a state across field steps.
pub const TRACKING_OVERLAP: f64 = 0.5;
/// Default field cutoff radius r' (a.u.) beyond which the linear field
/// potential is held constant, keeping the pencil bounded below.
pub const DEFAULT_FIELD_CUTOFF: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("mesh too coarse: ground energy {coarse} on half mesh vs {fine}")]
    MeshTooCoarse { coarse: f64, fine: f64 },
    #[error("eigensolver failure: {0}")]
    EigensolverFailure(String),
    #[error("central-cell bracket failure: {0}")]
    BracketFailure(String),
    #[error("state tracking lost at field {field}: best overlap {overlap}")]
    StateCrossing { field: f64, overlap: f64 },
    #[error("catalog format error: {0}")]
    Format(String),
}

/// Parity under z → −z (reflection through the plane normal to the valley axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

/// Real azimuthal factor: cos(mφ)/√π or sin(mφ)/√π; 1/√(2π) when m = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AngularKind {
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshSize {
    pub n_eta: usize,
    /// θ cells on the half range [0, π/2]; doubled when the full range is solved.
    pub n_theta: usize,
}

impl Default for MeshSize {
    fn default() -> Self {
        Self { n_eta: 128, n_theta: 96 }
    }
}

/// Square-well central-cell correction, in a.u. Depth is negative for attraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralCell {
    pub depth: f64,
    pub radius: f64,
}

/// Uniform field along the valley axis, in a.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldTerm {
    pub strength: f64,
    /// Field acts only for r' beyond this radius.
    pub onset_radius: f64,
    pub cutoff_radius: f64,
}

impl FieldTerm {
    pub fn new(strength: f64) -> Self {
        Self { strength, onset_radius: 0.0, cutoff_radius: DEFAULT_FIELD_CUTOFF }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// γ = m_t/m_l.
    pub anisotropy_ratio: f64,
    pub magnetic_quantum_number: u32,
    /// Restrict a zero-field solve to one parity sector.
    pub parity: Option<Parity>,
    /// r₀ in a.u.
    pub scaling_radius: f64,
    pub mesh: MeshSize,
    pub nuclear_charge: f64,
    pub central_cell: Option<CentralCell>,
    pub field: Option<FieldTerm>,
    pub eigenpair_count: usize,
    pub check_convergence: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            anisotropy_ratio: 0.191 / 0.916,
            magnetic_quantum_number: 0,
            parity: None,
            scaling_radius: 1.0,
            mesh: MeshSize::default(),
            nuclear_charge: 1.0,
            central_cell: None,
            field: None,
            eigenpair_count: 10,
            check_convergence: true,
        }
    }
}

impl SolverConfig {
    pub fn isotropic() -> Self {
        Self { anisotropy_ratio: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), FemError> {
        let bad = |s: &str| Err(FemError::InvalidConfig(s.to_string()));
        if !(self.anisotropy_ratio > 0.0 && self.anisotropy_ratio <= 1.0) {
            return bad("anisotropy ratio must lie in (0, 1]");
        }
        if self.mesh.n_eta < 32 || self.mesh.n_theta < 32 {
            return bad("mesh must be at least 32x32");
        }
        if !(self.scaling_radius > 0.0 && self.scaling_radius.is_finite()) {
            return bad("scaling radius must be positive");
        }
        if !(self.nuclear_charge > 0.0 && self.nuclear_charge.is_finite()) {
            return bad("nuclear charge must be positive");
        }
        if self.eigenpair_count == 0 {
            return bad("eigenpair count must be positive");
        }
        if let Some(cc) = self.central_cell {
            if !cc.depth.is_finite() || !(cc.radius >= 0.0 && cc.radius.is_finite()) {
                return bad("central cell must be finite with non-negative radius");
            }
        }
        if let Some(f) = self.field {
            if !f.strength.is_finite() || !(f.onset_radius >= 0.0) || !(f.cutoff_radius > f.onset_radius) {
                return bad("field term must be finite with 0 <= onset < cutoff");
            }
        }
        Ok(())
    }

    fn full_domain(&self) -> bool {
        self.field.is_some()
    }

    fn grid(&self) -> Grid {
        if self.full_domain() {
            Grid { ne: self.mesh.n_eta, nt: 2 * self.mesh.n_theta, theta_max: PI }
        } else {
            Grid { ne: self.mesh.n_eta, nt: self.mesh.n_theta, theta_max: FRAC_PI_2 }
        }
    }

    fn potential(&self) -> Potential {
        let cc = self.central_cell.unwrap_or(CentralCell { depth: 0.0, radius: 0.0 });
        let f = self.field.unwrap_or(FieldTerm::new(0.0));
        Potential {
            gamma: self.anisotropy_ratio,
            charge: self.nuclear_charge,
            cc_depth: cc.depth,
            cc_radius: cc.radius,
            field: f.strength,
            field_onset: f.onset_radius,
            field_cutoff: f.cutoff_radius,
        }
    }

    fn shift_guess(&self) -> f64 {
        let z2 = self.nuclear_charge.powi(2);
        -0.55 * z2 / self.anisotropy_ratio.sqrt() + self.central_cell.map_or(0.0, |c| c.depth.min(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLabels {
    pub m: u32,
    pub angular: AngularKind,
    /// None when a field mixes the parity sectors.
    pub parity: Option<Parity>,
    pub eta_nodes: u32,
    pub theta_nodes: u32,
}

/// One eigenpair of the 2D problem, carried on the full θ ∈ [0, π] grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeState {
    /// Energy in effective Hartree.
    pub energy: f64,
    /// Y at grid node (i, j), index i·(n_theta_full + 1) + j.
    pub surface: Vec<f64>,
    pub labels: StateLabels,
    /// Real-space norm recomputed from the stored surface.
    pub norm_check: f64,
    pub n_eta: usize,
    pub n_theta_full: usize,
    pub scaling_radius: f64,
    pub anisotropy_ratio: f64,
}

impl EnvelopeState {
    fn grid(&self) -> Grid {
        Grid { ne: self.n_eta, nt: self.n_theta_full, theta_max: PI }
    }

    pub fn same_mesh(&self, other: &Self) -> bool {
        self.n_eta == other.n_eta
            && self.n_theta_full == other.n_theta_full
            && self.scaling_radius == other.scaling_radius
            && self.anisotropy_ratio == other.anisotropy_ratio
    }

    /// Same envelope with the other azimuthal factor (m > 0 only).
    pub fn with_angular(&self, kind: AngularKind) -> Self {
        let mut s = self.clone();
        if s.labels.m > 0 {
            s.labels.angular = kind;
        }
        s
    }

    fn azimuthal(&self, phi: f64) -> f64 {
        let m = self.labels.m as f64;
        if self.labels.m == 0 {
            1.0 / (2.0 * PI).sqrt()
        } else {
            match self.labels.angular {
                AngularKind::Cos => (m * phi).cos() / PI.sqrt(),
                AngularKind::Sin => (m * phi).sin() / PI.sqrt(),
            }
        }
    }

    /// Envelope amplitude at a real-space point (a.u.), valley axis along z.
    pub fn evaluate(&self, p: [f64; 3]) -> f64 {
        let g = self.anisotropy_ratio;
        let zp = p[2] / g.sqrt();
        let rho2 = p[0] * p[0] + p[1] * p[1];
        let r = (rho2 + zp * zp).sqrt().max(1e-12);
        let eta = (r / self.scaling_radius).atan();
        let theta = (zp / r).clamp(-1.0, 1.0).acos();
        let phi = p[1].atan2(p[0]);
        self.azimuthal(phi) * interpolate(&self.grid(), &self.surface, eta, theta) / r
    }

    /// Real-space ⟨self|w|other⟩ for a weight depending on (r', θ) only,
    /// with the azimuthal integral supplied.
    fn radial_angular(&self, other: &Self, phi_factor: f64, w: impl Fn(f64, f64) -> f64) -> f64 {
        if phi_factor == 0.0 {
            return 0.0;
        }
        assert!(self.same_mesh(other), "states live on different meshes");
        self.anisotropy_ratio.sqrt()
            * phi_factor
            * integrate_pair(&self.grid(), self.scaling_radius, &self.surface, &other.surface, w)
    }

    pub fn overlap(&self, other: &Self) -> f64 {
        let f = phi_integral(self, other, |_| 1.0);
        self.radial_angular(other, f, |_, _| 1.0)
    }

    /// Dipole matrix element ⟨self|r_k|other⟩ (a.u.), k = 0, 1, 2 for x, y, z.
    pub fn dipole(&self, other: &Self, axis: usize) -> f64 {
        let sg = self.anisotropy_ratio.sqrt();
        match axis {
            0 => {
                let f = phi_integral(self, other, f64::cos);
                self.radial_angular(other, f, |r, th| r * th.sin())
            }
            1 => {
                let f = phi_integral(self, other, f64::sin);
                self.radial_angular(other, f, |r, th| r * th.sin())
            }
            2 => {
                let f = phi_integral(self, other, |_| 1.0);
                self.radial_angular(other, f, move |r, th| sg * r * th.cos())
            }
            _ => panic!("axis must be 0, 1 or 2"),
        }
    }
}

/// ∫ Φ_a Φ_b g(φ) dφ by the trapezoidal rule, exact for the low-order
/// trigonometric products that occur here.
fn phi_integral(a: &EnvelopeState, b: &EnvelopeState, g: impl Fn(f64) -> f64) -> f64 {
    const N: usize = 64;
    let h = 2.0 * PI / N as f64;
    let s: f64 = (0..N)
        .map(|k| {
            let phi = k as f64 * h;
            a.azimuthal(phi) * b.azimuthal(phi) * g(phi)
        })
        .sum();
    let v = s * h;
    if v.abs() < 1e-13 {
        0.0
    } else {
        v
    }
}

/// Envelope amplitude at `point` (a.u.).
pub fn evaluate_envelope(state: &EnvelopeState, point: [f64; 3]) -> f64 {
    state.evaluate(point)
}

fn count_sign_changes(values: impl Iterator<Item = f64>, floor: f64) -> u32 {
    let mut last = 0.0f64;
    let mut n = 0;
    for v in values {
        if v.abs() <= floor {
            continue;
        }
        if last != 0.0 && v.signum() != last.signum() {
            n += 1;
        }
        last = v;
    }
    n
}

fn to_state(cfg: &SolverConfig, g: &Grid, free: &[usize], value: f64, vec: &[f64], parity: Option<Parity>) -> EnvelopeState {
    let mut half = vec![0.0; g.nodes()];
    for (k, &node) in free.iter().enumerate() {
        half[node] = vec[k];
    }
    let full_nt = if g.theta_max > FRAC_PI_2 + 1e-12 { g.nt } else { 2 * g.nt };
    let mut surface = vec![0.0; (g.ne + 1) * (full_nt + 1)];
    for i in 0..=g.ne {
        for j in 0..=full_nt {
            surface[i * (full_nt + 1) + j] = if full_nt == g.nt {
                half[g.node(i, j)]
            } else if j <= g.nt {
                half[g.node(i, j)]
            } else {
                let mirrored = half[g.node(i, full_nt - j)];
                if parity == Some(Parity::Odd) {
                    -mirrored
                } else {
                    mirrored
                }
            };
        }
    }
    let domain_weight = if full_nt == g.nt { 1.0 } else { 2.0 };
    let scale = 1.0 / (domain_weight * cfg.anisotropy_ratio.sqrt()).sqrt();
    let (imax, vmax) = surface
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |acc, (k, &v)| if v.abs() > acc.1.abs() { (k, v) } else { acc });
    let sign = if vmax < 0.0 { -scale } else { scale };
    surface.iter_mut().for_each(|v| *v *= sign);

    let w = full_nt + 1;
    let (ci, cj) = (imax / w, imax % w);
    let floor = 1e-3 * vmax.abs() * scale;
    let eta_nodes = count_sign_changes((0..=g.ne).map(|i| surface[i * w + cj]), floor);
    let theta_nodes = count_sign_changes((0..=full_nt).map(|j| surface[ci * w + j]), floor);
    let mut st = EnvelopeState {
        energy: value,
        surface,
        labels: StateLabels {
            m: cfg.magnetic_quantum_number,
            angular: AngularKind::Cos,
            parity,
            eta_nodes,
            theta_nodes,
        },
        norm_check: 0.0,
        n_eta: g.ne,
        n_theta_full: full_nt,
        scaling_radius: cfg.scaling_radius,
        anisotropy_ratio: cfg.anisotropy_ratio,
    };
    st.norm_check = st.overlap(&st);
    st
}

fn solve_sector(cfg: &SolverConfig, parity: Option<Parity>, count: usize) -> Result<Vec<EnvelopeState>, FemError> {
    let g = cfg.grid();
    let bc = Boundary {
        axis_zero: cfg.magnetic_quantum_number != 0,
        equator_zero: parity == Some(Parity::Odd),
    };
    let sys = assemble(&g, cfg.scaling_radius, cfg.magnetic_quantum_number, &cfg.potential(), bc);
    let pairs = lowest_eigenpairs(&sys.k, &sys.m, count, cfg.shift_guess())?;
    Ok(pairs
        .iter()
        .map(|p| to_state(cfg, &g, &sys.free, p.value, &p.vector, parity))
        .collect())
}

fn order_states(states: &mut [EnvelopeState]) {
    states.sort_by(|a, b| {
        let tie = 1e-9 * a.energy.abs().max(b.energy.abs());
        if (a.energy - b.energy).abs() > tie {
            a.energy.total_cmp(&b.energy)
        } else {
            (a.labels.eta_nodes + a.labels.theta_nodes)
                .cmp(&(b.labels.eta_nodes + b.labels.theta_nodes))
                .then(a.labels.parity.cmp(&b.labels.parity))
        }
    });
}

fn solve_unchecked(cfg: &SolverConfig, count: usize) -> Result<Vec<EnvelopeState>, FemError> {
    if cfg.full_domain() {
        return solve_sector(cfg, None, count);
    }
    let mut states = match cfg.parity {
        Some(p) => solve_sector(cfg, Some(p), count)?,
        None => {
            let (even, odd) = rayon::join(
                || solve_sector(cfg, Some(Parity::Even), count),
                || solve_sector(cfg, Some(Parity::Odd), count),
            );
            let mut all = even?;
            all.extend(odd?);
            all
        }
    };
    order_states(&mut states);
    states.truncate(count);
    Ok(states)
}

/// Lowest `eigenpair_count` states, ascending in energy.
pub fn assemble_and_solve(config: &SolverConfig) -> Result<Vec<EnvelopeState>, FemError> {
    config.validate()?;
    if !config.check_convergence {
        return solve_unchecked(config, config.eigenpair_count);
    }
    let coarse_cfg = SolverConfig {
        mesh: MeshSize { n_eta: config.mesh.n_eta / 2, n_theta: config.mesh.n_theta / 2 },
        ..config.clone()
    };
    let (fine, coarse) = rayon::join(
        || solve_unchecked(config, config.eigenpair_count),
        || solve_unchecked(&coarse_cfg, 1),
    );
    let fine = fine?;
    let coarse = coarse?[0].energy;
    let e0 = fine[0].energy;
    if ((coarse - e0) / e0).abs() > MESH_CONVERGENCE_TOL {
        return Err(FemError::MeshTooCoarse { coarse, fine: e0 });
    }
    Ok(fine)
}

/// Outcome of a central-cell calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub depth: f64,
    pub energy: f64,
    /// (depth, ground energy) pairs visited while bracketing.
    pub bracket_log: Vec<(f64, f64)>,
}

/// Relative tolerance on the calibrated energy.
pub const CALIBRATION_TOL: f64 = 1e-4;

/// Finds the square-well depth that puts the lowest state of the
/// configured sector at `target` (a.u.).
pub fn calibrate_central_cell(target: f64, radius: f64, config: &SolverConfig) -> Result<Calibration, FemError> {
    config.validate()?;
    let energy_at = |depth: f64| -> Result<f64, FemError> {
        let cfg = SolverConfig {
            central_cell: Some(CentralCell { depth, radius }),
            eigenpair_count: 1,
            check_convergence: false,
            parity: Some(config.parity.unwrap_or(Parity::Even)),
            field: None,
            ..config.clone()
        };
        Ok(solve_unchecked(&cfg, 1)?[0].energy)
    };
    let tol = CALIBRATION_TOL * target.abs();
    let e0 = energy_at(0.0)?;
    let mut log = vec![(0.0, e0)];
    if (e0 - target).abs() <= tol {
        return Ok(Calibration { depth: 0.0, energy: e0, bracket_log: log });
    }
    if target > e0 {
        return Err(FemError::BracketFailure(format!(
            "target {target} lies above the uncorrected ground energy {e0}"
        )));
    }
    let (mut hi, mut e_hi) = (0.0, e0);
    let mut lo = -1.0;
    let mut e_lo;
    let mut found = false;
    for _ in 0..40 {
        e_lo = energy_at(lo)?;
        log.push((lo, e_lo));
        if e_lo > e_hi + 1e-12 * e_hi.abs() {
            return Err(FemError::BracketFailure(format!("energy not monotone in depth at {lo}")));
        }
        if e_lo < target {
            found = true;
            let _ = e_lo;
            break;
        }
        hi = lo;
        e_hi = e_lo;
        lo *= 2.0;
    }
    if !found {
        return Err(FemError::BracketFailure("no sign change down to the deepest trial".into()));
    }
    let mut e_lo = log.last().unwrap().1;
    // Illinois-modified regula falsi keeps the bracket and converges superlinearly.
    let (mut side, mut best) = (0i32, (lo, e_lo));
    for _ in 0..200 {
        let (fl, fh) = (e_lo - target, e_hi - target);
        let mut x = hi - fh * (hi - lo) / (fh - fl);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let e = energy_at(x)?;
        if (e - target).abs() < (best.1 - target).abs() {
            best = (x, e);
        }
        if (e - target).abs() <= tol || (hi - lo).abs() < 1e-12 * lo.abs() {
            return Ok(Calibration { depth: x, energy: e, bracket_log: log });
        }
        if e < target {
            lo = x;
            e_lo = e;
            if side == -1 {
                e_hi = target + 0.5 * (e_hi - target);
            }
            side = -1;
        } else {
            hi = x;
            e_hi = e;
            if side == 1 {
                e_lo = target + 0.5 * (e_lo - target);
            }
            side = 1;
        }
    }
    Ok(Calibration { depth: best.0, energy: best.1, bracket_log: log })
}

/// Energies of one state followed from zero field through ascending
/// `fields` (a.u.), selecting at each step the eigenvector with the
/// largest overlap with the previous one. `state_index` refers to the
/// zero-field full-range spectrum of `config`.
pub fn stark_sweep(config: &SolverConfig, state_index: usize, fields: &[f64]) -> Result<Vec<f64>, FemError> {
    let base = config.field.unwrap_or(FieldTerm::new(0.0));
    let count = config.eigenpair_count.max(state_index + 3);
    let at = |f: f64| {
        let cfg = SolverConfig {
            field: Some(FieldTerm { strength: f, ..base }),
            eigenpair_count: count,
            check_convergence: false,
            ..config.clone()
        };
        cfg.validate()?;
        solve_unchecked(&cfg, count)
    };
    let zero = at(0.0)?;
    let mut tracked = zero
        .get(state_index)
        .cloned()
        .ok_or_else(|| FemError::InvalidConfig(format!("state index {state_index} out of range")))?;
    let mut out = Vec::with_capacity(fields.len());
    for &f in fields {
        if f == 0.0 {
            out.push(zero[state_index].energy);
            continue;
        }
        let states = at(f)?;
        let (best, ov) = states
            .iter()
            .map(|s| (s, s.overlap(&tracked).abs()))
            .fold((None, 0.0f64), |acc, (s, o)| if o > acc.1 { (Some(s), o) } else { acc });
        if ov < TRACKING_OVERLAP {
            return Err(FemError::StateCrossing { field: f, overlap: ov });
        }
        tracked = best.unwrap().clone();
        out.push(tracked.energy);
    }
    Ok(out)
}

/// Field ramp steps used by [`stark_energy_direct`].
pub const STARK_RAMP_STEPS: usize = 4;

/// Energy of state `state_index` with the configured field switched on,
/// followed continuously from zero field.
pub fn stark_energy_direct(config: &SolverConfig, state_index: usize) -> Result<f64, FemError> {
    let f = config
        .field
        .ok_or_else(|| FemError::InvalidConfig("direct Stark solve needs a field term".into()))?
        .strength;
    let ramp: Vec<f64> = (1..=STARK_RAMP_STEPS).map(|k| f * k as f64 / STARK_RAMP_STEPS as f64).collect();
    let e = stark_sweep(config, state_index, if f == 0.0 { &[0.0] } else { &ramp })?;
    Ok(*e.last().unwrap())
}

/// Importance sampler for |F|² of one envelope: picks an (η, θ) cell
/// with probability proportional to its (corner-maximum) mass, a
/// uniform point inside it, and a uniform azimuth.
#[derive(Debug, Clone)]
pub struct EnvelopeSampler {
    grid: Grid,
    r0: f64,
    gamma: f64,
    cdf: Vec<f64>,
    prob: Vec<f64>,
}

impl EnvelopeState {
    pub fn sampler(&self) -> EnvelopeSampler {
        let g = self.grid();
        let (he, ht) = (g.he(), g.ht());
        let w = g.nt + 1;
        let mut prob = Vec::with_capacity(g.ne * g.nt);
        for i in 0..g.ne {
            for j in 0..g.nt {
                let peak = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)]
                    .iter()
                    .map(|&(a, b)| self.surface[a * w + b].powi(2))
                    .fold(0.0, f64::max);
                let eta = (i as f64 + 0.5) * he;
                let theta = (j as f64 + 0.5) * ht;
                prob.push(peak * self.scaling_radius / eta.cos().powi(2) * theta.sin() * he * ht);
            }
        }
        let total: f64 = prob.iter().sum();
        let floor = 1e-9 * total / prob.len() as f64;
        prob.iter_mut().for_each(|p| *p += floor);
        let total: f64 = prob.iter().sum();
        prob.iter_mut().for_each(|p| *p /= total);
        let mut acc = 0.0;
        let cdf = prob
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        EnvelopeSampler { grid: g, r0: self.scaling_radius, gamma: self.anisotropy_ratio, cdf, prob }
    }
}

impl EnvelopeSampler {
    /// A real-space point (a.u.) in the envelope's own frame.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        let u: f64 = rng.gen();
        let k = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
        let (i, j) = (k / self.grid.nt, k % self.grid.nt);
        let eta = (i as f64 + rng.gen::<f64>()) * self.grid.he();
        let theta = (j as f64 + rng.gen::<f64>()) * self.grid.ht();
        let phi = 2.0 * PI * rng.gen::<f64>();
        let r = self.r0 * eta.tan();
        let (st, ct) = theta.sin_cos();
        [r * st * phi.cos(), r * st * phi.sin(), r * ct * self.gamma.sqrt()]
    }

    /// Probability density (per real-space a.u.³) of [`Self::sample`].
    pub fn density(&self, p: [f64; 3]) -> f64 {
        let zp = p[2] / self.gamma.sqrt();
        let r = (p[0] * p[0] + p[1] * p[1] + zp * zp).sqrt();
        if r == 0.0 {
            return 0.0;
        }
        let eta = (r / self.r0).atan();
        let theta = (zp / r).clamp(-1.0, 1.0).acos();
        let (he, ht) = (self.grid.he(), self.grid.ht());
        let i = ((eta / he) as usize).min(self.grid.ne - 1);
        let j = ((theta / ht) as usize).min(self.grid.nt - 1);
        let pc = self.prob[i * self.grid.nt + j];
        let jac = r * r * self.r0 / eta.cos().powi(2) * theta.sin() * self.gamma.sqrt();
        if jac == 0.0 {
            return 0.0;
        }
        pc / (he * ht * 2.0 * PI) / jac
    }
}

// Binary persistence: little-endian, bit exact.

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn put_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn get_u64(r: &mut impl Read) -> Result<u64, FemError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| FemError::Format(e.to_string()))?;
    Ok(u64::from_le_bytes(b))
}
fn get_f64(r: &mut impl Read) -> Result<f64, FemError> {
    Ok(f64::from_bits(get_u64(r)?))
}

impl EnvelopeState {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        put_f64(w, self.energy)?;
        put_u64(w, self.labels.m as u64)?;
        put_u64(w, matches!(self.labels.angular, AngularKind::Sin) as u64)?;
        put_u64(
            w,
            match self.labels.parity {
                None => 0,
                Some(Parity::Even) => 1,
                Some(Parity::Odd) => 2,
            },
        )?;
        put_u64(w, self.labels.eta_nodes as u64)?;
        put_u64(w, self.labels.theta_nodes as u64)?;
        put_f64(w, self.norm_check)?;
        put_u64(w, self.n_eta as u64)?;
        put_u64(w, self.n_theta_full as u64)?;
        put_f64(w, self.scaling_radius)?;
        put_f64(w, self.anisotropy_ratio)?;
        put_u64(w, self.surface.len() as u64)?;
        for &v in &self.surface {
            put_f64(w, v)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, FemError> {
        let energy = get_f64(r)?;
        let m = get_u64(r)? as u32;
        let angular = if get_u64(r)? == 1 { AngularKind::Sin } else { AngularKind::Cos };
        let parity = match get_u64(r)? {
            0 => None,
            1 => Some(Parity::Even),
            2 => Some(Parity::Odd),
            x => return Err(FemError::Format(format!("bad parity tag {x}"))),
        };
        let eta_nodes = get_u64(r)? as u32;
        let theta_nodes = get_u64(r)? as u32;
        let norm_check = get_f64(r)?;
        let n_eta = get_u64(r)? as usize;
        let n_theta_full = get_u64(r)? as usize;
        let scaling_radius = get_f64(r)?;
        let anisotropy_ratio = get_f64(r)?;
        let len = get_u64(r)? as usize;
        if len != (n_eta + 1) * (n_theta_full + 1) {
            return Err(FemError::Format("surface length does not match mesh".into()));
        }
        let surface = (0..len).map(|_| get_f64(r)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            energy,
            surface,
            labels: StateLabels { m, angular, parity, eta_nodes, theta_nodes },
            norm_check,
            n_eta,
            n_theta_full,
            scaling_radius,
            anisotropy_ratio,
        })
    }
}
