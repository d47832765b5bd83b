//! Donor-donor interaction channels and the total Rydberg interaction.
//!
//! Positions are in nm, energies in meV, fields in V/μm and dipoles in
//! e·nm. Donor 1 sits at the origin and donor 2 at R. Two-electron
//! integrals are six-dimensional and estimated by importance sampling
//! with fixed seeds.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError};
use crate::montecarlo::{derive_seed, integrate, Estimate};
use crate::multivalley::{to_local, MultivalleySampler, MultivalleyWavefunction};
use crate::stark::{perturbative_stark, StarkError, DEGENERACY_FLOOR_MEV};

/// Default minimum donor separation.
pub const MIN_SEPARATION_NM: f64 = 8.0;
/// Smallest sample count accepted for the two-electron integrals.
pub const MIN_SAMPLES: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InteractionError {
    #[error("separation {distance} nm is inside the {guard} nm guard")]
    GuardViolation { distance: f64, guard: f64 },
    #[error("zero separation")]
    ZeroSeparation,
    #[error("at least {MIN_SAMPLES} samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("polarization axis must be a coordinate axis")]
    UnsupportedAxis,
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Stark(#[from] StarkError),
}

/// Sample count, seed and guard radius for the Monte-Carlo channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub samples: usize,
    pub seed: u64,
    pub guard_nm: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self { samples: 400_000, seed: 2024, guard_nm: MIN_SEPARATION_NM }
    }
}

impl McSettings {
    fn check(&self, r: [f64; 3]) -> Result<(), InteractionError> {
        if self.samples < MIN_SAMPLES {
            return Err(InteractionError::TooFewSamples(self.samples));
        }
        let d = norm(r);
        if d < self.guard_nm {
            return Err(InteractionError::GuardViolation { distance: d, guard: self.guard_nm });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DonorPairGeometry {
    /// R = R₂ − R₁, nm.
    pub displacement: [f64; 3],
    /// Applied field, V/μm.
    pub field: [f64; 3],
    /// Polarization axis of the Rydberg state (a coordinate axis).
    pub polarization_axis: [f64; 3],
}

impl DonorPairGeometry {
    pub fn along_z(distance: f64, field: f64) -> Self {
        Self { displacement: [0.0, 0.0, distance], field: [0.0, 0.0, field], polarization_axis: [0.0, 0.0, 1.0] }
    }

    /// Moves donor 2 onto the other fcc sublattice: R + (a/4)(1, 1, 1).
    pub fn with_sublattice_offset(mut self, lattice_constant_nm: f64) -> Self {
        for x in &mut self.displacement {
            *x += 0.25 * lattice_constant_nm;
        }
        self
    }

    /// Displacement and field in the frame where the polarization is z.
    fn canonical(&self) -> Result<([f64; 3], [f64; 3]), InteractionError> {
        let p = self.polarization_axis;
        let axis = (0..3)
            .find(|&k| p[k].abs() > 0.0 && (0..3).all(|j| j == k || p[j] == 0.0))
            .ok_or(InteractionError::UnsupportedAxis)?;
        Ok((to_local(axis, self.displacement), to_local(axis, self.field)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionBreakdown {
    pub w_rr: Estimate,
    pub w_rg: Estimate,
    pub w_gg: Estimate,
    /// W_rr − 2W_rg + W_gg estimated directly from the density difference.
    pub w_combination: Estimate,
    pub j_rr: Estimate,
    pub v_vdw_rr: f64,
    pub v_dd_rr: f64,
    pub total_u: Estimate,
    /// Van der Waals terms excluded by the degeneracy floor.
    pub vdw_excluded: usize,
    pub field_on: bool,
}

fn norm(v: [f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Equal-weight mixture of two samplers, the second shifted by `shift`.
struct Mixture<'a> {
    a: &'a MultivalleySampler,
    b: &'a MultivalleySampler,
    shift: [f64; 3],
}

impl Mixture<'_> {
    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        if rng.gen::<bool>() {
            self.a.sample(rng)
        } else {
            add(self.b.sample(rng), self.shift)
        }
    }

    fn density(&self, p: [f64; 3]) -> f64 {
        0.5 * (self.a.density(p) + self.b.density(sub(p, self.shift)))
    }
}

/// W₁₂ = V₀ ∫∫ |ψ₁(r₁)|² |ψ₂(r₂ − R)|² / |r₁ − r₂|.
pub fn coulomb_repulsion(
    psi1: &MultivalleyWavefunction,
    psi2: &MultivalleyWavefunction,
    r: [f64; 3],
    v0: f64,
    mc: &McSettings,
) -> Result<Estimate, InteractionError> {
    mc.check(r)?;
    let (s1, s2) = (psi1.sampler(), psi2.sampler());
    Ok(integrate(mc.samples, mc.seed, |rng| {
        let x1 = s1.sample(rng);
        let x2 = s2.sample(rng);
        let (q1, q2) = (s1.density(x1), s2.density(x2));
        if q1 <= 0.0 || q2 <= 0.0 {
            return 0.0;
        }
        let w = psi1.evaluate(x1).norm_sqr() / q1 * psi2.evaluate(x2).norm_sqr() / q2;
        w / norm(sub(x1, add(x2, r)))
    })
    .scale(v0))
}

/// W_rr − 2W_rg + W_gg for identical donors, as one integral over the
/// density difference Δρ = |ψ_r|² − |ψ_g|² on each donor.
pub fn coulomb_combination(
    rydberg: &MultivalleyWavefunction,
    ground: &MultivalleyWavefunction,
    r: [f64; 3],
    v0: f64,
    mc: &McSettings,
) -> Result<Estimate, InteractionError> {
    mc.check(r)?;
    let (sr, sg) = (rydberg.sampler(), ground.sampler());
    let mix = Mixture { a: &sr, b: &sg, shift: [0.0; 3] };
    let dist = norm(r);
    let n = r.map(|x| -x / dist);
    Ok(integrate(mc.samples, mc.seed, |rng| {
        let x1 = mix.sample(rng);
        let x2 = mix.sample(rng);
        let (q1, q2) = (mix.density(x1), mix.density(x2));
        if q1 <= 0.0 || q2 <= 0.0 {
            return 0.0;
        }
        let d1 = rydberg.evaluate(x1).norm_sqr() - ground.evaluate(x1).norm_sqr();
        let d2 = rydberg.evaluate(x2).norm_sqr() - ground.evaluate(x2).norm_sqr();
        // Δρ carries no charge and, by parity, no dipole, so the Taylor
        // terms of 1/|u − R| up to second order integrate to zero and
        // serve as control variates.
        let u = sub(x1, x2);
        let nu = dot(n, u);
        let control = 1.0 / dist - nu / (dist * dist) + (3.0 * nu * nu - dot(u, u)) / (2.0 * dist.powi(3));
        d1 / q1 * d2 / q2 * (1.0 / norm(sub(u, r)) - control)
    })
    .scale(v0))
}

/// Heitler-London exchange
/// J₁₂ = V₀ ∫∫ ψ₁*(r₁)ψ₂*(r₂−R) ψ₂(r₁−R)ψ₁(r₂) / |r₁ − r₂|,
/// sampled from ½|ψ₁|² + ½|ψ₂(· − R)|² for each electron.
pub fn exchange(
    psi1: &MultivalleyWavefunction,
    psi2: &MultivalleyWavefunction,
    r: [f64; 3],
    v0: f64,
    mc: &McSettings,
) -> Result<Estimate, InteractionError> {
    mc.check(r)?;
    let (s1, s2) = (psi1.sampler(), psi2.sampler());
    let mix = Mixture { a: &s1, b: &s2, shift: r };
    let overlap = |x: [f64; 3]| psi1.evaluate(x).conj() * psi2.evaluate(sub(x, r));
    Ok(integrate(mc.samples, derive_seed(mc.seed, 1), |rng| {
        let x1 = mix.sample(rng);
        let x2 = mix.sample(rng);
        let (q1, q2) = (mix.density(x1), mix.density(x2));
        if q1 <= 0.0 || q2 <= 0.0 {
            return 0.0;
        }
        let f = overlap(x1) * overlap(x2).conj();
        f.re / (q1 * q2) / norm(sub(x1, x2))
    })
    .scale(v0))
}

/// V_dd = V₀[p₁·p₂ − 3(n·p₁)(n·p₂)]/R³ with dipoles in e·nm.
pub fn induced_dipole(p1: [f64; 3], p2: [f64; 3], r: [f64; 3], v0: f64) -> Result<f64, InteractionError> {
    let d = norm(r);
    if d == 0.0 {
        return Err(InteractionError::ZeroSeparation);
    }
    let n = r.map(|x| x / d);
    Ok(v0 * (dot(p1, p2) - 3.0 * dot(n, p1) * dot(n, p2)) / d.powi(3))
}

/// Dipole couplings of one catalog state, precomputed for repeated
/// Van der Waals sums.
#[derive(Debug, Clone)]
pub struct VdwTable {
    energy: f64,
    terms: Vec<([f64; 3], f64)>,
}

impl VdwTable {
    pub fn new(catalog: &Catalog, state: usize) -> Self {
        let d = catalog.dipoles_from(state);
        let terms = catalog
            .states
            .iter()
            .zip(d)
            .filter(|(_, dk)| norm(*dk) > 1e-12)
            .map(|(s, dk)| (dk, s.energy_mev))
            .collect();
        Self { energy: catalog.states[state].energy_mev, terms }
    }

    /// Second-order dipole-dipole shift of the pair (state, state) at R,
    /// and the number of excluded near-degenerate terms.
    pub fn shift(&self, r: [f64; 3], v0: f64) -> Result<(f64, usize), InteractionError> {
        let d = norm(r);
        if d == 0.0 {
            return Err(InteractionError::ZeroSeparation);
        }
        let n = r.map(|x| x / d);
        let pre = v0 / d.powi(3);
        let proj: Vec<f64> = self.terms.iter().map(|(dk, _)| dot(n, *dk)).collect();
        let mut total = 0.0;
        let mut excluded = 0;
        for (k, (dk, ek)) in self.terms.iter().enumerate() {
            for (l, (dl, el)) in self.terms.iter().enumerate() {
                let m = pre * (dot(*dk, *dl) - 3.0 * proj[k] * proj[l]);
                if m == 0.0 {
                    continue;
                }
                let denom = 2.0 * self.energy - ek - el;
                if denom.abs() < DEGENERACY_FLOOR_MEV {
                    excluded += 1;
                    continue;
                }
                total += m * m / denom;
            }
        }
        Ok((total, excluded))
    }
}

/// Second-order Van der Waals shift of two donors both in catalog state
/// `state`.
pub fn van_der_waals(catalog: &Catalog, state: usize, r: [f64; 3]) -> Result<(f64, usize), InteractionError> {
    VdwTable::new(catalog, state).shift(r, catalog.constants.coulomb_mev_nm())
}

/// Everything about a catalog that the interaction channels reuse across
/// displacements.
#[derive(Debug, Clone)]
pub struct PairContext {
    pub rydberg: MultivalleyWavefunction,
    pub ground: MultivalleyWavefunction,
    pub vdw: VdwTable,
    pub v0: f64,
    /// Rydberg polarizability along z, meV/(V/μm)².
    pub polarizability: f64,
}

impl PairContext {
    pub fn new(catalog: &Catalog) -> Result<Self, InteractionError> {
        let stark = perturbative_stark(catalog, catalog.rydberg, [0.0, 0.0, 1.0], &[])?;
        Ok(Self {
            rydberg: catalog.wavefunction(catalog.rydberg)?,
            ground: catalog.wavefunction(catalog.ground)?,
            vdw: VdwTable::new(catalog, catalog.rydberg),
            v0: catalog.constants.coulomb_mev_nm(),
            polarizability: stark.polarizability,
        })
    }

    /// Induced Rydberg dipole for a field along the polarization axis.
    pub fn induced_moment(&self, field_z: f64) -> f64 {
        2.0 * self.polarizability * field_z
    }

    /// All channels at one geometry. With a field, W is replaced by V_dd.
    pub fn total(&self, geometry: &DonorPairGeometry, mc: &McSettings) -> Result<InteractionBreakdown, InteractionError> {
        let (r, field) = geometry.canonical()?;
        mc.check(r)?;
        let field_on = norm(field) > 0.0;
        let (vdw, excluded) = self.vdw.shift(r, self.v0)?;
        let j = exchange(&self.rydberg, &self.rydberg, r, self.v0, mc)?;
        let p = [0.0, 0.0, self.induced_moment(field[2])];
        let v_dd = induced_dipole(p, p, r, self.v0)?;
        let zero = Estimate::exact(0.0);
        let (w_rr, w_rg, w_gg, comb) = if field_on {
            (zero, zero, zero, zero)
        } else {
            let s = |k: u64| McSettings { seed: derive_seed(mc.seed, k), ..*mc };
            (
                coulomb_repulsion(&self.rydberg, &self.rydberg, r, self.v0, &s(10))?,
                coulomb_repulsion(&self.rydberg, &self.ground, r, self.v0, &s(11))?,
                coulomb_repulsion(&self.ground, &self.ground, r, self.v0, &s(12))?,
                coulomb_combination(&self.rydberg, &self.ground, r, self.v0, &s(13))?,
            )
        };
        let lead = if field_on { v_dd } else { comb.value };
        let total = Estimate {
            value: lead - j.value + vdw,
            error: (comb.error.powi(2) + j.error.powi(2)).sqrt(),
        };
        Ok(InteractionBreakdown {
            w_rr,
            w_rg,
            w_gg,
            w_combination: comb,
            j_rr: j,
            v_vdw_rr: vdw,
            v_dd_rr: if field_on { v_dd } else { 0.0 },
            total_u: total,
            vdw_excluded: excluded,
            field_on,
        })
    }
}

/// Builds the pair context and evaluates every channel at one geometry.
pub fn total_interaction(
    geometry: &DonorPairGeometry,
    catalog: &Catalog,
    mc: &McSettings,
) -> Result<InteractionBreakdown, InteractionError> {
    PairContext::new(catalog)?.total(geometry, mc)
}

/// Square raster of donor-2 positions in the plane spanned by two axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMap {
    pub axes: (usize, usize),
    /// Cell-centre coordinates along each axis, nm.
    pub coords: Vec<f64>,
    /// Row-major over (first axis, second axis); None inside the guard.
    pub cells: Vec<Option<InteractionBreakdown>>,
}

impl InteractionMap {
    pub fn at(&self, i: usize, j: usize) -> Option<&InteractionBreakdown> {
        self.cells[i * self.coords.len() + j].as_ref()
    }
}

/// Cell positions: `n` points symmetric about zero with spacing `step`.
pub fn map_coordinates(n: usize, step: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 - 0.5 * (n as f64 - 1.0)) * step).collect()
}

/// Total interaction over a raster, donor 1 at the origin. Each cell uses
/// a seed derived from the master seed and the cell index.
pub fn interaction_map(
    ctx: &PairContext,
    axes: (usize, usize),
    coords: &[f64],
    field: [f64; 3],
    mc: &McSettings,
) -> Result<InteractionMap, InteractionError> {
    if axes.0 > 2 || axes.1 > 2 || axes.0 == axes.1 {
        return Err(InteractionError::UnsupportedAxis);
    }
    let n = coords.len();
    let cells = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let mut r = [0.0; 3];
            r[axes.0] = coords[k / n];
            r[axes.1] = coords[k % n];
            if norm(r) < mc.guard_nm {
                return Ok(None);
            }
            let g = DonorPairGeometry { displacement: r, field, polarization_axis: [0.0, 0.0, 1.0] };
            let cell_mc = McSettings { seed: derive_seed(mc.seed, k as u64), ..*mc };
            ctx.total(&g, &cell_mc).map(Some)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InteractionMap { axes, coords: coords.to_vec(), cells })
}
