//! Multivalley donor wavefunctions built from a single-valley envelope.
//!
//! The six valleys (±x, ±y, ±z) are folded pairwise into three effective
//! valleys. A pair with coefficients (a₊, a₋) contributes
//! `[(a₊ + a₋) cos(k₀x) − i (a₊ − a₋) sin(k₀x)] F(local(r))`, where the
//! envelope is rotated so that its own valley axis points along x. The
//! lattice-periodic part of the Bloch function is taken as 1.
//! Positions are in nm and amplitudes in nm^-3/2.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{EnvelopeSampler, EnvelopeState};
use crate::units::{DonorSpecies, EffectiveAtomicUnits, PhysicalConstants};

/// Allowed deviation of a converged envelope's norm from 1.
pub const ENVELOPE_NORM_TOL: f64 = 0.005;
/// Samples used for the Monte-Carlo normalization of a new wavefunction.
pub const NORM_SAMPLES: usize = 200_000;
const NORM_SEED: u64 = 0x6e6f_726d;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultivalleyError {
    #[error("envelope not converged: norm {0}")]
    NotConverged(f64),
    #[error("invalid valley manifold: {0}")]
    InvalidManifold(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ManifoldLabel {
    A1,
    E,
    T2,
    /// Symmetric combination of a single opposite-valley pair.
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlochParity {
    Cosine,
    Sine,
    Mixed,
    Absent,
}

pub const AXES: [char; 3] = ['x', 'y', 'z'];

/// Valley coefficients ordered (+x, −x, +y, −y, +z, −z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValleyManifold {
    pub label: ManifoldLabel,
    pub name: String,
    pub coefficients: [f64; 6],
    pub bloch_parity: [BlochParity; 3],
}

impl ValleyManifold {
    pub fn new(label: ManifoldLabel, name: &str, coefficients: [f64; 6]) -> Result<Self, MultivalleyError> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(MultivalleyError::InvalidManifold(format!("{name}: non-finite coefficient")));
        }
        let n2: f64 = coefficients.iter().map(|c| c * c).sum();
        if (n2 - 1.0).abs() > 1e-9 {
            return Err(MultivalleyError::InvalidManifold(format!("{name}: sum of squares {n2}")));
        }
        let bloch_parity = [0, 1, 2].map(|a| {
            let (p, m) = (coefficients[2 * a], coefficients[2 * a + 1]);
            match (p == 0.0 && m == 0.0, (p - m).abs() < 1e-12, (p + m).abs() < 1e-12) {
                (true, _, _) => BlochParity::Absent,
                (_, true, _) => BlochParity::Cosine,
                (_, _, true) => BlochParity::Sine,
                _ => BlochParity::Mixed,
            }
        });
        Ok(Self { label, name: name.to_string(), coefficients, bloch_parity })
    }

    pub fn a1() -> Self {
        Self::new(ManifoldLabel::A1, "A1", [1.0 / 6f64.sqrt(); 6]).unwrap()
    }

    /// E members: (1,1,−1,−1,0,0)/2 and (1,1,1,1,−2,−2)/√12.
    pub fn e(member: usize) -> Self {
        match member {
            0 => Self::new(ManifoldLabel::E, "E1", [0.5, 0.5, -0.5, -0.5, 0.0, 0.0]).unwrap(),
            _ => {
                let s = 1.0 / 12f64.sqrt();
                Self::new(ManifoldLabel::E, "E2", [s, s, s, s, -2.0 * s, -2.0 * s]).unwrap()
            }
        }
    }

    /// Antisymmetric pair along `axis` (0, 1, 2 for x, y, z).
    pub fn t2(axis: usize) -> Self {
        let mut c = [0.0; 6];
        c[2 * axis] = 1.0 / 2f64.sqrt();
        c[2 * axis + 1] = -1.0 / 2f64.sqrt();
        Self::new(ManifoldLabel::T2, &format!("T2{}", AXES[axis]), c).unwrap()
    }

    /// Symmetric pair along `axis`.
    pub fn pair(axis: usize) -> Self {
        let mut c = [0.0; 6];
        c[2 * axis] = 1.0 / 2f64.sqrt();
        c[2 * axis + 1] = 1.0 / 2f64.sqrt();
        Self::new(ManifoldLabel::Pair, &format!("P{}", AXES[axis]), c).unwrap()
    }

    /// A complete orthonormal set: A1, E1, E2, T2x, T2y, T2z.
    pub fn tetrahedral_basis() -> Vec<Self> {
        vec![Self::a1(), Self::e(0), Self::e(1), Self::t2(0), Self::t2(1), Self::t2(2)]
    }

    /// Cosine and sine amplitudes of the folded pair along `axis`.
    pub fn pair_amplitudes(&self, axis: usize) -> (f64, f64) {
        let (p, m) = (self.coefficients[2 * axis], self.coefficients[2 * axis + 1]);
        (p + m, p - m)
    }

    /// Weight of the valley-`axis` envelope dipole in ⟨self|r|other⟩ when
    /// cross-valley terms are dropped: a₊b₊ + a₋b₋.
    pub fn dipole_weight(&self, other: &Self, axis: usize) -> f64 {
        self.coefficients[2 * axis] * other.coefficients[2 * axis]
            + self.coefficients[2 * axis + 1] * other.coefficients[2 * axis + 1]
    }

    pub fn overlap(&self, other: &Self) -> f64 {
        self.coefficients.iter().zip(&other.coefficients).map(|(a, b)| a * b).sum()
    }
}

/// Envelope frame of valley `axis`: cyclic permutation placing the
/// envelope's z along the valley axis.
#[inline]
pub fn to_local(axis: usize, p: [f64; 3]) -> [f64; 3] {
    match axis {
        0 => [p[1], p[2], p[0]],
        1 => [p[2], p[0], p[1]],
        _ => p,
    }
}

#[inline]
pub fn from_local(axis: usize, l: [f64; 3]) -> [f64; 3] {
    match axis {
        0 => [l[2], l[0], l[1]],
        1 => [l[1], l[2], l[0]],
        _ => l,
    }
}

#[derive(Debug, Clone)]
pub struct MultivalleyWavefunction {
    pub envelope: Arc<EnvelopeState>,
    pub manifold: ValleyManifold,
    /// k₀ in nm⁻¹.
    pub valley_wavevector: f64,
    pub bohr_radius_nm: f64,
    pub species: String,
    /// Energy (meV) of the state, from the envelope eigenvalue.
    pub energy_mev: f64,
    /// Multiplicative factor that makes the Monte-Carlo norm 1.
    pub normalization: f64,
}

/// Attaches valley structure to `envelope` and normalizes the result.
pub fn build_multivalley(
    envelope: Arc<EnvelopeState>,
    manifold: ValleyManifold,
    species: &DonorSpecies,
    constants: &PhysicalConstants,
) -> Result<MultivalleyWavefunction, MultivalleyError> {
    if (envelope.norm_check - 1.0).abs() > ENVELOPE_NORM_TOL {
        return Err(MultivalleyError::NotConverged(envelope.norm_check));
    }
    let units = EffectiveAtomicUnits::from_constants(constants);
    let mut psi = MultivalleyWavefunction {
        energy_mev: envelope.energy * units.hartree_mev(constants),
        envelope,
        manifold,
        valley_wavevector: constants.valley_wavevector_per_nm(),
        bohr_radius_nm: units.bohr_radius_nm(),
        species: species.name.clone(),
        normalization: 1.0,
    };
    let (norm, _) = psi.monte_carlo_norm(NORM_SAMPLES, NORM_SEED);
    psi.normalization = 1.0 / norm.sqrt();
    Ok(psi)
}

impl MultivalleyWavefunction {
    /// Amplitude at `point` (nm) for a donor at the origin.
    pub fn evaluate(&self, point: [f64; 3]) -> Complex64 {
        let k = self.valley_wavevector;
        let scale = self.bohr_radius_nm.powf(-1.5) * self.normalization;
        let pa = point.map(|x| x / self.bohr_radius_nm);
        let mut acc = Complex64::new(0.0, 0.0);
        for axis in 0..3 {
            let (c, s) = self.manifold.pair_amplitudes(axis);
            if c == 0.0 && s == 0.0 {
                continue;
            }
            let f = self.envelope.evaluate(to_local(axis, pa));
            if f == 0.0 {
                continue;
            }
            let (sn, cs) = (k * point[axis]).sin_cos();
            acc += Complex64::new(c * cs, -s * sn) * f;
        }
        acc * scale
    }

    /// Renormalization relative to the naive (unit) norm.
    pub fn renormalization(&self) -> f64 {
        self.normalization
    }

    pub fn sampler(&self) -> MultivalleySampler {
        let weights = [0, 1, 2].map(|a| {
            let (p, m) = (self.manifold.coefficients[2 * a], self.manifold.coefficients[2 * a + 1]);
            p * p + m * m
        });
        let total: f64 = weights.iter().sum();
        MultivalleySampler {
            envelope: self.envelope.sampler(),
            weights: weights.map(|w| w / total),
            bohr_radius_nm: self.bohr_radius_nm,
        }
    }

    /// ∫|ψ|² by importance sampling, with its standard error.
    pub fn monte_carlo_norm(&self, samples: usize, seed: u64) -> (f64, f64) {
        let sampler = self.sampler();
        let e = crate::montecarlo::integrate(samples, seed, |rng| {
            let p = sampler.sample(rng);
            let q = sampler.density(p);
            if q > 0.0 {
                self.evaluate(p).norm_sqr() / q
            } else {
                0.0
            }
        });
        (e.value, e.error)
    }

    /// Dipole matrix element ⟨self|r|other⟩ (nm), cross-valley terms
    /// dropped. Both envelopes must share a mesh.
    pub fn dipole(&self, other: &Self) -> [f64; 3] {
        let mut d = [0.0; 3];
        for axis in 0..3 {
            let w = self.manifold.dipole_weight(&other.manifold, axis);
            if w == 0.0 {
                continue;
            }
            let local = [0, 1, 2].map(|k| self.envelope.dipole(&other.envelope, k));
            let global = from_local(axis, local);
            for k in 0..3 {
                d[k] += w * global[k];
            }
        }
        d.map(|x| x * self.bohr_radius_nm)
    }
}

/// Free-function form of [`MultivalleyWavefunction::evaluate`].
pub fn evaluate(psi: &MultivalleyWavefunction, point: [f64; 3]) -> Complex64 {
    psi.evaluate(point)
}

/// Mixture of the envelope sampler over the occupied valley axes.
#[derive(Debug, Clone)]
pub struct MultivalleySampler {
    envelope: EnvelopeSampler,
    weights: [f64; 3],
    bohr_radius_nm: f64,
}

impl MultivalleySampler {
    /// Point in nm.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        let u: f64 = rng.gen();
        let axis = if u < self.weights[0] {
            0
        } else if u < self.weights[0] + self.weights[1] {
            1
        } else {
            2
        };
        from_local(axis, self.envelope.sample(rng)).map(|x| x * self.bohr_radius_nm)
    }

    /// Density per nm³.
    pub fn density(&self, p: [f64; 3]) -> f64 {
        let pa = p.map(|x| x / self.bohr_radius_nm);
        let mut q = 0.0;
        for axis in 0..3 {
            if self.weights[axis] > 0.0 {
                q += self.weights[axis] * self.envelope.density(to_local(axis, pa));
            }
        }
        q / self.bohr_radius_nm.powi(3)
    }
}
