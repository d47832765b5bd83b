//! Physical constants, effective atomic units and the donor species table.
//!
//! Gate dynamics runs in units of the spontaneous-emission rate with ħ = 1.
//! The envelope solver runs in effective atomic units built from the
//! transverse mass and the silicon dielectric constant. Everything that
//! crosses a module boundary goes through the helpers here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Conversion factor from Debye to e·nm.
pub const DEBYE_IN_E_NM: f64 = 0.020_819_434;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnitsError {
    #[error("unknown species/state combination {name}/{state}")]
    UnknownSpecies { name: String, state: String },
    #[error("dimension {0:?} has no effective atomic unit")]
    DimensionMismatch(Dimension),
    #[error("invalid constants: {0}")]
    InvalidConstants(String),
    #[error("species table parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// J·s
    pub hbar: f64,
    /// C
    pub electron_charge: f64,
    /// F/m
    pub vacuum_permittivity: f64,
    pub silicon_dielectric: f64,
    /// kg
    pub electron_mass: f64,
    /// m
    pub silicon_lattice_constant: f64,
    pub transverse_mass_ratio: f64,
    pub longitudinal_mass_ratio: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            hbar: 1.054_571_817e-34,
            electron_charge: 1.602_176_634e-19,
            vacuum_permittivity: 8.854_187_812_8e-12,
            silicon_dielectric: 11.4,
            electron_mass: 9.109_383_701_5e-31,
            silicon_lattice_constant: 0.5431e-9,
            transverse_mass_ratio: 0.191,
            longitudinal_mass_ratio: 0.916,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<(), UnitsError> {
        let positive = [
            self.hbar,
            self.electron_charge,
            self.vacuum_permittivity,
            self.silicon_dielectric,
            self.electron_mass,
            self.silicon_lattice_constant,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(UnitsError::InvalidConstants("non-positive constant".into()));
        }
        let (mt, ml) = (self.transverse_mass_ratio, self.longitudinal_mass_ratio);
        if !(0.0 < mt && mt < ml && ml < 1.0) {
            return Err(UnitsError::InvalidConstants(format!(
                "need 0 < m_t ({mt}) < m_l ({ml}) < 1"
            )));
        }
        Ok(())
    }

    /// γ = m_t / m_l.
    pub fn anisotropy_ratio(&self) -> f64 {
        self.transverse_mass_ratio / self.longitudinal_mass_ratio
    }

    /// Valley minimum position k₀ = 0.85·2π/a, in 1/nm.
    pub fn valley_wavevector_per_nm(&self) -> f64 {
        0.85 * 2.0 * std::f64::consts::PI / (self.silicon_lattice_constant * 1e9)
    }

    /// e²/(4πε₀ε_S) in meV·nm.
    pub fn coulomb_mev_nm(&self) -> f64 {
        let e = self.electron_charge;
        e * e / (4.0 * std::f64::consts::PI * self.vacuum_permittivity * self.silicon_dielectric)
            / e
            * 1e3
            * 1e9
    }

    /// Converts an energy in meV into an angular frequency in 1/s.
    pub fn mev_to_rate(&self, mev: f64) -> f64 {
        mev * 1e-3 * self.electron_charge / self.hbar
    }

    pub fn rate_to_mev(&self, rate: f64) -> f64 {
        rate * self.hbar / self.electron_charge * 1e3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Length,
    Energy,
    Field,
    Time,
}

/// A value in SI base units tagged with its dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub dimension: Dimension,
}

impl Quantity {
    pub fn meters(v: f64) -> Self {
        Self { value: v, dimension: Dimension::Length }
    }
    pub fn nanometers(v: f64) -> Self {
        Self::meters(v * 1e-9)
    }
    pub fn joules(v: f64) -> Self {
        Self { value: v, dimension: Dimension::Energy }
    }
    pub fn millielectronvolts(v: f64, c: &PhysicalConstants) -> Self {
        Self::joules(v * 1e-3 * c.electron_charge)
    }
    pub fn volts_per_meter(v: f64) -> Self {
        Self { value: v, dimension: Dimension::Field }
    }
    /// V/μm, numerically equal to mV/nm.
    pub fn volts_per_micron(v: f64) -> Self {
        Self::volts_per_meter(v * 1e6)
    }
    pub fn seconds(v: f64) -> Self {
        Self { value: v, dimension: Dimension::Time }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveAtomicUnits {
    /// m
    pub bohr_radius: f64,
    /// J
    pub hartree: f64,
    /// V/m
    pub field_unit: f64,
}

impl EffectiveAtomicUnits {
    pub fn from_constants(c: &PhysicalConstants) -> Self {
        let four_pi_eps = 4.0 * std::f64::consts::PI * c.vacuum_permittivity * c.silicon_dielectric;
        let mass = c.transverse_mass_ratio * c.electron_mass;
        let bohr_radius = four_pi_eps * c.hbar * c.hbar / (mass * c.electron_charge.powi(2));
        let hartree = c.hbar * c.hbar / (mass * bohr_radius * bohr_radius);
        let field_unit = hartree / (c.electron_charge * bohr_radius);
        Self { bohr_radius, hartree, field_unit }
    }

    pub fn bohr_radius_nm(&self) -> f64 {
        self.bohr_radius * 1e9
    }

    pub fn hartree_mev(&self, c: &PhysicalConstants) -> f64 {
        self.hartree / c.electron_charge * 1e3
    }

    /// Field unit in V/μm.
    pub fn field_unit_v_per_um(&self) -> f64 {
        self.field_unit * 1e-6
    }

    fn scale(&self, d: Dimension) -> Result<f64, UnitsError> {
        match d {
            Dimension::Length => Ok(self.bohr_radius),
            Dimension::Energy => Ok(self.hartree),
            Dimension::Field => Ok(self.field_unit),
            Dimension::Time => Err(UnitsError::DimensionMismatch(d)),
        }
    }

    pub fn to_atomic(&self, q: Quantity) -> Result<f64, UnitsError> {
        Ok(q.value / self.scale(q.dimension)?)
    }

    pub fn from_atomic(&self, value: f64, dimension: Dimension) -> Result<Quantity, UnitsError> {
        Ok(Quantity { value: value * self.scale(dimension)?, dimension })
    }
}

/// Free-function form of [`EffectiveAtomicUnits::to_atomic`].
pub fn to_atomic(q: Quantity, units: &EffectiveAtomicUnits) -> Result<f64, UnitsError> {
    units.to_atomic(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorSpecies {
    pub name: String,
    pub rydberg_state_label: String,
    pub transition_dipole_debye: f64,
    pub transition_energy_mev: f64,
    /// s
    pub lifetime_t1: f64,
    /// s
    pub coherence_t2: f64,
    pub ground_binding_mev: f64,
    pub rydberg_binding_mev: f64,
    pub nuclear_charge: u32,
}

impl DonorSpecies {
    pub fn validate(&self) -> Result<(), UnitsError> {
        if !(self.lifetime_t1 > 0.0) {
            return Err(UnitsError::Parse(format!("{}: T1 must be positive", self.name)));
        }
        if self.coherence_t2 > 2.0 * self.lifetime_t1 * (1.0 + 1e-12) {
            return Err(UnitsError::Parse(format!("{}: T2 exceeds 2·T1", self.name)));
        }
        Ok(())
    }

    pub fn decoherence_rates(&self) -> DecoherenceRates {
        DecoherenceRates::from_lifetime(self.lifetime_t1)
    }
}

fn entry(
    name: &str,
    state: &str,
    dipole: f64,
    transition: f64,
    t1: f64,
    t2: f64,
    ground: f64,
    z: u32,
) -> DonorSpecies {
    DonorSpecies {
        name: name.into(),
        rydberg_state_label: state.into(),
        transition_dipole_debye: dipole,
        transition_energy_mev: transition,
        lifetime_t1: t1,
        coherence_t2: t2,
        ground_binding_mev: ground,
        rydberg_binding_mev: ground - transition,
        nuclear_charge: z,
    }
}

/// Species parameter sets, keyed by (name, Rydberg state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesTable {
    pub species: Vec<DonorSpecies>,
}

impl Default for SpeciesTable {
    fn default() -> Self {
        // Ground binding energies are the measured 1sA values; the Rydberg
        // binding follows from the transition energy.
        Self {
            species: vec![
                entry("P", "2p0", 31.0, 34.0, 235e-12, 160e-12, 45.59, 1),
                entry("As", "2p0", 31.0, 34.0, 235e-12, 160e-12, 45.59, 1),
                entry("Se+", "1sT2", 1.96, 427.0, 7.7e-9, 7.7e-9, 593.0, 2),
                entry("Se+", "2p0", 0.97, 548.0, 1e-9, 2e-9, 593.0, 2),
            ],
        }
    }
}

impl SpeciesTable {
    pub fn lookup(&self, name: &str, state: &str) -> Result<DonorSpecies, UnitsError> {
        self.species
            .iter()
            .find(|s| s.name == name && s.rydberg_state_label == state)
            .cloned()
            .ok_or_else(|| UnitsError::UnknownSpecies { name: name.into(), state: state.into() })
    }

    /// Parses a table written as repeated `[[species]]` sections. Missing
    /// `rydberg_binding_mev` is filled in as ground minus transition.
    pub fn from_toml_str(text: &str) -> Result<Self, UnitsError> {
        #[derive(Deserialize)]
        struct Raw {
            species: Vec<RawEntry>,
        }
        #[derive(Deserialize)]
        struct RawEntry {
            name: String,
            rydberg_state_label: String,
            transition_dipole_debye: f64,
            transition_energy_mev: f64,
            lifetime_t1: f64,
            coherence_t2: f64,
            ground_binding_mev: f64,
            rydberg_binding_mev: Option<f64>,
            nuclear_charge: Option<u32>,
        }
        let raw: Raw = toml::from_str(text).map_err(|e| UnitsError::Parse(e.to_string()))?;
        let species = raw
            .species
            .into_iter()
            .map(|r| DonorSpecies {
                rydberg_binding_mev: r
                    .rydberg_binding_mev
                    .unwrap_or(r.ground_binding_mev - r.transition_energy_mev),
                name: r.name,
                rydberg_state_label: r.rydberg_state_label,
                transition_dipole_debye: r.transition_dipole_debye,
                transition_energy_mev: r.transition_energy_mev,
                lifetime_t1: r.lifetime_t1,
                coherence_t2: r.coherence_t2,
                ground_binding_mev: r.ground_binding_mev,
                nuclear_charge: r.nuclear_charge.unwrap_or(1),
            })
            .collect::<Vec<_>>();
        for s in &species {
            s.validate()?;
        }
        Ok(Self { species })
    }
}

/// Looks a species up in the compiled-in table.
pub fn species_lookup(name: &str, rydberg_state: &str) -> Result<DonorSpecies, UnitsError> {
    SpeciesTable::default().lookup(name, rydberg_state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceRates {
    pub gamma_se: f64,
    pub gamma_de: f64,
}

impl DecoherenceRates {
    /// γ_se = 1, γ_de = 0.5: the normalized rates the gate modules use.
    pub fn unit() -> Self {
        Self { gamma_se: 1.0, gamma_de: 0.5 }
    }

    pub fn none() -> Self {
        Self { gamma_se: 0.0, gamma_de: 0.0 }
    }

    pub fn from_lifetime(t1: f64) -> Self {
        Self { gamma_se: 1.0 / t1, gamma_de: 0.5 / t1 }
    }

    /// Rescales so that γ_se = 1.
    pub fn normalized(&self) -> Self {
        if self.gamma_se == 0.0 {
            return *self;
        }
        Self { gamma_se: 1.0, gamma_de: self.gamma_de / self.gamma_se }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_units_match_textbook_silicon_values() {
        let c = PhysicalConstants::default();
        let u = EffectiveAtomicUnits::from_constants(&c);
        assert!((u.bohr_radius_nm() - 3.1584).abs() < 1e-3, "{}", u.bohr_radius_nm());
        assert!((u.hartree_mev(&c) - 39.992).abs() < 1e-2, "{}", u.hartree_mev(&c));
        assert!((u.field_unit_v_per_um() - 12.662).abs() < 1e-2);
        assert!((c.anisotropy_ratio() - 0.2085).abs() < 1e-4);
        assert!((c.coulomb_mev_nm() - 126.31).abs() < 0.01);
        assert!((c.valley_wavevector_per_nm() - 9.834).abs() < 1e-3);
    }

    #[test]
    fn unit_definitions() {
        let u = EffectiveAtomicUnits::from_constants(&PhysicalConstants::default());
        assert!((u.to_atomic(Quantity::meters(u.bohr_radius)).unwrap() - 1.0).abs() < 1e-15);
        assert!((u.to_atomic(Quantity::joules(u.hartree)).unwrap() - 1.0).abs() < 1e-15);
        assert!((u.to_atomic(Quantity::meters(2.0 * u.bohr_radius)).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(
            u.to_atomic(Quantity::seconds(1.0)),
            Err(UnitsError::DimensionMismatch(Dimension::Time))
        );
    }

    #[test]
    fn table_entries() {
        let p = species_lookup("P", "2p0").unwrap();
        assert_eq!(p.lifetime_t1, 235e-12);
        assert_eq!(p.transition_energy_mev, 34.0);
        assert_eq!(p.transition_dipole_debye, 31.0);
        let se = species_lookup("Se+", "1sT2").unwrap();
        assert_eq!(se.lifetime_t1, 7.7e-9);
        assert_eq!(se.transition_energy_mev, 427.0);
        assert_eq!(se.transition_dipole_debye, 1.96);
        let se2 = species_lookup("Se+", "2p0").unwrap();
        assert_eq!(se2.transition_energy_mev, 548.0);
        assert_eq!(se2.transition_dipole_debye, 0.97);
        assert_eq!(se2.lifetime_t1, 1e-9);
        assert!(species_lookup("Bi", "2p0").is_err());
        assert!(species_lookup("P", "1sT2").is_err());
        for s in SpeciesTable::default().species {
            s.validate().unwrap();
            let r = s.decoherence_rates();
            assert!((r.gamma_de - 0.5 * r.gamma_se).abs() < 1e-12 * r.gamma_se);
        }
    }

    #[test]
    fn table_round_trips_through_toml() {
        let table = SpeciesTable::default();
        let text = toml::to_string(&table).unwrap();
        assert_eq!(SpeciesTable::from_toml_str(&text).unwrap(), table);
    }

    #[test]
    fn mass_ordering_is_checked() {
        let mut c = PhysicalConstants::default();
        c.validate().unwrap();
        std::mem::swap(&mut c.transverse_mass_ratio, &mut c.longitudinal_mass_ratio);
        assert!(c.validate().is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_is_identity(v in -1e3f64..1e3, d in 0usize..3) {
                let u = EffectiveAtomicUnits::from_constants(&PhysicalConstants::default());
                let dim = [Dimension::Length, Dimension::Energy, Dimension::Field][d];
                let q = u.from_atomic(v, dim).unwrap();
                let back = u.to_atomic(q).unwrap();
                prop_assert!((back - v).abs() <= 1e-12 * v.abs().max(1e-300));
            }
        }
    }
}
