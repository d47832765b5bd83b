//! Eigenstate catalog of one donor: envelope levels for every (m, parity)
//! sector, central-cell corrected s-like levels per valley manifold, and
//! the multivalley states built from them.
//!
//! The central cell only acts on m = 0, z-even envelopes; those are solved
//! once per manifold (A1, E, T2) with the depth calibrated to that
//! manifold's 1s energy. All other sectors are valley degenerate and carry
//! the full six-member tetrahedral basis.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fem::{
    assemble_and_solve, calibrate_central_cell, AngularKind, CentralCell, EnvelopeState, FemError, Parity,
    SolverConfig,
};
use crate::multivalley::{build_multivalley, from_local, ManifoldLabel, MultivalleyError, MultivalleyWavefunction, ValleyManifold};
use crate::units::{DonorSpecies, EffectiveAtomicUnits, PhysicalConstants};

pub const CATALOG_MAGIC: &[u8; 8] = b"SIRYCAT\0";
pub const CATALOG_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error(transparent)]
    Solver(#[from] FemError),
    #[error(transparent)]
    Multivalley(#[from] MultivalleyError),
    #[error("catalog format: {0}")]
    Format(String),
    #[error("catalog hash mismatch")]
    HashMismatch,
    #[error("catalog has no {0} state")]
    MissingState(String),
}

/// 1s energies (meV, negative) that fix the central-cell depth per
/// manifold. `a1 = None` derives the A1 target from the species data.
/// `None` for E or T2 leaves that manifold uncorrected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldEnergies {
    pub a1: Option<f64>,
    pub e: Option<f64>,
    pub t2: Option<f64>,
}

impl ManifoldEnergies {
    /// Measured 1s levels for the tabulated species.
    pub fn for_species(species: &DonorSpecies) -> Self {
        match species.name.as_str() {
            "P" | "As" => Self { a1: None, e: Some(-32.58), t2: Some(-33.89) },
            // 1sE is not separately resolved for Se+; it shares the T2 level.
            "Se+" => Self { a1: None, e: Some(-166.0), t2: Some(-166.0) },
            _ => Self { a1: None, e: None, t2: None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogConfig {
    /// Mesh, anisotropy and scaling radius for a Z = 1 donor. The radius is
    /// divided by the nuclear charge when building.
    pub solver: SolverConfig,
    pub max_m: u32,
    pub states_per_sector: usize,
    pub central_cell_radius_nm: f64,
    pub manifold_energies: ManifoldEnergies,
}

impl CatalogConfig {
    pub fn for_species(species: &DonorSpecies) -> Self {
        Self {
            solver: SolverConfig::default(),
            max_m: 1,
            states_per_sector: 12,
            central_cell_radius_nm: 0.3,
            manifold_energies: ManifoldEnergies::for_species(species),
        }
    }
}

/// One envelope eigenstate with its sector.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub energy_mev: f64,
    pub m: u32,
    pub parity: Parity,
    /// Manifold whose central-cell depth was used, if any.
    pub central_cell: Option<ManifoldLabel>,
    pub envelope: Arc<EnvelopeState>,
}

/// A multivalley state: level, azimuthal variant and valley manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogState {
    pub level: usize,
    /// Index into [`Catalog::envelopes`].
    pub envelope: usize,
    pub manifold: ValleyManifold,
    pub energy_mev: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub species: DonorSpecies,
    pub constants: PhysicalConstants,
    pub config: CatalogConfig,
    /// Calibrated square-well depths (a.u.) for A1, E, T2.
    pub depths: [f64; 3],
    /// Levels ascending in energy.
    pub levels: Vec<Level>,
    /// Envelopes with their azimuthal variant applied.
    pub envelopes: Vec<Arc<EnvelopeState>>,
    pub states: Vec<CatalogState>,
    pub ground: usize,
    pub rydberg: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    species: DonorSpecies,
    constants: PhysicalConstants,
    config: CatalogConfig,
    depths: [f64; 3],
}

fn cc_tag(c: Option<ManifoldLabel>) -> u64 {
    match c {
        None => 0,
        Some(ManifoldLabel::A1) => 1,
        Some(ManifoldLabel::E) => 2,
        Some(ManifoldLabel::T2) => 3,
        Some(ManifoldLabel::Pair) => 4,
    }
}

fn level_name(l: &Level, n_in_sector: usize) -> String {
    let kind = match (l.m, l.parity) {
        (0, Parity::Even) => "s",
        (0, Parity::Odd) => "p0",
        (1, Parity::Even) => "p±",
        (1, Parity::Odd) => "d±1",
        (m, Parity::Even) => return format!("{n_in_sector}m{m}e"),
        (m, Parity::Odd) => return format!("{n_in_sector}m{m}o"),
    };
    let base = match (l.m, l.parity) {
        (0, Parity::Even) => 1,
        (0, Parity::Odd) | (1, Parity::Even) => 2,
        _ => 3,
    };
    format!("{}{}", base + n_in_sector, kind)
}

impl Catalog {
    /// Solves every sector, calibrates the central cell and assembles the
    /// multivalley states.
    pub fn build(species: &DonorSpecies, constants: &PhysicalConstants, config: &CatalogConfig) -> Result<Self, CatalogError> {
        let units = EffectiveAtomicUnits::from_constants(constants);
        let ha = units.hartree_mev(constants);
        let base = base_solver(species, config);
        let sector = |m: u32, p: Parity, cc: Option<CentralCell>| SolverConfig {
            magnetic_quantum_number: m,
            parity: Some(p),
            central_cell: cc,
            ..base.clone()
        };
        let plain: Vec<(u32, Parity)> = (0..=config.max_m)
            .flat_map(|m| [(m, Parity::Even), (m, Parity::Odd)])
            .filter(|&s| s != (0, Parity::Even))
            .collect();
        let solved: Vec<Vec<EnvelopeState>> = plain
            .par_iter()
            .map(|&(m, p)| assemble_and_solve(&sector(m, p, None)))
            .collect::<Result<_, _>>()?;

        let p0 = &solved[plain.iter().position(|&s| s == (0, Parity::Odd)).unwrap()];
        let e_2p0 = p0[0].energy * ha;
        let me = config.manifold_energies;
        let a1_target = me.a1.unwrap_or(if species.rydberg_state_label == "2p0" {
            e_2p0 - species.transition_energy_mev
        } else {
            -species.ground_binding_mev
        });
        let t2_target = if species.rydberg_state_label == "1sT2" {
            Some(a1_target + species.transition_energy_mev)
        } else {
            me.t2
        };
        let targets = [Some(a1_target), me.e, t2_target];
        let radius = cc_radius(constants, config);
        let calib = sector(0, Parity::Even, None);
        let depths: Vec<f64> = targets
            .par_iter()
            .map(|t| match t {
                Some(t) => calibrate_central_cell(t / ha, radius, &calib).map(|c| c.depth),
                None => Ok(0.0),
            })
            .collect::<Result<_, _>>()?;
        let labels = [ManifoldLabel::A1, ManifoldLabel::E, ManifoldLabel::T2];
        let cc_solved: Vec<Vec<EnvelopeState>> = depths
            .par_iter()
            .map(|&d| assemble_and_solve(&sector(0, Parity::Even, Some(CentralCell { depth: d, radius }))))
            .collect::<Result<_, _>>()?;

        let mut levels = Vec::new();
        for (states, &(m, p)) in solved.into_iter().zip(&plain) {
            for s in states {
                levels.push(Level { energy_mev: s.energy * ha, m, parity: p, central_cell: None, envelope: Arc::new(s) });
            }
        }
        for (states, label) in cc_solved.into_iter().zip(labels) {
            for s in states {
                levels.push(Level {
                    energy_mev: s.energy * ha,
                    m: 0,
                    parity: Parity::Even,
                    central_cell: Some(label),
                    envelope: Arc::new(s),
                });
            }
        }
        Self::assemble(species.clone(), *constants, config.clone(), [depths[0], depths[1], depths[2]], levels)
    }

    fn assemble(
        species: DonorSpecies,
        constants: PhysicalConstants,
        config: CatalogConfig,
        depths: [f64; 3],
        mut levels: Vec<Level>,
    ) -> Result<Self, CatalogError> {
        levels.sort_by(|a, b| {
            a.energy_mev
                .total_cmp(&b.energy_mev)
                .then(a.m.cmp(&b.m))
                .then(a.parity.cmp(&b.parity))
                .then(cc_tag(a.central_cell).cmp(&cc_tag(b.central_cell)))
        });
        let mut envelopes = Vec::new();
        let mut states = Vec::new();
        let mut seen: Vec<(u32, Parity, u64, usize)> = Vec::new();
        for (li, l) in levels.iter().enumerate() {
            let key = (l.m, l.parity, cc_tag(l.central_cell));
            let n = seen.iter().filter(|s| (s.0, s.1, s.2) == key).count();
            seen.push((key.0, key.1, key.2, li));
            let name = level_name(l, n);
            let variants: Vec<AngularKind> =
                if l.m == 0 { vec![AngularKind::Cos] } else { vec![AngularKind::Cos, AngularKind::Sin] };
            for kind in variants {
                let ei = envelopes.len();
                envelopes.push(if kind == AngularKind::Cos { l.envelope.clone() } else { Arc::new(l.envelope.with_angular(kind)) });
                let manifolds = match l.central_cell {
                    None => ValleyManifold::tetrahedral_basis(),
                    Some(ManifoldLabel::A1) => vec![ValleyManifold::a1()],
                    Some(ManifoldLabel::E) => vec![ValleyManifold::e(0), ValleyManifold::e(1)],
                    Some(_) => (0..3).map(ValleyManifold::t2).collect(),
                };
                let suffix = if l.m == 0 { "" } else if kind == AngularKind::Cos { "c" } else { "s" };
                for mf in manifolds {
                    states.push(CatalogState {
                        level: li,
                        envelope: ei,
                        label: format!("{name}{suffix}:{}", mf.name),
                        manifold: mf,
                        energy_mev: l.energy_mev,
                    });
                }
            }
        }
        let ground_level = levels
            .iter()
            .position(|l| l.central_cell == Some(ManifoldLabel::A1))
            .ok_or_else(|| CatalogError::MissingState("1sA".into()))?;
        let ground = states
            .iter()
            .position(|s| s.level == ground_level)
            .ok_or_else(|| CatalogError::MissingState("1sA".into()))?;
        // The Rydberg state is taken polarised along z.
        let rydberg = match species.rydberg_state_label.as_str() {
            "2p0" => {
                let li = levels
                    .iter()
                    .position(|l| l.m == 0 && l.parity == Parity::Odd)
                    .ok_or_else(|| CatalogError::MissingState("2p0".into()))?;
                let ei = states.iter().find(|s| s.level == li).unwrap().envelope;
                states.push(CatalogState {
                    level: li,
                    envelope: ei,
                    manifold: ValleyManifold::pair(2),
                    energy_mev: levels[li].energy_mev,
                    label: "2p0:Pz".into(),
                });
                states.len() - 1
            }
            "1sT2" => states
                .iter()
                .position(|s| {
                    levels[s.level].central_cell == Some(ManifoldLabel::T2) && s.manifold == ValleyManifold::t2(2)
                })
                .ok_or_else(|| CatalogError::MissingState("1sT2".into()))?,
            other => return Err(CatalogError::MissingState(other.into())),
        };
        Ok(Self { species, constants, config, depths, levels, envelopes, states, ground, rydberg })
    }

    pub fn header_text(&self) -> String {
        let h = Header {
            version: CATALOG_VERSION,
            species: self.species.clone(),
            constants: self.constants,
            config: self.config.clone(),
            depths: self.depths,
        };
        toml::to_string(&h).expect("header serializes")
    }

    /// Hex SHA-256 of the resolved catalog configuration.
    pub fn config_hash(species: &DonorSpecies, constants: &PhysicalConstants, config: &CatalogConfig) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            version: u32,
            species: &'a DonorSpecies,
            constants: &'a PhysicalConstants,
            config: &'a CatalogConfig,
        }
        let text = toml::to_string(&Key { version: CATALOG_VERSION, species, constants, config }).expect("key serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }

    fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CATALOG_MAGIC);
        out.extend_from_slice(&CATALOG_VERSION.to_le_bytes());
        let header = self.header_text();
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.levels.len() as u64).to_le_bytes());
        for l in &self.levels {
            out.extend_from_slice(&l.energy_mev.to_le_bytes());
            out.extend_from_slice(&(l.m as u64).to_le_bytes());
            out.extend_from_slice(&(matches!(l.parity, Parity::Odd) as u64).to_le_bytes());
            out.extend_from_slice(&cc_tag(l.central_cell).to_le_bytes());
            l.envelope.write_to(&mut out).expect("writing to memory");
        }
        out
    }

    /// Hex SHA-256 of the serialized catalog body.
    pub fn content_hash(&self) -> String {
        hex(&Sha256::digest(self.body_bytes()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let body = self.body_bytes();
        w.write_all(&body)?;
        w.write_all(&Sha256::digest(&body))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, CatalogError> {
        let mut all = Vec::new();
        r.read_to_end(&mut all).map_err(|e| CatalogError::Format(e.to_string()))?;
        if all.len() < 8 + 4 + 32 || &all[..8] != CATALOG_MAGIC {
            return Err(CatalogError::Format("not a catalog file".into()));
        }
        let (body, digest) = all.split_at(all.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CatalogError::HashMismatch);
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != CATALOG_VERSION {
            return Err(CatalogError::Format(format!("unsupported version {version}")));
        }
        let mut cur = &body[12..];
        let take_u64 = |c: &mut &[u8]| -> Result<u64, CatalogError> {
            if c.len() < 8 {
                return Err(CatalogError::Format("truncated".into()));
            }
            let v = u64::from_le_bytes(c[..8].try_into().unwrap());
            *c = &c[8..];
            Ok(v)
        };
        let hl = take_u64(&mut cur)? as usize;
        if cur.len() < hl {
            return Err(CatalogError::Format("truncated header".into()));
        }
        let text = std::str::from_utf8(&cur[..hl]).map_err(|e| CatalogError::Format(e.to_string()))?;
        let h: Header = toml::from_str(text).map_err(|e| CatalogError::Format(e.to_string()))?;
        cur = &cur[hl..];
        let n = take_u64(&mut cur)? as usize;
        let mut levels = Vec::with_capacity(n);
        for _ in 0..n {
            let energy_mev = f64::from_bits(take_u64(&mut cur)?);
            let m = take_u64(&mut cur)? as u32;
            let parity = if take_u64(&mut cur)? == 1 { Parity::Odd } else { Parity::Even };
            let central_cell = match take_u64(&mut cur)? {
                0 => None,
                1 => Some(ManifoldLabel::A1),
                2 => Some(ManifoldLabel::E),
                3 => Some(ManifoldLabel::T2),
                4 => Some(ManifoldLabel::Pair),
                x => return Err(CatalogError::Format(format!("bad manifold tag {x}"))),
            };
            let envelope = Arc::new(EnvelopeState::read_from(&mut cur)?);
            levels.push(Level { energy_mev, m, parity, central_cell, envelope });
        }
        if !cur.is_empty() {
            return Err(CatalogError::Format("trailing bytes".into()));
        }
        Self::assemble(h.species, h.constants, h.config, h.depths, levels)
    }

    /// Keeps the lowest `n` levels (ground and Rydberg levels always kept).
    pub fn truncated(&self, n: usize) -> Result<Self, CatalogError> {
        let keep_g = self.states[self.ground].level;
        let keep_r = self.states[self.rydberg].level;
        let levels = self
            .levels
            .iter()
            .enumerate()
            .filter(|(i, _)| *i < n || *i == keep_g || *i == keep_r)
            .map(|(_, l)| l.clone())
            .collect();
        Self::assemble(self.species.clone(), self.constants, self.config.clone(), self.depths, levels)
    }

    /// Zero-field solver settings for m = 0 on the full θ range, with the
    /// central cell of manifold `cc` when given.
    pub fn solver_config(&self, cc: Option<ManifoldLabel>) -> SolverConfig {
        let depth = match cc {
            Some(ManifoldLabel::A1) => Some(self.depths[0]),
            Some(ManifoldLabel::E) => Some(self.depths[1]),
            Some(ManifoldLabel::T2) => Some(self.depths[2]),
            _ => None,
        };
        SolverConfig {
            magnetic_quantum_number: 0,
            parity: None,
            central_cell: depth.map(|d| CentralCell { depth: d, radius: cc_radius(&self.constants, &self.config) }),
            ..base_solver(&self.species, &self.config)
        }
    }

    pub fn bohr_radius_nm(&self) -> f64 {
        EffectiveAtomicUnits::from_constants(&self.constants).bohr_radius_nm()
    }

    /// Multivalley wavefunction of catalog state `i`, normalized.
    pub fn wavefunction(&self, i: usize) -> Result<MultivalleyWavefunction, CatalogError> {
        let s = &self.states[i];
        let mut psi = build_multivalley(self.envelopes[s.envelope].clone(), s.manifold.clone(), &self.species, &self.constants)?;
        psi.energy_mev = s.energy_mev;
        Ok(psi)
    }

    /// ⟨a|r|b⟩ in nm for every b, cross-valley terms dropped.
    pub fn dipoles_from(&self, a: usize) -> Vec<[f64; 3]> {
        let sa = &self.states[a];
        let ea = &self.envelopes[sa.envelope];
        let a_b = self.bohr_radius_nm();
        let local: Vec<[f64; 3]> = self
            .envelopes
            .par_iter()
            .map(|eb| [0, 1, 2].map(|k| ea.dipole(eb, k) * a_b))
            .collect();
        self.states
            .iter()
            .map(|sb| {
                let mut d = [0.0; 3];
                for axis in 0..3 {
                    let w = sa.manifold.dipole_weight(&sb.manifold, axis);
                    if w != 0.0 {
                        let g = from_local(axis, local[sb.envelope]);
                        for k in 0..3 {
                            d[k] += w * g[k];
                        }
                    }
                }
                d
            })
            .collect()
    }

    /// Whether state `b` is the same physical state as `a` or a member of
    /// its degenerate manifold (same level).
    pub fn same_level(&self, a: usize, b: usize) -> bool {
        self.states[a].level == self.states[b].level
    }
}

fn base_solver(species: &DonorSpecies, config: &CatalogConfig) -> SolverConfig {
    let z = species.nuclear_charge as f64;
    SolverConfig {
        nuclear_charge: z,
        scaling_radius: config.solver.scaling_radius / z,
        eigenpair_count: config.states_per_sector,
        central_cell: None,
        field: None,
        ..config.solver.clone()
    }
}

fn cc_radius(constants: &PhysicalConstants, config: &CatalogConfig) -> f64 {
    config.central_cell_radius_nm / EffectiveAtomicUnits::from_constants(constants).bohr_radius_nm()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
