//! Run configuration: a TOML file of flat sections, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use si_rydberg::catalog::CatalogConfig;
use si_rydberg::fem::MeshSize;
use si_rydberg::gates::ProtocolKind;
use si_rydberg::interaction::McSettings;
use si_rydberg::lindblad::DEFAULT_TOL;
use si_rydberg::units::{species_lookup, DonorSpecies, PhysicalConstants};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub solver: SolverSection,
    pub interaction: InteractionSection,
    pub protocol: ProtocolSection,
    pub scan: ScanSection,
    pub stark: StarkSection,
    pub ionize: IonizeSection,
    pub map: MapSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub species: String,
    pub rydberg_state: String,
    pub seed: u64,
    /// Local error tolerance of the master-equation integrator.
    pub tol: f64,
    /// Not part of the config hash or the echoed config.
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// m_t/m_l; omitted means the silicon value.
    pub anisotropy_ratio: Option<f64>,
    pub mesh_eta: usize,
    pub mesh_theta: usize,
    pub scaling_radius: f64,
    pub max_m: u32,
    pub states_per_sector: usize,
    pub central_cell_radius_nm: f64,
    pub check_convergence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionSection {
    pub samples: usize,
    pub guard_nm: f64,
    /// Field along z, V/μm. Zero switches to the zero-field channels.
    pub field_v_per_um: f64,
    /// Curve directions, each one of "x", "y", "z".
    pub axes: Vec<String>,
    pub r_min_nm: f64,
    pub r_max_nm: f64,
    pub r_step_nm: f64,
    /// Two axes spanning the raster, e.g. "xz".
    pub map_plane: String,
    /// Raster points per side; zero skips the raster.
    pub map_points: usize,
    pub map_step_nm: f64,
    pub sublattice_offset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub kind: String,
    /// Protocols compared by `optimize`.
    pub kinds: Vec<String>,
    pub u_over_gamma_grid: Vec<f64>,
    /// Fixes Δ/Ω instead of optimizing it.
    pub detuning_ratio: Option<f64>,
    /// Fixes ξ instead of optimizing it.
    pub xi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub u_over_gamma: f64,
    pub rabi_multipliers: Vec<f64>,
    /// Detuning offsets in units of Ω.
    pub detuning_offsets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StarkSection {
    pub fields_v_per_um: Vec<f64>,
    pub axis: String,
    /// Also run direct field-on solves (z axis, m = 0 states only).
    pub direct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IonizeSection {
    pub fields_v_per_um: Vec<f64>,
    pub budget: f64,
    /// Seconds; omitted means the species T1.
    pub lifetime: Option<f64>,
    /// In electron masses.
    pub tunneling_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub nominal_nm: f64,
    pub nominal_axis: String,
    /// Fidelity points per raster interval.
    pub refine: usize,
    pub reoptimize_per_cell: bool,
    /// Evaluate the interaction at every fidelity point instead of
    /// interpolating the raster.
    pub direct_cells: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            solver: SolverSection::default(),
            interaction: InteractionSection::default(),
            protocol: ProtocolSection::default(),
            scan: ScanSection::default(),
            stark: StarkSection::default(),
            ionize: IonizeSection::default(),
            map: MapSection::default(),
        }
    }
}

impl Default for RunSection {
    fn default() -> Self {
        Self { species: "P".into(), rydberg_state: "2p0".into(), seed: 2024, tol: DEFAULT_TOL, output_dir: "out".into() }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        let mesh = MeshSize::default();
        Self {
            anisotropy_ratio: None,
            mesh_eta: mesh.n_eta,
            mesh_theta: mesh.n_theta,
            scaling_radius: 1.0,
            max_m: 1,
            states_per_sector: 12,
            central_cell_radius_nm: 0.3,
            check_convergence: true,
        }
    }
}

impl Default for InteractionSection {
    fn default() -> Self {
        Self {
            samples: 400_000,
            guard_nm: 8.0,
            field_v_per_um: 0.18,
            axes: vec!["z".into(), "x".into()],
            r_min_nm: 8.0,
            r_max_nm: 15.0,
            r_step_nm: 0.5,
            map_plane: "xz".into(),
            map_points: 0,
            map_step_nm: 1.0,
            sublattice_offset: false,
        }
    }
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            kind: "inspired".into(),
            kinds: vec!["inspired".into(), "off-resonant".into(), "resonant".into()],
            u_over_gamma_grid: vec![1e2, 1e3, 1e4],
            detuning_ratio: None,
            xi: None,
        }
    }
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            u_over_gamma: 1e4,
            rabi_multipliers: vec![0.9, 0.95, 1.0, 1.05, 1.1],
            detuning_offsets: vec![-0.1, -0.05, 0.0, 0.05, 0.1],
        }
    }
}

impl Default for StarkSection {
    fn default() -> Self {
        Self { fields_v_per_um: vec![0.0, 0.05, 0.1, 0.15, 0.2], axis: "z".into(), direct: false }
    }
}

impl Default for IonizeSection {
    fn default() -> Self {
        Self {
            fields_v_per_um: vec![0.05, 0.1, 0.15, 0.18, 0.2, 0.25, 0.3],
            budget: 0.1,
            lifetime: None,
            tunneling_mass: 0.191,
        }
    }
}

impl Default for MapSection {
    fn default() -> Self {
        Self { nominal_nm: 10.5, nominal_axis: "z".into(), refine: 1, reoptimize_per_cell: false, direct_cells: false }
    }
}

pub fn axis_index(name: &str) -> Result<usize, CliError> {
    match name {
        "x" => Ok(0),
        "y" => Ok(1),
        "z" => Ok(2),
        _ => Err(CliError::Config(format!("unknown axis {name:?}"))),
    }
}

pub fn parse_kind(name: &str) -> Result<ProtocolKind, CliError> {
    ProtocolKind::parse(name).ok_or_else(|| CliError::Config(format!("unknown protocol {name:?}")))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |s: String| Err(CliError::Config(s));
        self.species()?;
        for a in &self.interaction.axes {
            axis_index(a)?;
        }
        axis_index(&self.stark.axis)?;
        axis_index(&self.map.nominal_axis)?;
        self.map_axes()?;
        parse_kind(&self.protocol.kind)?;
        for k in &self.protocol.kinds {
            parse_kind(k)?;
        }
        let i = &self.interaction;
        if !(i.r_step_nm > 0.0 && i.r_max_nm >= i.r_min_nm && i.r_min_nm > 0.0) {
            return bad(format!("bad separation grid {}..{} step {}", i.r_min_nm, i.r_max_nm, i.r_step_nm));
        }
        if i.map_points > 0 && !(i.map_step_nm > 0.0) {
            return bad("map_step_nm must be positive".into());
        }
        if !(self.ionize.budget > 0.0 && self.ionize.budget < 1.0) {
            return bad("ionize.budget must lie in (0, 1)".into());
        }
        if !(self.run.tol > 0.0 && self.run.tol < 1e-2) {
            return bad(format!("tol {} out of range", self.run.tol));
        }
        if self.map.refine == 0 {
            return bad("map.refine must be at least 1".into());
        }
        if self.protocol.u_over_gamma_grid.iter().any(|&u| !(u > 0.0)) {
            return bad("u_over_gamma_grid entries must be positive".into());
        }
        Ok(())
    }

    pub fn species(&self) -> Result<DonorSpecies, CliError> {
        species_lookup(&self.run.species, &self.run.rydberg_state).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn map_axes(&self) -> Result<(usize, usize), CliError> {
        let c: Vec<char> = self.interaction.map_plane.chars().collect();
        if c.len() != 2 || c[0] == c[1] {
            return Err(CliError::Config(format!("map_plane {:?} must name two axes", self.interaction.map_plane)));
        }
        Ok((axis_index(&c[0].to_string())?, axis_index(&c[1].to_string())?))
    }

    pub fn constants(&self) -> PhysicalConstants {
        PhysicalConstants::default()
    }

    pub fn catalog_config(&self, species: &DonorSpecies) -> CatalogConfig {
        let mut c = CatalogConfig::for_species(species);
        let s = &self.solver;
        if let Some(g) = s.anisotropy_ratio {
            c.solver.anisotropy_ratio = g;
        }
        c.solver.mesh = MeshSize { n_eta: s.mesh_eta, n_theta: s.mesh_theta };
        c.solver.scaling_radius = s.scaling_radius;
        c.solver.check_convergence = s.check_convergence;
        c.max_m = s.max_m;
        c.states_per_sector = s.states_per_sector;
        c.central_cell_radius_nm = s.central_cell_radius_nm;
        c
    }

    pub fn mc_settings(&self) -> McSettings {
        McSettings { samples: self.interaction.samples, seed: self.run.seed, guard_nm: self.interaction.guard_nm }
    }

    /// Canonical TOML of the resolved config, output directory omitted.
    pub fn to_toml(&self) -> String {
        let mut c = self.clone();
        c.run.output_dir = PathBuf::new();
        toml::to_string(&c).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML, hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Separation grid of the interaction curves.
    pub fn separations(&self) -> Vec<f64> {
        let i = &self.interaction;
        let n = ((i.r_max_nm - i.r_min_nm) / i.r_step_nm + 1e-9).floor() as usize;
        (0..=n).map(|k| i.r_min_nm + k as f64 * i.r_step_nm).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let mut back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        back.run.output_dir = c.run.output_dir.clone();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn output_dir_does_not_change_the_hash() {
        let mut c = RunConfig::default();
        let h = c.hash();
        c.run.output_dir = "elsewhere".into();
        assert_eq!(c.hash(), h);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let c = RunConfig::from_toml_str("[run]\nseed = 7\n[interaction]\nmap_points = 5\n").unwrap();
        assert_eq!(c.run.seed, 7);
        assert_eq!(c.run.species, "P");
        assert_eq!(c.interaction.map_points, 5);
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "[run]\nspecies = \"Bi\"\n",
            "[interaction]\naxes = [\"w\"]\n",
            "[interaction]\nmap_plane = \"zz\"\n",
            "[ionize]\nbudget = 1.5\n",
            "[protocol]\nkind = \"fast\"\n",
            "[run]\nunknown = 1\n",
        ] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn separation_grid_includes_both_ends() {
        let c = RunConfig::default();
        let r = c.separations();
        assert_eq!(r.first(), Some(&8.0));
        assert_eq!(r.last(), Some(&15.0));
        assert_eq!(r.len(), 15);
    }
}
