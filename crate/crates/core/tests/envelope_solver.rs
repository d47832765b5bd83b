use si_rydberg::fem::{
    assemble_and_solve, calibrate_central_cell, stark_sweep, EnvelopeState, FieldTerm, MeshSize, Parity, SolverConfig,
};
use si_rydberg::units::{EffectiveAtomicUnits, PhysicalConstants};

fn solve(m: u32, parity: Option<Parity>, count: usize, base: SolverConfig) -> Vec<EnvelopeState> {
    assemble_and_solve(&SolverConfig { magnetic_quantum_number: m, parity, eigenpair_count: count, ..base }).unwrap()
}

fn hartree() -> f64 {
    let c = PhysicalConstants::default();
    EffectiveAtomicUnits::from_constants(&c).hartree_mev(&c)
}

/// Two-parameter variational energy with trial f(x/a, y/a, z/b) where f
/// is a hydrogenic 1s, 2p0 or 2p± shape with unit exponent. `kin` holds
/// the per-axis kinetic expectation (x, z) of f, `ang` weights the polar
/// angle and `inv_r` is the radial ⟨1/r⟩ of f.
struct Trial {
    kin: (f64, f64),
    ang: fn(f64) -> f64,
    inv_r: f64,
}

impl Trial {
    fn energy(&self, gamma: f64, a: f64, b: f64) -> f64 {
        // Simpson over μ = cos θ of ⟨1/r⟩ for the stretched density.
        let n = 2000;
        let h = 1.0 / n as f64;
        let g = |mu: f64| (self.ang)(mu) / (a * a * (1.0 - mu * mu) + b * b * mu * mu).sqrt();
        let mut s = g(0.0) + g(1.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        let t = 2.0 * self.kin.0 / (a * a) + gamma * self.kin.1 / (b * b);
        t - self.inv_r * s * h / 3.0
    }

    fn minimum(&self, gamma: f64) -> f64 {
        // coordinate descent in (ln a, ln b) with shrinking steps
        let (mut x, mut y) = (0.0f64, 0.0f64);
        let mut step = 0.5;
        let mut best = self.energy(gamma, 1.0, 1.0);
        while step > 1e-7 {
            let mut moved = false;
            for (dx, dy) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
                let e = self.energy(gamma, (x + dx).exp(), (y + dy).exp());
                if e < best {
                    best = e;
                    x += dx;
                    y += dy;
                    moved = true;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        best
    }
}

#[test]
fn isotropic_hydrogen_levels() {
    let iso = SolverConfig::isotropic();
    let s = solve(0, Some(Parity::Even), 2, iso.clone());
    assert!((s[0].energy + 0.5).abs() < 0.5e-3, "1s {}", s[0].energy);
    assert!((s[1].energy + 0.125).abs() < 0.125 * 2e-3, "2s {}", s[1].energy);
    let p0 = solve(0, Some(Parity::Odd), 1, iso.clone());
    assert!((p0[0].energy + 0.125).abs() < 0.125 * 2e-3, "2p0 {}", p0[0].energy);
    let p1 = solve(1, Some(Parity::Even), 1, iso);
    assert!((p1[0].energy + 0.125).abs() < 0.125 * 2e-3, "2p± {}", p1[0].energy);
}

#[test]
fn anisotropic_levels_match_variational_oracle() {
    let cfg = SolverConfig::default();
    let gamma = cfg.anisotropy_ratio;
    let s = Trial { kin: (1.0 / 6.0, 1.0 / 6.0), ang: |_| 1.0, inv_r: 1.0 };
    let p0 = Trial { kin: (0.1, 0.3), ang: |mu| 3.0 * mu * mu, inv_r: 0.5 };
    let pm = Trial { kin: (0.2, 0.1), ang: |mu| 1.5 * (1.0 - mu * mu), inv_r: 0.5 };
    let fem_s = solve(0, Some(Parity::Even), 1, cfg.clone())[0].energy;
    let fem_p0 = solve(0, Some(Parity::Odd), 1, cfg.clone())[0].energy;
    let fem_pm = solve(1, Some(Parity::Even), 1, cfg)[0].energy;
    for (name, fem, trial) in [("1s", fem_s, &s), ("2p0", fem_p0, &p0), ("2p±", fem_pm, &pm)] {
        let oracle = trial.minimum(gamma);
        let rel = (fem - oracle).abs() / oracle.abs();
        assert!(rel < 0.02, "{name}: FEM {fem} vs variational {oracle}");
        // the trial is a bound from above
        assert!(fem < oracle + 1e-4, "{name}: FEM {fem} above variational {oracle}");
    }
    // 1s at γ = 0.2085 is about 31.3 meV deep
    assert!((fem_s * hartree() + 31.27).abs() < 0.3, "{}", fem_s * hartree());
}

#[test]
fn central_cell_calibration_hits_the_phosphorus_transition() {
    let cfg = SolverConfig::default();
    let ha = hartree();
    let e_2p0 = solve(0, Some(Parity::Odd), 1, cfg.clone())[0].energy;
    let target = e_2p0 - 34.0 / ha;
    let radius = 0.3 / EffectiveAtomicUnits::from_constants(&PhysicalConstants::default()).bohr_radius_nm();
    let cal = calibrate_central_cell(target, radius, &SolverConfig { parity: Some(Parity::Even), ..cfg }).unwrap();
    let transition = (e_2p0 - cal.energy) * ha;
    assert!((transition - 34.0).abs() < 0.034, "{transition}");
    assert!(cal.depth < 0.0);
    assert!(!cal.bracket_log.is_empty());
}

#[test]
fn refining_the_mesh_lowers_energies() {
    let base = SolverConfig { check_convergence: false, ..SolverConfig::default() };
    let mut prev = f64::NEG_INFINITY;
    let mut energies = Vec::new();
    for (n_eta, n_theta) in [(32, 32), (64, 64), (128, 128)] {
        let e = solve(0, Some(Parity::Odd), 1, SolverConfig { mesh: MeshSize { n_eta, n_theta }, ..base.clone() })[0].energy;
        energies.push(e);
        if prev.is_finite() {
            assert!(e <= prev + 1e-12, "{energies:?}");
        }
        prev = e;
    }
    // differences shrink under refinement
    assert!((energies[2] - energies[1]).abs() < (energies[1] - energies[0]).abs(), "{energies:?}");
}

#[test]
fn stark_shift_is_quadratic_and_matches_own_spectrum() {
    // isolated 2p0 without central cell, field along the valley axis
    let cfg = SolverConfig { parity: None, eigenpair_count: 40, check_convergence: false, ..SolverConfig::default() };
    let zero = assemble_and_solve(&cfg).unwrap();
    let idx = zero.iter().position(|s| s.labels.parity == Some(Parity::Odd)).unwrap();
    let fields = [1.0e-3, 2.0e-3];
    let sweep_cfg = SolverConfig { eigenpair_count: 8, field: Some(FieldTerm::new(0.0)), ..cfg.clone() };
    let e = stark_sweep(&sweep_cfg, idx, &fields).unwrap();
    let shifts: Vec<f64> = e.iter().map(|x| x - zero[idx].energy).collect();
    assert!(shifts.iter().all(|&s| s < 0.0), "{shifts:?}");
    let exponent = (shifts[1] / shifts[0]).ln() / (fields[1] / fields[0]).ln();
    assert!((exponent - 2.0).abs() < 0.1, "{exponent}");
    // second order sum over the solved spectrum
    let alpha: f64 = zero
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != idx)
        .map(|(_, s)| zero[idx].dipole(s, 2).powi(2) / (zero[idx].energy - s.energy))
        .sum();
    let pt = alpha * fields[0] * fields[0];
    assert!((pt - shifts[0]).abs() < 0.05 * shifts[0].abs(), "PT {pt} vs direct {}", shifts[0]);
}
