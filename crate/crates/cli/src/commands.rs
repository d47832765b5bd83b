//! One function per subcommand. Each resolves its inputs from the config,
//! computes, and hands tables to a [`RunOutput`].

use std::path::PathBuf;

use rayon::prelude::*;
use si_rydberg::catalog::Catalog;
use si_rydberg::fem::{assemble_and_solve, Parity, SolverConfig};
use si_rydberg::gates::{qubit_phases, run_protocol_with, ProtocolKind, RunOptions, INSPIRED_RABI_OVER_U};
use si_rydberg::interaction::{DonorPairGeometry, InteractionBreakdown, McSettings, PairContext};
use si_rydberg::lindblad::{basis_index, evolve, DensityMatrix, DriveParameters, JumpOperatorSet, RYD, ZERO};
use si_rydberg::montecarlo::derive_seed;
use si_rydberg::optimize::{
    optimize, optimize_from, robustness_scan_detuning_at, robustness_scan_rabi_at, OptimizationSpec, OptimumRecord,
};
use si_rydberg::stark::{
    direct_multivalley_shift, ionization_probability, ionization_rate_excited, max_applicable_field,
    perturbative_stark, IonizationModel,
};
use si_rydberg::units::{DecoherenceRates, DonorSpecies};

use crate::config::{axis_index, parse_kind, RunConfig};
use crate::error::CliError;
use crate::output::{load_or_build_catalog, num, opt_num, say, RunOutput, Table};

pub use crate::fidmap::fidelity_map;

/// Resolved inputs shared by every command.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: RunConfig) -> Self {
        let out = config.run.output_dir.clone();
        Self { config, out }
    }

    pub fn output(&self, command: &str) -> Result<RunOutput, CliError> {
        RunOutput::new(&self.out, command, &self.config)
    }

    /// Loads or builds the catalog and stamps its hash on `out`.
    pub fn catalog(&self, out: &mut RunOutput) -> Result<Catalog, CliError> {
        let (cat, status, path) = load_or_build_catalog(&self.out, &self.config)?;
        // cache status goes to stdout only, so artifacts do not depend on it
        say(&format!("catalog: {} ({})", path.display(), status.as_str()));
        out.header.catalog_hash = Some(cat.content_hash());
        Ok(cat)
    }

    pub fn species(&self) -> Result<DonorSpecies, CliError> {
        self.config.species()
    }
}

fn unit_vector(axis: usize) -> [f64; 3] {
    let mut v = [0.0; 3];
    v[axis] = 1.0;
    v
}

/// Pair geometry with donor 2 at `r` (nm) and the configured field along z.
pub fn geometry(config: &RunConfig, cat: &Catalog, r: [f64; 3]) -> DonorPairGeometry {
    let g = DonorPairGeometry {
        displacement: r,
        field: [0.0, 0.0, config.interaction.field_v_per_um],
        polarization_axis: [0.0, 0.0, 1.0],
    };
    if config.interaction.sublattice_offset {
        g.with_sublattice_offset(cat.constants.silicon_lattice_constant * 1e9)
    } else {
        g
    }
}

pub fn solve(ctx: &Context) -> Result<(), CliError> {
    let mut out = ctx.output("solve")?;
    let cat = ctx.catalog(&mut out)?;
    let mut t = Table::new("catalog_states", &["index", "label", "energy_mev", "m", "parity", "central_cell"]);
    for (i, s) in cat.states.iter().enumerate() {
        let l = &cat.levels[s.level];
        t.row(vec![
            i.to_string(),
            s.label.clone(),
            num(s.energy_mev),
            l.m.to_string(),
            format!("{:?}", l.parity).to_lowercase(),
            l.central_cell.map_or_else(|| "none".into(), |c| format!("{c:?}")),
        ]);
    }
    out.write_table(&t)?;
    // lowest even envelope without the central cell: hydrogenic in a.u.
    let plain = SolverConfig { parity: Some(Parity::Even), eigenpair_count: 1, ..cat.solver_config(None) };
    let e0 = assemble_and_solve(&plain)?[0].energy;
    out.summary("states", cat.states.len());
    out.summary("ground", &cat.states[cat.ground].label);
    out.summary("ground_energy_mev", num(cat.states[cat.ground].energy_mev));
    out.summary("rydberg", &cat.states[cat.rydberg].label);
    out.summary("rydberg_energy_mev", num(cat.states[cat.rydberg].energy_mev));
    out.summary("envelope_ground_energy_hartree", num(e0));
    out.summary("catalog_hash", cat.content_hash());
    out.finish(&ctx.config)
}

fn breakdown_cells(b: &InteractionBreakdown) -> Vec<String> {
    vec![
        num(b.w_rr.value),
        num(b.w_rg.value),
        num(b.w_gg.value),
        num(b.w_combination.value),
        num(b.w_combination.error),
        num(b.j_rr.value),
        num(b.j_rr.error),
        num(b.v_vdw_rr),
        num(b.v_dd_rr),
        num(b.total_u.value),
        num(b.total_u.error),
        b.vdw_excluded.to_string(),
    ]
}

const CHANNELS: [&str; 12] = [
    "w_rr_mev", "w_rg_mev", "w_gg_mev", "w_comb_mev", "w_comb_err", "j_rr_mev", "j_rr_err", "v_vdw_mev", "v_dd_mev",
    "u_mev", "u_err", "vdw_excluded",
];

/// Interactions on a square raster in the configured plane. Cells inside
/// the guard are `None`. Seeds derive from the master seed and the cell.
pub fn raster(
    config: &RunConfig,
    cat: &Catalog,
    pair: &PairContext,
    coords: &[f64],
) -> Result<Vec<Option<InteractionBreakdown>>, CliError> {
    let (a, b) = config.map_axes()?;
    let mc = config.mc_settings();
    let n = coords.len();
    (0..n * n)
        .into_par_iter()
        .map(|k| {
            let mut r = [0.0; 3];
            r[a] = coords[k / n];
            r[b] = coords[k % n];
            let g = geometry(config, cat, r);
            let d = g.displacement.iter().map(|x| x * x).sum::<f64>().sqrt();
            if d < mc.guard_nm {
                return Ok(None);
            }
            let cell = McSettings { seed: derive_seed(mc.seed, k as u64), ..mc };
            Ok(Some(pair.total(&g, &cell)?))
        })
        .collect()
}

/// Marks each point whose value has the opposite sign to the one before.
pub fn sign_flips(values: &[f64]) -> Vec<bool> {
    (0..values.len()).map(|k| k > 0 && (values[k - 1] < 0.0) != (values[k] < 0.0)).collect()
}

pub fn interactions(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut out = ctx.output("interactions")?;
    let cat = ctx.catalog(&mut out)?;
    let pair = PairContext::new(&cat)?;
    let mc = cfg.mc_settings();
    let rs = cfg.separations();
    for (ai, name) in cfg.interaction.axes.iter().enumerate() {
        let axis = axis_index(name)?;
        let rows: Vec<InteractionBreakdown> = rs
            .par_iter()
            .enumerate()
            .map(|(k, &r)| {
                let mut d = [0.0; 3];
                d[axis] = r;
                let point = McSettings { seed: derive_seed(mc.seed, (ai * rs.len() + k) as u64), ..mc };
                pair.total(&geometry(cfg, &cat, d), &point)
            })
            .collect::<Result<_, _>>()?;
        let mut header = vec!["r_nm"];
        header.extend(CHANNELS);
        header.push("sign_change");
        let mut t = Table::new(&format!("interactions_{name}"), &header);
        t.comment("axis", name);
        t.comment("field_v_per_um", num(cfg.interaction.field_v_per_um));
        t.comment("samples", mc.samples);
        let us: Vec<f64> = rows.iter().map(|b| b.total_u.value).collect();
        let flips = sign_flips(&us);
        for (k, b) in rows.iter().enumerate() {
            let mut row = vec![num(rs[k])];
            row.extend(breakdown_cells(b));
            row.push(u8::from(flips[k]).to_string());
            t.row(row);
        }
        let changes: Vec<f64> = (1..rs.len()).filter(|&k| flips[k]).map(|k| 0.5 * (rs[k - 1] + rs[k])).collect();
        out.write_table(&t)?;
        let mags: Vec<f64> = rows.iter().map(|b| b.total_u.value.abs()).collect();
        out.summary(&format!("{name}.u_abs_min_mev"), num(mags.iter().cloned().fold(f64::INFINITY, f64::min)));
        out.summary(&format!("{name}.u_abs_max_mev"), num(mags.iter().cloned().fold(0.0, f64::max)));
        out.summary(&format!("{name}.sign_change"), !changes.is_empty());
        if !changes.is_empty() {
            let list: Vec<String> = changes.iter().map(|&x| num(x)).collect();
            out.summary(&format!("{name}.sign_change_near_nm"), list.join(";"));
        }
    }
    let n = cfg.interaction.map_points;
    if n > 0 {
        let coords = si_rydberg::interaction::map_coordinates(n, cfg.interaction.map_step_nm);
        let cells = raster(cfg, &cat, &pair, &coords)?;
        let (a, b) = cfg.map_axes()?;
        let names = ["x_nm", "y_nm", "z_nm"];
        let mut header = vec![names[a], names[b]];
        header.extend(CHANNELS);
        let mut t = Table::new("interaction_map", &header);
        t.comment("plane", &cfg.interaction.map_plane);
        t.comment("guard_nm", num(mc.guard_nm));
        for (k, c) in cells.iter().enumerate() {
            let mut row = vec![num(coords[k / n]), num(coords[k % n])];
            match c {
                Some(b) => row.extend(breakdown_cells(b)),
                None => row.extend(std::iter::repeat(opt_num(None)).take(CHANNELS.len())),
            }
            t.row(row);
        }
        out.write_table(&t)?;
        out.summary("map_masked_cells", cells.iter().filter(|c| c.is_none()).count());
    }
    out.finish(cfg)
}

pub fn stark(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut out = ctx.output("stark")?;
    let cat = ctx.catalog(&mut out)?;
    let axis = unit_vector(axis_index(&cfg.stark.axis)?);
    let fields = &cfg.stark.fields_v_per_um;
    let mut header = vec!["field_v_per_um", "shift_pt_mev", "dipole_pt_e_nm"];
    let direct = if cfg.stark.direct {
        if cfg.stark.axis != "z" {
            return Err(CliError::Config("direct Stark solves need the z axis".into()));
        }
        header.push("shift_direct_mev");
        Some(direct_multivalley_shift(&cat, cat.rydberg, fields)?)
    } else {
        None
    };
    let mut t = Table::new("stark", &header);
    for target in [cat.rydberg, cat.ground] {
        let r = perturbative_stark(&cat, target, axis, fields)?;
        let label = cat.states[target].label.clone();
        if target == cat.rydberg {
            t.comment("state", &label);
            t.comment("axis", &cfg.stark.axis);
            for (k, &(f, s)) in r.shifts.iter().enumerate() {
                let mut row = vec![num(f), num(s), num(r.dipole_moment(f))];
                if let Some(d) = &direct {
                    row.push(num(d[k]));
                }
                t.row(row);
            }
            out.summary("rydberg_state", &label);
            out.summary("rydberg_polarizability_mev_per_field2", num(r.polarizability));
            out.summary("rydberg_excluded_degenerate", r.excluded);
        } else {
            out.summary("ground_polarizability_mev_per_field2", num(r.polarizability));
        }
    }
    out.write_table(&t)?;
    out.finish(cfg)
}

pub fn ionize(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut out = ctx.output("ionize")?;
    let sp = ctx.species()?;
    let c = cfg.constants();
    let model = IonizationModel::for_state(&sp.rydberg_state_label, sp.rydberg_binding_mev, cfg.ionize.tunneling_mass)?;
    let lifetime = cfg.ionize.lifetime.unwrap_or(sp.lifetime_t1);
    let rate = |f: f64| ionization_rate_excited(&model, f, &c);
    let mut t = Table::new("ionize", &["field_v_per_um", "rate_per_s", "probability"]);
    t.comment("state", format!("{}:{}", sp.name, sp.rydberg_state_label));
    t.comment("lifetime_s", num(lifetime));
    for &f in &cfg.ionize.fields_v_per_um {
        t.row(vec![num(f), num(rate(f)), num(ionization_probability(rate, lifetime, f))]);
    }
    out.write_table(&t)?;
    let safe = max_applicable_field(&model, sp.nuclear_charge as f64, lifetime, cfg.ionize.budget, &c)?;
    out.summary("budget", num(cfg.ionize.budget));
    out.summary("safe_field_v_per_um", num(safe.field));
    out.summary("classical_threshold_v_per_um", num(safe.classical_threshold));
    out.summary("capped_by_threshold", safe.capped);
    out.finish(cfg)
}

/// Optimization spec with the config's overrides and tolerance applied.
pub fn spec_for(cfg: &RunConfig, kind: ProtocolKind, u: f64) -> OptimizationSpec {
    let mut s = OptimizationSpec::new(kind, u);
    s.integrator_tol = cfg.run.tol;
    if kind != ProtocolKind::ResonantBlockade {
        if let Some(r) = cfg.protocol.detuning_ratio {
            s.free_parameters.detuning_ratio = false;
            s.fixed_detuning_ratio = r;
        }
        if let Some(x) = cfg.protocol.xi {
            s.free_parameters.xi = false;
            s.fixed_xi = x;
        }
    }
    s
}

/// Optima along an ascending grid. Every point gets a global multistart;
/// from the second point on, a warm start with Ω scaled from the previous
/// optimum competes with it and the better of the two is kept.
pub fn optimal_curve(cfg: &RunConfig, kind: ProtocolKind, grid: &[f64]) -> Result<Vec<OptimumRecord>, CliError> {
    let rates = DecoherenceRates::unit();
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out: Vec<OptimumRecord> = Vec::new();
    for u in sorted {
        let spec = spec_for(cfg, kind, u);
        let mut rec = optimize(&spec, &rates)?;
        if let Some(p) = out.last() {
            let s = u / p.interaction_over_gamma;
            let rabi = if kind == ProtocolKind::BlockadeInspired { p.rabi * s } else { p.rabi * s.sqrt() };
            let warm = optimize_from(&spec, &rates, rabi, p.detuning_ratio(), p.xi)?;
            if warm.fidelity > rec.fidelity {
                rec = warm;
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn optimize_cmd(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut out = ctx.output("optimize")?;
    let kinds = cfg.protocol.kinds.iter().map(|k| parse_kind(k)).collect::<Result<Vec<_>, _>>()?;
    let curves = kinds
        .par_iter()
        .map(|&k| optimal_curve(cfg, k, &cfg.protocol.u_over_gamma_grid))
        .collect::<Result<Vec<_>, _>>()?;
    let mut t = Table::new(
        "optimize",
        &[
            "protocol", "u_over_gamma", "rabi", "rabi_over_u", "detuning_ratio", "xi", "fidelity", "infidelity",
            "local_phase", "evaluations",
        ],
    );
    t.comment("rates", "gamma_se=1;gamma_de=0.5");
    for (k, curve) in kinds.iter().zip(&curves) {
        for r in curve {
            t.row(vec![
                k.name().into(),
                num(r.interaction_over_gamma),
                num(r.rabi),
                num(r.rabi_over_u()),
                num(r.detuning_ratio()),
                num(r.xi),
                num(r.fidelity),
                num(r.infidelity()),
                num(r.local_phase),
                r.evaluations.to_string(),
            ]);
        }
    }
    out.write_table(&t)?;
    // ordering of the compared protocols at each grid point, best first
    let n = curves.first().map_or(0, Vec::len);
    for i in 0..n {
        let mut at: Vec<(f64, &str)> = kinds.iter().zip(&curves).map(|(k, c)| (c[i].infidelity(), k.name())).collect();
        at.sort_by(|a, b| a.0.total_cmp(&b.0));
        let names: Vec<&str> = at.iter().map(|x| x.1).collect();
        out.summary(&format!("order_at_{}", num(curves[0][i].interaction_over_gamma)), names.join("<"));
    }
    out.finish(cfg)
}

pub fn scan(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut out = ctx.output("scan")?;
    let kind = parse_kind(&cfg.protocol.kind)?;
    let rates = DecoherenceRates::unit();
    let rec = optimize(&spec_for(cfg, kind, cfg.scan.u_over_gamma), &rates)?;
    let rabi = robustness_scan_rabi_at(&rec, &cfg.scan.rabi_multipliers, &rates)?;
    let det = robustness_scan_detuning_at(&rec, &cfg.scan.detuning_offsets, &rates)?;
    let mut t = Table::new("scan_rabi", &["rabi_multiplier", "fidelity", "infidelity"]);
    t.comment("protocol", kind.name());
    t.comment("u_over_gamma", num(rec.interaction_over_gamma));
    for &(m, f) in &rabi {
        t.row(vec![num(m), num(f), num(1.0 - f)]);
    }
    out.write_table(&t)?;
    let mut d = Table::new("scan_detuning", &["offset_over_rabi", "infidelity"]);
    d.comment("protocol", kind.name());
    d.comment("u_over_gamma", num(rec.interaction_over_gamma));
    for &(o, e) in &det {
        d.row(vec![num(o), num(e)]);
    }
    out.write_table(&d)?;
    out.summary("optimum_fidelity", num(rec.fidelity));
    out.summary("optimum_rabi_over_u", num(rec.rabi_over_u()));
    let worst = rabi.iter().map(|&(_, f)| rec.fidelity - f).fold(0.0, f64::max);
    out.summary("max_rabi_fidelity_loss", num(worst));
    let base = 1.0 - rec.fidelity;
    let ratio = det.iter().map(|&(_, e)| (e / base).max(base / e)).fold(1.0, f64::max);
    out.summary("max_detuning_infidelity_ratio", num(ratio));
    out.finish(cfg)
}

/// One named self-check.
struct Check {
    name: &'static str,
    value: f64,
    expected: f64,
    tolerance: f64,
}

impl Check {
    fn pass(&self) -> bool {
        (self.value - self.expected).abs() <= self.tolerance
    }
}

/// Quick checks of the solver, master equation and gate phases.
pub fn validate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut out = ctx.output("validate")?;
    let mut checks = Vec::new();

    let iso = SolverConfig { parity: Some(Parity::Even), eigenpair_count: 1, ..SolverConfig::isotropic() };
    let e = assemble_and_solve(&iso)?[0].energy;
    checks.push(Check { name: "hydrogen_ground_hartree", value: e, expected: -0.5, tolerance: 0.5e-3 });

    let rates = DecoherenceRates::unit();
    let (ratio, xi) = ProtocolKind::BlockadeInspired.default_shape();
    let u = 1e3;
    let p = ProtocolKind::BlockadeInspired.build(INSPIRED_RABI_OVER_U * u, ratio, xi)?;
    let r = run_protocol_with(&p, u, &rates, &RunOptions { tol: cfg.run.tol, ..RunOptions::default() })?;
    let rho = r.final_state;
    checks.push(Check { name: "trace", value: rho.trace().re, expected: 1.0, tolerance: 1e-9 });
    checks.push(Check { name: "hermiticity", value: rho.hermiticity_error(), expected: 0.0, tolerance: 1e-10 });
    checks.push(Check { name: "min_eigenvalue", value: rho.min_eigenvalue().min(0.0), expected: 0.0, tolerance: 1e-9 });

    // resonant gate, no decoherence, strong blockade: only |00⟩ keeps its sign
    let res = ProtocolKind::ResonantBlockade.build(1.0, 0.0, 0.0)?;
    let amps = qubit_phases(&res, 1e4, cfg.run.tol.min(1e-11))?;
    let signs = [1.0, -1.0, -1.0, -1.0];
    for (k, name) in ["phase_00", "phase_01", "phase_10", "phase_11"].into_iter().enumerate() {
        let d = (amps[k] * signs[k]).arg().abs();
        checks.push(Check { name, value: d, expected: 0.0, tolerance: 1e-3 });
    }

    // an idle Rydberg population decays at γ_se
    let ryd = basis_index(RYD, ZERO);
    let t = 0.7;
    let idle = evolve(&DensityMatrix::from_basis(ryd), &DriveParameters::idle(0.0), &JumpOperatorSet::new(&rates), t, cfg.run.tol)
        .map_err(|e| CliError::Integration(e.to_string()))?;
    checks.push(Check { name: "rydberg_decay", value: idle.population(ryd), expected: (-t).exp(), tolerance: 1e-6 });

    let mut table = Table::new("validate", &["check", "value", "expected", "tolerance", "pass"]);
    let mut failed = Vec::new();
    for c in &checks {
        table.row(vec![c.name.into(), num(c.value), num(c.expected), num(c.tolerance), c.pass().to_string()]);
        if !c.pass() {
            failed.push(c.name);
        }
    }
    out.write_table(&table)?;
    out.summary("checks", checks.len());
    out.summary("failed", failed.len());
    out.finish(cfg)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed.join(", ")))
    }
}
