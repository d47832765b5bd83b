//! Gate fidelity over a plane of donor-2 positions with the pulses fixed at
//! the optimum for a nominal separation.

use std::collections::VecDeque;

use rayon::prelude::*;
use si_rydberg::catalog::Catalog;
use si_rydberg::gates::{run_protocol_with, PulseProtocol, RunOptions};
use si_rydberg::interaction::{map_coordinates, DonorPairGeometry, McSettings, PairContext};
use si_rydberg::montecarlo::derive_seed;
use si_rydberg::optimize::{optimize, optimize_from, OptimumRecord};
use si_rydberg::units::DecoherenceRates;

use crate::commands::{geometry, raster, spec_for, Context};
use crate::config::{axis_index, parse_kind, RunConfig};
use crate::error::CliError;
use crate::output::{num, opt_num, say, Table};

pub const THRESHOLDS: [f64; 3] = [0.95, 0.99, 0.995];

/// Fidelities on the refined grid, row-major over the two plane axes.
#[derive(Debug, Clone)]
pub struct FidelityMap {
    pub axes: (usize, usize),
    pub coords: Vec<f64>,
    pub u_mev: Vec<Option<f64>>,
    /// Monte-Carlo standard error of u.
    pub u_err: Vec<Option<f64>>,
    pub fidelity: Vec<Option<f64>>,
    /// Grid index closest to the nominal position.
    pub nominal: (usize, usize),
}

impl FidelityMap {
    fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn at(&self, i: usize, j: usize) -> Option<f64> {
        self.fidelity[i * self.n() + j]
    }

    /// 4-connected points above `threshold` reachable from the nominal point.
    pub fn connected_region(&self, threshold: f64) -> Vec<(usize, usize)> {
        let n = self.n();
        let above = |i: usize, j: usize| self.at(i, j).is_some_and(|f| f > threshold);
        let mut seen = vec![false; n * n];
        let mut out = Vec::new();
        let (i0, j0) = self.nominal;
        if !above(i0, j0) {
            return out;
        }
        let mut queue = VecDeque::from([(i0, j0)]);
        seen[i0 * n + j0] = true;
        while let Some((i, j)) = queue.pop_front() {
            out.push((i, j));
            let nb = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
            for (a, b) in nb {
                if a < n && b < n && !seen[a * n + b] && above(a, b) {
                    seen[a * n + b] = true;
                    queue.push_back((a, b));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Span of the region along each plane axis, nm.
    pub fn extent(&self, region: &[(usize, usize)]) -> (f64, f64) {
        let span = |v: Vec<usize>| match (v.iter().min(), v.iter().max()) {
            (Some(&lo), Some(&hi)) => self.coords[hi] - self.coords[lo],
            _ => 0.0,
        };
        (span(region.iter().map(|p| p.0).collect()), span(region.iter().map(|p| p.1).collect()))
    }

    /// Largest |u(R) − u(−R)| in units of the combined standard error.
    pub fn inversion_zscore(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for k in 0..n * n {
            let q = n * n - 1 - k;
            if let (Some(a), Some(b), Some(ea), Some(eb)) = (self.u_mev[k], self.u_mev[q], self.u_err[k], self.u_err[q]) {
                let e = (ea * ea + eb * eb).sqrt();
                if e > 0.0 {
                    worst = worst.max((a - b).abs() / e);
                }
            }
        }
        worst
    }

    /// Largest |F(R) − F(−R)| over points where both are defined.
    pub fn inversion_asymmetry(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (self.at(i, j), self.at(n - 1 - i, n - 1 - j)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }
}

/// Bilinear interpolation on the raster; `None` when a needed node is masked.
pub fn interpolate(raster: &[Option<f64>], n: usize, refine: usize, i: usize, j: usize) -> Option<f64> {
    let (ia, fa) = (i / refine, (i % refine) as f64 / refine as f64);
    let (jb, fb) = (j / refine, (j % refine) as f64 / refine as f64);
    let mut acc = 0.0;
    for (di, wi) in [(0, 1.0 - fa), (1, fa)] {
        for (dj, wj) in [(0, 1.0 - fb), (1, fb)] {
            if wi * wj == 0.0 {
                continue;
            }
            let (a, b) = (ia + di, jb + dj);
            if a >= n || b >= n {
                return None;
            }
            acc += wi * wj * raster[a * n + b]?;
        }
    }
    Some(acc)
}

/// Pulses and their local phase, fixed at the design interaction.
struct Design {
    record: OptimumRecord,
    protocol: PulseProtocol,
    u_design: f64,
}

fn fidelity_at(cfg: &RunConfig, design: &Design, u: f64, rates: &DecoherenceRates) -> Result<f64, CliError> {
    let opts = RunOptions { tol: cfg.run.tol, optimize_local_phase: false, record_traces: false };
    if cfg.map.reoptimize_per_cell {
        let r = &design.record;
        let scale = u.abs() / design.u_design.abs();
        let spec = spec_for(cfg, r.protocol_kind, u.abs());
        let rec = optimize_from(&spec, rates, r.rabi * scale, r.detuning_ratio(), r.xi)?;
        let p = if u < 0.0 { rec.protocol()?.mirrored() } else { rec.protocol()? };
        let opts = RunOptions { optimize_local_phase: true, ..opts };
        return Ok(run_protocol_with(&p, u, rates, &opts)?.fidelity);
    }
    Ok(run_protocol_with(&design.protocol, u, rates, &opts)?.fidelity)
}

/// Builds the fidelity map for `cfg`. Returns the map, the design optimum
/// and the fidelity at the nominal position.
pub fn compute_map(cfg: &RunConfig, cat: &Catalog) -> Result<(FidelityMap, OptimumRecord, f64), CliError> {
    let n = cfg.interaction.map_points;
    if n < 2 {
        return Err(CliError::Config("fidelity-map needs interaction.map_points >= 2".into()));
    }
    let axes = cfg.map_axes()?;
    let nominal_axis = axis_index(&cfg.map.nominal_axis)?;
    if nominal_axis != axes.0 && nominal_axis != axes.1 {
        return Err(CliError::Config("map.nominal_axis must lie in the map plane".into()));
    }
    let kind = parse_kind(&cfg.protocol.kind)?;
    let pair = PairContext::new(cat)?;
    let mc = cfg.mc_settings();
    let species = cfg.species()?;
    let gamma = species.decoherence_rates().gamma_se;
    let to_gamma = |mev: f64| cat.constants.mev_to_rate(mev) / gamma;
    let rates = DecoherenceRates::unit();

    // the design point never carries the sublattice offset
    let mut r_nom = [0.0; 3];
    r_nom[nominal_axis] = cfg.map.nominal_nm;
    let design_geom = DonorPairGeometry {
        displacement: r_nom,
        field: [0.0, 0.0, cfg.interaction.field_v_per_um],
        polarization_axis: [0.0, 0.0, 1.0],
    };
    let u_design = to_gamma(pair.total(&design_geom, &mc)?.total_u.value);
    let record = optimize(&spec_for(cfg, kind, u_design.abs()), &rates)?;
    let mut protocol = record.protocol()?;
    if u_design < 0.0 {
        protocol = protocol.mirrored();
    }
    let phase_opts = RunOptions { tol: cfg.run.tol, ..RunOptions::default() };
    protocol.local_phase = Some(run_protocol_with(&protocol, u_design, &rates, &phase_opts)?.local_phase);
    let design = Design { record, protocol, u_design };

    let u_nominal = to_gamma(pair.total(&geometry(cfg, cat, r_nom), &mc)?.total_u.value);
    let nominal_fidelity = fidelity_at(cfg, &design, u_nominal, &rates)?;
    say(&format!("design u/γ {}, nominal u/γ {}", num(u_design), num(u_nominal)));

    let coarse = map_coordinates(n, cfg.interaction.map_step_nm);
    let refine = cfg.map.refine;
    let m = (n - 1) * refine + 1;
    let h = cfg.interaction.map_step_nm / refine as f64;
    let coords: Vec<f64> = (0..m).map(|i| coarse[0] + i as f64 * h).collect();

    let u: Vec<Option<(f64, f64)>> = if cfg.map.direct_cells {
        (0..m * m)
            .into_par_iter()
            .map(|k| {
                let mut r = [0.0; 3];
                r[axes.0] = coords[k / m];
                r[axes.1] = coords[k % m];
                let g = geometry(cfg, cat, r);
                if g.displacement.iter().map(|x| x * x).sum::<f64>().sqrt() < mc.guard_nm {
                    return Ok(None);
                }
                let cell = McSettings { seed: derive_seed(mc.seed, k as u64), ..mc };
                let t = pair.total(&g, &cell)?.total_u;
                Ok(Some((t.value, t.error)))
            })
            .collect::<Result<_, CliError>>()?
    } else {
        let cells = raster(cfg, cat, &pair, &coarse)?;
        let value: Vec<Option<f64>> = cells.iter().map(|c| c.as_ref().map(|b| b.total_u.value)).collect();
        let error: Vec<Option<f64>> = cells.iter().map(|c| c.as_ref().map(|b| b.total_u.error)).collect();
        (0..m * m)
            .map(|k| Some((interpolate(&value, n, refine, k / m, k % m)?, interpolate(&error, n, refine, k / m, k % m)?)))
            .collect()
    };
    let u_mev: Vec<Option<f64>> = u.iter().map(|c| c.map(|c| c.0)).collect();
    let u_err: Vec<Option<f64>> = u.iter().map(|c| c.map(|c| c.1)).collect();
    let fidelity: Vec<Option<f64>> = u_mev
        .par_iter()
        .map(|u| u.map(|u| fidelity_at(cfg, &design, to_gamma(u), &rates)).transpose())
        .collect::<Result<_, _>>()?;

    let nearest = |x: f64| {
        (0..m).min_by(|&a, &b| (coords[a] - x).abs().total_cmp(&(coords[b] - x).abs())).expect("non-empty grid")
    };
    let mut pos = [0.0; 3];
    pos[nominal_axis] = cfg.map.nominal_nm;
    let nominal = (nearest(pos[axes.0]), nearest(pos[axes.1]));
    Ok((FidelityMap { axes, coords, u_mev, u_err, fidelity, nominal }, design.record, nominal_fidelity))
}

pub fn fidelity_map(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut out = ctx.output("fidelity-map")?;
    let cat = ctx.catalog(&mut out)?;
    let (map, rec, nominal_fidelity) = compute_map(cfg, &cat)?;
    let region = map.connected_region(THRESHOLDS[2]);
    let names = ["x_nm", "y_nm", "z_nm"];
    let mut t = Table::new(
        "fidelity_map",
        &[names[map.axes.0], names[map.axes.1], "u_mev", "u_err", "fidelity", "ge_0.95", "ge_0.99", "ge_0.995", "region"],
    );
    t.comment("plane", &cfg.interaction.map_plane);
    t.comment("nominal_nm", num(cfg.map.nominal_nm));
    t.comment("nominal_axis", &cfg.map.nominal_axis);
    t.comment("protocol", rec.protocol_kind.name());
    t.comment("design_u_over_gamma", num(rec.interaction_over_gamma));
    t.comment("rabi_over_u", num(rec.rabi_over_u()));
    t.comment("detuning_ratio", num(rec.detuning_ratio()));
    t.comment("xi", num(rec.xi));
    t.comment("reoptimize_per_cell", cfg.map.reoptimize_per_cell);
    t.comment("sublattice_offset", cfg.interaction.sublattice_offset);
    let n = map.coords.len();
    let mut in_region = vec![false; n * n];
    for &(i, j) in &region {
        in_region[i * n + j] = true;
    }
    for k in 0..n * n {
        let f = map.fidelity[k];
        let flag = |th: f64| f.map_or_else(|| "NA".to_string(), |f| u8::from(f >= th).to_string());
        t.row(vec![
            num(map.coords[k / n]),
            num(map.coords[k % n]),
            opt_num(map.u_mev[k]),
            opt_num(map.u_err[k]),
            opt_num(f),
            flag(THRESHOLDS[0]),
            flag(THRESHOLDS[1]),
            flag(THRESHOLDS[2]),
            u8::from(in_region[k]).to_string(),
        ]);
    }
    out.write_table(&t)?;
    let (ea, eb) = map.extent(&region);
    out.summary("design_fidelity", num(rec.fidelity));
    out.summary("nominal_fidelity", num(nominal_fidelity));
    for th in THRESHOLDS {
        let c = map.fidelity.iter().filter(|f| f.is_some_and(|f| f >= th)).count();
        out.summary(&format!("points_ge_{th}"), c);
    }
    out.summary("region_points", region.len());
    out.summary(&format!("region_extent_{}", &names[map.axes.0][..1]), num(ea));
    out.summary(&format!("region_extent_{}", &names[map.axes.1][..1]), num(eb));
    out.summary("inversion_asymmetry", num(map.inversion_asymmetry()));
    out.summary("inversion_u_zscore", num(map.inversion_zscore()));
    out.finish(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(f: Vec<Option<f64>>, n: usize) -> FidelityMap {
        FidelityMap {
            axes: (0, 2),
            coords: map_coordinates(n, 1.0),
            u_mev: vec![None; n * n],
            u_err: vec![None; n * n],
            fidelity: f,
            nominal: (n / 2, n - 1),
        }
    }

    #[test]
    fn interpolation_hits_nodes_and_midpoints() {
        let raster = vec![Some(0.0), Some(1.0), Some(2.0), Some(3.0)];
        assert_eq!(interpolate(&raster, 2, 2, 0, 0), Some(0.0));
        assert_eq!(interpolate(&raster, 2, 2, 2, 2), Some(3.0));
        assert_eq!(interpolate(&raster, 2, 2, 1, 1), Some(1.5));
        assert_eq!(interpolate(&raster, 2, 2, 0, 1), Some(0.5));
        let masked = vec![Some(0.0), None, Some(2.0), Some(3.0)];
        assert_eq!(interpolate(&masked, 2, 2, 0, 1), None);
        assert_eq!(interpolate(&masked, 2, 2, 2, 0), Some(2.0));
    }

    #[test]
    fn region_grows_from_the_nominal_point_only() {
        // 3x3, nominal at (1, 2); a separate high cell at (0, 0)
        let hi = Some(0.999);
        let lo = Some(0.9);
        let f = vec![hi, lo, lo, lo, hi, hi, lo, None, hi];
        let map = toy(f, 3);
        let region = map.connected_region(0.995);
        assert_eq!(region, vec![(1, 1), (1, 2), (2, 2)]);
        assert_eq!(map.extent(&region), (1.0, 1.0));
    }

    #[test]
    fn empty_region_when_nominal_is_below_threshold() {
        let map = toy(vec![Some(0.5); 9], 3);
        assert!(map.connected_region(0.995).is_empty());
        assert_eq!(map.extent(&[]), (0.0, 0.0));
    }

    #[test]
    fn asymmetry_compares_opposite_points() {
        let mut f = vec![Some(0.99); 9];
        f[0] = Some(0.97);
        assert!((toy(f.clone(), 3).inversion_asymmetry() - 0.02).abs() < 1e-12);
        f[8] = None;
        assert_eq!(toy(f, 3).inversion_asymmetry(), 0.0);
    }

    #[test]
    fn zscore_uses_combined_error() {
        let mut map = toy(vec![None; 4], 2);
        map.u_mev = vec![Some(1.0), Some(5.0), Some(5.0), Some(1.3)];
        map.u_err = vec![Some(0.1), Some(0.1), Some(0.1), Some(0.0)];
        assert!((map.inversion_zscore() - 3.0).abs() < 1e-12);
    }
}
