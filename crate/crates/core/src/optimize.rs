//! Pulse-parameter optimization for the gate protocols.
//!
//! The free parameters are searched with a bounded Nelder–Mead simplex in
//! (ln Ω, Δ/Ω, ξ). Four starts are taken from the best distinct points of a
//! deterministic coarse grid over the bounds, so a given spec always produces
//! the same record.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gates::{run_protocol_with, GateError, ProtocolKind, PulseProtocol, RunOptions};
use crate::lindblad::DEFAULT_TOL;
use crate::units::DecoherenceRates;

pub const MULTISTARTS: usize = 4;
pub const EVALUATION_BUDGET: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("no start converged within {budget} evaluations")]
    NoConvergence { budget: usize },
    #[error("invalid optimization spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Gate(#[from] GateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeParameters {
    pub rabi: bool,
    pub detuning_ratio: bool,
    pub xi: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// Ω in units of γ_se.
    pub rabi: (f64, f64),
    pub detuning_ratio: (f64, f64),
    pub xi: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSpec {
    pub protocol_kind: ProtocolKind,
    pub interaction_over_gamma: f64,
    pub free_parameters: FreeParameters,
    pub bounds: Bounds,
    /// Values used for parameters that are not free.
    pub fixed_detuning_ratio: f64,
    pub fixed_xi: f64,
    /// Convergence tolerance on the infidelity spread of the simplex.
    pub tolerance: f64,
    /// Local error tolerance of the master-equation integrator.
    pub integrator_tol: f64,
}

impl OptimizationSpec {
    pub fn new(kind: ProtocolKind, interaction_over_gamma: f64) -> Self {
        let (ratio, xi) = kind.default_shape();
        let all = kind == ProtocolKind::BlockadeInspired;
        Self {
            protocol_kind: kind,
            interaction_over_gamma,
            free_parameters: FreeParameters { rabi: true, detuning_ratio: all, xi: all },
            bounds: Bounds {
                rabi: (1.0, 10.0 * interaction_over_gamma.max(0.1)),
                detuning_ratio: (0.0, 1.0),
                xi: (0.0, 2.0 * PI),
            },
            fixed_detuning_ratio: ratio,
            fixed_xi: xi,
            tolerance: 1e-11,
            integrator_tol: DEFAULT_TOL,
        }
    }

    fn validate(&self) -> Result<(), OptimizeError> {
        if !(self.interaction_over_gamma > 0.0 && self.interaction_over_gamma.is_finite()) {
            return Err(OptimizeError::InvalidSpec("u/γ must be positive".into()));
        }
        let (lo, hi) = self.bounds.rabi;
        if !(lo > 0.0 && hi > lo) {
            return Err(OptimizeError::InvalidSpec(format!("Rabi bounds ({lo}, {hi})")));
        }
        if self.protocol_kind == ProtocolKind::ResonantBlockade
            && (self.free_parameters.detuning_ratio || self.free_parameters.xi)
        {
            return Err(OptimizeError::InvalidSpec("resonant gate frees only Ω".into()));
        }
        if !self.free_parameters.rabi {
            return Err(OptimizeError::InvalidSpec("Ω must be free".into()));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<Axis> {
        let mut d = vec![Axis::LogRabi];
        if self.free_parameters.detuning_ratio {
            d.push(Axis::DetuningRatio);
        }
        if self.free_parameters.xi {
            d.push(Axis::Xi);
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    LogRabi,
    DetuningRatio,
    Xi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumRecord {
    pub protocol_kind: ProtocolKind,
    pub interaction_over_gamma: f64,
    /// Ω in units of γ_se.
    pub rabi: f64,
    /// Δ in units of γ_se.
    pub detuning: f64,
    pub xi: f64,
    pub fidelity: f64,
    pub local_phase: f64,
    pub evaluations: usize,
}

impl OptimumRecord {
    pub fn detuning_ratio(&self) -> f64 {
        self.detuning / self.rabi
    }

    pub fn rabi_over_u(&self) -> f64 {
        self.rabi / self.interaction_over_gamma
    }

    pub fn infidelity(&self) -> f64 {
        1.0 - self.fidelity
    }

    pub fn protocol(&self) -> Result<PulseProtocol, GateError> {
        let mut p = self.protocol_kind.build(self.rabi, self.detuning_ratio(), self.xi)?;
        p.local_phase = Some(self.local_phase);
        Ok(p)
    }
}

/// Fidelity of a protocol at (Ω, Δ/Ω, ξ) with the local phase re-optimized.
pub fn evaluate(
    kind: ProtocolKind,
    rabi: f64,
    detuning_ratio: f64,
    xi: f64,
    interaction: f64,
    rates: &DecoherenceRates,
    tol: f64,
) -> Result<(f64, f64), GateError> {
    let p = kind.build(rabi, detuning_ratio, xi)?;
    let r = run_protocol_with(&p, interaction, rates, &RunOptions { tol, ..RunOptions::default() })?;
    Ok((r.fidelity, r.local_phase))
}

struct Problem<'a> {
    spec: &'a OptimizationSpec,
    rates: &'a DecoherenceRates,
    axes: Vec<Axis>,
}

impl Problem<'_> {
    fn lower(&self, a: Axis) -> f64 {
        match a {
            Axis::LogRabi => self.spec.bounds.rabi.0.ln(),
            Axis::DetuningRatio => self.spec.bounds.detuning_ratio.0,
            Axis::Xi => self.spec.bounds.xi.0,
        }
    }

    fn upper(&self, a: Axis) -> f64 {
        match a {
            Axis::LogRabi => self.spec.bounds.rabi.1.ln(),
            Axis::DetuningRatio => self.spec.bounds.detuning_ratio.1,
            Axis::Xi => self.spec.bounds.xi.1,
        }
    }

    /// Clamps into the box; ξ wraps around its period.
    fn project(&self, x: &mut [f64]) {
        for (v, &a) in x.iter_mut().zip(&self.axes) {
            let (lo, hi) = (self.lower(a), self.upper(a));
            *v = if a == Axis::Xi { lo + (*v - lo).rem_euclid(hi - lo) } else { v.clamp(lo, hi) };
        }
    }

    fn unpack(&self, x: &[f64]) -> (f64, f64, f64) {
        let mut rabi = 0.0;
        let mut ratio = self.spec.fixed_detuning_ratio;
        let mut xi = self.spec.fixed_xi;
        for (v, &a) in x.iter().zip(&self.axes) {
            match a {
                Axis::LogRabi => rabi = v.exp(),
                Axis::DetuningRatio => ratio = *v,
                Axis::Xi => xi = *v,
            }
        }
        (rabi, ratio, xi)
    }

    fn infidelity(&self, x: &[f64]) -> Result<f64, GateError> {
        let (rabi, ratio, xi) = self.unpack(x);
        let (f, _) = evaluate(
            self.spec.protocol_kind,
            rabi,
            ratio,
            xi,
            self.spec.interaction_over_gamma,
            self.rates,
            self.spec.integrator_tol,
        )?;
        Ok(1.0 - f)
    }

    fn initial_steps(&self) -> Vec<f64> {
        self.axes
            .iter()
            .map(|a| match a {
                Axis::LogRabi => 0.1,
                Axis::DetuningRatio => 0.05,
                Axis::Xi => 0.2,
            })
            .collect()
    }

    /// Coarse grid over the box. The Ω axis starts two decades below u at
    /// the lowest, where gates are already far longer than the lifetime.
    fn grid(&self) -> Vec<Vec<f64>> {
        let u = self.spec.interaction_over_gamma;
        let lo = self.lower(Axis::LogRabi).max((u / 100.0).ln()).min(self.upper(Axis::LogRabi));
        let hi = self.upper(Axis::LogRabi);
        let one_d = self.axes.len() == 1;
        let n_rabi = if one_d { 96 } else { 16 };
        let rabis: Vec<f64> =
            (0..n_rabi).map(|i| lo + (hi - lo) * i as f64 / (n_rabi - 1) as f64).collect();
        let lin = |a: Axis, n: usize, periodic: bool| -> Vec<f64> {
            let (l, h) = (self.lower(a), self.upper(a));
            let m = if periodic { n } else { n + 1 };
            (0..n).map(|i| l + (h - l) * (i as f64 + 0.5 * !periodic as u8 as f64) / m as f64).collect()
        };
        let mut pts: Vec<Vec<f64>> = rabis.iter().map(|&r| vec![r]).collect();
        for &a in &self.axes[1..] {
            let vals = match a {
                Axis::DetuningRatio => lin(a, 4, false),
                Axis::Xi => lin(a, 8, true),
                Axis::LogRabi => unreachable!(),
            };
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    vals.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        pts
    }
}

#[derive(Debug, Clone)]
struct SimplexResult {
    x: Vec<f64>,
    f: f64,
    evaluations: usize,
    converged: bool,
}

/// Bounded Nelder–Mead minimization.
fn nelder_mead(
    problem: &Problem,
    x0: &[f64],
    steps: &[f64],
    budget: usize,
    ftol: f64,
) -> Result<SimplexResult, GateError> {
    let n = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &mut Vec<f64>| -> Result<f64, GateError> {
        problem.project(x);
        evals.set(evals.get() + 1);
        problem.infidelity(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut p0 = x0.to_vec();
    let f0 = eval(&mut p0)?;
    simplex.push((p0.clone(), f0));
    for i in 0..n {
        let mut p = p0.clone();
        p[i] += steps[i];
        let mut before = p.clone();
        problem.project(&mut before);
        if (before[i] - p0[i]).abs() < 0.5 * steps[i] {
            p[i] = p0[i] - steps[i];
        }
        let f = eval(&mut p)?;
        simplex.push((p, f));
    }
    let mut converged = false;
    while evals.get() < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= ftol && size < 1e-5 || size < 1e-9 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> =
            (0..n).map(|k| simplex[..n].iter().map(|(p, _)| p[k]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect()
        };
        let mut xr = along(1.0);
        let fr = eval(&mut xr)?;
        if fr < simplex[0].1 {
            let mut xe = along(2.0);
            let fe = eval(&mut xe)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (mut xc, t) = if fr < worst.1 { (along(0.5), fr) } else { (along(-0.5), worst.1) };
        let fc = eval(&mut xc)?;
        if fc < t {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let mut p: Vec<f64> = best.iter().zip(&entry.0).map(|(b, q)| b + 0.5 * (q - b)).collect();
            let f = eval(&mut p)?;
            *entry = (p, f);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Ok(SimplexResult { x, f, evaluations: evals.get(), converged })
}

fn record_from(
    problem: &Problem,
    x: &[f64],
    evaluations: usize,
) -> Result<OptimumRecord, OptimizeError> {
    let spec = problem.spec;
    let (rabi, ratio, xi) = problem.unpack(x);
    let (fidelity, local_phase) = evaluate(
        spec.protocol_kind,
        rabi,
        ratio,
        xi,
        spec.interaction_over_gamma,
        problem.rates,
        spec.integrator_tol,
    )?;
    Ok(OptimumRecord {
        protocol_kind: spec.protocol_kind,
        interaction_over_gamma: spec.interaction_over_gamma,
        rabi,
        detuning: ratio * rabi,
        xi,
        fidelity,
        local_phase,
        evaluations,
    })
}

/// Picks up to `k` best grid points, skipping immediate grid neighbours of
/// points already chosen so that the starts land in different basins.
fn distinct_best(points: &[Vec<f64>], values: &[f64], k: usize, spacing: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut chosen: Vec<usize> = Vec::new();
    for &i in &order {
        let near = chosen.iter().any(|&j| {
            points[i]
                .iter()
                .zip(&points[j])
                .zip(spacing)
                .all(|((a, b), s)| (a - b).abs() <= 1.01 * s)
        });
        if !near {
            chosen.push(i);
        }
        if chosen.len() == k {
            break;
        }
    }
    chosen
}

/// Maximizes fidelity for the spec.
pub fn optimize(spec: &OptimizationSpec, rates: &DecoherenceRates) -> Result<OptimumRecord, OptimizeError> {
    spec.validate()?;
    let problem = Problem { spec, rates, axes: spec.dims() };
    let grid = problem.grid();
    let mut values = Vec::with_capacity(grid.len());
    for p in &grid {
        values.push(problem.infidelity(p)?);
    }
    let mut evaluations = grid.len();
    let spacing: Vec<f64> = problem
        .axes
        .iter()
        .map(|&a| {
            let mut vals: Vec<f64> = grid.iter().map(|p| p[problem.axes.iter().position(|&b| b == a).unwrap()]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            if vals.len() > 1 { vals[1] - vals[0] } else { 0.0 }
        })
        .collect();
    let starts = distinct_best(&grid, &values, MULTISTARTS, &spacing);
    let steps = problem.initial_steps();
    let mut best: Option<SimplexResult> = None;
    let mut any_converged = false;
    for &s in &starts {
        let r = nelder_mead(&problem, &grid[s], &steps, EVALUATION_BUDGET, spec.tolerance)?;
        evaluations += r.evaluations;
        any_converged |= r.converged;
        if best.as_ref().map_or(true, |b| r.f < b.f) {
            best = Some(r);
        }
    }
    if !any_converged {
        return Err(OptimizeError::NoConvergence { budget: EVALUATION_BUDGET });
    }
    let best = best.expect("at least one start");
    record_from(&problem, &best.x, evaluations)
}

/// Refines from a given starting point with a single simplex run.
pub fn optimize_from(
    spec: &OptimizationSpec,
    rates: &DecoherenceRates,
    rabi: f64,
    detuning_ratio: f64,
    xi: f64,
) -> Result<OptimumRecord, OptimizeError> {
    spec.validate()?;
    let problem = Problem { spec, rates, axes: spec.dims() };
    let mut x0: Vec<f64> = problem
        .axes
        .iter()
        .map(|a| match a {
            Axis::LogRabi => rabi.ln(),
            Axis::DetuningRatio => detuning_ratio,
            Axis::Xi => xi,
        })
        .collect();
    problem.project(&mut x0);
    let r = nelder_mead(&problem, &x0, &problem.initial_steps(), EVALUATION_BUDGET, spec.tolerance)?;
    if !r.converged {
        return Err(OptimizeError::NoConvergence { budget: EVALUATION_BUDGET });
    }
    record_from(&problem, &r.x, r.evaluations)
}

/// Optima along an ascending u/γ grid. The first point is a full
/// multistart; each later point starts from the previous optimum with Ω
/// scaled by the ratio of interactions.
pub fn optimal_curve(
    kind: ProtocolKind,
    u_over_gamma_grid: &[f64],
    rates: &DecoherenceRates,
) -> Result<Vec<OptimumRecord>, OptimizeError> {
    if u_over_gamma_grid.iter().any(|&u| !(u > 0.0)) || u_over_gamma_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OptimizeError::InvalidSpec("grid must be positive and ascending".into()));
    }
    let mut out: Vec<OptimumRecord> = Vec::with_capacity(u_over_gamma_grid.len());
    for &u in u_over_gamma_grid {
        let spec = OptimizationSpec::new(kind, u);
        let rec = match out.last() {
            None => optimize(&spec, rates)?,
            Some(prev) => {
                let scale = u / prev.interaction_over_gamma;
                let rabi = match kind {
                    ProtocolKind::BlockadeInspired => prev.rabi * scale,
                    _ => prev.rabi * scale.sqrt(),
                };
                optimize_from(&spec, rates, rabi, prev.detuning_ratio(), prev.xi)?
            }
        };
        out.push(rec);
    }
    Ok(out)
}

/// Checks that ±5% changes of Ω do not raise the fidelity.
pub fn certify(record: &OptimumRecord, rates: &DecoherenceRates) -> Result<bool, GateError> {
    for m in [0.95, 1.05] {
        let (f, _) = evaluate(
            record.protocol_kind,
            record.rabi * m,
            record.detuning_ratio(),
            record.xi,
            record.interaction_over_gamma,
            rates,
            DEFAULT_TOL,
        )?;
        if f > record.fidelity + 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Fidelity with Ω scaled off the optimum, everything else held.
pub fn robustness_scan_rabi_at(
    record: &OptimumRecord,
    rabi_multipliers: &[f64],
    rates: &DecoherenceRates,
) -> Result<Vec<(f64, f64)>, GateError> {
    rabi_multipliers
        .iter()
        .map(|&m| {
            // the pulse timing is scaled along with Ω by construction
            let (f, _) = evaluate(
                record.protocol_kind,
                record.rabi * m,
                record.detuning_ratio(),
                record.xi,
                record.interaction_over_gamma,
                rates,
                DEFAULT_TOL,
            )?;
            Ok((m, f))
        })
        .collect()
}

/// Optimizes the blockade-inspired gate at u/γ and scans Ω multipliers.
pub fn robustness_scan_rabi(
    u_over_gamma: f64,
    rabi_multipliers: &[f64],
    rates: &DecoherenceRates,
) -> Result<Vec<(f64, f64)>, OptimizeError> {
    let rec = optimize(&OptimizationSpec::new(ProtocolKind::BlockadeInspired, u_over_gamma), rates)?;
    Ok(robustness_scan_rabi_at(&rec, rabi_multipliers, rates)?)
}

/// Infidelity with Δ shifted by offset·Ω on both donors; the pulse timing,
/// Ω and ξ stay at the optimum.
pub fn robustness_scan_detuning_at(
    record: &OptimumRecord,
    detuning_offsets: &[f64],
    rates: &DecoherenceRates,
) -> Result<Vec<(f64, f64)>, GateError> {
    let base = record.protocol()?;
    detuning_offsets
        .iter()
        .map(|&off| {
            let p = base.with_detuning_offset(off);
            let r = run_protocol_with(&p, record.interaction_over_gamma, rates, &RunOptions::default())?;
            Ok((off, 1.0 - r.fidelity))
        })
        .collect()
}

pub fn robustness_scan_detuning(
    u_over_gamma: f64,
    detuning_offsets: &[f64],
    rates: &DecoherenceRates,
) -> Result<Vec<(f64, f64)>, OptimizeError> {
    let rec = optimize(&OptimizationSpec::new(ProtocolKind::BlockadeInspired, u_over_gamma), rates)?;
    Ok(robustness_scan_detuning_at(&rec, detuning_offsets, rates)?)
}

/// Least-squares line through (x, y): (slope, intercept).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_defaults_follow_protocol() {
        let s = OptimizationSpec::new(ProtocolKind::ResonantBlockade, 1e3);
        assert_eq!(s.free_parameters, FreeParameters { rabi: true, detuning_ratio: false, xi: false });
        let s = OptimizationSpec::new(ProtocolKind::OffResonantBlockade, 1e3);
        assert!(!s.free_parameters.detuning_ratio && !s.free_parameters.xi);
        assert_eq!(s.fixed_detuning_ratio, 0.377371);
        let s = OptimizationSpec::new(ProtocolKind::BlockadeInspired, 1e3);
        assert!(s.free_parameters.detuning_ratio && s.free_parameters.xi);
        assert_eq!(s.bounds.rabi, (1.0, 1e4));
        assert!(optimize(&OptimizationSpec::new(ProtocolKind::BlockadeInspired, -1.0), &DecoherenceRates::unit()).is_err());
    }

    #[test]
    fn nelder_mead_finds_inspired_optimum_from_nearby() {
        let spec = OptimizationSpec::new(ProtocolKind::BlockadeInspired, 1e3);
        let rec = optimize_from(&spec, &DecoherenceRates::unit(), 1.3e3, 0.3, 1.4).unwrap();
        assert!((rec.rabi_over_u() - 1.469).abs() < 0.02, "{rec:?}");
        assert!((rec.detuning_ratio() - 0.2829).abs() < 0.01, "{rec:?}");
        assert!((rec.infidelity() - 6.93e-3).abs() < 2e-4, "{rec:?}");
        assert!(certify(&rec, &DecoherenceRates::unit()).unwrap());
    }

    #[test]
    fn off_resonant_keeps_shape_fixed() {
        let spec = OptimizationSpec::new(ProtocolKind::OffResonantBlockade, 1e2);
        let rec = optimize(&spec, &DecoherenceRates::unit()).unwrap();
        assert!((rec.detuning_ratio() - 0.377371).abs() < 1e-12);
        assert_eq!(rec.xi, 3.90242);
        assert!(certify(&rec, &DecoherenceRates::unit()).unwrap());
    }

    #[test]
    fn optimizer_is_deterministic() {
        let spec = OptimizationSpec::new(ProtocolKind::ResonantBlockade, 1e2);
        let a = optimize(&spec, &DecoherenceRates::unit()).unwrap();
        let b = optimize(&spec, &DecoherenceRates::unit()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 * v - 0.25).collect();
        let (s, c) = linear_fit(&x, &y);
        assert!((s - 1.5).abs() < 1e-12 && (c + 0.25).abs() < 1e-12);
    }
}
