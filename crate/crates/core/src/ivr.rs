//! The initial-value ensemble: grid construction over wb(0), filtered
//! trajectory runs, accumulation of the factorized propagator integrals,
//! reconstruction of the semiclassical state, and the single-trajectory
//! classical approximation.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::coherent::sigma;
use crate::dynamics::{
    integrate_trajectory, IntegratorConfig, Snapshot, TrajectoryRecord, TrajectoryStatus,
};
use crate::fock::{FockBasis, FockVector, ModeBasis};
use crate::model::ClassicalModel;
use crate::util::{fmt_f64, norm_sqr};

/// Trajectories are integrated in fixed-size batches; parallel workers fill
/// batch slots and the reduction walks them in grid order, so results are
/// bit-identical for any worker count.
const BATCH: usize = 512;

#[derive(Debug, Error)]
pub enum IvrError {
    #[error("points per axis must be odd and positive (got {0})")]
    EvenGrid(usize),
    #[error("grid spec dimension {found} does not match the model ({expected})")]
    GridDimension { expected: usize, found: usize },
    #[error("no trajectory contributes at t = {0}; ensemble is degenerate there")]
    DegenerateTable(f64),
    #[error("requested output time index {0} out of range")]
    TimeIndex(usize),
    #[error("reconstructed state has zero norm at t = {0}")]
    ZeroNorm(f64),
    #[error("the principal trajectory terminated early: {0:?}")]
    PrincipalLost(TrajectoryStatus),
    #[error("filter rate cap must be positive (got {0})")]
    BadLambda(f64),
}

/// Rate cap of the trajectory filter; `f64::INFINITY` disables it.
#[derive(Debug, Clone, Copy)]
pub struct FilterConfig {
    pub lambda: f64,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), IvrError> {
        if self.lambda <= 0.0 || self.lambda.is_nan() {
            return Err(IvrError::BadLambda(self.lambda));
        }
        Ok(())
    }
}

/// Uniform square lattice of initial values wb(0) centered on `center`
/// (normally conj(w_i), so the principal trajectory sits on the grid).
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub center: Vec<C64>,
    /// half extent of the box along each complex component
    pub half_width: Vec<f64>,
    /// samples per real axis; odd so the center is a lattice point
    pub points_per_axis: usize,
}

impl GridSpec {
    pub fn centered(center: Vec<C64>, half_width: f64, points_per_axis: usize) -> Self {
        let d = center.len();
        Self {
            center,
            half_width: vec![half_width; d],
            points_per_axis,
        }
    }

    /// Lattice spacing along each real axis.
    pub fn spacing(&self) -> Vec<f64> {
        self.half_width
            .iter()
            .map(|hw| 2.0 * hw / (self.points_per_axis - 1).max(1) as f64)
            .collect()
    }

    /// Volume element of the quadrature cell, h^(2 (n-1)).
    pub fn cell_volume(&self) -> f64 {
        if self.points_per_axis == 1 {
            return 1.0;
        }
        self.spacing().iter().map(|h| h * h).product()
    }

    pub fn total_points(&self) -> usize {
        self.points_per_axis.pow(2 * self.center.len() as u32)
    }
}

/// Row-major lattice of initial values; axes ordered
/// (Re wb_1, Im wb_1, Re wb_2, Im wb_2, ...) with the last axis fastest.
/// The central point is exactly `spec.center`.
pub fn build_grid(spec: &GridSpec) -> Result<Vec<Vec<C64>>, IvrError> {
    let p = spec.points_per_axis;
    if p == 0 || p % 2 == 0 {
        return Err(IvrError::EvenGrid(p));
    }
    let d = spec.center.len();
    let axes = 2 * d;
    let spacing = spec.spacing();
    let half = (p - 1) as i64 / 2;
    let total = spec.total_points();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; axes];
    for _ in 0..total {
        let mut wb = spec.center.clone();
        for (ax, &k) in idx.iter().enumerate() {
            let offset = (k as i64 - half) as f64 * spacing[ax / 2];
            if ax % 2 == 0 {
                wb[ax / 2] += C64::new(offset, 0.0);
            } else {
                wb[ax / 2] += C64::new(0.0, offset);
            }
        }
        out.push(wb);
        // row-major increment, last axis fastest
        for ax in (0..axes).rev() {
            idx[ax] += 1;
            if idx[ax] < p {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(out)
}

/// Exponent of (1 + |wb|^2) in the accumulation integrand: N/2 + n.
pub fn jacobian_exponent(modes: usize, particles: u32) -> f64 {
    particles as f64 / 2.0 + modes as f64
}

/// The factorized propagator integrals, one complex value per number state
/// per output time, plus contribution bookkeeping.
#[derive(Debug, Clone)]
pub struct IvrIntegralTable {
    pub times: Vec<f64>,
    /// values[time][basis index]
    pub values: Vec<Vec<C64>>,
    /// number of trajectories contributing at each time
    pub contributing: Vec<usize>,
    pub modes: usize,
    pub particles: u32,
}

impl IvrIntegralTable {
    pub fn is_degenerate(&self, time_idx: usize) -> bool {
        self.contributing[time_idx] == 0
    }
}

/// Survival data for one grid point.
#[derive(Debug, Clone)]
pub struct SurvivalEntry {
    pub wb0: Vec<C64>,
    /// last time the trajectory contributes (horizon when never cut)
    pub t_contrib: f64,
    pub status: TrajectoryStatus,
}

/// Result of a full ensemble run.
#[derive(Debug)]
pub struct EnsembleResult {
    pub table: IvrIntegralTable,
    pub survival: Vec<SurvivalEntry>,
    pub total_trajectories: usize,
    pub filtered: usize,
    pub singular: usize,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
}

impl EnsembleResult {
    /// Trajectory count in the reporting convention of the survival diagram:
    /// grid points that did not fail singularly.
    pub fn contributing_count(&self) -> usize {
        self.total_trajectories - self.singular
    }
}

/// Integrate the whole grid and accumulate the factorized integrals.
///
/// Summation order is the fixed grid order regardless of the worker count,
/// so reruns are bit-identical.
pub fn run_ensemble(
    model: &dyn ClassicalModel,
    basis: &FockBasis,
    w_i: &[C64],
    grid_spec: &GridSpec,
    filter: &FilterConfig,
    times: &[f64],
    integ: &IntegratorConfig,
) -> Result<EnsembleResult, IvrError> {
    filter.validate()?;
    if grid_spec.center.len() != model.dim() {
        return Err(IvrError::GridDimension {
            expected: model.dim(),
            found: grid_spec.center.len(),
        });
    }
    let grid = build_grid(grid_spec)?;
    let horizon = *times.last().unwrap();
    let cfg = IntegratorConfig {
        lambda: filter.lambda,
        ..integ.clone()
    };

    let dim = basis.dim();
    let mut table = IvrIntegralTable {
        times: times.to_vec(),
        values: vec![vec![C64::new(0.0, 0.0); dim]; times.len()],
        contributing: vec![0; times.len()],
        modes: basis.modes(),
        particles: basis.particles(),
    };
    let mut survival = Vec::with_capacity(grid.len());
    let (mut filtered, mut singular) = (0usize, 0usize);
    let (mut acc_steps, mut rej_steps) = (0u64, 0u64);

    let prefactor_ln = (sigma(basis.modes()) * dim as f64 * grid_spec.cell_volume()).ln();
    let states = basis.states();
    let exponent = jacobian_exponent(basis.modes(), basis.particles());

    let total = grid.len();
    let mut done = 0usize;
    let mut next_report = total / 10 + 1;
    for batch in grid.chunks(BATCH) {
        let records: Vec<TrajectoryRecord> = batch
            .par_iter()
            .map(|wb0| integrate_trajectory(model, w_i, wb0, times, &cfg))
            .collect();

        // per-time accumulation; each time slice walks the batch in order
        table
            .values
            .par_iter_mut()
            .zip(table.contributing.par_iter_mut())
            .enumerate()
            .for_each(|(ti, (row, count))| {
                for rec in &records {
                    if ti < rec.snapshots.len() {
                        *count += 1;
                        accumulate_snapshot(
                            row,
                            &rec.snapshots[ti],
                            states,
                            basis.particles(),
                            prefactor_ln,
                            exponent,
                        );
                    }
                }
            });

        for rec in &records {
            acc_steps += rec.steps_accepted as u64;
            rej_steps += rec.steps_rejected as u64;
            let t_contrib = match rec.status {
                TrajectoryStatus::Alive => horizon,
                TrajectoryStatus::Filtered { t_cut } => {
                    filtered += 1;
                    t_cut
                }
                TrajectoryStatus::Singular { t_fail } => {
                    singular += 1;
                    t_fail
                }
            };
            survival.push(SurvivalEntry {
                wb0: rec.wb0.clone(),
                t_contrib,
                status: rec.status,
            });
        }
        done += batch.len();
        if done >= next_report {
            eprintln!("ivr: {done}/{total} trajectories integrated");
            next_report += total / 10 + 1;
        }
    }

    Ok(EnsembleResult {
        table,
        survival,
        total_trajectories: total,
        filtered,
        singular,
        steps_accepted: acc_steps,
        steps_rejected: rej_steps,
    })
}

/// Add one trajectory snapshot to one time-slice of the integral table.
///
/// The integrand combines exp(ln K_sc) with |det M22|^2 and the measure
/// factors in log space before exponentiating, so focal points (det -> 0)
/// contribute exactly zero and no intermediate quantity overflows.
fn accumulate_snapshot(
    row: &mut [C64],
    snap: &Snapshot,
    states: &[Vec<u32>],
    particles: u32,
    prefactor_ln: f64,
    exponent: f64,
) {
    let d = snap.wb.len();
    let scale_ln = prefactor_ln + 1.5 * snap.delta.re - exponent * (1.0 + norm_sqr(&snap.wb)).ln();
    let expo = C64::new(
        snap.log_amp_core.re + scale_ln,
        snap.log_amp_core.im - 0.5 * snap.delta.im,
    );
    let base = expo.exp();
    if base == C64::new(0.0, 0.0) {
        return;
    }
    let u: Vec<C64> = snap.wb.iter().map(|z| z.conj()).collect();
    // fast path: direct power tables, safe while |u|^N stays in range
    let max_ln = u.iter().map(|z| z.norm().ln().max(0.0)).fold(0.0, f64::max);
    if base.is_finite() && (particles as f64) * max_ln < 600.0 {
        let n = particles as usize;
        let mut pows: Vec<Vec<C64>> = Vec::with_capacity(d);
        for &uj in &u {
            let mut col = Vec::with_capacity(n + 1);
            let mut acc = C64::new(1.0, 0.0);
            col.push(acc);
            for _ in 0..n {
                acc *= uj;
                col.push(acc);
            }
            pows.push(col);
        }
        for (slot, m) in row.iter_mut().zip(states) {
            let mut term = base;
            for j in 0..d {
                term *= pows[j][m[j] as usize];
            }
            *slot += term;
        }
    } else {
        // log-space fallback for extreme magnitudes
        let ln_u: Vec<C64> = u.iter().map(|z| z.ln()).collect();
        for (slot, m) in row.iter_mut().zip(states) {
            let mut e = expo;
            let mut dead = false;
            for j in 0..d {
                if m[j] == 0 {
                    continue;
                }
                if u[j].norm() == 0.0 {
                    dead = true;
                    break;
                }
                e += (m[j] as f64) * ln_u[j];
            }
            if !dead {
                *slot += e.exp();
            }
        }
    }
}

/// Semiclassical propagator to an arbitrary final label, assembled from the
/// integral table by the multinomial factorization.
pub fn assemble_propagator(
    table: &IvrIntegralTable,
    basis: &FockBasis,
    time_idx: usize,
    w_f: &[C64],
) -> Result<C64, IvrError> {
    if time_idx >= table.times.len() {
        return Err(IvrError::TimeIndex(time_idx));
    }
    if table.is_degenerate(time_idx) {
        return Err(IvrError::DegenerateTable(table.times[time_idx]));
    }
    let n = basis.particles() as f64;
    let ln_mult = basis.ln_multinomials();
    let ln_norm = -0.5 * n * (1.0 + norm_sqr(w_f)).ln();
    let d = basis.modes() - 1;
    let mut acc = C64::new(0.0, 0.0);
    for ((m, lm), value) in basis
        .states()
        .iter()
        .zip(&ln_mult)
        .zip(&table.values[time_idx])
    {
        let mut term_ln = C64::new(lm + ln_norm, 0.0);
        let mut dead = false;
        for j in 0..d {
            if m[j] == 0 {
                continue;
            }
            let wfc = w_f[j].conj();
            if wfc.norm() == 0.0 {
                dead = true;
                break;
            }
            term_ln += (m[j] as f64) * wfc.ln();
        }
        if !dead {
            acc += term_ln.exp() * value;
        }
    }
    Ok(acc)
}

/// Semiclassical state in the number basis at one output time, normalized.
pub fn reconstruct_state(
    table: &IvrIntegralTable,
    basis: &FockBasis,
    time_idx: usize,
) -> Result<FockVector, IvrError> {
    if time_idx >= table.times.len() {
        return Err(IvrError::TimeIndex(time_idx));
    }
    if table.is_degenerate(time_idx) {
        return Err(IvrError::DegenerateTable(table.times[time_idx]));
    }
    let ln_mult = basis.ln_multinomials();
    let mut psi = basis.zero_vector(ModeBasis::Native);
    for ((slot, lm), value) in psi.amps.iter_mut().zip(&ln_mult).zip(&table.values[time_idx]) {
        *slot = (0.5 * lm).exp() * value;
    }
    psi.normalize()
        .map_err(|_| IvrError::ZeroNorm(table.times[time_idx]))?;
    Ok(psi)
}

/// The principal trajectory: wb(0) = conj(w_i), on which wb(t) stays the
/// conjugate of w(t). The filter is disabled here; its removal of the
/// principal trajectory would be an integration artifact.
pub fn principal_trajectory(
    model: &dyn ClassicalModel,
    w_i: &[C64],
    times: &[f64],
    integ: &IntegratorConfig,
) -> Result<TrajectoryRecord, IvrError> {
    let wb0: Vec<C64> = w_i.iter().map(|z| z.conj()).collect();
    let cfg = IntegratorConfig {
        lambda: f64::INFINITY,
        ..integ.clone()
    };
    let rec = integrate_trajectory(model, w_i, &wb0, times, &cfg);
    if rec.status != TrajectoryStatus::Alive {
        return Err(IvrError::PrincipalLost(rec.status));
    }
    Ok(rec)
}

/// Observables with closed-form normal symbols used by the classical
/// approximation.
#[derive(Debug, Clone, Copy)]
pub enum ClassicalObservable {
    /// <S_z>/S of the two effective modes
    PopulationImbalance,
    /// <n_b3>/N; identically zero on the symmetric subspace
    ThirdModeFraction,
}

/// Normal symbol of the observable at a phase-space point w (label of the
/// coherent state), per particle.
pub fn normal_symbol(obs: ClassicalObservable, w: &[C64]) -> f64 {
    match (obs, w.len()) {
        (ClassicalObservable::PopulationImbalance, 1) => {
            let v2 = w[0].norm_sqr();
            (v2 - 1.0) / (v2 + 1.0)
        }
        (ClassicalObservable::PopulationImbalance, 2) => {
            let plus = (w[0] + w[1]).norm_sqr();
            (0.5 * plus - 1.0) / (1.0 + norm_sqr(w))
        }
        (ClassicalObservable::ThirdModeFraction, 1) => 0.0,
        (ClassicalObservable::ThirdModeFraction, 2) => {
            0.5 * (w[0] - w[1]).norm_sqr() / (1.0 + norm_sqr(w))
        }
        _ => panic!("normal symbol undefined for dimension {}", w.len()),
    }
}

/// Classical approximation to the observable mean: the normal symbol
/// evaluated along the principal trajectory. Independent of N.
pub fn classical_approximation(
    model: &dyn ClassicalModel,
    w_i: &[C64],
    obs: ClassicalObservable,
    times: &[f64],
    integ: &IntegratorConfig,
) -> Result<Vec<f64>, IvrError> {
    let rec = principal_trajectory(model, w_i, times, integ)?;
    Ok(rec
        .snapshots
        .iter()
        .map(|s| normal_symbol(obs, &s.w))
        .collect())
}

/// CSV dump of the integral table: one row per (output time, number state)
/// with the occupations spelled out, plus the contribution count at that
/// time. Columns: t, m1..mn, re_value, im_value, contributing.
pub fn table_csv(table: &IvrIntegralTable, basis: &FockBasis) -> String {
    let mut header = vec!["t".to_string()];
    for j in 1..=basis.modes() {
        header.push(format!("m{j}"));
    }
    header.push("re_value".into());
    header.push("im_value".into());
    header.push("contributing".into());
    let mut out = header.join(",");
    out.push('\n');
    for (ti, t) in table.times.iter().enumerate() {
        for (m, value) in basis.states().iter().zip(&table.values[ti]) {
            let mut row = vec![fmt_f64(*t)];
            for &mj in m {
                row.push(mj.to_string());
            }
            row.push(fmt_f64(value.re));
            row.push(fmt_f64(value.im));
            row.push(table.contributing[ti].to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

/// CSV dump of the survival diagram: one row per grid point with the last
/// contributing time and the terminal status.
pub fn survival_csv(entries: &[SurvivalEntry]) -> String {
    let d = entries.first().map_or(1, |e| e.wb0.len());
    let mut header = Vec::new();
    for j in 1..=d {
        header.push(format!("re_wb{j}"));
        header.push(format!("im_wb{j}"));
    }
    header.push("t_contrib".into());
    header.push("status".into());
    let mut out = header.join(",");
    out.push('\n');
    for e in entries {
        let mut row = Vec::new();
        for z in &e.wb0 {
            row.push(fmt_f64(z.re));
            row.push(fmt_f64(z.im));
        }
        row.push(fmt_f64(e.t_contrib));
        row.push(
            match e.status {
                TrajectoryStatus::Alive => "alive",
                TrajectoryStatus::Filtered { .. } => "filtered",
                TrajectoryStatus::Singular { .. } => "singular",
            }
            .into(),
        );
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
