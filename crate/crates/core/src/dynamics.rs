//! One doubled-phase-space trajectory: jointly integrates (w, wb), the
//! tangent blocks M12/M22, the action integral and its correction term as a
//! single augmented ODE with an embedded Dormand-Prince 5(4) pair, and keeps
//! the running log-amplitude of the semiclassical propagator with
//! branch-continuous phases.
//!
//! The state vector layout is [w (d), wb (d), M12 (d*d row-major),
//! M22 (d*d), S, I] with d = n - 1 complex coordinates per side.

use num_complex::Complex64 as C64;

use crate::model::{eval_flow, ClassicalModel, FlowEval, ModelEval, EPS_SINGULAR};
use crate::util::{dot, fmt_f64, ln_continued, norm_sqr};

/// Runaway-trajectory guard: |w| or |wb| beyond this is treated as a clean
/// singular failure rather than an overflow.
pub const OVERFLOW_LIMIT: f64 = 1e8;

/// Integration settings for one trajectory.
#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// cap on d/dt ln |K_sc|^2; infinity disables the filter
    pub lambda: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            lambda: f64::INFINITY,
            max_steps: 2_000_000,
        }
    }
}

/// Terminal disposition of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryStatus {
    /// contributed over the whole output schedule
    Alive,
    /// removed by the filter at t_cut; contributes only for t <= t_cut
    Filtered { t_cut: f64 },
    /// hit the phase-space singularity or ran away; contributes nothing from
    /// t_fail on
    Singular { t_fail: f64 },
}

/// Trajectory state at one output time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub w: Vec<C64>,
    pub wb: Vec<C64>,
    pub m12: Vec<C64>,
    pub m22: Vec<C64>,
    /// integral of the Lagrangian up to t (boundary term not included)
    pub action: C64,
    /// accumulated correction term
    pub correction: C64,
    /// branch-continuous ln(1 + wb.w)
    pub rho: C64,
    /// branch-continuous ln det M22
    pub delta: C64,
    /// ln K_sc without the -delta/2 prefactor piece; see `log_amp`
    pub log_amp_core: C64,
}

impl Snapshot {
    /// Full log-amplitude ln K_sc of the propagator at this time. The real
    /// part diverges at an exact focal point (det M22 = 0); downstream
    /// quadrature combines the determinant weight in log space first, which
    /// sends such contributions to zero.
    pub fn log_amp(&self) -> C64 {
        self.log_amp_core - 0.5 * self.delta
    }

    pub fn det_m22(&self) -> C64 {
        self.delta.exp()
    }
}

/// One integrated ensemble member.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub w0: Vec<C64>,
    pub wb0: Vec<C64>,
    /// snapshots at the requested output times, truncated at the filter cut
    /// or the singular failure
    pub snapshots: Vec<Snapshot>,
    pub status: TrajectoryStatus,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

impl TrajectoryRecord {
    /// Number of output times at which this trajectory contributes.
    pub fn contributing_outputs(&self) -> usize {
        self.snapshots.len()
    }
}

/// Boundary term of the action with the final label fixed to wb(t), on the
/// principal logarithm branch. Along a trajectory the continuous version is
/// assembled from the snapshot's `rho` instead.
pub fn boundary_term(w_i: &[C64], wb_0: &[C64], wb_t: &[C64], w_t: &[C64], particles: u32) -> C64 {
    let one = C64::new(1.0, 0.0);
    let first = one + dot(wb_t, w_t);
    let second = one + dot(wb_0, w_i);
    -C64::new(0.0, 0.5 * particles as f64) * (first.ln() + second.ln())
}

/// Branch-continuous boundary term from the continued logs rho(t), rho(0).
pub fn boundary_term_continued(rho_t: C64, rho_0: C64, particles: u32) -> C64 {
    -C64::new(0.0, 0.5 * particles as f64) * (rho_t + rho_0)
}

/// ln |K_sc|^2, the quantity rate-limited by the trajectory filter.
pub fn ln_k_squared(snapshot: &Snapshot) -> f64 {
    2.0 * snapshot.log_amp_core.re - snapshot.delta.re
}

/// Single-step filter predicate: true when the step from (t0, lnk2_0) to
/// (t1, lnk2_1) violates the growth-rate cap lambda.
pub fn filter_violated(lnk2_prev: f64, lnk2_new: f64, dt: f64, lambda: f64) -> bool {
    if !lambda.is_finite() {
        return false;
    }
    (lnk2_new - lnk2_prev) / dt >= lambda
}

/// Offline version of the filter over a recorded ln|K|^2 history: returns the
/// time of the first violated step, if any.
pub fn apply_filter(history: &[(f64, f64)], lambda: f64) -> Option<f64> {
    history
        .windows(2)
        .find(|w| filter_violated(w[0].1, w[1].1, w[1].0 - w[0].0, lambda))
        .map(|w| w[1].0)
}

// Dormand-Prince 5(4) tableau, FSAL form. The augmented system is
// autonomous, so the stage times never enter.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// error coefficients (5th-order weights minus embedded 4th-order weights)
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense-output coefficients
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct Stepper {
    len: usize,
    k: [Vec<C64>; 7],
    y_stage: Vec<C64>,
    rcont: [Vec<C64>; 5],
}

impl Stepper {
    fn new(len: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); len];
        Self {
            len,
            k: std::array::from_fn(|_| z.clone()),
            y_stage: z.clone(),
            rcont: std::array::from_fn(|_| z.clone()),
        }
    }

    /// One trial step of size h from y (k[0] must hold f(y)); fills y_new and
    /// returns the scaled error norm. k[6] ends up holding f(y_new) (FSAL).
    fn try_step<F>(&mut self, f: &mut F, y: &[C64], h: f64, y_new: &mut [C64], rtol: f64, atol: f64) -> f64
    where
        F: FnMut(&[C64], &mut [C64]),
    {
        let n = self.len;
        let stage = |buf: &mut Vec<C64>, y: &[C64], ks: &[(&Vec<C64>, f64)], h: f64| {
            for i in 0..y.len() {
                let mut acc = C64::new(0.0, 0.0);
                for (k, a) in ks {
                    acc += k[i] * *a;
                }
                buf[i] = y[i] + h * acc;
            }
        };

        let mut y_stage = std::mem::take(&mut self.y_stage);
        stage(&mut y_stage, y, &[(&self.k[0], A21)], h);
        let mut k2 = std::mem::take(&mut self.k[1]);
        f(&y_stage, &mut k2);
        self.k[1] = k2;

        stage(&mut y_stage, y, &[(&self.k[0], A31), (&self.k[1], A32)], h);
        let mut k3 = std::mem::take(&mut self.k[2]);
        f(&y_stage, &mut k3);
        self.k[2] = k3;

        stage(
            &mut y_stage,
            y,
            &[(&self.k[0], A41), (&self.k[1], A42), (&self.k[2], A43)],
            h,
        );
        let mut k4 = std::mem::take(&mut self.k[3]);
        f(&y_stage, &mut k4);
        self.k[3] = k4;

        stage(
            &mut y_stage,
            y,
            &[
                (&self.k[0], A51),
                (&self.k[1], A52),
                (&self.k[2], A53),
                (&self.k[3], A54),
            ],
            h,
        );
        let mut k5 = std::mem::take(&mut self.k[4]);
        f(&y_stage, &mut k5);
        self.k[4] = k5;

        stage(
            &mut y_stage,
            y,
            &[
                (&self.k[0], A61),
                (&self.k[1], A62),
                (&self.k[2], A63),
                (&self.k[3], A64),
                (&self.k[4], A65),
            ],
            h,
        );
        let mut k6 = std::mem::take(&mut self.k[5]);
        f(&y_stage, &mut k6);
        self.k[5] = k6;
        self.y_stage = y_stage;

        // 5th-order solution (row 7 of the tableau)
        for i in 0..n {
            y_new[i] = y[i]
                + h * (A71 * self.k[0][i]
                    + A73 * self.k[2][i]
                    + A74 * self.k[3][i]
                    + A75 * self.k[4][i]
                    + A76 * self.k[5][i]);
        }
        let mut k7 = std::mem::take(&mut self.k[6]);
        f(y_new, &mut k7);
        self.k[6] = k7;

        // scaled RMS error
        let mut acc = 0.0f64;
        for i in 0..n {
            let e = h * (E1 * self.k[0][i]
                + E3 * self.k[2][i]
                + E4 * self.k[3][i]
                + E5 * self.k[4][i]
                + E6 * self.k[5][i]
                + E7 * self.k[6][i]);
            let sc = atol + rtol * y[i].norm().max(y_new[i].norm());
            acc += (e.norm() / sc).powi(2);
        }
        (acc / n as f64).sqrt()
    }

    /// Prepare dense-output coefficients for the accepted step y -> y_new.
    fn prepare_dense(&mut self, y: &[C64], y_new: &[C64], h: f64) {
        for i in 0..self.len {
            let ydiff = y_new[i] - y[i];
            let bspl = h * self.k[0][i] - ydiff;
            self.rcont[0][i] = y[i];
            self.rcont[1][i] = ydiff;
            self.rcont[2][i] = bspl;
            self.rcont[3][i] = ydiff - h * self.k[6][i] - bspl;
            self.rcont[4][i] = h
                * (D1 * self.k[0][i]
                    + D3 * self.k[2][i]
                    + D4 * self.k[3][i]
                    + D5 * self.k[4][i]
                    + D6 * self.k[5][i]
                    + D7 * self.k[6][i]);
        }
    }

    /// Evaluate the dense interpolant at theta in [0, 1].
    fn dense(&self, theta: f64, out: &mut [C64]) {
        let th1 = 1.0 - theta;
        for i in 0..self.len {
            out[i] = self.rcont[0][i]
                + theta
                    * (self.rcont[1][i]
                        + th1
                            * (self.rcont[2][i]
                                + theta * (self.rcont[3][i] + th1 * self.rcont[4][i])));
        }
    }

    /// FSAL: the derivative at the accepted point becomes k1 of the next step.
    fn advance_fsal(&mut self) {
        self.k.swap(0, 6);
    }
}

struct Layout {
    d: usize,
}

impl Layout {
    fn len(&self) -> usize {
        2 * self.d + 2 * self.d * self.d + 2
    }
    fn w<'a>(&self, y: &'a [C64]) -> &'a [C64] {
        &y[0..self.d]
    }
    fn wb<'a>(&self, y: &'a [C64]) -> &'a [C64] {
        &y[self.d..2 * self.d]
    }
    fn m12<'a>(&self, y: &'a [C64]) -> &'a [C64] {
        &y[2 * self.d..2 * self.d + self.d * self.d]
    }
    fn m22<'a>(&self, y: &'a [C64]) -> &'a [C64] {
        &y[2 * self.d + self.d * self.d..2 * self.d + 2 * self.d * self.d]
    }
    fn action(&self, y: &[C64]) -> C64 {
        y[self.len() - 2]
    }
    fn correction(&self, y: &[C64]) -> C64 {
        y[self.len() - 1]
    }
}

fn det(m: &[C64], d: usize) -> C64 {
    match d {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => {
            let mat = nalgebra::DMatrix::from_row_slice(d, d, m);
            mat.lu().determinant()
        }
    }
}

/// Right-hand side of the augmented ODE.
fn augmented_rhs(
    model: &dyn ClassicalModel,
    lay: &Layout,
    y: &[C64],
    dy: &mut [C64],
    scratch: &mut (ModelEval, FlowEval),
) {
    let d = lay.d;
    let (eval, flow) = scratch;
    eval_flow(model, lay.w(y), lay.wb(y), eval, flow);
    let i = C64::new(0.0, 1.0);
    for j in 0..d {
        dy[j] = -i * flow.f[j];
        dy[d + j] = i * flow.g[j];
    }
    let m12 = lay.m12(y);
    let m22 = lay.m22(y);
    let (head, tail) = dy[2 * d..].split_at_mut(d * d);
    let dm12 = head;
    let (dm22, rest) = tail.split_at_mut(d * d);
    for j in 0..d {
        for c in 0..d {
            let mut acc12 = C64::new(0.0, 0.0);
            let mut acc22 = C64::new(0.0, 0.0);
            for l in 0..d {
                let r11 = -i * flow.df_dw[j * d + l];
                let r12 = -i * flow.df_dwb[j * d + l];
                let r21 = i * flow.dg_dw[j * d + l];
                let r22 = i * flow.dg_dwb[j * d + l];
                acc12 += r11 * m12[l * d + c] + r12 * m22[l * d + c];
                acc22 += r21 * m12[l * d + c] + r22 * m22[l * d + c];
            }
            dm12[j * d + c] = acc12;
            dm22[j * d + c] = acc22;
        }
    }
    rest[0] = flow.lagrangian;
    rest[1] = flow.correction;
}

/// The integrand of the action correction term at one phase-space point.
pub fn correction_integrand(model: &dyn ClassicalModel, w: &[C64], wb: &[C64]) -> C64 {
    let mut eval = ModelEval::new(model.dim());
    let mut flow = FlowEval::new(model.dim());
    eval_flow(model, w, wb, &mut eval, &mut flow);
    flow.correction
}

struct PhaseState {
    rho: C64,
    delta: C64,
    log_amp_core: C64,
}

/// Integrate one trajectory from (w_i, wb_i) over the output schedule.
///
/// `times` must be non-empty and strictly increasing with `times[0] >= 0`.
/// Snapshots are taken exactly at the requested times through the dense
/// interpolant of the accepted steps. Integration stops early when the filter
/// or a singularity fires; already-emitted snapshots are kept (the filter cut
/// includes its own step, a singular failure discards the failing step).
pub fn integrate_trajectory(
    model: &dyn ClassicalModel,
    w_i: &[C64],
    wb_i: &[C64],
    times: &[f64],
    cfg: &IntegratorConfig,
) -> TrajectoryRecord {
    assert!(!times.is_empty(), "output schedule must be non-empty");
    assert!(
        times.windows(2).all(|p| p[1] > p[0]) && times[0] >= 0.0,
        "output times must increase from 0"
    );
    let d = model.dim();
    assert_eq!(w_i.len(), d);
    assert_eq!(wb_i.len(), d);
    let n_modes = d + 1;
    let n_part = model.params().particles as f64;
    let lay = Layout { d };
    let len = lay.len();

    let mut record = TrajectoryRecord {
        w0: w_i.to_vec(),
        wb0: wb_i.to_vec(),
        snapshots: Vec::with_capacity(times.len()),
        status: TrajectoryStatus::Alive,
        steps_accepted: 0,
        steps_rejected: 0,
    };

    // initial augmented state
    let mut y = vec![C64::new(0.0, 0.0); len];
    y[..d].copy_from_slice(w_i);
    y[d..2 * d].copy_from_slice(wb_i);
    for j in 0..d {
        y[2 * d + d * d + j * d + j] = C64::new(1.0, 0.0);
    }

    let one = C64::new(1.0, 0.0);
    let denom0 = one + dot(wb_i, w_i);
    if denom0.norm() < EPS_SINGULAR || norm_sqr(w_i).sqrt() > OVERFLOW_LIMIT {
        record.status = TrajectoryStatus::Singular { t_fail: 0.0 };
        return record;
    }

    let rho_0 = denom0.ln();
    let ln_norm_w0 = (1.0 + norm_sqr(w_i)).ln();
    let log_amp_core_at = |action: C64, corr: C64, rho: C64, wb: &[C64]| -> C64 {
        C64::new(0.0, 1.0) * (action + corr)
            + 0.5 * n_part * (rho + rho_0)
            - C64::new(0.5 * n_part * ((1.0 + norm_sqr(wb)).ln() + ln_norm_w0), 0.0)
            + 0.25 * n_modes as f64 * (rho - rho_0)
    };

    let mut phase = PhaseState {
        rho: rho_0,
        delta: C64::new(0.0, 0.0),
        log_amp_core: log_amp_core_at(C64::new(0.0, 0.0), C64::new(0.0, 0.0), rho_0, wb_i),
    };

    let mut scratch = (ModelEval::new(d), FlowEval::new(d));
    let mut rhs = |y: &[C64], dy: &mut [C64]| augmented_rhs(model, &lay, y, dy, &mut scratch);

    let mut next_out = 0usize;
    if times[0] == 0.0 {
        record
            .snapshots
            .push(make_snapshot(&lay, 0.0, &y, &phase));
        next_out = 1;
        if next_out == times.len() {
            return record;
        }
    }
    let t_end = *times.last().unwrap();
    let h_min = 1e-12 * t_end.max(1.0);

    let mut stepper = Stepper::new(len);
    rhs(&y, &mut stepper.k[0]);

    // initial step size from the scaled magnitudes of y and f
    let mut h = {
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..len {
            let sc = cfg.atol + cfg.rtol * y[i].norm();
            d0 += (y[i].norm() / sc).powi(2);
            d1 += (stepper.k[0][i].norm() / sc).powi(2);
        }
        let (d0, d1) = (d0.sqrt(), d1.sqrt());
        let guess = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        guess.min(t_end).max(h_min)
    };

    let mut t = 0.0f64;
    let mut y_new = vec![C64::new(0.0, 0.0); len];
    let mut y_out = vec![C64::new(0.0, 0.0); len];
    let mut last_rejected = false;
    let mut steps = 0usize;

    while next_out < times.len() {
        steps += 1;
        if steps > cfg.max_steps || h < h_min {
            record.status = TrajectoryStatus::Singular { t_fail: t };
            return record;
        }
        h = h.min(t_end - t);
        let err = stepper.try_step(&mut rhs, &y, h, &mut y_new, cfg.rtol, cfg.atol);

        if !err.is_finite() {
            record.steps_rejected += 1;
            last_rejected = true;
            h *= 0.25;
            continue;
        }
        if err > 1.0 {
            record.steps_rejected += 1;
            last_rejected = true;
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            continue;
        }

        // candidate accepted by error control; run the structural checks
        let t_new = t + h;
        let w_new = lay.w(&y_new);
        let wb_new = lay.wb(&y_new);
        let denom_new = one + dot(wb_new, w_new);
        let w_mag = norm_sqr(w_new).sqrt().max(norm_sqr(wb_new).sqrt());
        if denom_new.norm() < EPS_SINGULAR || w_mag > OVERFLOW_LIMIT || !w_mag.is_finite() {
            record.status = TrajectoryStatus::Singular { t_fail: t_new };
            return record;
        }

        let rho_new = ln_continued(denom_new, phase.rho);
        let det_new = det(lay.m22(&y_new), d);
        let delta_new = ln_continued(det_new, phase.delta);
        let core_new = log_amp_core_at(
            lay.action(&y_new),
            lay.correction(&y_new),
            rho_new,
            wb_new,
        );
        let dphase_rho = (rho_new.im - phase.rho.im).abs();
        let dphase_delta = (delta_new.im - phase.delta.im).abs();
        let im_log_amp = |p: &PhaseState| p.log_amp_core.im - 0.5 * p.delta.im;
        let new_phase = PhaseState {
            rho: rho_new,
            delta: delta_new,
            log_amp_core: core_new,
        };
        let dphase_amp = (im_log_amp(&new_phase) - im_log_amp(&phase)).abs();
        let quarter = std::f64::consts::FRAC_PI_2;
        if dphase_rho >= quarter || dphase_delta >= quarter || dphase_amp >= quarter {
            // branch safety: refine the step until phases move slowly
            record.steps_rejected += 1;
            last_rejected = true;
            h *= 0.5;
            continue;
        }

        // emit snapshots inside (t, t + h]
        stepper.prepare_dense(&y, &y_new, h);
        while next_out < times.len() && times[next_out] <= t_new * (1.0 + 1e-14) {
            let theta = ((times[next_out] - t) / h).clamp(0.0, 1.0);
            stepper.dense(theta, &mut y_out);
            let denom_out = one + dot(lay.wb(&y_out), lay.w(&y_out));
            let rho_ref = phase.rho + theta * (rho_new - phase.rho);
            let rho_out = ln_continued(denom_out, rho_ref);
            let det_out = det(lay.m22(&y_out), d);
            let delta_ref = phase.delta + theta * (delta_new - phase.delta);
            let delta_out = ln_continued(det_out, delta_ref);
            let out_phase = PhaseState {
                rho: rho_out,
                delta: delta_out,
                log_amp_core: log_amp_core_at(
                    lay.action(&y_out),
                    lay.correction(&y_out),
                    rho_out,
                    lay.wb(&y_out),
                ),
            };
            record
                .snapshots
                .push(make_snapshot(&lay, times[next_out], &y_out, &out_phase));
            next_out += 1;
        }

        // filter on the accepted-step difference quotient of ln |K|^2
        let lnk2_prev = 2.0 * phase.log_amp_core.re - phase.delta.re;
        let lnk2_new = 2.0 * new_phase.log_amp_core.re - new_phase.delta.re;
        record.steps_accepted += 1;
        if filter_violated(lnk2_prev, lnk2_new, h, cfg.lambda) {
            record.status = TrajectoryStatus::Filtered { t_cut: t_new };
            return record;
        }

        // advance
        t = t_new;
        std::mem::swap(&mut y, &mut y_new);
        phase = new_phase;
        stepper.advance_fsal();
        let fac_max = if last_rejected { 1.0 } else { 5.0 };
        last_rejected = false;
        let fac = (0.9 * err.powf(-0.2)).clamp(0.2, fac_max);
        h *= fac;
    }

    record
}

fn make_snapshot(lay: &Layout, t: f64, y: &[C64], phase: &PhaseState) -> Snapshot {
    Snapshot {
        t,
        w: lay.w(y).to_vec(),
        wb: lay.wb(y).to_vec(),
        m12: lay.m12(y).to_vec(),
        m22: lay.m22(y).to_vec(),
        action: lay.action(y),
        correction: lay.correction(y),
        rho: phase.rho,
        delta: phase.delta,
        log_amp_core: phase.log_amp_core,
    }
}

/// Debug dump of a trajectory record as CSV (one row per output time).
pub fn trajectory_csv(record: &TrajectoryRecord) -> String {
    let d = record.w0.len();
    let mut header = vec!["t".to_string()];
    for j in 1..=d {
        header.push(format!("re_w{j}"));
        header.push(format!("im_w{j}"));
    }
    for j in 1..=d {
        header.push(format!("re_wb{j}"));
        header.push(format!("im_wb{j}"));
    }
    header.extend(
        [
            "re_s", "im_s", "re_i", "im_i", "ln_abs_k", "phase_k", "re_det_m22", "im_det_m22",
        ]
        .map(String::from),
    );
    let mut out = header.join(",");
    out.push('\n');
    for s in &record.snapshots {
        let mut row = vec![fmt_f64(s.t)];
        for z in s.w.iter().chain(&s.wb) {
            row.push(fmt_f64(z.re));
            row.push(fmt_f64(z.im));
        }
        let log_amp = s.log_amp();
        let det = s.det_m22();
        for v in [
            s.action.re,
            s.action.im,
            s.correction.re,
            s.correction.im,
            log_amp.re,
            log_amp.im,
            det.re,
            det.im,
        ] {
            row.push(fmt_f64(v));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coherent::overlap;
    use crate::model::{ModelParams, Su2Model, Su3Model};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn su2(n: u32, omega: f64, chi: f64) -> Su2Model {
        Su2Model::new(ModelParams {
            modes: 2,
            particles: n,
            omega,
            chi,
        })
        .unwrap()
    }

    fn su3(n: u32, omega: f64, chi: f64) -> Su3Model {
        Su3Model::new(ModelParams {
            modes: 3,
            particles: n,
            omega,
            chi,
        })
        .unwrap()
    }

    fn rand_c(rng: &mut StdRng, scale: f64) -> C64 {
        C64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
    }

    fn linspace(end: f64, count: usize) -> Vec<f64> {
        (0..count)
            .map(|k| end * k as f64 / (count - 1) as f64)
            .collect()
    }

    #[test]
    fn initial_snapshot_has_trivial_tangent_and_zero_action() {
        let m = su2(30, -1.0, -1.0);
        let v = [C64::new(0.41, 0.0)];
        let vb = [C64::new(0.35, 0.1)];
        let rec = integrate_trajectory(&m, &v, &vb, &[0.0, 0.5], &IntegratorConfig::default());
        let s0 = &rec.snapshots[0];
        assert_eq!(s0.t, 0.0);
        assert!(s0.m12[0].norm() < 1e-15);
        assert!((s0.m22[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(s0.action.norm() < 1e-15);
        assert!(s0.correction.norm() < 1e-15);
        assert!((s0.det_m22() - C64::new(1.0, 0.0)).norm() < 1e-14);
        // K_sc(0) equals the coherent overlap with the conjugated initial label
        let k0 = s0.log_amp().exp();
        let expect = overlap(&[vb[0].conj()], &v, 30);
        assert!((k0 - expect).norm() < 1e-12, "{k0} vs {expect}");
    }

    #[test]
    fn principal_linear_flow_matches_moebius_closed_form() {
        // chi = 0: the reduced single-particle Hamiltonian is
        // omega * [[1, sqrt2], [sqrt2, 0]]; the coherent label evolves as the
        // Moebius transform of exp(-i h t).
        let omega = -1.0;
        let m = su2(30, omega, 0.0);
        let v0 = C64::new((std::f64::consts::PI / 8.0).tan(), 0.0);
        let times = linspace(6.0, 61);
        let rec = integrate_trajectory(
            &m,
            &[v0],
            &[v0.conj()],
            &times,
            &IntegratorConfig::default(),
        );
        assert_eq!(rec.status, TrajectoryStatus::Alive);
        // spectral data of [[1, sqrt2],[sqrt2, 0]]: eigenvalues 2 and -1 with
        // orthonormal eigenvectors (sqrt2, 1)/sqrt3 and (1, -sqrt2)/sqrt3
        let rt2 = std::f64::consts::SQRT_2;
        let rt3 = 3.0f64.sqrt();
        let p = [[rt2 / rt3, 1.0 / rt3], [1.0 / rt3, -rt2 / rt3]];
        for s in &rec.snapshots {
            let e = [
                C64::from_polar(1.0, -2.0 * omega * s.t),
                C64::from_polar(1.0, omega * s.t),
            ];
            let mut u = [[C64::new(0.0, 0.0); 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    for l in 0..2 {
                        u[a][b] += C64::new(p[a][l], 0.0) * e[l] * p[b][l];
                    }
                }
            }
            let expect = (u[0][0] * v0 + u[0][1]) / (u[1][0] * v0 + u[1][1]);
            assert!(
                (s.w[0] - expect).norm() < 1e-6 * expect.norm().max(1.0),
                "t={}: {} vs {expect}",
                s.t,
                s.w[0]
            );
            assert!((s.wb[0] - s.w[0].conj()).norm() < 1e-7 * s.w[0].norm().max(1.0));
        }
    }

    #[test]
    fn tangent_blocks_match_finite_difference_trajectories() {
        let m = su3(30, -1.0, -1.0);
        let mut rng = StdRng::seed_from_u64(67);
        let w0: Vec<C64> = (0..2).map(|_| rand_c(&mut rng, 0.3)).collect();
        let wb0: Vec<C64> = w0.iter().map(|z| z.conj() + rand_c(&mut rng, 0.1)).collect();
        let times = [0.0, 1.5];
        let cfg = IntegratorConfig {
            rtol: 1e-10,
            atol: 1e-12,
            ..Default::default()
        };
        let rec = integrate_trajectory(&m, &w0, &wb0, &times, &cfg);
        let s = rec.snapshots.last().unwrap();
        let eps = 1e-6;
        for l in 0..2 {
            for dir in [C64::new(eps, 0.0), C64::new(0.0, eps)] {
                let mut wb_p = wb0.clone();
                let mut wb_m = wb0.clone();
                wb_p[l] += dir;
                wb_m[l] -= dir;
                let rp = integrate_trajectory(&m, &w0, &wb_p, &times, &cfg);
                let rm = integrate_trajectory(&m, &w0, &wb_m, &times, &cfg);
                let sp = rp.snapshots.last().unwrap();
                let sm = rm.snapshots.last().unwrap();
                for j in 0..2 {
                    // columns of M22 = d wb(t)/d wb(0), M12 = d w(t)/d wb(0);
                    // the flow is holomorphic, so the i-direction derivative
                    // equals i times the complex derivative
                    let fd22 = (sp.wb[j] - sm.wb[j]) / (2.0 * dir);
                    let an22 = s.m22[j * 2 + l];
                    assert!(
                        (fd22 - an22).norm() <= 1e-4 * an22.norm().max(0.1),
                        "M22[{j}{l}] fd {fd22} vs {an22}"
                    );
                    let fd12 = (sp.w[j] - sm.w[j]) / (2.0 * dir);
                    let an12 = s.m12[j * 2 + l];
                    assert!(
                        (fd12 - an12).norm() <= 1e-4 * an12.norm().max(0.1),
                        "M12[{j}{l}] fd {fd12} vs {an12}"
                    );
                }
            }
        }
    }

    #[test]
    fn energy_is_conserved_along_doubled_trajectories() {
        let mut rng = StdRng::seed_from_u64(71);
        for model in [&su3(30, -1.0, -1.0) as &dyn crate::model::ClassicalModel, &su3(30, -1.0, -8.0)] {
            for _ in 0..5 {
                let w0: Vec<C64> = (0..2).map(|_| rand_c(&mut rng, 0.3)).collect();
                let wb0: Vec<C64> =
                    w0.iter().map(|z| z.conj() + rand_c(&mut rng, 0.05)).collect();
                let rec = integrate_trajectory(
                    model,
                    &w0,
                    &wb0,
                    &linspace(4.0, 17),
                    &IntegratorConfig::default(),
                );
                if rec.status != TrajectoryStatus::Alive {
                    continue;
                }
                let e0 = model.value_at(&rec.snapshots[0].w, &rec.snapshots[0].wb);
                for s in &rec.snapshots {
                    let e = model.value_at(&s.w, &s.wb);
                    assert!(
                        (e - e0).norm() <= 1e-7 * e0.norm().max(1.0),
                        "t={}: {e} vs {e0}",
                        s.t
                    );
                }
            }
        }
    }

    #[test]
    fn action_and_correction_are_real_on_principal_trajectories() {
        for (omega, chi) in [(-1.0, -1.0), (-1.0, -8.0)] {
            let m = su2(30, omega, chi);
            let v0 = C64::new((std::f64::consts::PI / 8.0).tan(), 0.0);
            let rec = integrate_trajectory(
                &m,
                &[v0],
                &[v0.conj()],
                &linspace(6.0, 121),
                &IntegratorConfig::default(),
            );
            assert_eq!(rec.status, TrajectoryStatus::Alive);
            let bound = 1e-7 * 30.0;
            for s in &rec.snapshots {
                assert!(s.action.im.abs() < bound, "Im S = {}", s.action.im);
                assert!(s.correction.im.abs() < bound, "Im I = {}", s.correction.im);
            }
        }
    }

    #[test]
    fn linear_hamiltonian_keeps_propagator_magnitude_constant() {
        // for chi = 0 the squared magnitude |K_sc|^2 must stay constant along
        // every trajectory of the doubled flow, not just the principal one
        let m = su2(30, -1.0, 0.0);
        let mut rng = StdRng::seed_from_u64(73);
        for _ in 0..6 {
            let v0 = [rand_c(&mut rng, 0.5)];
            let vb0 = [v0[0].conj() + rand_c(&mut rng, 0.3)];
            let rec = integrate_trajectory(
                &m,
                &v0,
                &vb0,
                &linspace(6.0, 61),
                &IntegratorConfig::default(),
            );
            assert_eq!(rec.status, TrajectoryStatus::Alive);
            let l0 = ln_k_squared(&rec.snapshots[0]);
            for s in &rec.snapshots {
                assert!(
                    (ln_k_squared(s) - l0).abs() < 1e-6,
                    "t={}: {} vs {l0}",
                    s.t,
                    ln_k_squared(s)
                );
            }
        }
    }

    #[test]
    fn correction_integrand_checks() {
        // zero Hamiltonian
        let m0 = su3(30, 0.0, 0.0);
        let w = [C64::new(0.2, 0.1), C64::new(-0.3, 0.2)];
        assert!(correction_integrand(&m0, &w, &w).norm() < 1e-15);
        // hand-evaluated origin values: expanding the trace at w = wb = 0
        // leaves only the mixed second derivatives, giving omega/2 - chi for
        // the reduced model and -2 chi for the triple well
        let (omega, chi) = (-1.3, -2.7);
        let z1 = [C64::new(0.0, 0.0)];
        let got = correction_integrand(&su2(30, omega, chi), &z1, &z1);
        assert!((got - C64::new(0.5 * omega - chi, 0.0)).norm() < 1e-13);
        let z2 = [C64::new(0.0, 0.0); 2];
        let got = correction_integrand(&su3(30, omega, chi), &z2, &z2);
        assert!((got - C64::new(-2.0 * chi, 0.0)).norm() < 1e-13);
        // finite differences of the flow fields against the analytic trace
        let m = su3(30, -1.0, -2.0);
        let mut rng = StdRng::seed_from_u64(79);
        let h = 1e-6;
        for _ in 0..10 {
            let w: Vec<C64> = (0..2).map(|_| rand_c(&mut rng, 0.6)).collect();
            let wb: Vec<C64> = (0..2).map(|_| rand_c(&mut rng, 0.6)).collect();
            let flow_at = |w: &[C64], wb: &[C64]| {
                let mut e = ModelEval::new(2);
                let mut f = FlowEval::new(2);
                eval_flow(&m, w, wb, &mut e, &mut f);
                f
            };
            let mut trace = C64::new(0.0, 0.0);
            for j in 0..2 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += C64::new(h, 0.0);
                wm[j] -= C64::new(h, 0.0);
                trace += (flow_at(&wp, &wb).f[j] - flow_at(&wm, &wb).f[j]) / (2.0 * h);
                let mut wbp = wb.clone();
                let mut wbm = wb.clone();
                wbp[j] += C64::new(h, 0.0);
                wbm[j] -= C64::new(h, 0.0);
                trace += (flow_at(&w, &wbp).g[j] - flow_at(&w, &wbm).g[j]) / (2.0 * h);
            }
            let fd = 0.25 * trace;
            let an = correction_integrand(&m, &w, &wb);
            assert!((fd - an).norm() < 1e-6 * an.norm().max(1.0));
        }
    }

    #[test]
    fn boundary_term_structure() {
        // with w_i = wb(0) = 0 the second factor is ln 1 = 0
        let zero = [C64::new(0.0, 0.0)];
        let wt = [C64::new(0.3, 0.1)];
        let wbt = [C64::new(0.2, -0.4)];
        let g = boundary_term(&zero, &zero, &wbt, &wt, 30);
        let expect = -C64::new(0.0, 15.0) * (C64::new(1.0, 0.0) + wbt[0] * wt[0]).ln();
        assert!((g - expect).norm() < 1e-14);
        // principal structure: both factors real positive, Gamma purely
        // imaginary (pure -i * real log)
        let v = [C64::new(0.4, 0.2)];
        let vc = [v[0].conj()];
        let g = boundary_term(&v, &vc, &vc, &v, 30);
        assert!(g.re.abs() < 1e-14);
        // synthetic winding: continued boundary term moves smoothly while the
        // raw principal-branch version jumps by 2 pi N/2
        let mut rho_prev = C64::new(0.5f64.ln(), 0.0);
        let mut gamma_prev = boundary_term_continued(rho_prev, rho_prev, 30);
        let steps = 300;
        for k in 1..=steps {
            let angle = std::f64::consts::TAU * 1.5 * k as f64 / steps as f64;
            let z = C64::from_polar(0.5, angle);
            let rho = ln_continued(z, rho_prev);
            let gamma = boundary_term_continued(rho, rho_prev, 30);
            assert!((gamma - gamma_prev).norm() < 1.0);
            rho_prev = rho;
            gamma_prev = gamma;
        }
    }

    #[test]
    fn dense_output_matches_direct_integration() {
        let m = su3(30, -1.0, -3.0);
        let w0 = [C64::new(0.25, -0.1), C64::new(0.1, 0.15)];
        let wb0 = [C64::new(0.2, 0.12), C64::new(0.05, -0.2)];
        let t_probe = 1.337;
        let rec = integrate_trajectory(
            &m,
            &w0,
            &wb0,
            &linspace(3.0, 241),
            &IntegratorConfig::default(),
        );
        let rec_direct =
            integrate_trajectory(&m, &w0, &wb0, &[0.0, t_probe], &IntegratorConfig::default());
        let near = rec
            .snapshots
            .iter()
            .min_by(|a, b| (a.t - t_probe).abs().total_cmp(&(b.t - t_probe).abs()))
            .unwrap();
        // nearest grid time is 1.3375: integrate the direct run there instead
        let rec_direct2 = integrate_trajectory(
            &m,
            &w0,
            &wb0,
            &[0.0, near.t],
            &IntegratorConfig::default(),
        );
        let _ = rec_direct;
        let s2 = rec_direct2.snapshots.last().unwrap();
        for j in 0..2 {
            assert!((near.w[j] - s2.w[j]).norm() < 1e-7);
            assert!((near.wb[j] - s2.wb[j]).norm() < 1e-7);
        }
        assert!((near.action - s2.action).norm() < 1e-6);
        assert!((near.delta - s2.delta).norm() < 1e-6);
    }

    #[test]
    fn filter_cuts_and_freezes_output() {
        // a tiny lambda filters essentially immediately in a nonlinear run
        let m = su2(30, -1.0, -8.0);
        let v0 = C64::new((std::f64::consts::PI / 8.0).tan(), 0.0);
        let vb0 = C64::new(0.75, 0.4);
        let cfg = IntegratorConfig {
            lambda: 0.5,
            ..Default::default()
        };
        let times = linspace(6.0, 241);
        let rec = integrate_trajectory(&m, &[v0], &[vb0], &times, &cfg);
        if let TrajectoryStatus::Filtered { t_cut } = rec.status {
            for s in &rec.snapshots {
                assert!(s.t <= t_cut);
            }
            assert!(rec.snapshots.len() < times.len());
            // offline filter over the emitted history agrees on the order of
            // the cut (coarser sampling can only delay the detection)
            let hist: Vec<(f64, f64)> =
                rec.snapshots.iter().map(|s| (s.t, ln_k_squared(s))).collect();
            if let Some(t_offline) = apply_filter(&hist, cfg.lambda) {
                assert!(t_offline + 1e-9 >= t_cut);
            }
        } else {
            panic!("expected the filter to fire, got {:?}", rec.status);
        }
    }

    #[test]
    fn immediate_singularity_is_flagged() {
        let m = su2(30, -1.0, -1.0);
        // 1 + vb v = 1e-9, inside the singular threshold
        let v = C64::new(0.5, 0.0);
        let vb = C64::new((-1.0 + 1e-9) / 0.5, 0.0);
        let rec = integrate_trajectory(
            &m,
            &[v],
            &[vb],
            &[0.0, 1.0],
            &IntegratorConfig::default(),
        );
        assert!(matches!(
            rec.status,
            TrajectoryStatus::Singular { t_fail } if t_fail == 0.0
        ));
        assert!(rec.snapshots.is_empty());
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let m = su2(30, -1.0, -1.0);
        let v0 = C64::new(0.41, 0.0);
        let rec = integrate_trajectory(
            &m,
            &[v0],
            &[v0],
            &linspace(1.0, 5),
            &IntegratorConfig::default(),
        );
        let csv = trajectory_csv(&rec);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("t,re_w1,im_w1,re_wb1,im_wb1,re_s"));
    }
}
