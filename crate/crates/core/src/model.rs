//! Effective classical Hamiltonians on the doubled phase space, their
//! analytic derivatives, the equations of motion, and the linearized flow.
//!
//! Two concrete models are provided: the three-mode triple well and its
//! one-variable reduction to the symmetric two-mode sector. Derivatives are
//! hand-coded closed forms; the test suite validates every block against
//! central finite differences.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::util::dot;

/// Threshold on |1 + wb.w| below which the flow is treated as singular.
pub const EPS_SINGULAR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("doubled-phase-space singularity: |1 + wb.w| = {0:.3e}")]
    Singular(f64),
    #[error("state dimension {found} does not match the model ({expected})")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model parameters invalid: {0}")]
    BadParams(String),
}

/// Physical parameters of the bosonic model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// number of modes, 2 or 3
    pub modes: usize,
    /// total particle number N
    pub particles: u32,
    /// tunneling rate
    pub omega: f64,
    /// collision rate
    pub chi: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.modes != 2 && self.modes != 3 {
            return Err(ModelError::BadParams(format!(
                "modes must be 2 or 3, got {}",
                self.modes
            )));
        }
        if self.particles == 0 {
            return Err(ModelError::BadParams("particle count must be >= 1".into()));
        }
        if self.chi != 0.0 && self.particles < 2 {
            return Err(ModelError::BadParams(
                "chi != 0 requires N >= 2 (the interaction divides by N-1)".into(),
            ));
        }
        if !(self.omega.is_finite() && self.chi.is_finite()) {
            return Err(ModelError::BadParams("rates must be finite".into()));
        }
        Ok(())
    }
}

/// Bundled evaluation of the classical Hamiltonian at one doubled-phase-space
/// point: value, both gradients and all second-derivative blocks. The shared
/// subexpressions dominate the cost, so everything is produced in one call.
///
/// All entries carry the full N scaling of the Hamiltonian. Matrix blocks are
/// row-major with `[j * d + k]` holding the (j, k) element; `hess_wwb[j][k]`
/// is d2H/(dw_j dwb_k).
#[derive(Debug, Clone)]
pub struct ModelEval {
    pub value: C64,
    pub grad_w: Vec<C64>,
    pub grad_wb: Vec<C64>,
    pub hess_ww: Vec<C64>,
    pub hess_wbwb: Vec<C64>,
    pub hess_wwb: Vec<C64>,
}

impl ModelEval {
    pub fn new(dim: usize) -> Self {
        let z = C64::new(0.0, 0.0);
        Self {
            value: z,
            grad_w: vec![z; dim],
            grad_wb: vec![z; dim],
            hess_ww: vec![z; dim * dim],
            hess_wbwb: vec![z; dim * dim],
            hess_wwb: vec![z; dim * dim],
        }
    }
}

/// A classical Hamiltonian model on the doubled phase space of dimension
/// `dim()` complex coordinates per side. Implementations must be pure and
/// shareable across threads.
pub trait ClassicalModel: Sync {
    /// n - 1, the number of complex coordinates in w.
    fn dim(&self) -> usize;
    fn params(&self) -> &ModelParams;
    /// Evaluate value, gradients and second derivatives at (w, wb).
    fn eval(&self, w: &[C64], wb: &[C64], out: &mut ModelEval);

    fn value_at(&self, w: &[C64], wb: &[C64]) -> C64 {
        let mut e = ModelEval::new(self.dim());
        self.eval(w, wb, &mut e);
        e.value
    }
}

/// Triple-well model in SU(3) coordinates (two complex variables).
///
/// H/N = omega * (wb1 w2 + wb2 w1 + wb1 + w1 + wb2 + w2) / D
///     + chi * ((wb1 w1)^2 + (wb2 w2)^2 + 1) / D^2,   D = 1 + wb1 w1 + wb2 w2.
#[derive(Debug, Clone)]
pub struct Su3Model {
    params: ModelParams,
}

impl Su3Model {
    pub fn new(params: ModelParams) -> Result<Self, ModelError> {
        params.validate()?;
        if params.modes != 3 {
            return Err(ModelError::BadParams(format!(
                "SU(3) model needs modes = 3, got {}",
                params.modes
            )));
        }
        Ok(Self { params })
    }
}

impl ClassicalModel for Su3Model {
    fn dim(&self) -> usize {
        2
    }

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn eval(&self, w: &[C64], wb: &[C64], out: &mut ModelEval) {
        let n = self.params.particles as f64;
        let om = self.params.omega;
        let ch = self.params.chi;
        let one = C64::new(1.0, 0.0);

        let d = one + wb[0] * w[0] + wb[1] * w[1];
        let d2 = d * d;
        let d3 = d2 * d;
        let d4 = d3 * d;
        let a = wb[0] * w[1] + wb[1] * w[0] + wb[0] + w[0] + wb[1] + w[1];
        let b = (wb[0] * w[0]).powu(2) + (wb[1] * w[1]).powu(2) + one;

        out.value = (om * a / d + ch * b / d2) * n;

        for j in 0..2 {
            let o = 1 - j;
            out.grad_w[j] = n
                * (om * ((wb[o] + one) / d - a * wb[j] / d2)
                    + ch * (2.0 * wb[j] * wb[j] * w[j] / d2 - 2.0 * b * wb[j] / d3));
            out.grad_wb[j] = n
                * (om * ((w[o] + one) / d - a * w[j] / d2)
                    + ch * (2.0 * wb[j] * w[j] * w[j] / d2 - 2.0 * b * w[j] / d3));
        }

        for j in 0..2 {
            let oj = 1 - j;
            for k in 0..2 {
                let ok = 1 - k;
                let delta = if j == k { one } else { C64::new(0.0, 0.0) };
                out.hess_ww[j * 2 + k] = n
                    * (om
                        * (-(wb[oj] + one) * wb[k] / d2 - (wb[ok] + one) * wb[j] / d2
                            + 2.0 * a * wb[j] * wb[k] / d3)
                        + ch * (2.0 * wb[j] * wb[j] * delta / d2
                            - 4.0 * wb[j] * wb[j] * w[j] * wb[k] / d3
                            - 4.0 * wb[j] * wb[k] * wb[k] * w[k] / d3
                            + 6.0 * b * wb[j] * wb[k] / d4));
                out.hess_wbwb[j * 2 + k] = n
                    * (om
                        * (-(w[oj] + one) * w[k] / d2 - (w[ok] + one) * w[j] / d2
                            + 2.0 * a * w[j] * w[k] / d3)
                        + ch * (2.0 * w[j] * w[j] * delta / d2
                            - 4.0 * w[j] * w[j] * wb[j] * w[k] / d3
                            - 4.0 * w[j] * w[k] * w[k] * wb[k] / d3
                            + 6.0 * b * w[j] * w[k] / d4));
                let delta_k_oj = if k == oj { one } else { C64::new(0.0, 0.0) };
                out.hess_wwb[j * 2 + k] = n
                    * (om
                        * (delta_k_oj / d - (wb[oj] + one) * w[k] / d2
                            - (w[ok] + one) * wb[j] / d2
                            - a * delta / d2
                            + 2.0 * a * wb[j] * w[k] / d3)
                        + ch * (4.0 * wb[j] * w[j] * delta / d2
                            - 4.0 * wb[j] * wb[j] * w[j] * w[k] / d3
                            - 2.0 * b * delta / d3
                            - 4.0 * wb[j] * wb[k] * w[k] * w[k] / d3
                            + 6.0 * b * wb[j] * w[k] / d4));
            }
        }
    }
}

/// Reduction of the triple well to the symmetric two-mode sector, written in
/// the single SU(2) coordinate v = sqrt2 * w1 of the invariant subspace
/// w1 = w2. It equals the SU(3) Hamiltonian restricted to that subspace.
///
/// H/N = omega * (vb v + sqrt2 (vb + v)) / D
///     + chi * (vb^2 v^2 / 2 + 1) / D^2,   D = 1 + vb v.
#[derive(Debug, Clone)]
pub struct Su2Model {
    params: ModelParams,
}

impl Su2Model {
    pub fn new(params: ModelParams) -> Result<Self, ModelError> {
        params.validate()?;
        if params.modes != 2 {
            return Err(ModelError::BadParams(format!(
                "SU(2) model needs modes = 2, got {}",
                params.modes
            )));
        }
        Ok(Self { params })
    }
}

impl ClassicalModel for Su2Model {
    fn dim(&self) -> usize {
        1
    }

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn eval(&self, w: &[C64], wb: &[C64], out: &mut ModelEval) {
        let n = self.params.particles as f64;
        let om = self.params.omega;
        let ch = self.params.chi;
        let one = C64::new(1.0, 0.0);
        let rt2 = std::f64::consts::SQRT_2;

        let v = w[0];
        let vb = wb[0];
        let d = one + vb * v;
        let d2 = d * d;
        let d3 = d2 * d;
        let d4 = d3 * d;
        let a = vb * v + rt2 * (vb + v);
        let b = 0.5 * (vb * v).powu(2) + one;

        out.value = (om * a / d + ch * b / d2) * n;
        out.grad_w[0] = n
            * (om * ((vb + rt2) / d - a * vb / d2)
                + ch * (vb * vb * v / d2 - 2.0 * b * vb / d3));
        out.grad_wb[0] = n
            * (om * ((v + rt2) / d - a * v / d2)
                + ch * (vb * v * v / d2 - 2.0 * b * v / d3));
        out.hess_ww[0] = n
            * (om * (-2.0 * (vb + rt2) * vb / d2 + 2.0 * a * vb * vb / d3)
                + ch * (vb * vb / d2 - 4.0 * vb * vb * vb * v / d3
                    + 6.0 * b * vb * vb / d4));
        out.hess_wbwb[0] = n
            * (om * (-2.0 * (v + rt2) * v / d2 + 2.0 * a * v * v / d3)
                + ch * (v * v / d2 - 4.0 * v * v * v * vb / d3 + 6.0 * b * v * v / d4));
        out.hess_wwb[0] = n
            * (om
                * (one / d - (vb + rt2) * v / d2 - (v + rt2) * vb / d2 - a / d2
                    + 2.0 * a * vb * v / d3)
                + ch * (2.0 * vb * v / d2 - 4.0 * (vb * v).powu(2) / d3 - 2.0 * b / d3
                    + 6.0 * b * vb * v / d4));
    }
}

/// Everything the augmented trajectory ODE needs at one phase-space point:
/// the flow fields f = xi dH/dwb and g = xibar dH/dw (so wdot = -i f,
/// wbdot = +i g), their Jacobian blocks, the Lagrangian and the integrand of
/// the action correction term.
#[derive(Debug, Clone)]
pub struct FlowEval {
    pub f: Vec<C64>,
    pub g: Vec<C64>,
    pub df_dw: Vec<C64>,
    pub df_dwb: Vec<C64>,
    pub dg_dw: Vec<C64>,
    pub dg_dwb: Vec<C64>,
    pub lagrangian: C64,
    pub correction: C64,
    pub hamiltonian: C64,
    pub denom: C64,
}

impl FlowEval {
    pub fn new(dim: usize) -> Self {
        let z = C64::new(0.0, 0.0);
        Self {
            f: vec![z; dim],
            g: vec![z; dim],
            df_dw: vec![z; dim * dim],
            df_dwb: vec![z; dim * dim],
            dg_dw: vec![z; dim * dim],
            dg_dwb: vec![z; dim * dim],
            lagrangian: z,
            correction: z,
            hamiltonian: z,
            denom: z,
        }
    }
}

/// Assemble the flow quantities from the bundled model derivatives.
///
/// Uses per-particle gradients g = (1/N) dH so the equations of motion are
/// explicitly independent of N; the Lagrangian restores the N factor.
pub fn eval_flow(
    model: &dyn ClassicalModel,
    w: &[C64],
    wb: &[C64],
    scratch: &mut ModelEval,
    out: &mut FlowEval,
) {
    let d = model.dim();
    let n = model.params().particles as f64;
    let inv_n = 1.0 / n;
    model.eval(w, wb, scratch);
    let one = C64::new(1.0, 0.0);
    let denom = one + dot(wb, w);

    // per-particle gradients
    let gw: Vec<C64> = scratch.grad_w.iter().map(|z| z * inv_n).collect();
    let gwb: Vec<C64> = scratch.grad_wb.iter().map(|z| z * inv_n).collect();
    let sigma = dot(wb, &gwb);
    let tau = dot(w, &gw);

    for j in 0..d {
        out.f[j] = denom * (gwb[j] + w[j] * sigma);
        out.g[j] = denom * (gw[j] + wb[j] * tau);
    }

    for j in 0..d {
        for l in 0..d {
            let delta = if j == l { one } else { C64::new(0.0, 0.0) };
            // second derivatives per particle; hess_wwb[a][b] = d2H/dw_a dwb_b
            let h_wbw_jl = scratch.hess_wwb[l * d + j] * inv_n; // d2h/dwb_j dw_l
            let h_wwb_jl = scratch.hess_wwb[j * d + l] * inv_n; // d2h/dw_j dwb_l
            let h_wbwb_jl = scratch.hess_wbwb[j * d + l] * inv_n;
            let h_ww_jl = scratch.hess_ww[j * d + l] * inv_n;

            let mut s1 = C64::new(0.0, 0.0); // sum_k wb_k d2h/dwb_k dw_l
            let mut s2 = C64::new(0.0, 0.0); // sum_k wb_k d2h/dwb_k dwb_l
            let mut s3 = C64::new(0.0, 0.0); // sum_k w_k d2h/dw_k dw_l
            let mut s4 = C64::new(0.0, 0.0); // sum_k w_k d2h/dw_k dwb_l
            for k in 0..d {
                s1 += wb[k] * scratch.hess_wwb[l * d + k] * inv_n;
                s2 += wb[k] * scratch.hess_wbwb[k * d + l] * inv_n;
                s3 += w[k] * scratch.hess_ww[k * d + l] * inv_n;
                s4 += w[k] * scratch.hess_wwb[k * d + l] * inv_n;
            }

            out.df_dw[j * d + l] =
                wb[l] * (gwb[j] + w[j] * sigma) + denom * (h_wbw_jl + delta * sigma + w[j] * s1);
            out.df_dwb[j * d + l] =
                w[l] * (gwb[j] + w[j] * sigma) + denom * (h_wbwb_jl + w[j] * (gwb[l] + s2));
            out.dg_dw[j * d + l] =
                wb[l] * (gw[j] + wb[j] * tau) + denom * (h_ww_jl + wb[j] * (gw[l] + s3));
            out.dg_dwb[j * d + l] =
                w[l] * (gw[j] + wb[j] * tau) + denom * (h_wwb_jl + delta * tau + wb[j] * s4);
        }
    }

    out.hamiltonian = scratch.value;
    out.denom = denom;
    // L = i (N/2) (wb.wdot - wbdot.w)/D - H, with wdot = -i f, wbdot = i g;
    // wb.f = D^2 sigma and w.g = D^2 tau collapse it to the form below.
    out.lagrangian = 0.5 * n * denom * (sigma + tau) - scratch.value;
    let mut corr = C64::new(0.0, 0.0);
    for j in 0..d {
        corr += out.df_dw[j * d + j] + out.dg_dwb[j * d + j];
    }
    out.correction = 0.25 * corr;
}

/// Time derivative (wdot, wbdot) of a doubled-phase-space point.
pub fn eom_rhs(
    model: &dyn ClassicalModel,
    w: &[C64],
    wb: &[C64],
) -> Result<(Vec<C64>, Vec<C64>), ModelError> {
    let d = model.dim();
    if w.len() != d || wb.len() != d {
        return Err(ModelError::DimensionMismatch {
            expected: d,
            found: w.len().max(wb.len()),
        });
    }
    let mut scratch = ModelEval::new(d);
    let mut flow = FlowEval::new(d);
    eval_flow(model, w, wb, &mut scratch, &mut flow);
    if flow.denom.norm() < EPS_SINGULAR {
        return Err(ModelError::Singular(flow.denom.norm()));
    }
    let i = C64::new(0.0, 1.0);
    let dw: Vec<C64> = flow.f.iter().map(|z| -i * z).collect();
    let dwb: Vec<C64> = flow.g.iter().map(|z| i * z).collect();
    Ok((dw, dwb))
}

/// The 2d x 2d matrix of the variational flow around (w, wb): small
/// displacements obey (d/dt)(dw, dwb) = R (dw, dwb).
pub fn linearization_matrix(
    model: &dyn ClassicalModel,
    w: &[C64],
    wb: &[C64],
) -> Result<DMatrix<C64>, ModelError> {
    let d = model.dim();
    if w.len() != d || wb.len() != d {
        return Err(ModelError::DimensionMismatch {
            expected: d,
            found: w.len().max(wb.len()),
        });
    }
    let mut scratch = ModelEval::new(d);
    let mut flow = FlowEval::new(d);
    eval_flow(model, w, wb, &mut scratch, &mut flow);
    if flow.denom.norm() < EPS_SINGULAR {
        return Err(ModelError::Singular(flow.denom.norm()));
    }
    let i = C64::new(0.0, 1.0);
    let mut r = DMatrix::<C64>::zeros(2 * d, 2 * d);
    for j in 0..d {
        for l in 0..d {
            r[(j, l)] = -i * flow.df_dw[j * d + l];
            r[(j, d + l)] = -i * flow.df_dwb[j * d + l];
            r[(d + j, l)] = i * flow.dg_dw[j * d + l];
            r[(d + j, d + l)] = i * flow.dg_dwb[j * d + l];
        }
    }
    Ok(r)
}
