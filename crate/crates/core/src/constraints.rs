//! Group constraints: separation of common and individual factors on the
//! modes of interest, and the weight vector `p` on the group axis
//! (`sum p = p_cum`, `p_i >= p_min`).
//!
//! Two treatments are provided: projection onto the feasible set after every
//! iterate, and a Lagrange formulation solved through the bordered Hessian
//! system.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::krylov::minres;
use crate::linalg::pinv;
use crate::model::{BlockId, BlockTermModel, GroupFlavor, GroupSpec, ModelError, Part};
use crate::objective::{HessianMode, HessianOperator, ResidualState};
use crate::optim::{
    minimize, minimize_projected, ConvergenceTrace, IterRecord, Method, OptimError,
    OptimizerConfig, Status,
};

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("infeasible weight box: p_cum {p_cum} < N * p_min = {bound}")]
    InfeasibleBox { p_cum: f64, bound: f64 },
    #[error("model has no group structure")]
    NotGrouped,
    #[error("bordered system: {0}")]
    Dimension(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintScheme {
    #[default]
    None,
    Projected,
    Lagrange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyForm {
    /// One multiplier per entry of every separation product.
    Exact,
    /// One scalar multiplier per mode of interest on the squared norm.
    Relaxed,
}

/// Multipliers of the penalty term `g(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierState {
    /// Relaxed separation multipliers, one per separated mode.
    pub mu: Vec<f64>,
    /// Exact-form multipliers `[mode][object]`, shaped like `U^T C`.
    pub mu_exact: Vec<Vec<DMatrix<f64>>>,
    /// Off-diagonal penalty on the group-mode factor.
    pub lambda: f64,
    /// Multiplier of `sum p = p_cum`.
    pub theta: f64,
    /// Bound multipliers, kept nonnegative.
    pub zeta: DVector<f64>,
}

impl MultiplierState {
    pub fn zeros(model: &BlockTermModel) -> Result<Self, ConstraintError> {
        let spec = model.group().ok_or(ConstraintError::NotGrouped)?;
        let modes = separated_modes(model);
        let mu_exact = modes
            .iter()
            .map(|&g| {
                let u = model.common_factor(g).expect("group model").ncols();
                model
                    .individual_terms()
                    .map(|j| DMatrix::zeros(u, model.lr_terms()[j].rank))
                    .collect()
            })
            .collect();
        Ok(Self {
            mu: vec![0.0; modes.len()],
            mu_exact,
            lambda: 0.0,
            theta: 0.0,
            zeta: DVector::zeros(spec.n_objects),
        })
    }

    /// `[mu_1 .. mu_m, lambda, theta, zeta_1 .. zeta_N]`.
    pub fn tau(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.mu.clone();
        v.push(self.lambda);
        v.push(self.theta);
        v.extend(self.zeta.iter());
        DVector::from_vec(v)
    }

    /// Inverse of [`MultiplierState::tau`]; bound multipliers are clipped at 0.
    pub fn set_tau(&mut self, tau: &DVector<f64>) {
        let m = self.mu.len();
        for i in 0..m {
            self.mu[i] = tau[i];
        }
        self.lambda = tau[m];
        self.theta = tau[m + 1];
        for i in 0..self.zeta.len() {
            self.zeta[i] = tau[m + 2 + i].max(0.0);
        }
    }
}

/// `(I - Y (Y^T Y)^+ Y^T) X`: removes from the columns of `X` their
/// component in the span of `Y`.
pub fn orth_project(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(x.nrows(), y.nrows(), "row counts must agree");
    if y.ncols() == 0 {
        return x.clone();
    }
    x - y * (pinv(y) * x)
}

/// Euclidean projection onto `{p : sum p = p_cum, p_i >= p_min}` via the
/// shifted simplex.
pub fn simplex_box_project(
    y: &DVector<f64>,
    p_cum: f64,
    p_min: f64,
) -> Result<DVector<f64>, ConstraintError> {
    let n = y.len();
    let bound = n as f64 * p_min;
    if p_cum < bound || n == 0 {
        return Err(ConstraintError::InfeasibleBox { p_cum, bound });
    }
    let radius = p_cum - bound;
    let z = y.map(|v| v - p_min);
    let mut sorted: Vec<f64> = z.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - radius) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    Ok(z.map(|v| (v - theta).max(0.0) + p_min))
}

fn separated_modes(model: &BlockTermModel) -> Vec<usize> {
    model
        .group()
        .map(|g| {
            g.modes_of_interest
                .iter()
                .copied()
                .filter(|&m| m < model.full_modes())
                .collect()
        })
        .unwrap_or_default()
}

fn common_id(model: &BlockTermModel) -> Option<BlockId> {
    match model.group()?.flavor {
        GroupFlavor::Glro => Some(BlockId::Lr(model.lr_terms().len().checked_sub(1)?)),
        GroupFlavor::Gtld => Some(BlockId::Tucker(0)),
    }
}

/// Projects onto the feasible set: separation first, then the weights.
pub fn project_model(
    model: &BlockTermModel,
    spec: &GroupSpec,
) -> Result<BlockTermModel, ConstraintError> {
    let mut out = model.clone();
    project_in_place(&mut out, spec)?;
    Ok(out)
}

fn project_in_place(model: &mut BlockTermModel, spec: &GroupSpec) -> Result<(), ConstraintError> {
    if model.group().is_none() {
        return Err(ConstraintError::NotGrouped);
    }
    for g in separated_modes(model) {
        let u = model.common_factor(g).expect("group model").clone();
        for j in model.individual_terms() {
            let c = &mut model.lr_terms_mut()[j].full[g];
            *c = orth_project(c, &u);
        }
    }
    let Some(mut p) = model.group_weights() else {
        return Ok(());
    };
    match model.group().map(|g| g.flavor) {
        Some(GroupFlavor::Gtld) => {
            // each object's core slice absorbs its own weight exactly
            let q = simplex_box_project(&p.abs(), spec.p_cum, spec.p_min)?;
            let t = &mut model.tucker_terms_mut()[0];
            let len = t.core.len() / p.len();
            for (i, slice) in t.core.data_mut().chunks_mut(len).enumerate() {
                let r = p[i] / q[i];
                slice.iter_mut().for_each(|v| *v *= r);
            }
            model.set_group_weights(&q);
        }
        _ => {
            let s = p.sum();
            if s.is_finite() && s.abs() > f64::EPSILON * p.norm() {
                let alpha = spec.p_cum / s;
                p *= alpha;
                if let Some(f) = model.lr_terms_mut().last_mut().and_then(|b| b.full.first_mut()) {
                    *f /= alpha;
                }
            }
            let q = simplex_box_project(&p, spec.p_cum, spec.p_min)?;
            model.set_group_weights(&q);
        }
    }
    Ok(())
}

/// `max_{gamma, k} ||U_gamma^T C_gamma^(k)||_F`.
pub fn separation_violation(model: &BlockTermModel) -> f64 {
    let mut worst: f64 = 0.0;
    for g in separated_modes(model) {
        let u = model.common_factor(g).expect("group model");
        for j in model.individual_terms() {
            worst = worst.max((u.transpose() * &model.lr_terms()[j].full[g]).norm());
        }
    }
    worst
}

/// Diagonal and strictly off-diagonal parts of the group-mode factor as
/// seen by the penalty. The identity columns of the (Lr,1) model and the
/// zero pattern of `diag(p)` are structural, so only `p` is free and the
/// off-diagonal part is identically zero.
fn group_mode_parts(model: &BlockTermModel) -> (DVector<f64>, f64) {
    let p = model.group_weights().unwrap_or_else(|| DVector::zeros(0));
    (p, 0.0)
}

/// Penalty term `g(x)` for the given multipliers.
pub fn penalty_value(
    model: &BlockTermModel,
    spec: &GroupSpec,
    mult: &MultiplierState,
    form: PenaltyForm,
) -> f64 {
    let modes = separated_modes(model);
    let mut g = 0.0;
    for (gi, &mode) in modes.iter().enumerate() {
        let u = model.common_factor(mode).expect("group model");
        for (jj, j) in model.individual_terms().enumerate() {
            let prod = u.transpose() * &model.lr_terms()[j].full[mode];
            g += match form {
                PenaltyForm::Exact => prod.dot(&mult.mu_exact[gi][jj]),
                PenaltyForm::Relaxed => 0.5 * mult.mu[gi] * prod.norm_squared(),
            };
        }
    }
    let (diag, offdiag_sq) = group_mode_parts(model);
    g += match form {
        PenaltyForm::Exact => 0.0,
        PenaltyForm::Relaxed => 0.5 * mult.lambda * offdiag_sq,
    };
    g -= mult.theta * (spec.p_cum - diag.sum());
    g -= mult.zeta.dot(&diag.map(|v| v - spec.p_min));
    g
}

/// Constraint functions of the relaxed form in `tau` order:
/// `1/2 ||U^T C||^2` per mode, `1/2 ||offdiag||^2`, `sum p - p_cum`,
/// `-(p_i - p_min)`; so that `g(x) = tau^T c(x)`.
pub fn constraint_values(model: &BlockTermModel, spec: &GroupSpec) -> DVector<f64> {
    let modes = separated_modes(model);
    let mut v = Vec::with_capacity(modes.len() + 2 + spec.n_objects);
    for &mode in &modes {
        let u = model.common_factor(mode).expect("group model");
        let s: f64 = model
            .individual_terms()
            .map(|j| (u.transpose() * &model.lr_terms()[j].full[mode]).norm_squared())
            .sum();
        v.push(0.5 * s);
    }
    let (diag, offdiag_sq) = group_mode_parts(model);
    v.push(0.5 * offdiag_sq);
    v.push(diag.sum() - spec.p_cum);
    v.extend(diag.iter().map(|p| -(p - spec.p_min)));
    DVector::from_vec(v)
}

/// Gradients of the constraint functions, one column per entry of `tau`
/// (`n_params x m`).
pub fn constraint_jacobian(model: &BlockTermModel, spec: &GroupSpec) -> DMatrix<f64> {
    let modes = separated_modes(model);
    let layout = model.layout();
    let m = modes.len() + 2 + spec.n_objects;
    let mut jac = DMatrix::zeros(layout.len(), m);
    let common = common_id(model).expect("group model");
    for (gi, &mode) in modes.iter().enumerate() {
        let u = model.common_factor(mode).expect("group model");
        let mut grad_u = DMatrix::zeros(u.nrows(), u.ncols());
        for j in model.individual_terms() {
            let c = &model.lr_terms()[j].full[mode];
            grad_u += c * (c.transpose() * u);
            if let Some(seg) = layout.find(BlockId::Lr(j), Part::Factor(mode)) {
                let gc = u * (u.transpose() * c);
                jac.view_mut((seg.offset, gi), (seg.len, 1))
                    .copy_from_slice(gc.as_slice());
            }
        }
        if let Some(seg) = layout.find(common, Part::Factor(mode)) {
            jac.view_mut((seg.offset, gi), (seg.len, 1))
                .copy_from_slice(grad_u.as_slice());
        }
    }
    // the off-diagonal column stays zero: no free off-diagonal entries
    let d = model.order();
    if let Some(seg) = layout.find(common, Part::Factor(d - 1)) {
        let theta_col = modes.len() + 1;
        for i in 0..seg.len.min(spec.n_objects) {
            jac[(seg.offset + i, theta_col)] = 1.0;
            jac[(seg.offset + i, theta_col + 1 + i)] = -1.0;
        }
    }
    jac
}

/// `grad g = sum_j tau_j grad c_j` (relaxed form).
pub fn penalty_gradient(
    model: &BlockTermModel,
    spec: &GroupSpec,
    mult: &MultiplierState,
) -> DVector<f64> {
    constraint_jacobian(model, spec) * mult.tau()
}

#[derive(Clone, Debug)]
pub struct BorderedSolution {
    pub dx: DVector<f64>,
    pub dtau: DVector<f64>,
    /// Relative residual of the full bordered system.
    pub relative_residual: f64,
    pub iterations: usize,
    /// The (1,1) block had to be shifted by `1e-10 I`.
    pub regularized: bool,
}

const BORDER_REG: f64 = 1e-10;

/// Solves `[H B; B^T 0] [dx; dtau] = [rhs_x; rhs_c]` with MINRES. Border
/// columns that are zero or depend linearly on earlier ones are dropped and
/// get `dtau = 0`.
pub fn bordered_solve(
    h: &HessianOperator<'_>,
    border: &DMatrix<f64>,
    rhs_x: &DVector<f64>,
    rhs_c: &DVector<f64>,
) -> Result<BorderedSolution, ConstraintError> {
    bordered_solve_with(|v| h.apply(v), border, rhs_x, rhs_c)
}

/// Greedy Gram-Schmidt selection of a maximal independent column subset.
fn independent_columns(b: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for j in 0..b.ncols() {
        let col = b.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        let mut r = col;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = r.norm();
        if rn > 1e-10 * norm {
            basis.push(r / rn);
            keep.push(j);
        }
    }
    keep
}

/// [`bordered_solve`] for any symmetric (1,1) operator.
pub fn bordered_solve_with(
    h: impl Fn(&DVector<f64>) -> DVector<f64>,
    border: &DMatrix<f64>,
    rhs_x: &DVector<f64>,
    rhs_c: &DVector<f64>,
) -> Result<BorderedSolution, ConstraintError> {
    let n = rhs_x.len();
    if border.nrows() != n || border.ncols() != rhs_c.len() {
        return Err(ConstraintError::Dimension(format!(
            "border is {}x{}, expected {}x{}",
            border.nrows(),
            border.ncols(),
            n,
            rhs_c.len()
        )));
    }
    let live = independent_columns(border);
    let b = border.select_columns(&live);
    let m = live.len();
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(rhs_x);
    for (i, &j) in live.iter().enumerate() {
        rhs[n + i] = rhs_c[j];
    }
    let solve = |shift: f64| {
        let op = |v: &DVector<f64>| {
            let x = v.rows(0, n).into_owned();
            let t = v.rows(n, m).into_owned();
            let mut out = DVector::zeros(n + m);
            let hx = h(&x) + &x * shift + &b * &t;
            out.rows_mut(0, n).copy_from(&hx);
            out.rows_mut(n, m).copy_from(&(b.transpose() * &x));
            out
        };
        minres(op, &rhs, 20 * (n + m) + 100, 1e-14)
    };
    let mut res = solve(0.0);
    let mut regularized = false;
    if !(res.relative_residual <= 1e-8) {
        let alt = solve(BORDER_REG);
        regularized = true;
        if alt.relative_residual < res.relative_residual || !res.relative_residual.is_finite() {
            res = alt;
        }
    }
    let dx = res.x.rows(0, n).into_owned();
    let mut dtau = DVector::zeros(border.ncols());
    for (i, &j) in live.iter().enumerate() {
        dtau[j] = res.x[n + i];
    }
    Ok(BorderedSolution {
        dx,
        dtau,
        relative_residual: res.relative_residual,
        iterations: res.iterations,
        regularized,
    })
}

/// Fits under the chosen constraint treatment.
pub fn fit_constrained(
    state: ResidualState,
    config: &OptimizerConfig,
    scheme: ConstraintScheme,
) -> Result<(BlockTermModel, ConvergenceTrace), ConstraintError> {
    match scheme {
        ConstraintScheme::None => Ok(minimize(state, config)?),
        ConstraintScheme::Projected => {
            let spec = state.model().group().cloned().ok_or(ConstraintError::NotGrouped)?;
            spec.validate()?;
            let mut failure = None;
            let mut proj = |m: &mut BlockTermModel| {
                if let Err(e) = project_in_place(m, &spec) {
                    failure.get_or_insert(e);
                }
            };
            let out = minimize_projected(state, config, &mut proj)?;
            match failure {
                Some(e) => Err(e),
                None => Ok(out),
            }
        }
        ConstraintScheme::Lagrange => lagrange_fit(state, config),
    }
}

/// Inequality rows of the bordered system: only the bounds that are active
/// or carry a positive multiplier.
fn active_rows(model: &BlockTermModel, spec: &GroupSpec, mult: &MultiplierState) -> Vec<usize> {
    let m_sep = separated_modes(model).len();
    let p = model.group_weights().unwrap_or_else(|| DVector::zeros(0));
    let tol = 1e-12 * spec.p_cum.max(1.0);
    let mut rows: Vec<usize> = (0..m_sep + 2).collect();
    for i in 0..p.len() {
        if p[i] - spec.p_min <= tol || mult.zeta[i] > 0.0 {
            rows.push(m_sep + 2 + i);
        }
    }
    rows
}

/// Infeasibility of the full constraint set (bounds as one-sided).
fn infeasibility(model: &BlockTermModel, spec: &GroupSpec) -> f64 {
    let c = constraint_values(model, spec);
    let m_sep = separated_modes(model).len();
    let mut s = 0.0;
    for (i, v) in c.iter().enumerate() {
        s += if i >= m_sep + 2 { v.max(0.0) } else { v.abs() };
    }
    s
}

/// `||grad f + grad c tau|| + infeasibility`.
pub fn kkt_residual(state: &ResidualState, spec: &GroupSpec, mult: &MultiplierState) -> f64 {
    let g = state.gradient() + penalty_gradient(state.model(), spec, mult);
    g.norm() + infeasibility(state.model(), spec)
}

/// Lagrange-multiplier fit: every iteration solves the bordered system for
/// the step and the new multipliers, then backtracks on the merit function
/// `f + rho * infeasibility`.
pub fn lagrange_fit(
    mut state: ResidualState,
    config: &OptimizerConfig,
) -> Result<(BlockTermModel, ConvergenceTrace), ConstraintError> {
    config.validate()?;
    let spec = state.model().group().cloned().ok_or(ConstraintError::NotGrouped)?;
    spec.validate()?;
    let mode = if config.method == Method::ScgFn {
        HessianMode::Full
    } else {
        HessianMode::GaussNewton
    };
    let start = Instant::now();
    let mut mult = MultiplierState::zeros(state.model())?;
    let mut trace = ConvergenceTrace::new(config.method);
    let push = |trace: &mut ConvergenceTrace, state: &ResidualState, mult: &MultiplierState, iter, step, inner| {
        trace.push(IterRecord {
            iter,
            objective: state.objective(),
            grad_norm: state.gradient().norm(),
            step_norm: step,
            time_s: start.elapsed().as_secs_f64(),
            inner_iters: inner,
            relative_residual: state.relative_residual(),
            kkt_residual: Some(kkt_residual(state, &spec, mult)),
        });
    };
    push(&mut trace, &state, &mult, 0, 0.0, 0);
    let mut rho: f64 = 1.0;
    for it in 1..=config.max_iters {
        let g = state.gradient();
        let rows = active_rows(state.model(), &spec, &mult);
        let c_all = constraint_values(state.model(), &spec);
        let j_all = constraint_jacobian(state.model(), &spec);
        let jac = j_all.select_columns(&rows);
        let c = DVector::from_iterator(rows.len(), rows.iter().map(|&r| c_all[r]));
        let sol = bordered_solve(&state.hessian(mode), &jac, &(-&g), &(-&c))?;
        let mut tau = DVector::zeros(c_all.len());
        for (i, &r) in rows.iter().enumerate() {
            tau[r] = sol.dtau[i];
        }
        rho = rho.max(1.0 + tau.amax());
        let merit = |s: &ResidualState| s.objective() + rho * infeasibility(s.model(), &spec);
        let m0 = merit(&state);
        let x0 = state.params().clone();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..config.line_search.max_evals {
            let mut trial = state.clone();
            trial.set_params(&(&x0 + &sol.dx * alpha))?;
            let mt = merit(&trial);
            if mt.is_finite() && mt < m0 {
                accepted = Some(trial);
                break;
            }
            alpha *= config.line_search.backtrack;
        }
        let Some(next) = accepted else {
            trace.status = Status::Stalled;
            break;
        };
        state = next;
        mult.set_tau(&tau);
        let step = alpha * sol.dx.norm();
        push(&mut trace, &state, &mult, it, step, sol.iterations);
        let kkt = trace.last().and_then(|r| r.kkt_residual).unwrap_or(f64::INFINITY);
        if !kkt.is_finite() {
            return Err(OptimError::Numerical(format!("KKT residual became {kkt}")).into());
        }
        if kkt <= config.grad_tol {
            trace.status = Status::Converged;
            break;
        }
        if step <= config.step_tol * (state.params().norm() + config.step_tol) {
            trace.status = Status::StepTolerance;
            break;
        }
    }
    Ok((state.model().clone(), trace))
}
