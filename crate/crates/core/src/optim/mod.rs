//! Solvers for the least-squares fit: ALS plus line-search, damped and
//! trust-region Newton-type methods sharing one driver and trace format.

mod als;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use als::{als_sweep, als_sweep_separated};

use crate::krylov::{boundary_step, conjugate_gradient, steihaug};
use crate::model::{BlockTermModel, ModelError};
use crate::objective::{HessianMode, ResidualState};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ALS")]
    Als,
    #[serde(rename = "GD")]
    Gd,
    #[serde(rename = "CG_FR")]
    CgFr,
    #[serde(rename = "CG_PR")]
    CgPr,
    #[serde(rename = "CG_HS")]
    CgHs,
    #[serde(rename = "CG_DY")]
    CgDy,
    #[serde(rename = "GN")]
    Gn,
    #[serde(rename = "LM_Q")]
    LmQ,
    #[serde(rename = "LM_N")]
    LmN,
    #[serde(rename = "TR_DL")]
    TrDl,
    #[serde(rename = "SCG_QN")]
    ScgQn,
    #[serde(rename = "SCG_FN")]
    ScgFn,
}

impl Method {
    pub const ALL: [Method; 12] = [
        Method::Als,
        Method::Gd,
        Method::CgFr,
        Method::CgPr,
        Method::CgHs,
        Method::CgDy,
        Method::Gn,
        Method::LmQ,
        Method::LmN,
        Method::TrDl,
        Method::ScgQn,
        Method::ScgFn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Als => "ALS",
            Method::Gd => "GD",
            Method::CgFr => "CG_FR",
            Method::CgPr => "CG_PR",
            Method::CgHs => "CG_HS",
            Method::CgDy => "CG_DY",
            Method::Gn => "GN",
            Method::LmQ => "LM_Q",
            Method::LmN => "LM_N",
            Method::TrDl => "TR_DL",
            Method::ScgQn => "SCG_QN",
            Method::ScgFn => "SCG_FN",
        }
    }

    pub fn is_second_order(self) -> bool {
        matches!(
            self,
            Method::Gn | Method::LmQ | Method::LmN | Method::TrDl | Method::ScgQn | Method::ScgFn
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = OptimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| OptimError::UnknownMethod(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearchConfig {
    /// Sufficient-decrease constant.
    pub c1: f64,
    pub backtrack: f64,
    pub max_evals: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            backtrack: 0.5,
            max_evals: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub method: Method,
    pub max_iters: usize,
    /// Absolute tolerance on the gradient norm.
    pub grad_tol: f64,
    /// Relative tolerance on the step, `||s|| <= step_tol (||x|| + step_tol)`.
    pub step_tol: f64,
    /// Initial trust radius relative to `max(||x0||, 1)`.
    pub trust_radius_init: f64,
    /// Initial damping relative to the Rayleigh quotient `g^T H g / g^T g`.
    pub lm_lambda_init: f64,
    pub line_search: LineSearchConfig,
    /// Seed of the random initial point where the caller draws one.
    pub seed: u64,
    pub inner_max_iters: usize,
    pub inner_tol: f64,
    /// Extrapolate each ALS sweep along its own step, kept only if it lowers
    /// the objective.
    pub als_extrapolation: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Als,
            max_iters: 1000,
            grad_tol: 1e-8,
            step_tol: 1e-12,
            trust_radius_init: 1.0,
            lm_lambda_init: 1e-3,
            line_search: LineSearchConfig::default(),
            seed: 0,
            inner_max_iters: 100,
            inner_tol: 1e-10,
            als_extrapolation: true,
        }
    }
}

impl OptimizerConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("step_tol", self.step_tol),
            ("trust_radius_init", self.trust_radius_init),
            ("lm_lambda_init", self.lm_lambda_init),
            ("inner_tol", self.inner_tol),
            ("line_search.c1", self.line_search.c1),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OptimError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(OptimError::InvalidConfig(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.line_search.backtrack > 0.0 && self.line_search.backtrack < 1.0) {
            return Err(OptimError::InvalidConfig(
                "line_search.backtrack must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    StepTolerance,
    MaxIters,
    Stalled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub time_s: f64,
    pub inner_iters: usize,
    pub relative_residual: f64,
    /// Stationarity-plus-feasibility residual of the Lagrange scheme.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kkt_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub method: Method,
    pub records: Vec<IterRecord>,
    pub status: Status,
}

impl ConvergenceTrace {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            records: Vec::new(),
            status: Status::MaxIters,
        }
    }

    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }

    pub fn final_objective(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.objective)
    }

    pub fn final_relative_residual(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.relative_residual)
    }

    pub fn push(&mut self, record: IterRecord) {
        self.records.push(record);
    }
}

/// Direction-update coefficient of the nonlinear CG variants (zero for
/// GD), from the new and previous gradients and the previous direction.
pub fn cg_beta(method: Method, g: &DVector<f64>, g_old: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let y = g - g_old;
    match method {
        Method::CgFr => g.dot(g) / g_old.dot(g_old),
        Method::CgPr => g.dot(&y) / g_old.dot(g_old),
        Method::CgHs => g.dot(&y) / d.dot(&y),
        Method::CgDy => g.dot(g) / d.dot(&y),
        _ => 0.0,
    }
}

/// Post-step hook; the projected scheme passes the feasible-set projection.
pub type Projector<'a> = dyn FnMut(&mut BlockTermModel) + 'a;

/// Runs the configured method from the state's current parameters.
pub fn minimize(
    state: ResidualState,
    config: &OptimizerConfig,
) -> Result<(BlockTermModel, ConvergenceTrace), OptimError> {
    minimize_with(state, config, None)
}

/// As [`minimize`], applying `projector` to every new iterate.
pub fn minimize_projected(
    state: ResidualState,
    config: &OptimizerConfig,
    projector: &mut Projector<'_>,
) -> Result<(BlockTermModel, ConvergenceTrace), OptimError> {
    minimize_with(state, config, Some(projector))
}

fn minimize_with(
    state: ResidualState,
    config: &OptimizerConfig,
    projector: Option<&mut Projector<'_>>,
) -> Result<(BlockTermModel, ConvergenceTrace), OptimError> {
    config.validate()?;
    let mut run = Run::new(state, config, projector)?;
    match config.method {
        Method::Als => run.als()?,
        Method::Gd | Method::CgFr | Method::CgPr | Method::CgHs | Method::CgDy => {
            run.line_search_method()?
        }
        Method::Gn => run.gauss_newton()?,
        Method::LmQ | Method::LmN => run.levenberg_marquardt()?,
        Method::TrDl | Method::ScgQn | Method::ScgFn => run.trust_region()?,
    }
    Ok((run.state.model().clone(), run.trace))
}

/// Levenberg-Marquardt step `-(H_GN + lambda I)^{-1} g`.
pub fn lm_step(state: &ResidualState, lambda: f64, config: &OptimizerConfig) -> DVector<f64> {
    let g = state.gradient();
    let r = conjugate_gradient(
        |v| state.gauss_newton_apply(v) + v * lambda,
        &(-&g),
        config.inner_max_iters,
        config.inner_tol,
    );
    if r.breakdown && r.x.norm() == 0.0 {
        -g / lambda.max(1.0)
    } else {
        r.x
    }
}

struct Run<'p, 'o, 'c> {
    state: ResidualState,
    config: &'c OptimizerConfig,
    projector: Option<&'p mut Projector<'o>>,
    trace: ConvergenceTrace,
    start: Instant,
    f: f64,
    g: DVector<f64>,
}

enum Check {
    Continue,
    Stop(Status),
}

impl<'p, 'o, 'c> Run<'p, 'o, 'c> {
    fn new(
        mut state: ResidualState,
        config: &'c OptimizerConfig,
        mut projector: Option<&'p mut Projector<'o>>,
    ) -> Result<Self, OptimError> {
        if let Some(p) = projector.as_deref_mut() {
            let mut m = state.model().clone();
            p(&mut m);
            state.set_model(m)?;
        }
        let f = state.objective();
        let g = state.gradient();
        let mut run = Self {
            state,
            config,
            projector,
            trace: ConvergenceTrace::new(config.method),
            start: Instant::now(),
            f,
            g,
        };
        run.record(0, 0.0, 0)?;
        Ok(run)
    }

    fn record(&mut self, iter: usize, step_norm: f64, inner: usize) -> Result<(), OptimError> {
        if !self.f.is_finite() {
            return Err(OptimError::Numerical(format!(
                "objective became {} at iteration {iter}",
                self.f
            )));
        }
        self.trace.push(IterRecord {
            iter,
            objective: self.f,
            grad_norm: self.g.norm(),
            step_norm,
            time_s: self.start.elapsed().as_secs_f64(),
            inner_iters: inner,
            relative_residual: self.state.relative_residual(),
            kkt_residual: None,
        });
        Ok(())
    }

    /// Installs `x` (then projects, if a projector is present).
    fn accept_params(&mut self, x: &DVector<f64>) -> Result<(), OptimError> {
        self.state.set_params(x)?;
        self.after_update()
    }

    fn accept_model(&mut self, m: BlockTermModel) -> Result<(), OptimError> {
        self.state.set_model(m)?;
        self.after_update()
    }

    fn after_update(&mut self) -> Result<(), OptimError> {
        if let Some(p) = self.projector.as_deref_mut() {
            let mut m = self.state.model().clone();
            p(&mut m);
            self.state.set_model(m)?;
        }
        self.f = self.state.objective();
        self.g = self.state.gradient();
        Ok(())
    }

    /// Objective at `x` after projection, if a projector is present.
    fn feasible_objective(&mut self, x: &DVector<f64>) -> Result<f64, OptimError> {
        let mut s = self.state.clone();
        s.set_params(x)?;
        if let Some(p) = self.projector.as_deref_mut() {
            let mut m = s.model().clone();
            p(&mut m);
            s.set_model(m)?;
        }
        Ok(s.objective())
    }

    fn trial_objective(&self, x: &DVector<f64>) -> Result<f64, OptimError> {
        let mut s = self.state.clone();
        s.set_params(x)?;
        Ok(s.objective())
    }

    /// Stopping test on the current iterate after a step of norm `step`.
    fn check(&self, step: f64) -> Check {
        let x = self.state.params().norm();
        let t = self.state.target().frobenius_norm();
        if self.g.norm() <= self.config.grad_tol
            || self.state.relative_residual() <= 1e-15
            || (t == 0.0 && self.f == 0.0)
        {
            Check::Stop(Status::Converged)
        } else if step <= self.config.step_tol * (x + self.config.step_tol) {
            Check::Stop(Status::StepTolerance)
        } else {
            Check::Continue
        }
    }

    fn initial_check(&mut self) -> bool {
        if let Check::Stop(s) = self.check(f64::INFINITY) {
            self.trace.status = s;
            return true;
        }
        false
    }

    fn finish_iteration(
        &mut self,
        iter: usize,
        step: f64,
        inner: usize,
    ) -> Result<bool, OptimError> {
        self.record(iter, step, inner)?;
        if let Check::Stop(s) = self.check(step) {
            self.trace.status = s;
            return Ok(true);
        }
        Ok(false)
    }

    fn als(&mut self) -> Result<(), OptimError> {
        if self.initial_check() {
            return Ok(());
        }
        for it in 1..=self.config.max_iters {
            let x0 = self.state.params().clone();
            let before = (self.state.clone(), self.f, self.g.clone());
            let m = if self.projector.is_some() {
                als_sweep_separated(&self.state)
            } else {
                als_sweep(&self.state)
            };
            if self.config.als_extrapolation && it > 1 {
                let mut swept = self.state.clone();
                swept.set_model(m)?;
                let x1 = swept.params().clone();
                let trial = &x0 + (&x1 - &x0) * (it as f64).cbrt();
                let ft = self.feasible_objective(&trial)?;
                if ft.is_finite() && ft < self.feasible_objective(&x1)? {
                    self.accept_params(&trial)?;
                } else {
                    self.accept_params(&x1)?;
                }
            } else {
                self.accept_model(m)?;
            }
            if self.projector.is_none() && self.f > before.1 {
                // rounding noise at convergence; keep the last accepted iterate
                (self.state, self.f, self.g) = before;
                self.trace.status = Status::Stalled;
                return Ok(());
            }
            let step = (self.state.params() - x0).norm();
            if self.finish_iteration(it, step, 0)? {
                return Ok(());
            }
        }
        self.trace.status = Status::MaxIters;
        Ok(())
    }

    /// Backtracking Armijo search along `d` from step `alpha0`.
    fn armijo(
        &self,
        d: &DVector<f64>,
        alpha0: f64,
    ) -> Result<Option<(f64, DVector<f64>)>, OptimError> {
        let ls = &self.config.line_search;
        let slope = self.g.dot(d);
        if slope >= 0.0 {
            return Ok(None);
        }
        let x = self.state.params();
        let mut alpha = alpha0;
        for _ in 0..ls.max_evals {
            let trial = x + d * alpha;
            let ft = self.trial_objective(&trial)?;
            if ft.is_finite() && ft <= self.f + ls.c1 * alpha * slope {
                return Ok(Some((alpha, trial)));
            }
            alpha *= ls.backtrack;
        }
        Ok(None)
    }

    fn line_search_method(&mut self) -> Result<(), OptimError> {
        if self.initial_check() {
            return Ok(());
        }
        let method = self.config.method;
        let n = self.state.n_params().max(1);
        let mut d = -&self.g;
        let mut alpha_prev = 1.0;
        let mut slope_prev = self.g.dot(&d);
        let mut since_restart = 0;
        for it in 1..=self.config.max_iters {
            let slope = self.g.dot(&d);
            if slope >= 0.0 {
                d = -&self.g;
                since_restart = 0;
            }
            let slope = self.g.dot(&d);
            // step guess carried over from the previous iteration
            let alpha0 = if it == 1 {
                1.0 / self.g.norm().max(1.0)
            } else {
                (alpha_prev * slope_prev / slope * 2.0).min(1e10)
            };
            let Some((alpha, trial)) = self.armijo(&d, alpha0)? else {
                self.trace.status = Status::Stalled;
                return Ok(());
            };
            let g_old = self.g.clone();
            let x_old = self.state.params().clone();
            self.accept_params(&trial)?;
            let step = (self.state.params() - &x_old).norm();
            if self.finish_iteration(it, step, 0)? {
                return Ok(());
            }
            alpha_prev = alpha;
            slope_prev = slope;
            since_restart += 1;
            let g = &self.g;
            let beta = cg_beta(method, g, &g_old, &d);
            let beta = if !beta.is_finite() || beta < 0.0 || since_restart >= n {
                since_restart = 0;
                0.0
            } else {
                beta
            };
            d = -g + d * beta;
        }
        self.trace.status = Status::MaxIters;
        Ok(())
    }

    fn gauss_newton(&mut self) -> Result<(), OptimError> {
        if self.initial_check() {
            return Ok(());
        }
        for it in 1..=self.config.max_iters {
            let rhs = -&self.g;
            let sol = {
                let st = &self.state;
                conjugate_gradient(
                    |v| st.gauss_newton_apply(v),
                    &rhs,
                    self.config.inner_max_iters,
                    self.config.inner_tol,
                )
            };
            let d = if sol.x.norm() == 0.0 || sol.x.dot(&self.g) >= 0.0 {
                rhs.clone()
            } else {
                sol.x
            };
            let Some((_, trial)) = self.armijo(&d, 1.0)? else {
                self.trace.status = Status::Stalled;
                return Ok(());
            };
            let x_old = self.state.params().clone();
            self.accept_params(&trial)?;
            let step = (self.state.params() - &x_old).norm();
            if self.finish_iteration(it, step, sol.iterations)? {
                return Ok(());
            }
        }
        self.trace.status = Status::MaxIters;
        Ok(())
    }

    fn levenberg_marquardt(&mut self) -> Result<(), OptimError> {
        if self.initial_check() {
            return Ok(());
        }
        let nielsen = self.config.method == Method::LmN;
        let hg = self.state.gauss_newton_apply(&self.g);
        let scale = (self.g.dot(&hg) / self.g.dot(&self.g)).max(f64::MIN_POSITIVE);
        let mut lambda = self.config.lm_lambda_init * scale;
        let mut nu = 2.0;
        let mut rejected = 0usize;
        for it in 1..=self.config.max_iters {
            let (s, inner) = {
                let st = &self.state;
                let r = conjugate_gradient(
                    |v| st.gauss_newton_apply(v) + v * lambda,
                    &(-&self.g),
                    self.config.inner_max_iters,
                    self.config.inner_tol,
                );
                let s = if r.breakdown && r.x.norm() == 0.0 {
                    -&self.g / lambda
                } else {
                    r.x
                };
                (s, r.iterations)
            };
            let x = self.state.params().clone();
            let trial = &x + &s;
            let ft = self.trial_objective(&trial)?;
            let predicted = 0.5 * s.dot(&(&s * lambda - &self.g));
            let rho = (self.f - ft) / predicted;
            if ft.is_finite() && ft < self.f && predicted > 0.0 {
                self.accept_params(&trial)?;
                rejected = 0;
                if nielsen {
                    lambda *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
                    nu = 2.0;
                } else {
                    lambda *= 0.5;
                }
                if self.finish_iteration(it, s.norm(), inner)? {
                    return Ok(());
                }
            } else {
                rejected += 1;
                if nielsen {
                    lambda *= nu;
                    nu *= 2.0;
                } else {
                    lambda *= 2.0;
                }
                if !lambda.is_finite()
                    || rejected > 200
                    || s.norm() <= self.config.step_tol * (x.norm() + self.config.step_tol)
                {
                    self.trace.status = Status::Stalled;
                    return Ok(());
                }
            }
        }
        self.trace.status = Status::MaxIters;
        Ok(())
    }

    fn trust_region(&mut self) -> Result<(), OptimError> {
        if self.initial_check() {
            return Ok(());
        }
        let method = self.config.method;
        let mode = if method == Method::ScgFn {
            HessianMode::Full
        } else {
            HessianMode::GaussNewton
        };
        let mut radius = self.config.trust_radius_init * self.state.params().norm().max(1.0);
        for it in 1..=self.config.max_iters {
            let g = self.g.clone();
            let (s, inner) = {
                let op = self.state.hessian(mode);
                match method {
                    Method::TrDl => dogleg(|v| op.apply(v), &g, radius, self.config),
                    _ => {
                        let r = steihaug(
                            |v| op.apply(v),
                            &g,
                            radius,
                            self.config.inner_max_iters,
                            self.config.inner_tol,
                        );
                        (r.step, r.iterations)
                    }
                }
            };
            let s = if s.norm() == 0.0 || s.dot(&g) >= 0.0 {
                // inner breakdown: fall back to a steepest-descent step
                -&g * (radius / g.norm())
            } else {
                s
            };
            let hs = self.state.hessian(mode).apply(&s);
            let predicted = -(g.dot(&s) + 0.5 * s.dot(&hs));
            let x = self.state.params().clone();
            let trial = &x + &s;
            let ft = self.trial_objective(&trial)?;
            let rho = if predicted > 0.0 {
                (self.f - ft) / predicted
            } else {
                -1.0
            };
            let snorm = s.norm();
            if rho < 0.25 {
                radius *= 0.25;
            } else if rho > 0.75 && snorm >= 0.99 * radius {
                radius *= 2.0;
            }
            if ft.is_finite() && ft < self.f && rho > 1e-4 {
                self.accept_params(&trial)?;
                if self.finish_iteration(it, snorm, inner)? {
                    return Ok(());
                }
            } else if radius <= self.config.step_tol * (x.norm() + self.config.step_tol) {
                self.trace.status = Status::StepTolerance;
                return Ok(());
            }
        }
        self.trace.status = Status::MaxIters;
        Ok(())
    }
}

/// Dogleg step between the Cauchy point and the Gauss-Newton point.
fn dogleg(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    g: &DVector<f64>,
    radius: f64,
    config: &OptimizerConfig,
) -> (DVector<f64>, usize) {
    let rhs = -g;
    let sol = conjugate_gradient(&apply, &rhs, config.inner_max_iters, config.inner_tol);
    let gn = g.norm();
    let ghg = g.dot(&apply(g));
    let cauchy = if ghg > 0.0 {
        g * (-(gn * gn) / ghg)
    } else {
        g * (-radius / gn)
    };
    let newton_ok = !(sol.breakdown && sol.x.norm() == 0.0) && sol.x.dot(g) < 0.0;
    if newton_ok && sol.x.norm() <= radius {
        return (sol.x, sol.iterations);
    }
    if cauchy.norm() >= radius || !newton_ok {
        return (g * (-radius / gn), sol.iterations);
    }
    let p = &sol.x - &cauchy;
    let tau = boundary_step(&cauchy, &p, radius);
    (cauchy + p * tau, sol.iterations)
}
