//! Reduced objective, Gauss–Newton–Krylov iterations and the coarse-to-fine driver.
//!
//! Sinograms are stored in pixel units (see [`crate::radon`]); the data term is evaluated
//! on line integrals in domain units, i.e. on `h_X * K f`, so the identity curvature
//! `h_Y I` of the distance has the same meaning on every level.

use crate::distance::{evaluate, DistanceKind};
use crate::error::{check_len, Error, Result};
use crate::flow::{prolong_velocity, FlowTrace, Integrator, VelocityField};
use crate::grid::{restrict_image, ScalarField};
use crate::radon::{radon_adjoint, radon_forward, restrict_sinogram, Sinogram};
use crate::regularizer::{reg_diag, reg_eval, reg_hessvec, RegConfig, RegInverse};
use crate::solution_map::{apply_with_trace, solmap_jacvec, solmap_jacvec_transpose, trace_for, PdeKind};

/// Approximation of the Gauss–Newton operator used to precondition PCG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preconditioner {
    /// Diagonal of the regulariser Hessian plus the shift.
    Jacobi,
    /// Inverse of the regulariser Hessian plus the shift, applied in the cosine basis.
    #[default]
    Spectral,
}

impl std::str::FromStr for Preconditioner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" => Ok(Preconditioner::Jacobi),
            "spectral" => Ok(Preconditioner::Spectral),
            _ => Err(Error::InvalidInput(format!("unknown preconditioner '{s}'"))),
        }
    }
}

impl std::fmt::Display for Preconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preconditioner::Jacobi => "jacobi",
            Preconditioner::Spectral => "spectral",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub max_gn_iters: usize,
    /// Relative to the gradient norm at the start of the run.
    pub grad_tol: f64,
    /// Relative objective change between accepted iterates.
    pub obj_tol: f64,
    /// Step norm relative to `1 + |v|`.
    pub step_tol: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_ls_trials: usize,
    pub pcg_max_iters: usize,
    pub pcg_tol: f64,
    /// Multiplier of the PSD shift `h_t h^n (1 + mean reg diagonal)`.
    pub eps_scale: f64,
    pub preconditioner: Preconditioner,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_gn_iters: 20,
            grad_tol: 1e-4,
            obj_tol: 1e-6,
            step_tol: 1e-6,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_ls_trials: 12,
            pcg_max_iters: 50,
            pcg_tol: 1e-2,
            eps_scale: 1e-8,
            preconditioner: Preconditioner::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.grad_tol, self.obj_tol, self.step_tol, self.armijo_c, self.pcg_tol, self.eps_scale];
        if positive.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidInput("optimizer tolerances must be positive".into()));
        }
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.armijo_c) || !unit(self.backtrack) || !unit(self.pcg_tol) {
            return Err(Error::InvalidInput("optimizer factors must lie in (0, 1)".into()));
        }
        if self.max_ls_trials == 0 || self.pcg_max_iters == 0 {
            return Err(Error::InvalidInput("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Everything that defines `J` on one level.
#[derive(Debug, Clone)]
pub struct Problem {
    pub kind: PdeKind,
    pub distance: DistanceKind,
    pub template: ScalarField,
    pub data: Sinogram,
    pub reg: RegConfig,
    /// Runge–Kutta steps `N_t`.
    pub steps: usize,
}

impl Problem {
    /// Checks shapes; fits the template spline when the transport map needs it.
    pub fn new(
        kind: PdeKind,
        distance: DistanceKind,
        template: ScalarField,
        data: Sinogram,
        reg: RegConfig,
        steps: usize,
    ) -> Result<Self> {
        let grid = *template.grid();
        if reg.grid.dim() != grid.dim() || reg.grid.m() != grid.m() {
            return Err(Error::InvalidGrid("regulariser and template grids differ".into()));
        }
        if data.geometry().level() != grid.level() {
            return Err(Error::InvalidInput(format!(
                "sinogram level {} does not match template level {}",
                data.geometry().level(),
                grid.level()
            )));
        }
        let slices = if grid.dim() == 3 { grid.m() } else { 1 };
        check_len("sinogram slices", slices, data.slices())?;
        if steps == 0 {
            return Err(Error::InvalidInput("number of time steps must be at least 1".into()));
        }
        let template = if kind == PdeKind::Transport && template.coeffs().is_none() {
            template.fitted()?
        } else {
            template
        };
        Ok(Self {
            kind,
            distance,
            template,
            data,
            reg,
            steps,
        })
    }

    /// The same problem one level down.
    pub fn restrict(&self) -> Result<Self> {
        let template = restrict_image(&self.template)?;
        let data = restrict_sinogram(&self.data)?;
        let reg = self.reg.on_grid(*template.grid());
        Self::new(self.kind, self.distance, template, data, reg, self.steps)
    }

    fn unit_scale(&self) -> f64 {
        self.template.grid().h()
    }

    fn check_velocity(&self, v: &[f64]) -> Result<()> {
        check_len("velocity dofs", VelocityField::len_for(&self.reg.grid, self.reg.m_t), v.len())
    }

    /// Deformed template `f(v)`.
    pub fn deform(&self, v: &VelocityField) -> Result<ScalarField> {
        self.check_velocity(v.dofs())?;
        let trace = trace_for(self.kind, v, self.steps, Integrator::Rk4)?;
        apply_with_trace(self.kind, &trace, &self.template)
    }

    fn velocity(&self, v: &[f64]) -> Result<VelocityField> {
        self.check_velocity(v)?;
        VelocityField::new(self.reg.grid, self.reg.m_t, v.to_vec())
    }

    /// `(J, D, R)` without derivatives.
    pub fn value(&self, v: &[f64]) -> Result<(f64, f64, f64)> {
        let vf = self.velocity(v)?;
        let trace = trace_for(self.kind, &vf, self.steps, Integrator::Rk4)?;
        let fv = apply_with_trace(self.kind, &trace, &self.template)?;
        let (d, _) = self.data_term(&fv, false)?;
        let (r, _) = reg_eval(&self.reg, v)?;
        Ok((d + r, d, r))
    }

    /// Data term and, optionally, its gradient with respect to the image.
    fn data_term(&self, fv: &ScalarField, grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let s = self.unit_scale();
        let kf = radon_forward(fv, self.data.geometry());
        let x: Vec<f64> = kf.samples().iter().map(|a| s * a).collect();
        let y: Vec<f64> = self.data.samples().iter().map(|a| s * a).collect();
        let e = evaluate(self.distance, &x, &y, self.data.geometry().h_y())?;
        if !e.value.is_finite() {
            return Err(Error::Numerical("data term is not finite".into()));
        }
        if !grad {
            return Ok((e.value, None));
        }
        let gs: Vec<f64> = e.grad.iter().map(|g| s * g).collect();
        let back = radon_adjoint(&Sinogram::new(self.data.geometry().clone(), kf.slices(), gs)?, fv.grid())?;
        Ok((e.value, Some(back.into_samples())))
    }

    /// Value, gradient and the Gauss–Newton operator at `v`.
    pub fn objective(&self, v: &[f64], cfg: &OptimizerConfig) -> Result<Objective<'_>> {
        let vf = self.velocity(v)?;
        let trace = trace_for(self.kind, &vf, self.steps, Integrator::Rk4)?;
        let fv = apply_with_trace(self.kind, &trace, &self.template)?;
        let (d, dgrad) = self.data_term(&fv, true)?;
        let (r, mut grad) = reg_eval(&self.reg, v)?;
        let gd = solmap_jacvec_transpose(self.kind, &trace, &self.template, &dgrad.expect("requested"))?;
        grad.iter_mut().zip(&gd).for_each(|(a, b)| *a += b);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("gradient is not finite".into()));
        }
        let diag = reg_diag(&self.reg);
        let mean_diag = diag.iter().sum::<f64>() / diag.len() as f64;
        let eps = cfg.eps_scale * self.reg.cell_weight() * (1.0 + mean_diag);
        let precond = match cfg.preconditioner {
            Preconditioner::Jacobi => Precond::Jacobi(diag.iter().map(|x| x + eps).collect()),
            Preconditioner::Spectral => Precond::Spectral(RegInverse::new(&self.reg, eps)),
        };
        let s = self.unit_scale();
        Ok(Objective {
            problem: self,
            trace,
            j: d + r,
            d,
            r,
            grad,
            eps,
            precond,
            data_weight: s * s * self.data.geometry().h_y(),
        })
    }
}

enum Precond {
    Jacobi(Vec<f64>),
    Spectral(RegInverse),
}

/// Objective state at one iterate.
pub struct Objective<'p> {
    problem: &'p Problem,
    trace: FlowTrace,
    pub j: f64,
    pub d: f64,
    pub r: f64,
    pub grad: Vec<f64>,
    pub eps: f64,
    precond: Precond,
    data_weight: f64,
}

impl Objective<'_> {
    /// `J_f^T K^T (h_Y I) K J_f w + R'' w + eps w`.
    pub fn hessvec(&self, w: &[f64]) -> Result<Vec<f64>> {
        let p = self.problem;
        let grid = *p.template.grid();
        let jw = solmap_jacvec(p.kind, &self.trace, &p.template, w)?;
        let kjw = radon_forward(&ScalarField::new(grid, jw)?, p.data.geometry());
        let slices = kjw.slices();
        let weighted: Vec<f64> = kjw.into_samples().into_iter().map(|x| self.data_weight * x).collect();
        let back = radon_adjoint(&Sinogram::new(p.data.geometry().clone(), slices, weighted)?, &grid)?;
        let mut out = solmap_jacvec_transpose(p.kind, &self.trace, &p.template, back.samples())?;
        let rw = reg_hessvec(&p.reg, w)?;
        for ((o, r), x) in out.iter_mut().zip(&rw).zip(w) {
            *o += r + self.eps * x;
        }
        Ok(out)
    }

    /// Applies the configured approximation of the inverse operator.
    pub fn precondition(&self, r: &[f64]) -> Result<Vec<f64>> {
        match &self.precond {
            Precond::Jacobi(d) => jacobi(d)(r),
            Precond::Spectral(inv) => inv.apply(r),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PcgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
    /// The CG iterate was not a descent direction and was replaced.
    pub fallback: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Diagonal (Jacobi) preconditioner as a closure.
pub fn jacobi(diag: &[f64]) -> impl Fn(&[f64]) -> Result<Vec<f64>> + '_ {
    move |r| {
        check_len("preconditioner", diag.len(), r.len())?;
        Ok(r.iter().zip(diag).map(|(a, d)| a / d).collect())
    }
}

/// Preconditioned CG for `H x = rhs`, started at zero; `precond` applies `M^{-1}`.
///
/// Returns the iterate with the smallest residual. `rhs` is the negative gradient, so the
/// result must satisfy `<x, rhs> > 0`; otherwise the preconditioned steepest-descent
/// direction is returned instead.
pub fn pcg(
    mut hessvec: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    rhs: &[f64],
    precond: impl Fn(&[f64]) -> Result<Vec<f64>>,
    tol: f64,
    maxit: usize,
) -> Result<PcgResult> {
    let n = rhs.len();
    let rhs_norm = norm(rhs);
    if rhs_norm == 0.0 {
        return Ok(PcgResult {
            x: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
            fallback: false,
        });
    }
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = precond(&r)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    if !(rz > 0.0) {
        return Err(Error::Numerical("preconditioner is not positive definite".into()));
    }
    let steepest = z.clone();
    let mut best = (x.clone(), 1.0);
    let mut iterations = 0;
    for it in 1..=maxit {
        let hp = hessvec(&p)?;
        let php = dot(&p, &hp);
        if !php.is_finite() {
            return Err(Error::Numerical("non-finite curvature in PCG".into()));
        }
        if php <= 0.0 {
            break;
        }
        let alpha = rz / php;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        iterations = it;
        let rel = norm(&r) / rhs_norm;
        if !rel.is_finite() {
            return Err(Error::Numerical("non-finite residual in PCG".into()));
        }
        if rel < best.1 {
            best = (x.clone(), rel);
        }
        if rel <= tol {
            break;
        }
        z = precond(&r)?;
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let (mut x, rel_residual) = best;
    let mut fallback = false;
    if !(dot(&x, rhs) > 0.0) {
        x = steepest;
        fallback = true;
    }
    Ok(PcgResult {
        x,
        iterations,
        rel_residual,
        fallback,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    ObjectiveTolerance,
    StepTolerance,
    MaxIterations,
    LineSearchFailed,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::GradientTolerance => "grad_tol",
            StopReason::ObjectiveTolerance => "obj_tol",
            StopReason::StepTolerance => "step_tol",
            StopReason::MaxIterations => "max_iters",
            StopReason::LineSearchFailed => "line_search_failed",
        })
    }
}

/// One line of the iteration log. Iteration 0 is the starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub level: u32,
    pub iter: usize,
    pub j: f64,
    pub d: f64,
    pub r: f64,
    /// Gradient norm at this iterate.
    pub grad_norm: f64,
    /// Step length and norm of the accepted step that produced this iterate.
    pub mu: f64,
    pub step_norm: f64,
    /// `<grad, dv>` at the previous iterate, for checking the Armijo condition.
    pub slope: f64,
    pub ls_trials: usize,
    pub pcg_iters: usize,
}

impl IterationRecord {
    pub const HEADER: &'static str = "level iter J D R |grad| mu pcg";

    pub fn log_line(&self) -> String {
        format!(
            "{} {} {:.10e} {:.10e} {:.10e} {:.6e} {:.6e} {}",
            self.level, self.iter, self.j, self.d, self.r, self.grad_norm, self.mu, self.pcg_iters
        )
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    pub history: Vec<IterationRecord>,
    pub stop: StopReason,
    pub v: VelocityField,
}

impl ObjectiveReport {
    pub fn last(&self) -> &IterationRecord {
        self.history.last().expect("history holds the starting point")
    }

    /// Accepted iterates obey `J_new <= J_old + c mu <grad, dv>` and never increase `J`.
    pub fn armijo_holds(&self, c: f64) -> bool {
        self.history.windows(2).all(|w| {
            let (a, b) = (&w[0], &w[1]);
            b.j <= a.j + c * b.mu * b.slope + 1e-14 * a.j.abs() && b.j <= a.j
        })
    }
}

/// Inexact Gauss–Newton with Armijo backtracking, starting from `v0`.
pub fn gauss_newton(v0: &VelocityField, problem: &Problem, cfg: &OptimizerConfig) -> Result<ObjectiveReport> {
    cfg.validate()?;
    problem.check_velocity(v0.dofs())?;
    let level = problem.template.grid().level();
    let mut v = v0.dofs().to_vec();
    let mut obj = problem.objective(&v, cfg)?;
    let mut gnorm = norm(&obj.grad);
    let g0 = gnorm;
    let mut history = vec![IterationRecord {
        level,
        iter: 0,
        j: obj.j,
        d: obj.d,
        r: obj.r,
        grad_norm: gnorm,
        mu: 0.0,
        step_norm: 0.0,
        slope: 0.0,
        ls_trials: 0,
        pcg_iters: 0,
    }];
    let mut stop = StopReason::MaxIterations;
    for iter in 1..=cfg.max_gn_iters {
        if gnorm == 0.0 || (iter > 1 && gnorm <= cfg.grad_tol * g0) {
            stop = StopReason::GradientTolerance;
            break;
        }
        let rhs: Vec<f64> = obj.grad.iter().map(|g| -g).collect();
        let sol = pcg(|w| obj.hessvec(w), &rhs, |r| obj.precondition(r), cfg.pcg_tol, cfg.pcg_max_iters)?;
        let dv = sol.x;
        let slope = dot(&obj.grad, &dv);

        let mut mu = 1.0;
        let mut accepted = None;
        let mut trials = 0;
        for _ in 0..cfg.max_ls_trials {
            trials += 1;
            let cand: Vec<f64> = v.iter().zip(&dv).map(|(a, b)| a + mu * b).collect();
            if let Ok((jc, _, _)) = problem.value(&cand) {
                if jc <= obj.j + cfg.armijo_c * mu * slope && jc <= obj.j {
                    accepted = Some(cand);
                    break;
                }
            }
            mu *= cfg.backtrack;
        }
        let Some(cand) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        let step_norm = mu * norm(&dv);
        let v_norm = norm(&v);
        let j_old = obj.j;
        v = cand;
        obj = problem.objective(&v, cfg)?;
        gnorm = norm(&obj.grad);
        history.push(IterationRecord {
            level,
            iter,
            j: obj.j,
            d: obj.d,
            r: obj.r,
            grad_norm: gnorm,
            mu,
            step_norm,
            slope,
            ls_trials: trials,
            pcg_iters: sol.iterations,
        });
        if (j_old - obj.j).abs() <= cfg.obj_tol * j_old.abs() {
            stop = StopReason::ObjectiveTolerance;
            break;
        }
        if step_norm <= cfg.step_tol * (1.0 + v_norm) {
            stop = StopReason::StepTolerance;
            break;
        }
        if gnorm <= cfg.grad_tol * g0 {
            stop = StopReason::GradientTolerance;
            break;
        }
    }
    Ok(ObjectiveReport {
        history,
        stop,
        v: VelocityField::new(problem.reg.grid, problem.reg.m_t, v)?,
    })
}

#[derive(Debug, Clone)]
pub struct MultilevelResult {
    pub field: ScalarField,
    pub velocity: VelocityField,
    /// Coarsest level first.
    pub reports: Vec<ObjectiveReport>,
}

/// Coarse-to-fine reconstruction. `finest` lives on level `k_max`; levels below are built
/// by restricting template and data. The first level starts from zero velocity.
pub fn multilevel_reconstruct(finest: &Problem, cfg: &OptimizerConfig, k_min: u32, k_max: u32) -> Result<MultilevelResult> {
    if finest.template.grid().level() != k_max {
        return Err(Error::InvalidInput(format!(
            "finest level {k_max} does not match template level {}",
            finest.template.grid().level()
        )));
    }
    if k_min > k_max || k_min == 0 {
        return Err(Error::InvalidInput(format!("invalid level range {k_min}..{k_max}")));
    }
    let mut levels = vec![finest.clone()];
    for _ in k_min..k_max {
        let next = levels.last().expect("nonempty").restrict()?;
        levels.push(next);
    }
    levels.reverse();

    let mut reports = Vec::with_capacity(levels.len());
    let mut v = VelocityField::zeros(levels[0].reg.grid, levels[0].reg.m_t);
    for (i, problem) in levels.iter().enumerate() {
        if i > 0 {
            v = prolong_velocity(&v, problem.reg.grid)?;
        }
        let report = gauss_newton(&v, problem, cfg)?;
        v = report.v.clone();
        reports.push(report);
    }
    let field = finest.deform(&v)?;
    Ok(MultilevelResult {
        field,
        velocity: v,
        reports,
    })
}
