//! Discrete-time projection networks: the fully explicit map, the
//! Gauss–Seidel sweep with Armijo backtracking and the semi-implicit map,
//! plus the step-size stability diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{CpdError, Result};
use crate::flow::projected_rhs;
use crate::model::{
    evaluate, kkt_residual, objective, precondition, BlockObjective, Preconditioner, Ridge,
};
use crate::tensor::{DenseTensor, KruskalModel, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DtpnnVariant {
    Explicit,
    Armijo,
    SemiImplicit,
}

/// Which closed form the semi-implicit map uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SemiImplicitForm {
    /// `(x + λ[x − g]_+) / (1 + λ)`, the exact rearrangement of the implicit update.
    #[default]
    Corrected,
    /// `(x + [x − g]_+) / (1 + λ)`, fixed points only when `λ = 1`.
    Printed,
}

/// Sufficient-decrease constants: accept when
/// `f(x + λd) − f(x) < α λ ∇f^T d`, else `λ ← βλ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmijoParams {
    pub alpha: f64,
    pub beta: f64,
    pub max_shrinks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self { alpha: 1e-4, beta: 0.5, max_shrinks: 60 }
    }
}

impl ArmijoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(CpdError::InvalidArgument(format!(
                "armijo constants must lie in (0,1): alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DtpnnState {
    pub model: KruskalModel,
    /// Step per factor; the Armijo sweep restarts from these each iteration.
    pub lambdas: Vec<f64>,
    pub armijo: ArmijoParams,
    pub iter: usize,
    /// Objective at the start and after every iteration.
    pub objective_history: Vec<f64>,
    pub preconditioned: bool,
    pub ridge: Ridge,
    /// KKT tolerance under which a stalled block counts as converged.
    pub tol: f64,
    pub semi_form: SemiImplicitForm,
}

impl DtpnnState {
    /// `λ = 1` per factor, default Armijo constants, no preconditioning.
    pub fn new(model: KruskalModel) -> Self {
        let n = model.order();
        Self {
            model,
            lambdas: vec![1.0; n],
            armijo: ArmijoParams::default(),
            iter: 0,
            objective_history: Vec::new(),
            preconditioned: false,
            ridge: Ridge::Auto,
            tol: 1e-6,
            semi_form: SemiImplicitForm::Corrected,
        }
    }

    pub fn with_lambdas(mut self, lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.len() != self.model.order() || lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(CpdError::InvalidArgument(format!(
                "need {} positive step sizes, got {lambdas:?}",
                self.model.order()
            )));
        }
        self.lambdas = lambdas;
        Ok(self)
    }

    pub fn with_preconditioning(mut self, on: bool, ridge: Ridge) -> Self {
        self.preconditioned = on;
        self.ridge = ridge;
        self
    }

    pub fn with_armijo(mut self, armijo: ArmijoParams) -> Result<Self> {
        armijo.validate()?;
        self.armijo = armijo;
        Ok(self)
    }

    pub fn with_semi_form(mut self, form: SemiImplicitForm) -> Self {
        self.semi_form = form;
        self
    }

    fn seed_history(&mut self, t: &DenseTensor) -> Result<()> {
        if self.objective_history.is_empty() {
            let f0 = BlockObjective::new(t, &self.model, 0)?.value(self.model.factor(0));
            self.objective_history.push(f0);
        }
        Ok(())
    }

    fn finish_iteration(&mut self, value: f64) -> Result<()> {
        self.iter += 1;
        if !self.model.is_finite() || !value.is_finite() {
            return Err(CpdError::Divergence { iter: self.iter });
        }
        self.objective_history.push(value);
        Ok(())
    }
}

fn check_unit_steps(s: &DtpnnState) -> Result<()> {
    if s.lambdas.iter().any(|&l| l > 1.0) {
        return Err(CpdError::InvalidArgument(format!(
            "explicit steps need 0 < λ <= 1, got {:?}",
            s.lambdas
        )));
    }
    Ok(())
}

/// `x ← x + λ(−x + [x − ∇f]_+)` for every factor from the same snapshot.
pub fn step_explicit(t: &DenseTensor, s: &mut DtpnnState) -> Result<()> {
    check_unit_steps(s)?;
    s.seed_history(t)?;
    let rhs: Vec<Matrix> = (0..s.model.order())
        .map(|n| projected_rhs(t, &s.model, n, s.preconditioned, s.ridge))
        .collect::<Result<_>>()?;
    for (n, r) in rhs.iter().enumerate() {
        let lambda = s.lambdas[n];
        for (x, &d) in s.model.factor_mut(n).data_mut().iter_mut().zip(r.data()) {
            *x += lambda * d;
        }
    }
    let f = objective(t, &s.model)?;
    s.finish_iteration(f)
}

/// Semi-implicit map from the same snapshot for every factor.
pub fn step_semi_implicit(t: &DenseTensor, s: &mut DtpnnState) -> Result<()> {
    s.seed_history(t)?;
    let targets: Vec<Matrix> = (0..s.model.order())
        .map(|n| projected_rhs(t, &s.model, n, s.preconditioned, s.ridge))
        .collect::<Result<_>>()?;
    for (n, rhs) in targets.iter().enumerate() {
        let lambda = s.lambdas[n];
        let weight = match s.semi_form {
            SemiImplicitForm::Corrected => lambda,
            SemiImplicitForm::Printed => 1.0,
        };
        for (x, &d) in s.model.factor_mut(n).data_mut().iter_mut().zip(rhs.data()) {
            // rhs = [x − g]_+ − x
            let projected = (*x + d).max(0.0);
            *x = (*x + weight * projected) / (1.0 + lambda);
        }
    }
    let f = objective(t, &s.model)?;
    s.finish_iteration(f)
}

/// Per-iteration record of the Gauss–Seidel sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Objective after each block, in update order.
    pub block_values: Vec<f64>,
    /// Number of `λ ← βλ` shrinks per block.
    pub shrinks: Vec<usize>,
    /// Accepted step per block (0 when the block was left unchanged).
    pub accepted_steps: Vec<f64>,
    /// Blocks that fell back to the plain projected-gradient direction.
    pub fallback_blocks: Vec<usize>,
    /// Blocks that exhausted the shrinks with KKT residual below tol.
    pub converged_blocks: Vec<usize>,
}

/// One Gauss–Seidel sweep; each block backtracks on its own step until the
/// sufficient-decrease condition holds against the current objective.
///
/// The block direction `d = [x − g̃]_+ − x` is fixed and only scaled. When
/// the preconditioned direction is not a descent direction, or backtracking
/// along it fails, the plain gradient direction is tried next.
pub fn step_gauss_seidel_armijo(t: &DenseTensor, s: &mut DtpnnState) -> Result<StepReport> {
    check_unit_steps(s)?;
    s.armijo.validate()?;
    s.seed_history(t)?;
    let mut current = *s.objective_history.last().expect("seeded");
    let mut report = StepReport::default();
    for n in 0..s.model.order() {
        let block = BlockObjective::new(t, &s.model, n)?;
        let x = s.model.factor(n).clone();
        let g = block.gradient(&x);
        let plain = direction(&x, &g);
        let mut candidates = Vec::with_capacity(2);
        if s.preconditioned {
            let p = Preconditioner::new(n, block.gram().clone(), s.ridge.resolve(block.gram()))?;
            let pre = direction(&x, &precondition(&g, &p)?);
            if g.inner(&pre) < 0.0 {
                candidates.push(pre);
            } else if pre.max_abs() > 0.0 {
                report.fallback_blocks.push(n);
            }
        }
        if plain.max_abs() > 0.0 && g.inner(&plain) < 0.0 {
            candidates.push(plain);
        }
        if candidates.is_empty() {
            report.block_values.push(current);
            report.shrinks.push(0);
            report.accepted_steps.push(0.0);
            continue;
        }
        let mut accepted = None;
        for (k, dir) in candidates.iter().enumerate() {
            if k > 0 {
                report.fallback_blocks.push(n);
            }
            accepted = backtrack(&block, &x, &g, dir, s.lambdas[n], &s.armijo);
            if accepted.is_some() {
                break;
            }
        }
        match accepted {
            Some((trial, change, shrink, lambda)) => {
                s.model.set_factor(n, trial)?;
                current += change;
                report.shrinks.push(shrink);
                report.accepted_steps.push(lambda);
            }
            None if kkt_residual(&x, &g) < s.tol => {
                report.converged_blocks.push(n);
                report.shrinks.push(s.armijo.max_shrinks);
                report.accepted_steps.push(0.0);
            }
            None => return Err(CpdError::Stall { iter: s.iter, block: n }),
        }
        report.block_values.push(current);
    }
    s.finish_iteration(current)?;
    Ok(report)
}

/// Shrinks `λ` until `f(x + λd) − f(x) < α λ g^T(x_new − x)`.
///
/// The change is evaluated as `⟨D, g⟩ + ½⟨D^T D, H⟩` with `D = x_new − x`,
/// which equals `f(x_new) − f(x)` for the block quadratic without the
/// cancellation of the expanded objective. Returns the trial, the change,
/// the shrink count and the accepted step.
fn backtrack(
    block: &BlockObjective,
    x: &Matrix,
    g: &Matrix,
    dir: &Matrix,
    lambda0: f64,
    armijo: &ArmijoParams,
) -> Option<(Matrix, f64, usize, f64)> {
    let mut lambda = lambda0;
    for shrink in 0..=armijo.max_shrinks {
        let mut trial = x.clone();
        for (v, &d) in trial.data_mut().iter_mut().zip(dir.data()) {
            *v += lambda * d;
        }
        let disp = trial.sub(x);
        let slope = g.inner(&disp);
        let change = block.change(g, &disp);
        if change < armijo.alpha * lambda * slope {
            return Some((trial, change, shrink, lambda));
        }
        lambda *= armijo.beta;
    }
    None
}

fn direction(x: &Matrix, g: &Matrix) -> Matrix {
    let mut d = g.clone();
    for (v, &xv) in d.data_mut().iter_mut().zip(x.data()) {
        *v = (xv - *v).max(0.0) - xv;
    }
    d
}

/// Dispatches one iteration of the requested variant.
pub fn step(t: &DenseTensor, s: &mut DtpnnState, variant: DtpnnVariant) -> Result<()> {
    match variant {
        DtpnnVariant::Explicit => step_explicit(t, s),
        DtpnnVariant::Armijo => step_gauss_seidel_armijo(t, s).map(|_| ()),
        DtpnnVariant::SemiImplicit => step_semi_implicit(t, s),
    }
}

/// Per-entry effective steps `γ` with `x_after = x_before − γ ∘ ∇f`.
///
/// `γ = λ` where `x − ∇f` lies inside `[lower, upper]`; clamped entries get
/// `γ = (x_before − x_after) / ∇f`.
pub fn effective_step_map(
    before: &KruskalModel,
    after: &KruskalModel,
    grads: &[Matrix],
    lambdas: &[f64],
    lower: f64,
    upper: f64,
) -> Result<Vec<Matrix>> {
    if before.shape() != after.shape() || grads.len() != before.order() || lambdas.len() != before.order() {
        return Err(CpdError::Shape("step map inputs disagree".into()));
    }
    let mut out = Vec::with_capacity(grads.len());
    for (n, g) in grads.iter().enumerate() {
        let (xb, xa) = (before.factor(n), after.factor(n));
        let mut gamma = Matrix::zeros(g.rows(), g.cols());
        for (i, (gm, ((&x0, &x1), &gv))) in gamma
            .data_mut()
            .iter_mut()
            .zip(xb.data().iter().zip(xa.data()).zip(g.data()))
            .enumerate()
        {
            let q = x0 - gv;
            *gm = if (lower..=upper).contains(&q) {
                lambdas[n]
            } else if gv == 0.0 {
                return Err(CpdError::Inconsistent { mode: n, index: i });
            } else {
                (x0 - x1) / gv
            };
        }
        out.push(gamma);
    }
    Ok(out)
}

/// Stability interval `max(0, 1 − √c) ≤ λ ≤ 1 + √c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBound {
    pub c: f64,
    /// NaN when `c < 0` (empty interval).
    pub lower: f64,
    pub upper: f64,
}

impl StepBound {
    pub fn from_c(c: f64) -> Self {
        if c >= 0.0 {
            let r = c.sqrt();
            Self { c, lower: (1.0 - r).max(0.0), upper: 1.0 + r }
        } else {
            Self { c, lower: f64::NAN, upper: f64::NAN }
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.c >= 0.0)
    }

    pub fn contains(&self, lambda: f64) -> bool {
        !self.is_empty() && self.lower <= lambda && lambda <= self.upper
    }
}

/// `c = (1 − 2‖γ ∘ ∇f‖²) / ‖x − [x − ∇f]_+‖²` over all stacked factors.
pub fn bound_from_parts(model: &KruskalModel, grads: &[Matrix], gammas: &[Matrix]) -> Result<StepBound> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (n, (g, gm)) in grads.iter().zip(gammas).enumerate() {
        for ((&x, &gv), &gam) in model.factor(n).data().iter().zip(g.data()).zip(gm.data()) {
            num += (gam * gv) * (gam * gv);
            let r = x - (x - gv).max(0.0);
            den += r * r;
        }
    }
    if den == 0.0 {
        return Err(CpdError::Equilibrium);
    }
    Ok(StepBound::from_c((1.0 - 2.0 * num) / den))
}

/// Bound for one explicit unpreconditioned step from the state's model with
/// its current `λ`s.
pub fn step_size_bound(t: &DenseTensor, s: &DtpnnState) -> Result<StepBound> {
    let eval = evaluate(t, &s.model)?;
    let mut after = s.model.clone();
    for (n, g) in eval.grads.iter().enumerate() {
        let lambda = s.lambdas[n];
        for (x, &gv) in after.factor_mut(n).data_mut().iter_mut().zip(g.data()) {
            *x += lambda * ((*x - gv).max(0.0) - *x);
        }
    }
    let gammas = effective_step_map(&s.model, &after, &eval.grads, &s.lambdas, 0.0, f64::INFINITY)?;
    bound_from_parts(&s.model, &eval.grads, &gammas)
}

/// `L_k = ‖x_k − x̂‖²` over stacked factors.
pub fn lyapunov_trace(iterates: &[KruskalModel], equilibrium: &KruskalModel) -> Vec<f64> {
    let target = equilibrium.flatten();
    iterates
        .iter()
        .map(|m| {
            m.flatten()
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect()
}
