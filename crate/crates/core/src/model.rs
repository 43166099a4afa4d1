//! The nonnegative CPD objective `F = ½‖X − ⟦A,B,C⟧‖²`, its factor
//! gradients, the Gram-structured preconditioners and the log-barrier
//! variant.
//!
//! Everything is evaluated through Gram/MTTKRP identities:
//! `F = ½‖X‖² + ½ Σ(A^TA ∗ H_A) − ⟨A, X_(1)(C⊙B)⟩` and
//! `∇_A F = A H_A − X_(1)(C⊙B)` with `H_A = (C^TC) ∗ (B^TB)`.

use crate::error::{CpdError, Result};
use crate::linalg::{right_pseudo_solve, right_solve_spd, Cholesky};
use crate::tensor::{hadamard_gram, mttkrp, DenseTensor, KruskalModel, Matrix};

/// Objective value together with every factor gradient.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub grads: Vec<Matrix>,
}

/// The objective restricted to one factor, all others frozen.
///
/// Holds the mode's MTTKRP and Gram Hadamard product, so evaluating the
/// objective or gradient for a trial factor costs `O(I_n R²)`.
#[derive(Debug, Clone)]
pub struct BlockObjective {
    mode: usize,
    mttkrp: Matrix,
    gram: Matrix,
    half_norm_sq: f64,
}

impl BlockObjective {
    pub fn new(t: &DenseTensor, model: &KruskalModel, mode: usize) -> Result<Self> {
        Ok(Self {
            mode,
            mttkrp: mttkrp(t, model, mode)?,
            gram: hadamard_gram(model, mode)?,
            half_norm_sq: 0.5 * t.norm_sq(),
        })
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    /// `H_n`, the Hessian block shared by every row of the factor.
    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn mttkrp(&self) -> &Matrix {
        &self.mttkrp
    }

    /// Objective with factor `mode` replaced by `factor`. Not clamped at 0.
    pub fn value(&self, factor: &Matrix) -> f64 {
        let fit = 0.5 * factor.gram().inner(&self.gram);
        self.half_norm_sq + fit - factor.inner(&self.mttkrp)
    }

    /// `f(A + D) − f(A) = ⟨D, ∇f(A)⟩ + ½⟨D^T D, H⟩` given `grad = ∇f(A)`.
    pub fn change(&self, grad: &Matrix, displacement: &Matrix) -> f64 {
        displacement.inner(grad) + 0.5 * displacement.gram().inner(&self.gram)
    }

    pub fn gradient(&self, factor: &Matrix) -> Matrix {
        factor
            .matmul(&self.gram)
            .expect("factor and gram agree on R")
            .sub(&self.mttkrp)
    }
}

fn check_shapes(t: &DenseTensor, model: &KruskalModel) -> Result<()> {
    if t.shape() != model.shape().as_slice() {
        return Err(CpdError::Shape(format!(
            "tensor shape {:?} does not match model shape {:?}",
            t.shape(),
            model.shape()
        )));
    }
    Ok(())
}

/// `F(A,B,C) = ½‖X − ⟦A,B,C⟧‖_F²` via the expanded form.
pub fn objective(t: &DenseTensor, model: &KruskalModel) -> Result<f64> {
    check_shapes(t, model)?;
    let block = BlockObjective::new(t, model, 0)?;
    Ok(block.value(model.factor(0)).max(0.0))
}

/// `∇_{A^(mode)} F = A^(mode) H_mode − X_(mode) KR_mode`.
pub fn gradient(t: &DenseTensor, model: &KruskalModel, mode: usize) -> Result<Matrix> {
    check_shapes(t, model)?;
    let block = BlockObjective::new(t, model, mode)?;
    Ok(block.gradient(model.factor(mode)))
}

pub fn evaluate(t: &DenseTensor, model: &KruskalModel) -> Result<ObjectiveEval> {
    check_shapes(t, model)?;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(model.order());
    for mode in 0..model.order() {
        let block = BlockObjective::new(t, model, mode)?;
        if mode == 0 {
            value = block.value(model.factor(0)).max(0.0);
        }
        grads.push(block.gradient(model.factor(mode)));
    }
    Ok(ObjectiveEval { value, grads })
}

/// Ridge added to a Gram preconditioner.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// `1e-10 · trace(P) / R`.
    #[default]
    Auto,
    Fixed(f64),
}


impl Ridge {
    pub fn resolve(self, gram: &Matrix) -> f64 {
        match self {
            Ridge::Auto => 1e-10 * gram.trace() / gram.rows() as f64,
            Ridge::Fixed(d) => d,
        }
    }
}

/// `P + δI` for one factor, where `P` is the Hessian block `H_mode`.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    pub mode: usize,
    pub gram: Matrix,
    pub ridge: f64,
}

impl Preconditioner {
    pub fn new(mode: usize, gram: Matrix, ridge: f64) -> Result<Self> {
        if gram.rows() != gram.cols() {
            return Err(CpdError::Shape("preconditioner must be square".into()));
        }
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(CpdError::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
        }
        Ok(Self { mode, gram, ridge })
    }

    pub fn for_model(model: &KruskalModel, mode: usize, ridge: Ridge) -> Result<Self> {
        let gram = hadamard_gram(model, mode)?;
        let delta = ridge.resolve(&gram);
        Self::new(mode, gram, delta)
    }

    /// The regularized system matrix `P + δI`.
    pub fn system(&self) -> Matrix {
        let mut s = self.gram.clone();
        for i in 0..s.rows() {
            s[(i, i)] += self.ridge;
        }
        s
    }
}

/// `grad · (P + δI)^{-1}`, the matrix form of `H^{-1} vec(grad)` for
/// `H = P ⊗ I`.
///
/// With `δ = 0` a failed factorization is an error; with `δ > 0` it falls
/// back to a minimum-norm pseudo-solve.
pub fn precondition(grad: &Matrix, p: &Preconditioner) -> Result<Matrix> {
    if grad.cols() != p.gram.rows() {
        return Err(CpdError::Shape(format!(
            "gradient has {} columns, preconditioner is {}x{}",
            grad.cols(),
            p.gram.rows(),
            p.gram.rows()
        )));
    }
    let system = p.system();
    match right_solve_spd(grad, &system) {
        Ok(m) => Ok(m),
        Err(()) if p.ridge > 0.0 => Ok(right_pseudo_solve(grad, &system)),
        Err(()) => Err(CpdError::SingularPreconditioner { mode: p.mode }),
    }
}

/// Barrier weight `γ` of `F̃ = F − γ Σ log(entries)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams {
    pub gamma: f64,
}

impl BarrierParams {
    /// `γ = 0` is accepted and reduces every barrier routine to the plain one.
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(CpdError::InvalidArgument(format!("barrier weight must be >= 0, got {gamma}")));
        }
        Ok(Self { gamma })
    }
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self { gamma: 1e-3 }
    }
}

fn check_interior(model: &KruskalModel) -> Result<()> {
    for (n, f) in model.factors().iter().enumerate() {
        if let Some(i) = f.data().iter().position(|&v| !(v > 0.0)) {
            return Err(CpdError::Domain(format!(
                "factor {n} entry {i} is {} (barrier needs strictly positive entries)",
                f.data()[i]
            )));
        }
    }
    Ok(())
}

/// `Σ log(entries)` over every factor.
pub fn log_barrier_sum(model: &KruskalModel) -> Result<f64> {
    check_interior(model)?;
    Ok(model
        .factors()
        .iter()
        .flat_map(|f| f.data().iter())
        .map(|v| v.ln())
        .sum())
}

/// `F̃ = F − γ Σ log(entries)`.
pub fn barrier_objective(t: &DenseTensor, model: &KruskalModel, bp: BarrierParams) -> Result<f64> {
    let g = log_barrier_sum(model)?;
    Ok(objective(t, model)? - bp.gamma * g)
}

/// `∇F̃ = ∇F − γ (1 ⊘ A)`.
pub fn barrier_gradient(
    t: &DenseTensor,
    model: &KruskalModel,
    mode: usize,
    bp: BarrierParams,
) -> Result<Matrix> {
    check_interior(model)?;
    let g = gradient(t, model, mode)?;
    Ok(add_barrier_term(&g, model.factor(mode), bp))
}

pub(crate) fn add_barrier_term(grad: &Matrix, factor: &Matrix, bp: BarrierParams) -> Matrix {
    let mut out = grad.clone();
    if bp.gamma != 0.0 {
        for (o, &a) in out.data_mut().iter_mut().zip(factor.data()) {
            *o -= bp.gamma / a;
        }
    }
    out
}

/// Applies `H̃^{-1}` with `H̃ = (P + δI) ⊗ I + γ diag(1 ⊘ a²)`.
///
/// The Kronecker structure decouples the system into one R×R solve per
/// row `i`: `(P + δI + γ diag(1 ⊘ A[i,:]²)) y_i = grad[i,:]`.
pub fn barrier_precondition(
    grad: &Matrix,
    p: &Preconditioner,
    factor: &Matrix,
    bp: BarrierParams,
) -> Result<Matrix> {
    if bp.gamma == 0.0 {
        return precondition(grad, p);
    }
    if (grad.rows(), grad.cols()) != (factor.rows(), factor.cols()) || grad.cols() != p.gram.rows() {
        return Err(CpdError::Shape("barrier preconditioner shapes disagree".into()));
    }
    if factor.data().iter().any(|&v| !(v > 0.0)) {
        return Err(CpdError::Domain("barrier preconditioner needs positive entries".into()));
    }
    let base = p.system();
    let r = grad.cols();
    let mut out = Matrix::zeros(grad.rows(), r);
    let mut rhs = vec![0.0; r];
    for i in 0..grad.rows() {
        let mut s = base.clone();
        for c in 0..r {
            let a = factor[(i, c)];
            s[(c, c)] += bp.gamma / (a * a);
            rhs[c] = grad[(i, c)];
        }
        let chol = Cholesky::factor(&s).ok_or(CpdError::SingularRow { mode: p.mode, row: i })?;
        chol.solve_in_place(&mut rhs);
        for c in 0..r {
            out[(i, c)] = rhs[c];
        }
    }
    Ok(out)
}

/// `‖x − [x − g]_+‖_max`, zero exactly at a KKT point of the block.
pub fn kkt_residual(factor: &Matrix, grad: &Matrix) -> f64 {
    factor
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| (x - (x - g).max(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Per-factor KKT residuals of the unpreconditioned problem.
pub fn kkt_residuals(t: &DenseTensor, model: &KruskalModel) -> Result<Vec<f64>> {
    let eval = evaluate(t, model)?;
    Ok(eval
        .grads
        .iter()
        .zip(model.factors())
        .map(|(g, f)| kkt_residual(f, g))
        .collect())
}
