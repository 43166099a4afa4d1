//! Continuous-time projection network for nonnegative CPD, integrated with
//! explicit Euler, and the interior log-barrier flow.
//!
//! Projected flow, per factor: `ε dA/dt = −A + [A − ∇_A F · P⁻¹]_+`.
//! Barrier flow: `ε dA/dt = −∇F̃ · H̃⁻¹` with no projection.

use serde::{Deserialize, Serialize};

use crate::error::{CpdError, Result};
use crate::model::{
    add_barrier_term, barrier_precondition, precondition, BarrierParams, BlockObjective,
    Preconditioner, Ridge,
};
use crate::tensor::{DenseTensor, KruskalModel, Matrix};

const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

/// Barrier weight `γ_k = gamma · decay^(k / every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarrierSchedule {
    pub gamma: f64,
    pub decay: f64,
    pub every: usize,
}

impl Default for BarrierSchedule {
    fn default() -> Self {
        Self { gamma: 1e-3, decay: 1.0, every: 100 }
    }
}

impl BarrierSchedule {
    pub fn at(&self, iter: usize) -> BarrierParams {
        let periods = iter.checked_div(self.every).unwrap_or(0);
        BarrierParams { gamma: self.gamma * self.decay.powi(periods as i32) }
    }
}

/// Mutable state of one flow integration.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub model: KruskalModel,
    /// One time constant per factor, all `> 0`.
    pub time_constants: Vec<f64>,
    /// Euler step `h > 0`.
    pub step: f64,
    /// Max-abs right-hand side seen by the last step.
    pub residual: f64,
    pub iter: usize,
    pub preconditioned: bool,
    pub ridge: Ridge,
    pub integrator: Integrator,
}

impl FlowState {
    /// Uniform `ε = 1`, `h = 0.5`, preconditioning on.
    pub fn new(model: KruskalModel) -> Self {
        let n = model.order();
        Self {
            model,
            time_constants: vec![1.0; n],
            step: 0.5,
            residual: f64::INFINITY,
            iter: 0,
            preconditioned: true,
            ridge: Ridge::Auto,
            integrator: Integrator::Euler,
        }
    }

    pub fn with_time_constants(mut self, eps: Vec<f64>, step: Option<f64>) -> Result<Self> {
        if eps.len() != self.model.order() {
            return Err(CpdError::InvalidArgument(format!(
                "{} time constants for an order-{} model",
                eps.len(),
                self.model.order()
            )));
        }
        if eps.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(CpdError::InvalidArgument("time constants must be > 0".into()));
        }
        let min_eps = eps.iter().copied().fold(f64::INFINITY, f64::min);
        let h = step.unwrap_or(0.5 * min_eps);
        if !(h > 0.0) || !h.is_finite() {
            return Err(CpdError::InvalidArgument(format!("step must be > 0, got {h}")));
        }
        self.time_constants = eps;
        self.step = h;
        Ok(self)
    }

    pub fn with_preconditioning(mut self, on: bool, ridge: Ridge) -> Self {
        self.preconditioned = on;
        self.ridge = ridge;
        self
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    fn min_time_constant(&self) -> f64 {
        self.time_constants.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Right-hand side `−A + [A − ∇F·P⁻¹]_+` for a single factor.
pub fn flow_rhs(t: &DenseTensor, s: &FlowState, mode: usize) -> Result<Matrix> {
    projected_rhs(t, &s.model, mode, s.preconditioned, s.ridge)
}

pub(crate) fn projected_rhs(
    t: &DenseTensor,
    model: &KruskalModel,
    mode: usize,
    preconditioned: bool,
    ridge: Ridge,
) -> Result<Matrix> {
    let block = BlockObjective::new(t, model, mode)?;
    let a = model.factor(mode);
    let mut g = block.gradient(a);
    if preconditioned {
        let p = Preconditioner::new(mode, block.gram().clone(), ridge.resolve(block.gram()))?;
        g = precondition(&g, &p)?;
    }
    let mut rhs = g;
    for (r, &x) in rhs.data_mut().iter_mut().zip(a.data()) {
        *r = (x - *r).max(0.0) - x;
    }
    Ok(rhs)
}

/// Right-hand sides of every factor, all from the current snapshot.
pub fn flow_rhs_all(t: &DenseTensor, s: &FlowState) -> Result<Vec<Matrix>> {
    (0..s.model.order()).map(|n| flow_rhs(t, s, n)).collect()
}

fn max_abs_all(ms: &[Matrix]) -> f64 {
    ms.iter().map(Matrix::max_abs).fold(0.0, f64::max)
}

fn apply_euler(model: &mut KruskalModel, rhs: &[Matrix], rates: impl Fn(usize) -> f64) {
    for (n, r) in rhs.iter().enumerate() {
        let rate = rates(n);
        for (x, &d) in model.factor_mut(n).data_mut().iter_mut().zip(r.data()) {
            *x += rate * d;
        }
    }
}

fn apply_projected(s: &mut FlowState, rhs: &[Matrix]) -> Result<()> {
    let h = s.step;
    let eps = s.time_constants.clone();
    apply_euler(&mut s.model, rhs, |n| h / eps[n]);
    s.iter += 1;
    if !s.model.is_finite() {
        return Err(CpdError::Divergence { iter: s.iter });
    }
    debug_assert!(s.model.is_nonnegative());
    Ok(())
}

/// One Euler step `A ← A + (h/ε)·rhs`, all factors from the same snapshot.
///
/// Requires `h ≤ min ε`, which makes the update a convex combination of
/// nonnegative points.
pub fn flow_step(t: &DenseTensor, s: &mut FlowState) -> Result<()> {
    if s.step > s.min_time_constant() {
        return Err(CpdError::InvalidArgument(format!(
            "step {} exceeds the smallest time constant {}",
            s.step,
            s.min_time_constant()
        )));
    }
    let rhs = flow_rhs_all(t, s)?;
    s.residual = max_abs_all(&rhs);
    apply_projected(s, &rhs)
}

/// Outcome of [`solve_to_equilibrium`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumReport {
    pub steps: usize,
    pub converged: bool,
    pub residual: f64,
}

/// Steps until `max_n ‖rhs_n‖_max < tol` or `max_steps` steps were taken.
pub fn solve_to_equilibrium(
    t: &DenseTensor,
    s: &mut FlowState,
    tol: f64,
    max_steps: usize,
) -> Result<EquilibriumReport> {
    if !(tol > 0.0) {
        return Err(CpdError::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    if s.step > s.min_time_constant() {
        return Err(CpdError::InvalidArgument("step exceeds the smallest time constant".into()));
    }
    let mut steps = 0;
    loop {
        let rhs = flow_rhs_all(t, s)?;
        s.residual = max_abs_all(&rhs);
        if s.residual < tol || steps == max_steps {
            return Ok(EquilibriumReport { steps, converged: s.residual < tol, residual: s.residual });
        }
        apply_projected(s, &rhs)?;
        steps += 1;
    }
}

/// Barrier right-hand side `−∇F̃ · H̃⁻¹` (or `−∇F̃` without preconditioning).
pub fn barrier_rhs(
    t: &DenseTensor,
    model: &KruskalModel,
    mode: usize,
    bp: BarrierParams,
    preconditioned: bool,
    ridge: Ridge,
) -> Result<Matrix> {
    let a = model.factor(mode);
    if a.data().iter().any(|&v| !(v > 0.0)) {
        return Err(CpdError::Domain(format!("factor {mode} has a non-positive entry")));
    }
    let block = BlockObjective::new(t, model, mode)?;
    let g = add_barrier_term(&block.gradient(a), a, bp);
    let dir = if preconditioned {
        let p = Preconditioner::new(mode, block.gram().clone(), ridge.resolve(block.gram()))?;
        barrier_precondition(&g, &p, a, bp)?
    } else {
        g
    };
    Ok(dir.scale(-1.0))
}

fn barrier_rhs_all(t: &DenseTensor, model: &KruskalModel, s: &FlowState, bp: BarrierParams) -> Result<Vec<Matrix>> {
    (0..model.order())
        .map(|n| barrier_rhs(t, model, n, bp, s.preconditioned, s.ridge))
        .collect()
}

fn displaced(model: &KruskalModel, rhs: &[Matrix], eps: &[f64], h: f64) -> KruskalModel {
    let mut m = model.clone();
    apply_euler(&mut m, rhs, |n| h / eps[n]);
    m
}

fn is_interior(model: &KruskalModel) -> bool {
    model.factors().iter().all(|f| f.data().iter().all(|&v| v > 0.0 && v.is_finite()))
}

/// One explicit barrier step. If any entry would leave the open orthant
/// the whole sweep is retried with `h/2`, at most 30 times.
///
/// Returns the step length actually used.
pub fn barrier_flow_step(t: &DenseTensor, s: &mut FlowState, bp: BarrierParams) -> Result<f64> {
    if !is_interior(&s.model) {
        return Err(CpdError::Domain("barrier flow needs a strictly positive state".into()));
    }
    let k1 = barrier_rhs_all(t, &s.model, s, bp)?;
    s.residual = max_abs_all(&k1);
    let mut h = s.step;
    for _ in 0..=MAX_HALVINGS {
        let next = match s.integrator {
            Integrator::Euler => Some(displaced(&s.model, &k1, &s.time_constants, h)),
            Integrator::Rk4 => rk4_candidate(t, s, &k1, h, bp)?,
        };
        if let Some(m) = next.filter(is_interior) {
            s.model = m;
            s.iter += 1;
            return Ok(h);
        }
        h *= 0.5;
    }
    if !s.model.is_finite() || k1.iter().any(|m| !m.is_finite()) {
        return Err(CpdError::Divergence { iter: s.iter });
    }
    Err(CpdError::BoundaryStall { iter: s.iter, halvings: MAX_HALVINGS })
}

fn rk4_candidate(
    t: &DenseTensor,
    s: &FlowState,
    k1: &[Matrix],
    h: f64,
    bp: BarrierParams,
) -> Result<Option<KruskalModel>> {
    let eps = &s.time_constants;
    let stage = |k: &[Matrix], frac: f64| -> Result<Option<Vec<Matrix>>> {
        let m = displaced(&s.model, k, eps, frac * h);
        if !is_interior(&m) {
            return Ok(None);
        }
        barrier_rhs_all(t, &m, s, bp).map(Some)
    };
    let Some(k2) = stage(k1, 0.5)? else { return Ok(None) };
    let Some(k3) = stage(&k2, 0.5)? else { return Ok(None) };
    let Some(k4) = stage(&k3, 1.0)? else { return Ok(None) };
    let combined: Vec<Matrix> = (0..k1.len())
        .map(|n| {
            let mut c = k1[n].add(&k4[n]);
            c = c.add(&k2[n].add(&k3[n]).scale(2.0));
            c.scale(1.0 / 6.0)
        })
        .collect();
    Ok(Some(displaced(&s.model, &combined, eps, h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{kkt_residuals, objective};
    use crate::tensor::kruskal_full;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_state(v: f64) -> FlowState {
        let s = |v| Matrix::new(1, 1, vec![v]).unwrap();
        FlowState::new(KruskalModel::new(vec![s(v), s(v), s(v)]).unwrap())
    }

    #[test]
    fn rhs_by_hand_on_scalar() {
        let t = DenseTensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let s = scalar_state(1.0).with_preconditioning(false, Ridge::Auto);
        for mode in 0..3 {
            assert_eq!(flow_rhs(&t, &s, mode).unwrap().data(), &[1.0]);
        }
    }

    #[test]
    fn rhs_vanishes_at_positive_exact_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = KruskalModel::random_uniform(&[4, 4, 4], 2, &mut rng).unwrap();
        let t = kruskal_full(&m);
        let s = FlowState::new(m).with_preconditioning(false, Ridge::Auto);
        for r in flow_rhs_all(&t, &s).unwrap() {
            assert!(r.max_abs() < 1e-12);
        }
    }

    #[test]
    fn rhs_clamps_at_zero_with_nonnegative_gradient() {
        let t = DenseTensor::zeros(&[2, 2, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = KruskalModel::random_uniform(&[2, 2, 2], 2, &mut rng).unwrap();
        m.set_factor(0, Matrix::zeros(2, 2)).unwrap();
        let s = FlowState::new(m);
        assert_eq!(flow_rhs(&t, &s, 0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn unit_ratio_step_is_projected_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = KruskalModel::random_uniform(&[3, 4, 2], 2, &mut rng).unwrap();
        let t = DenseTensor::from_fn(&[3, 4, 2], |_| rng.random()).unwrap();
        let mut s = FlowState::new(m.clone()).with_time_constants(vec![1.0; 3], Some(1.0)).unwrap();
        let rhs = flow_rhs_all(&t, &s).unwrap();
        flow_step(&t, &mut s).unwrap();
        for n in 0..3 {
            let expect = m.factor(n).add(&rhs[n]);
            assert!(s.model.factor(n).sub(&expect).max_abs() < 1e-15);
            assert!(s.model.is_nonnegative());
        }
    }

    #[test]
    fn step_larger_than_time_constant_is_rejected() {
        let t = DenseTensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let mut s = scalar_state(1.0).with_time_constants(vec![1.0, 0.5, 1.0], Some(0.75)).unwrap();
        assert!(matches!(flow_step(&t, &mut s), Err(CpdError::InvalidArgument(_))));
    }

    #[test]
    fn start_at_equilibrium_takes_zero_steps() {
        let t = DenseTensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let mut s = scalar_state(1.0);
        let rep = solve_to_equilibrium(&t, &mut s, 1e-10, 100).unwrap();
        assert_eq!(rep.steps, 0);
        assert!(rep.converged);
    }

    #[test]
    fn plain_flow_reaches_kkt_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = KruskalModel::random_uniform(&[5, 5, 5], 3, &mut rng).unwrap();
        let t = DenseTensor::from_fn(&[5, 5, 5], |_| rng.random()).unwrap();
        let mut s = FlowState::new(m)
            .with_preconditioning(false, Ridge::Auto)
            .with_time_constants(vec![1.0; 3], Some(0.02))
            .unwrap();
        let rep = solve_to_equilibrium(&t, &mut s, 1e-8, 200_000).unwrap();
        assert!(rep.converged, "{rep:?}");
        for r in kkt_residuals(&t, &s.model).unwrap() {
            assert!(r < 1e-6);
        }
    }

    #[test]
    fn small_step_flow_is_monotone_and_nonnegative() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = KruskalModel::random_uniform(&[4, 4, 4], 3, &mut rng).unwrap();
            let t = DenseTensor::from_fn(&[4, 4, 4], |_| rng.random()).unwrap();
            let mut s = FlowState::new(m)
                .with_preconditioning(false, Ridge::Auto)
                .with_time_constants(vec![1.0; 3], Some(0.05))
                .unwrap();
            let mut prev = objective(&t, &s.model).unwrap();
            for _ in 0..300 {
                flow_step(&t, &mut s).unwrap();
                assert!(s.model.is_nonnegative());
                let f = objective(&t, &s.model).unwrap();
                assert!(f <= prev + 1e-12, "seed {seed}: {f} > {prev}");
                prev = f;
            }
        }
    }

    #[test]
    fn barrier_step_halves_to_stay_interior() {
        let t = DenseTensor::zeros(&[2, 2, 2]).unwrap();
        let ones = Matrix::from_fn(2, 1, |_, _| 1.0);
        let m = KruskalModel::new(vec![ones.clone(), ones.clone(), ones]).unwrap();
        // the unpreconditioned gradient is 4 per entry, so h = 1 overshoots
        let mut s = FlowState::new(m)
            .with_preconditioning(false, Ridge::Auto)
            .with_time_constants(vec![1.0; 3], Some(1.0))
            .unwrap();
        let used = barrier_flow_step(&t, &mut s, BarrierParams::new(1e-3).unwrap()).unwrap();
        assert!(used < 1.0);
        assert!(s.model.min_entry() > 0.0);
    }

    #[test]
    fn barrier_flow_preserves_symmetry() {
        let t = DenseTensor::from_fn(&[3, 3, 3], |i| 1.0 / (1 + i[0] + i[1] + i[2]) as f64).unwrap();
        let f = Matrix::from_fn(3, 2, |i, j| 0.3 + 0.1 * i as f64 + 0.2 * j as f64);
        let m = KruskalModel::new(vec![f.clone(), f.clone(), f]).unwrap();
        for integrator in [Integrator::Euler, Integrator::Rk4] {
            let mut s = FlowState::new(m.clone()).with_integrator(integrator);
            for _ in 0..20 {
                barrier_flow_step(&t, &mut s, BarrierParams::default()).unwrap();
            }
            assert!(s.model.factor(0).sub(s.model.factor(1)).max_abs() < 1e-12);
            assert!(s.model.factor(1).sub(s.model.factor(2)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn barrier_flow_rejects_boundary_start() {
        let t = DenseTensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let mut s = scalar_state(0.0);
        assert!(matches!(
            barrier_flow_step(&t, &mut s, BarrierParams::default()),
            Err(CpdError::Domain(_))
        ));
    }

    #[test]
    fn schedule_decays_in_periods() {
        let sch = BarrierSchedule { gamma: 1.0, decay: 0.5, every: 100 };
        assert_eq!(sch.at(0).gamma, 1.0);
        assert_eq!(sch.at(99).gamma, 1.0);
        assert_eq!(sch.at(250).gamma, 0.25);
    }
}
