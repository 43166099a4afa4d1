//! Collaborative neurodynamic optimization: a population of independent
//! inner solvers whose equilibria feed a particle swarm, with a wavelet
//! mutation when the population loses diversity.
//!
//! Positions are flattened models (factors concatenated, column-major).

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtpnn::{step as dtpnn_step, DtpnnState, DtpnnVariant};
use crate::error::{CpdError, Result};
use crate::flow::{solve_to_equilibrium, FlowState};
use crate::model::{objective, Ridge};
use crate::tensor::{DenseTensor, KruskalModel};

/// Inner solver run by every particle between swarm updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InnerKind {
    #[default]
    Flow,
    DtpnnExplicit,
    DtpnnArmijo,
    DtpnnSemiimplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerConfig {
    pub kind: InnerKind,
    /// Base time constant `ε` of the flow.
    pub time_constant: f64,
    /// Flow step as a fraction of the particle's `ε`.
    pub step_ratio: f64,
    /// DTPNN step `λ`.
    pub lambda: f64,
    pub preconditioned: bool,
    pub ridge: Ridge,
    pub tol: f64,
    pub max_steps: usize,
    /// Draw each particle's `ε` from `base · U[0.5, 2]` (particle 0 keeps the base).
    pub jitter_time_constants: bool,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            kind: InnerKind::Flow,
            time_constant: 1.0,
            step_ratio: 0.5,
            lambda: 1.0,
            preconditioned: true,
            ridge: Ridge::Auto,
            tol: 1e-6,
            max_steps: 500,
            jitter_time_constants: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwarmConfig {
    /// Population size `q ≥ 1`.
    pub q: usize,
    /// Inertia weight in `[0, 1]`.
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Mutation fires when diversity drops below this.
    pub diversity_threshold: f64,
    /// Stop when the global best changes by less than this (0 disables).
    pub epsilon_stop: f64,
    pub k_max: usize,
    pub seed: u64,
    pub mutation: bool,
    /// Per-coordinate mutation probability.
    pub mutation_prob: f64,
    /// Scale initial models so their norm matches the data norm.
    pub rescale_init: bool,
    /// Worker threads for the inner solves (0 = all cores).
    pub threads: usize,
    /// Optional wall-clock cap in milliseconds, checked after each outer iteration.
    pub time_cap_ms: Option<u64>,
    pub inner: InnerConfig,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            q: 5,
            alpha: 0.5,
            beta1: 0.01,
            beta2: 0.01,
            diversity_threshold: 0.1,
            epsilon_stop: 0.0,
            k_max: 20,
            seed: 0,
            mutation: true,
            mutation_prob: 0.1,
            rescale_init: true,
            threads: 1,
            time_cap_ms: None,
            inner: InnerConfig::default(),
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CpdError::InvalidArgument(m));
        if self.q == 0 {
            return bad("population size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("inertia must lie in [0,1], got {}", self.alpha));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return bad("acceleration constants must be >= 0".into());
        }
        if !(self.diversity_threshold >= 0.0) || !(self.epsilon_stop >= 0.0) {
            return bad("thresholds must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return bad(format!("mutation probability must lie in [0,1], got {}", self.mutation_prob));
        }
        if self.k_max == 0 {
            return bad("k_max must be >= 1".into());
        }
        let inner = &self.inner;
        if !(inner.time_constant > 0.0) || !(inner.step_ratio > 0.0 && inner.step_ratio <= 1.0) {
            return bad("flow needs time_constant > 0 and step_ratio in (0,1]".into());
        }
        if !(inner.lambda > 0.0 && inner.lambda <= 1.0) || !(inner.tol > 0.0) || inner.max_steps == 0 {
            return bad("inner solver needs lambda in (0,1], tol > 0, max_steps >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub personal_best: Vec<f64>,
    pub personal_best_value: f64,
    pub time_constant: f64,
}

#[derive(Debug, Clone)]
pub struct SwarmState {
    pub shape: Vec<usize>,
    pub rank: usize,
    pub particles: Vec<Particle>,
    pub global_best: Vec<f64>,
    pub global_best_value: f64,
    pub k: usize,
    pub diversity: f64,
}

impl SwarmState {
    pub fn best_model(&self) -> Result<KruskalModel> {
        KruskalModel::from_flat(&self.shape, self.rank, &self.global_best)
    }
}

/// One outer iteration as seen by the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmRow {
    pub k: usize,
    /// Objective of each particle's inner-solver output.
    pub values: Vec<f64>,
    pub personal_best_values: Vec<f64>,
    pub global_best_value: f64,
    pub diversity: f64,
    pub mutated: bool,
    pub inner_steps: Vec<usize>,
    /// Particles re-seeded after an inner divergence.
    pub reseeded: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwarmStop {
    MaxIterations,
    Stagnation,
    TimeCap,
}

#[derive(Debug, Clone)]
pub struct SwarmTrace {
    pub rows: Vec<SwarmRow>,
    pub stop: SwarmStop,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Init = 1,
    Reseed = 2,
    Pso = 3,
    Mutation = 4,
}

/// Independent stream for `(seed, particle, outer iteration, purpose)`.
fn stream(seed: u64, particle: usize, k: usize, purpose: Stream) -> ChaCha8Rng {
    let mut z = splitmix64(seed);
    z = splitmix64(z ^ particle as u64);
    z = splitmix64(z ^ k as u64);
    z = splitmix64(z ^ purpose as u64);
    ChaCha8Rng::seed_from_u64(z)
}

fn initial_model(t: &DenseTensor, rank: usize, rescale: bool, rng: &mut ChaCha8Rng) -> Result<KruskalModel> {
    let mut m = KruskalModel::random_uniform(t.shape(), rank, rng)?;
    let mn = m.norm_sq().sqrt();
    let tn = t.frobenius_norm();
    if rescale && mn > 0.0 && tn > 0.0 {
        let s = (tn / mn).powf(1.0 / m.order() as f64);
        for n in 0..m.order() {
            let f = m.factor(n).scale(s);
            m.set_factor(n, f)?;
        }
    }
    Ok(m)
}

/// Starting model of particle 0 for `seed`; single-solver runs use it so
/// their trajectories line up with a one-particle swarm.
pub fn seeded_init(t: &DenseTensor, rank: usize, seed: u64, rescale: bool) -> Result<KruskalModel> {
    initial_model(t, rank, rescale, &mut stream(seed, 0, 0, Stream::Init))
}

/// Builds `q` particles from seeded uniform models; bests start at `+∞`.
pub fn init_swarm(t: &DenseTensor, rank: usize, cfg: &SwarmConfig) -> Result<SwarmState> {
    cfg.validate()?;
    let mut particles = Vec::with_capacity(cfg.q);
    for n in 0..cfg.q {
        let mut rng = stream(cfg.seed, n, 0, Stream::Init);
        let m = initial_model(t, rank, cfg.rescale_init, &mut rng)?;
        let eps = if n > 0 && cfg.inner.jitter_time_constants {
            cfg.inner.time_constant * rng.random_range(0.5..=2.0)
        } else {
            cfg.inner.time_constant
        };
        let position = m.flatten();
        particles.push(Particle {
            velocity: vec![0.0; position.len()],
            personal_best: position.clone(),
            personal_best_value: f64::INFINITY,
            position,
            time_constant: eps,
        });
    }
    Ok(SwarmState {
        shape: t.shape().to_vec(),
        rank,
        global_best: particles[0].position.clone(),
        global_best_value: f64::INFINITY,
        particles,
        k: 0,
        diversity: 0.0,
    })
}

/// Runs the inner solver from `model`; returns the steps taken.
pub fn solve_inner(t: &DenseTensor, model: KruskalModel, eps: f64, cfg: &InnerConfig) -> Result<(KruskalModel, usize)> {
    let order = model.order();
    match cfg.kind {
        InnerKind::Flow => {
            let mut s = FlowState::new(model)
                .with_time_constants(vec![eps; order], Some(cfg.step_ratio * eps))?
                .with_preconditioning(cfg.preconditioned, cfg.ridge);
            let rep = solve_to_equilibrium(t, &mut s, cfg.tol, cfg.max_steps)?;
            Ok((s.model, rep.steps))
        }
        kind => {
            let variant = match kind {
                InnerKind::DtpnnExplicit => DtpnnVariant::Explicit,
                InnerKind::DtpnnArmijo => DtpnnVariant::Armijo,
                _ => DtpnnVariant::SemiImplicit,
            };
            let mut s = DtpnnState::new(model)
                .with_lambdas(vec![cfg.lambda; order])?
                .with_preconditioning(cfg.preconditioned, cfg.ridge);
            s.tol = cfg.tol;
            for step in 0..cfg.max_steps {
                let before = s.model.flatten();
                match dtpnn_step(t, &mut s, variant) {
                    Ok(()) => {}
                    // no acceptable step left: the iterate is as good as this solver gets
                    Err(CpdError::Stall { .. }) => return Ok((s.model, step)),
                    Err(e) => return Err(e),
                }
                let moved = before
                    .iter()
                    .zip(s.model.flatten())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if moved < cfg.tol {
                    return Ok((s.model, step + 1));
                }
            }
            Ok((s.model, cfg.max_steps))
        }
    }
}

/// `p_n ← x_n` iff `f(x_n) < f(p_n)` (strict), then `p_best = argmin p_n`.
pub fn update_bests(sw: &mut SwarmState, values: &[f64]) {
    for (p, &v) in sw.particles.iter_mut().zip(values) {
        if v < p.personal_best_value {
            p.personal_best_value = v;
            p.personal_best = p.position.clone();
        }
    }
    for p in &sw.particles {
        if p.personal_best_value < sw.global_best_value {
            sw.global_best_value = p.personal_best_value;
            sw.global_best = p.personal_best.clone();
        }
    }
}

/// `DI = (1/q) Σ ‖p_n − p_best‖₂`.
pub fn diversity(sw: &SwarmState) -> f64 {
    let total: f64 = sw
        .particles
        .iter()
        .map(|p| {
            p.personal_best
                .iter()
                .zip(&sw.global_best)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / sw.particles.len() as f64
}

/// PSO move with given `(γ1, γ2)` per particle:
/// `v ← αv + β1γ1(p_n − x) + β2γ2(p_best − x)`, `x ← [x + v]_+`.
pub fn pso_update_with(sw: &mut SwarmState, cfg: &SwarmConfig, gammas: &[(f64, f64)]) {
    let best = &sw.global_best;
    for (p, &(g1, g2)) in sw.particles.iter_mut().zip(gammas) {
        for i in 0..p.position.len() {
            let x = p.position[i];
            let v = cfg.alpha * p.velocity[i]
                + cfg.beta1 * g1 * (p.personal_best[i] - x)
                + cfg.beta2 * g2 * (best[i] - x);
            p.velocity[i] = v;
            p.position[i] = (x + v).max(0.0);
        }
    }
}

/// PSO move with `γ1, γ2 ~ U[0,1]` drawn once per particle for iteration `k`.
pub fn pso_update(sw: &mut SwarmState, cfg: &SwarmConfig) {
    let gammas: Vec<(f64, f64)> = (0..sw.particles.len())
        .map(|n| {
            let mut rng = stream(cfg.seed, n, sw.k, Stream::Pso);
            (rng.random(), rng.random())
        })
        .collect();
    pso_update_with(sw, cfg, &gammas);
}

/// `κ(φ) = a^{-1/2} exp(−φ/(2a)) cos(5φ/a)` with `a = exp(10 k / k_max)`.
pub fn wavelet(phi: f64, a: f64) -> f64 {
    (-phi / (2.0 * a)).exp() * (5.0 * phi / a).cos() / a.sqrt()
}

pub fn dilation(k: usize, k_max: usize) -> f64 {
    (10.0 * k as f64 / k_max.max(1) as f64).exp()
}

/// Moves `x` toward `upper` by `κ(upper − x)` when `κ > 0`, else toward
/// `lower` by `|κ|(x − lower)`; the result is clamped to the box.
pub fn mutate_coordinate(x: f64, kappa: f64, lower: f64, upper: f64) -> f64 {
    let y = if kappa > 0.0 { x + kappa * (upper - x) } else { x + kappa * (x - lower) };
    y.clamp(lower, upper)
}

/// Per-factor-block upper bounds `2 · max(best block)` (1 for an all-zero block).
fn mutation_bounds(sw: &SwarmState) -> Vec<f64> {
    let mut bounds = Vec::with_capacity(sw.global_best.len());
    let mut off = 0;
    for &d in &sw.shape {
        let len = d * sw.rank;
        let m = sw.global_best[off..off + len].iter().copied().fold(0.0, f64::max);
        let u = if m > 0.0 { 2.0 * m } else { 1.0 };
        bounds.extend(std::iter::repeat_n(u, len));
        off += len;
    }
    bounds
}

/// Mutates each coordinate of every particle with probability
/// `mutation_prob`; mutated coordinates lose their velocity.
pub fn wavelet_mutation(sw: &mut SwarmState, cfg: &SwarmConfig, k: usize, k_max: usize) -> usize {
    let a = dilation(k, k_max);
    let upper = mutation_bounds(sw);
    let mut count = 0;
    for (n, p) in sw.particles.iter_mut().enumerate() {
        let mut rng = stream(cfg.seed, n, k, Stream::Mutation);
        for i in 0..p.position.len() {
            if rng.random::<f64>() >= cfg.mutation_prob {
                continue;
            }
            let phi = rng.random_range(-2.5 * a..=2.5 * a);
            p.position[i] = mutate_coordinate(p.position[i], wavelet(phi, a), 0.0, upper[i]);
            p.velocity[i] = 0.0;
            count += 1;
        }
    }
    count
}

struct InnerOutcome {
    position: Vec<f64>,
    value: f64,
    steps: usize,
    reseeded: bool,
}

fn run_particle(t: &DenseTensor, sw: &SwarmState, n: usize, cfg: &SwarmConfig) -> Result<InnerOutcome> {
    let p = &sw.particles[n];
    let model = KruskalModel::from_flat(&sw.shape, sw.rank, &p.position)?;
    let solved = solve_inner(t, model, p.time_constant, &cfg.inner).and_then(|(m, steps)| {
        let v = objective(t, &m)?;
        if v.is_finite() && m.is_finite() {
            Ok((m, v, steps))
        } else {
            Err(CpdError::Divergence { iter: steps })
        }
    });
    match solved {
        Ok((m, value, steps)) => Ok(InnerOutcome { position: m.flatten(), value, steps, reseeded: false }),
        Err(CpdError::Divergence { .. }) => {
            let mut rng = stream(cfg.seed, n, sw.k, Stream::Reseed);
            let m = initial_model(t, sw.rank, cfg.rescale_init, &mut rng)?;
            let value = objective(t, &m)?;
            Ok(InnerOutcome { position: m.flatten(), value, steps: 0, reseeded: true })
        }
        Err(e) => Err(e),
    }
}

fn solve_all(t: &DenseTensor, sw: &SwarmState, cfg: &SwarmConfig) -> Result<Vec<InnerOutcome>> {
    let work = |n: usize| run_particle(t, sw, n, cfg);
    if cfg.threads == 1 || sw.particles.len() == 1 {
        return (0..sw.particles.len()).map(work).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CpdError::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..sw.particles.len()).into_par_iter().map(work).collect())
}

/// Runs the collaborative loop; `observer` sees the state after each
/// outer iteration's bests are updated.
pub fn cno_run_with(
    t: &DenseTensor,
    rank: usize,
    cfg: &SwarmConfig,
    mut observer: impl FnMut(&SwarmState, &SwarmRow),
) -> Result<(KruskalModel, SwarmTrace)> {
    let mut sw = init_swarm(t, rank, cfg)?;
    let start = Instant::now();
    let cap = cfg.time_cap_ms.map(Duration::from_millis);
    let mut rows = Vec::with_capacity(cfg.k_max.min(1024));
    let mut stop = SwarmStop::MaxIterations;
    for k in 0..cfg.k_max {
        sw.k = k;
        let outcomes = solve_all(t, &sw, cfg)?;
        let mut values = Vec::with_capacity(outcomes.len());
        let mut inner_steps = Vec::with_capacity(outcomes.len());
        let mut reseeded = Vec::new();
        for (n, o) in outcomes.into_iter().enumerate() {
            sw.particles[n].position = o.position;
            if o.reseeded {
                sw.particles[n].velocity.iter_mut().for_each(|v| *v = 0.0);
                reseeded.push(n);
            }
            values.push(o.value);
            inner_steps.push(o.steps);
        }
        let previous_best = sw.global_best_value;
        update_bests(&mut sw, &values);
        sw.diversity = diversity(&sw);
        let mutate = cfg.mutation && sw.diversity < cfg.diversity_threshold;
        let row = SwarmRow {
            k,
            values,
            personal_best_values: sw.particles.iter().map(|p| p.personal_best_value).collect(),
            global_best_value: sw.global_best_value,
            diversity: sw.diversity,
            mutated: mutate && k + 1 < cfg.k_max,
            inner_steps,
            reseeded,
        };
        observer(&sw, &row);
        let last = k + 1 == cfg.k_max;
        rows.push(row);
        if k > 0 && (previous_best - sw.global_best_value).abs() < cfg.epsilon_stop {
            stop = SwarmStop::Stagnation;
            break;
        }
        if cap.is_some_and(|c| start.elapsed() >= c) {
            stop = SwarmStop::TimeCap;
            break;
        }
        if last {
            break;
        }
        pso_update(&mut sw, cfg);
        if mutate {
            wavelet_mutation(&mut sw, cfg, k, cfg.k_max);
        }
    }
    let best = sw.best_model()?;
    Ok((best, SwarmTrace { rows, stop }))
}

pub fn cno_run(t: &DenseTensor, rank: usize, cfg: &SwarmConfig) -> Result<(KruskalModel, SwarmTrace)> {
    cno_run_with(t, rank, cfg, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{kruskal_full, relative_error};

    fn scalar_swarm(x: f64, v: f64, p: f64, best: f64) -> SwarmState {
        SwarmState {
            shape: vec![1],
            rank: 1,
            particles: vec![Particle {
                position: vec![x],
                velocity: vec![v],
                personal_best: vec![p],
                personal_best_value: 0.0,
                time_constant: 1.0,
            }],
            global_best: vec![best],
            global_best_value: 0.0,
            k: 0,
            diversity: 0.0,
        }
    }

    #[test]
    fn pso_hand_arithmetic() {
        let cfg = SwarmConfig::default();
        let mut sw = scalar_swarm(0.0, 0.0, 1.0, 2.0);
        pso_update_with(&mut sw, &cfg, &[(1.0, 1.0)]);
        assert!((sw.particles[0].velocity[0] - 0.03).abs() < 1e-15);
        assert!((sw.particles[0].position[0] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn pso_stationary_and_pure_inertia() {
        let cfg = SwarmConfig::default();
        let mut sw = scalar_swarm(1.5, 0.0, 1.5, 1.5);
        pso_update_with(&mut sw, &cfg, &[(0.7, 0.2)]);
        assert_eq!(sw.particles[0].position[0], 1.5);
        let cfg = SwarmConfig { beta1: 0.0, beta2: 0.0, ..cfg };
        let mut sw = scalar_swarm(1.0, 0.4, 3.0, 5.0);
        pso_update_with(&mut sw, &cfg, &[(0.7, 0.2)]);
        assert_eq!(sw.particles[0].position[0], 1.0 + 0.5 * 0.4);
    }

    #[test]
    fn pso_reprojects_onto_orthant() {
        let cfg = SwarmConfig { alpha: 1.0, ..SwarmConfig::default() };
        let mut sw = scalar_swarm(0.1, -1.0, 0.1, 0.1);
        pso_update_with(&mut sw, &cfg, &[(1.0, 1.0)]);
        assert_eq!(sw.particles[0].position[0], 0.0);
    }

    #[test]
    fn bests_use_strict_improvement() {
        let mut sw = scalar_swarm(1.0, 0.0, 1.0, 1.0);
        sw.particles[0].personal_best_value = 2.0;
        sw.global_best_value = 2.0;
        sw.particles[0].position = vec![9.0];
        update_bests(&mut sw, &[2.0]);
        assert_eq!(sw.particles[0].personal_best, vec![1.0]);
        update_bests(&mut sw, &[1.5]);
        assert_eq!(sw.particles[0].personal_best, vec![9.0]);
        assert_eq!(sw.global_best_value, 1.5);
    }

    #[test]
    fn diversity_hand_example() {
        let mut sw = scalar_swarm(0.0, 0.0, 0.0, 0.0);
        let mut other = sw.particles[0].clone();
        other.personal_best = vec![4.0];
        sw.particles.push(other);
        assert_eq!(diversity(&sw), 2.0);
        sw.particles.swap(0, 1);
        assert_eq!(diversity(&sw), 2.0);
    }

    #[test]
    fn wavelet_values() {
        assert_eq!(wavelet(0.0, 1.0), 1.0);
        assert!((wavelet(0.0, 4.0) - 0.5).abs() < 1e-15);
        assert_eq!(mutate_coordinate(0.3, 1.0, 0.0, 2.0), 2.0);
        assert_eq!(mutate_coordinate(0.3, -1.0, 0.0, 2.0), 0.0);
        assert_eq!(mutate_coordinate(0.3, 5.0, 0.0, 2.0), 2.0);
        assert!((dilation(10, 10) - 10f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn mutation_magnitude_shrinks_with_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean_abs = |k: usize, rng: &mut ChaCha8Rng| {
            let a = dilation(k, 10);
            (0..20000).map(|_| wavelet(rng.random_range(-2.5 * a..=2.5 * a), a).abs()).sum::<f64>() / 20000.0
        };
        let mut prev = f64::INFINITY;
        for k in 0..=10 {
            let m = mean_abs(k, &mut rng);
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn mutation_resets_velocity_and_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = DenseTensor::from_fn(&[3, 3, 3], |_| rng.random()).unwrap();
        let cfg = SwarmConfig { q: 3, mutation_prob: 1.0, ..SwarmConfig::default() };
        let mut sw = init_swarm(&t, 2, &cfg).unwrap();
        for p in &mut sw.particles {
            p.velocity.iter_mut().for_each(|v| *v = 1.0);
        }
        let upper = mutation_bounds(&sw);
        let n = wavelet_mutation(&mut sw, &cfg, 3, 10);
        assert_eq!(n, 3 * 18);
        for p in &sw.particles {
            assert!(p.velocity.iter().all(|&v| v == 0.0));
            assert!(p.position.iter().zip(&upper).all(|(&x, &u)| (0.0..=u).contains(&x)));
        }
    }

    #[test]
    fn single_particle_equals_single_inner_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = DenseTensor::from_fn(&[4, 4, 4], |_| rng.random()).unwrap();
        let inner = InnerConfig { kind: InnerKind::DtpnnArmijo, max_steps: 20, tol: 1e-300, ..InnerConfig::default() };
        let cfg = SwarmConfig { q: 1, mutation: false, k_max: 3, inner, ..SwarmConfig::default() };
        let (best, _) = cno_run(&t, 2, &cfg).unwrap();
        let sw = init_swarm(&t, 2, &cfg).unwrap();
        let m = KruskalModel::from_flat(&sw.shape, 2, &sw.particles[0].position).unwrap();
        let long = InnerConfig { max_steps: 20, ..inner };
        let (mut m, _) = solve_inner(&t, m, 1.0, &long).unwrap();
        for _ in 0..2 {
            m = solve_inner(&t, m, 1.0, &long).unwrap().0;
        }
        assert_eq!(best, m);
    }

    #[test]
    fn global_best_is_monotone_and_run_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = KruskalModel::random_uniform(&[5, 5, 5], 3, &mut rng).unwrap();
        let t = kruskal_full(&truth);
        let cfg = SwarmConfig { q: 4, k_max: 6, diversity_threshold: 1e9, seed: 9, ..SwarmConfig::default() };
        let (b1, tr1) = cno_run(&t, 3, &cfg).unwrap();
        let (b2, tr2) = cno_run(&t, 3, &cfg).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(tr1.rows, tr2.rows);
        for w in tr1.rows.windows(2) {
            assert!(w[1].global_best_value <= w[0].global_best_value);
        }
        assert!(tr1.rows[..tr1.rows.len() - 1].iter().all(|r| r.mutated));
        assert!(relative_error(&t, &b1).unwrap() < 0.5);
        let par = SwarmConfig { threads: 2, ..cfg };
        let (b3, tr3) = cno_run(&t, 3, &par).unwrap();
        assert_eq!(b1, b3);
        assert_eq!(tr1.rows, tr3.rows);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let t = DenseTensor::zeros(&[2, 2, 2]).unwrap();
        for cfg in [
            SwarmConfig { q: 0, ..SwarmConfig::default() },
            SwarmConfig { alpha: 1.5, ..SwarmConfig::default() },
            SwarmConfig { k_max: 0, ..SwarmConfig::default() },
        ] {
            assert!(cno_run(&t, 1, &cfg).is_err());
        }
    }
}
