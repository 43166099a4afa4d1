//! Configuration-driven experiment runner.
//!
//! A run assembles a problem, drives one algorithm and records one trace row
//! per iteration. Trace CSV columns: `iter,objective,rel_error,wall_ms,diversity`.
//! `wall_ms` is empty unless `output.timing` is on and `diversity` is empty
//! for everything except `cno`; every other cell is a shortest round-trip
//! float, so a run without timing is byte-reproducible.
//!
//! Configs are TOML. `--set a.b=v` overrides are applied to the parsed
//! table before it is typed, so file values and overrides share one grammar.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{hals_sweep, mur_sweep};
use crate::datagen::gen_problem_with_noise;
use crate::dtpnn::{step as dtpnn_step, ArmijoParams, DtpnnState, DtpnnVariant, SemiImplicitForm};
use crate::error::{CpdError, Result};
use crate::flow::{barrier_flow_step, flow_step, BarrierSchedule, FlowState, Integrator};
use crate::io::{kv_to_text, model_to_text, read_tensor, write_atomic};
use crate::model::{objective, Ridge};
use crate::swarm::{cno_run_with, seeded_init, InnerConfig, InnerKind, SwarmConfig, SwarmStop};
use crate::tensor::{relative_error, DenseTensor, KruskalModel};

/// Environment variable that overrides `output.dir`.
pub const OUTPUT_ENV: &str = "CNOCPD_OUT";
/// Parsed, untyped config; overrides are applied to this before typing.
pub type ConfigTable = toml::Table;

pub const CSV_HEADER: &str = "iter,objective,rel_error,wall_ms,diversity";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Cno,
    Flow,
    DtpnnExplicit,
    DtpnnArmijo,
    DtpnnSemiimplicit,
    BarrierFlow,
    Hals,
    Mur,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Cno,
        Algorithm::Flow,
        Algorithm::DtpnnExplicit,
        Algorithm::DtpnnArmijo,
        Algorithm::DtpnnSemiimplicit,
        Algorithm::BarrierFlow,
        Algorithm::Hals,
        Algorithm::Mur,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Cno => "cno",
            Algorithm::Flow => "flow",
            Algorithm::DtpnnExplicit => "dtpnn-explicit",
            Algorithm::DtpnnArmijo => "dtpnn-armijo",
            Algorithm::DtpnnSemiimplicit => "dtpnn-semiimplicit",
            Algorithm::BarrierFlow => "barrier-flow",
            Algorithm::Hals => "hals",
            Algorithm::Mur => "mur",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = CpdError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| CpdError::InvalidArgument(format!("unknown algorithm `{s}`")))
    }
}

/// Either a generated instance (`kind`) or a tensor file (`file`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Instance seed; the run seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    /// Iterations for single solvers, outer iterations for `cno`.
    pub max_iters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_cap_ms: Option<u64>,
    /// Stop a single solver once its relative error is at most this (0 disables).
    pub target_error: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self { max_iters: 1000, time_cap_ms: None, target_error: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub time_constant: f64,
    /// Step as a fraction of the time constant.
    pub step_ratio: f64,
    pub preconditioned: bool,
    pub ridge: Ridge,
    pub integrator: Integrator,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            time_constant: 1.0,
            step_ratio: 0.5,
            preconditioned: true,
            ridge: Ridge::Auto,
            integrator: Integrator::Euler,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtpnnConfig {
    pub lambda: f64,
    pub preconditioned: bool,
    pub ridge: Ridge,
    pub semi_form: SemiImplicitForm,
    pub armijo: ArmijoParams,
}

impl Default for DtpnnConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            preconditioned: false,
            ridge: Ridge::Auto,
            semi_form: SemiImplicitForm::Corrected,
            armijo: ArmijoParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output root; `CNOCPD_OUT` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Experiment name, the first path component under the root.
    pub name: String,
    /// Fill `wall_ms`; makes the trace time dependent.
    pub timing: bool,
    /// Also emit a gnuplot script next to the traces.
    pub gnuplot: bool,
    /// Record every n-th iteration (the final one always).
    pub every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, name: "run".into(), timing: false, gnuplot: false, every: 1 }
    }
}

/// One variant of a comparison: a label plus `key=value` overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub label: String,
    #[serde(default)]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub rank: usize,
    pub seed: u64,
    /// Seeds used by `compare` when none are given on the command line.
    pub seeds: Vec<u64>,
    /// Rescale the initial model so its norm matches the data norm.
    pub rescale_init: bool,
    pub problem: ProblemConfig,
    pub budget: BudgetConfig,
    pub flow: FlowConfig,
    pub dtpnn: DtpnnConfig,
    pub barrier: BarrierSchedule,
    pub swarm: SwarmConfig,
    pub output: OutputConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<VariantConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Cno,
            rank: 1,
            seed: 0,
            seeds: Vec::new(),
            rescale_init: true,
            problem: ProblemConfig::default(),
            budget: BudgetConfig::default(),
            flow: FlowConfig::default(),
            dtpnn: DtpnnConfig::default(),
            barrier: BarrierSchedule::default(),
            swarm: SwarmConfig::default(),
            output: OutputConfig::default(),
            compare: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CpdError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CpdError::InvalidArgument(m.to_string()));
        if self.rank == 0 {
            return bad("rank must be >= 1");
        }
        if self.budget.max_iters == 0 || self.budget.time_cap_ms == Some(0) {
            return bad("budget must be > 0");
        }
        if !(self.budget.target_error >= 0.0) {
            return bad("target_error must be >= 0");
        }
        if self.problem.kind.is_some() == self.problem.file.is_some() {
            return bad("problem needs exactly one of `kind` or `file`");
        }
        if self.output.every == 0 {
            return bad("output.every must be >= 1");
        }
        let f = &self.flow;
        if !(f.time_constant > 0.0) || !(f.step_ratio > 0.0 && f.step_ratio <= 1.0) {
            return bad("flow needs time_constant > 0 and step_ratio in (0,1]");
        }
        if !(self.dtpnn.lambda > 0.0) {
            return bad("dtpnn.lambda must be > 0");
        }
        self.dtpnn.armijo.validate()?;
        if self.algorithm == Algorithm::Cno {
            self.swarm_config(self.seed).validate()?;
        }
        Ok(())
    }

    /// Swarm settings with the run's seed, budget and init policy folded in.
    pub fn swarm_config(&self, seed: u64) -> SwarmConfig {
        SwarmConfig {
            seed,
            k_max: self.budget.max_iters,
            time_cap_ms: self.budget.time_cap_ms,
            rescale_init: self.rescale_init,
            ..self.swarm
        }
    }

    /// `seeds`, or the single `seed` when the list is empty.
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }
}

pub fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| CpdError::Parse(e.to_string()))
}

pub fn load_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| CpdError::Io(format!("{}: {e}", path.display())))?;
    parse_table(&text)
}

/// Applies `a.b.c=value`. The value is read as a TOML literal when it parses
/// as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CpdError::Parse(format!("override `{assignment}` is not key=value")))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CpdError::Parse(format!("bad override key `{key}`")));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CpdError::Parse(format!("override `{key}`: `{part}` is not a table")))?;
    }
    node.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

pub fn apply_overrides(table: &mut toml::Table, assignments: &[String]) -> Result<()> {
    assignments.iter().try_for_each(|a| apply_override(table, a))
}

/// `a..b` (inclusive), `a..=b`, a comma list, or a single seed.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || CpdError::Parse(format!("bad seed spec `{spec}`"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds = if let Some((a, b)) = spec.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Output root: `CNOCPD_OUT`, then `output.dir`, then `out`.
pub fn output_root(cfg: &RunConfig) -> PathBuf {
    std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Builds the data tensor for `seed`.
pub fn load_problem(cfg: &RunConfig, seed: u64) -> Result<(DenseTensor, BTreeMap<String, String>)> {
    match (&cfg.problem.kind, &cfg.problem.file) {
        (Some(kind), _) => {
            let p = gen_problem_with_noise(kind, cfg.problem.seed.unwrap_or(seed), cfg.problem.snr_db)?;
            let meta = p.metadata();
            Ok((p.tensor, meta))
        }
        (None, Some(file)) => {
            let t = read_tensor(file)?;
            let mut meta = BTreeMap::new();
            meta.insert("file".to_string(), file.display().to_string());
            Ok((t, meta))
        }
        (None, None) => Err(CpdError::InvalidArgument("problem needs `kind` or `file`".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub rel_error: f64,
    pub wall_ms: f64,
    pub diversity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    MaxIterations,
    TargetReached,
    TimeCap,
    Stagnation,
    /// The solver returned an error; the trace ends at the last good iterate.
    Failed(String),
}

impl Termination {
    pub fn is_failure(&self) -> bool {
        matches!(self, Termination::Failed(_))
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::MaxIterations => f.write_str("max_iterations"),
            Termination::TargetReached => f.write_str("target_reached"),
            Termination::TimeCap => f.write_str("time_cap"),
            Termination::Stagnation => f.write_str("stagnation"),
            Termination::Failed(why) => write!(f, "failed: {why}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: RunConfig,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
    pub termination: Termination,
    pub final_model: KruskalModel,
    pub problem_meta: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn final_rel_error(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.rel_error)
    }

    pub fn best_rel_error(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_error).fold(f64::INFINITY, f64::min)
    }

    pub fn wall_ms(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.wall_ms)
    }

    pub fn to_csv(&self) -> String {
        let timing = self.config.output.timing;
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let wall = if timing { format!("{:.3}", r.wall_ms) } else { String::new() };
            let div = r.diversity.map(|d| d.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{wall},{div}\n", r.iter, r.objective, r.rel_error));
        }
        s
    }

    pub fn summary(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("algorithm".into(), self.config.algorithm.to_string());
        m.insert("rank".into(), self.config.rank.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("iterations".into(), self.rows.last().map_or(0, |r| r.iter).to_string());
        m.insert("final_rel_error".into(), self.final_rel_error().to_string());
        m.insert("best_rel_error".into(), self.best_rel_error().to_string());
        m.insert("termination".into(), self.termination.to_string());
        if self.config.output.timing {
            m.insert("wall_ms".into(), format!("{:.3}", self.wall_ms()));
        }
        for (k, v) in &self.problem_meta {
            m.insert(format!("problem.{k}"), v.clone());
        }
        m
    }
}

/// Writes `trace.csv`, `summary.txt`, `model.txt` and `config.toml` into `dir`.
pub fn write_record(record: &RunRecord, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("trace.csv"), record.to_csv().as_bytes())?;
    write_atomic(&dir.join("summary.txt"), kv_to_text(&record.summary()).as_bytes())?;
    write_atomic(&dir.join("model.txt"), model_to_text(&record.final_model).as_bytes())?;
    let mut snapshot = record.config.clone();
    snapshot.seed = record.seed;
    snapshot.compare.clear();
    write_atomic(&dir.join("config.toml"), snapshot.to_toml().as_bytes())?;
    Ok(())
}

/// Solver-time clock that excludes trace bookkeeping.
struct Clock {
    start: Instant,
    paused: Duration,
}

impl Clock {
    fn new() -> Self {
        Self { start: Instant::now(), paused: Duration::ZERO }
    }

    fn elapsed(&self) -> Duration {
        self.start.elapsed().saturating_sub(self.paused)
    }

    fn ms(&self) -> f64 {
        self.elapsed().as_secs_f64() * 1e3
    }

    fn pause<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.paused += t0.elapsed();
        out
    }
}

fn row(t: &DenseTensor, model: &KruskalModel, iter: usize, wall_ms: f64) -> Result<TraceRow> {
    Ok(TraceRow {
        iter,
        objective: objective(t, model)?,
        rel_error: relative_error(t, model)?,
        wall_ms,
        diversity: None,
    })
}

#[allow(clippy::large_enum_variant)]
enum Solver {
    Flow(FlowState),
    Barrier(FlowState, BarrierSchedule),
    Dtpnn(DtpnnState, DtpnnVariant),
    Hals(KruskalModel, ChaCha8Rng),
    Mur(KruskalModel),
}

impl Solver {
    fn new(cfg: &RunConfig, init: KruskalModel, seed: u64) -> Result<Self> {
        let order = init.order();
        let flow = |m: KruskalModel| -> Result<FlowState> {
            let f = &cfg.flow;
            Ok(FlowState::new(m)
                .with_time_constants(vec![f.time_constant; order], Some(f.step_ratio * f.time_constant))?
                .with_preconditioning(f.preconditioned, f.ridge)
                .with_integrator(f.integrator))
        };
        let dtpnn = |m: KruskalModel, v: DtpnnVariant| -> Result<Solver> {
            let d = &cfg.dtpnn;
            let s = DtpnnState::new(m)
                .with_lambdas(vec![d.lambda; order])?
                .with_preconditioning(d.preconditioned, d.ridge)
                .with_armijo(d.armijo)?
                .with_semi_form(d.semi_form);
            Ok(Solver::Dtpnn(s, v))
        };
        match cfg.algorithm {
            Algorithm::Flow => Ok(Solver::Flow(flow(init)?)),
            Algorithm::BarrierFlow => Ok(Solver::Barrier(flow(init)?, cfg.barrier)),
            Algorithm::DtpnnExplicit => dtpnn(init, DtpnnVariant::Explicit),
            Algorithm::DtpnnArmijo => dtpnn(init, DtpnnVariant::Armijo),
            Algorithm::DtpnnSemiimplicit => dtpnn(init, DtpnnVariant::SemiImplicit),
            Algorithm::Hals => Ok(Solver::Hals(init, ChaCha8Rng::seed_from_u64(seed ^ 0x4841_4C53))),
            Algorithm::Mur => Ok(Solver::Mur(init)),
            Algorithm::Cno => Err(CpdError::InvalidArgument("cno is not a single solver".into())),
        }
    }

    fn advance(&mut self, t: &DenseTensor, iter: usize) -> Result<()> {
        match self {
            Solver::Flow(s) => flow_step(t, s),
            Solver::Barrier(s, schedule) => barrier_flow_step(t, s, schedule.at(iter)).map(|_| ()),
            Solver::Dtpnn(s, v) => dtpnn_step(t, s, *v),
            Solver::Hals(m, rng) => hals_sweep(t, m, rng).map(|_| ()),
            Solver::Mur(m) => mur_sweep(t, m),
        }
    }

    fn model(&self) -> &KruskalModel {
        match self {
            Solver::Flow(s) | Solver::Barrier(s, _) => &s.model,
            Solver::Dtpnn(s, _) => &s.model,
            Solver::Hals(m, _) | Solver::Mur(m) => m,
        }
    }
}

fn run_single(cfg: &RunConfig, t: &DenseTensor, seed: u64) -> Result<(Vec<TraceRow>, Termination, KruskalModel)> {
    let init = seeded_init(t, cfg.rank, seed, cfg.rescale_init)?;
    let mut solver = Solver::new(cfg, init, seed)?;
    let cap = cfg.budget.time_cap_ms.map(Duration::from_millis);
    let every = cfg.output.every;
    let mut clock = Clock::new();
    let mut rows = vec![clock.pause(|| row(t, solver.model(), 0, 0.0))?];
    let mut last_good = solver.model().clone();
    let mut last_iter = 0;
    let mut termination = Termination::MaxIterations;
    for iter in 1..=cfg.budget.max_iters {
        if let Err(e) = solver.advance(t, iter - 1) {
            termination = Termination::Failed(e.to_string());
            break;
        }
        let model = solver.model();
        if !model.is_finite() {
            termination = Termination::Failed(CpdError::Divergence { iter }.to_string());
            break;
        }
        let wall = clock.ms();
        let (r, keep) = clock.pause(|| -> Result<(TraceRow, KruskalModel)> {
            Ok((row(t, model, iter, wall)?, model.clone()))
        })?;
        last_good = keep;
        last_iter = iter;
        let target_hit = r.rel_error <= cfg.budget.target_error;
        let capped = cap.is_some_and(|c| clock.elapsed() >= c);
        let last = iter == cfg.budget.max_iters || target_hit || capped;
        if iter % every == 0 || last {
            rows.push(r);
        }
        if target_hit {
            termination = Termination::TargetReached;
            break;
        }
        if capped {
            termination = Termination::TimeCap;
            break;
        }
    }
    if rows.last().is_some_and(|r| r.iter != last_iter) {
        rows.push(row(t, &last_good, last_iter, clock.ms())?);
    }
    Ok((rows, termination, last_good))
}

fn run_cno(cfg: &RunConfig, t: &DenseTensor, seed: u64) -> Result<(Vec<TraceRow>, Termination, KruskalModel)> {
    let swarm_cfg = cfg.swarm_config(seed);
    let every = cfg.output.every;
    let mut clock = Clock::new();
    let mut rows = Vec::new();
    let mut eval_error = None;
    let outcome = cno_run_with(t, cfg.rank, &swarm_cfg, |sw, r| {
        let wall = clock.ms();
        let iter = r.k + 1;
        let rec = clock.pause(|| -> Result<TraceRow> {
            let best = sw.best_model()?;
            Ok(TraceRow {
                iter,
                objective: r.global_best_value,
                rel_error: relative_error(t, &best)?,
                wall_ms: wall,
                diversity: Some(r.diversity),
            })
        });
        match rec {
            Ok(row) => rows.push(row),
            Err(e) => eval_error = eval_error.take().or(Some(e)),
        }
    });
    if let Some(e) = eval_error {
        return Err(e);
    }
    match outcome {
        Ok((best, trace)) => {
            let termination = match trace.stop {
                SwarmStop::MaxIterations => Termination::MaxIterations,
                SwarmStop::Stagnation => Termination::Stagnation,
                SwarmStop::TimeCap => Termination::TimeCap,
            };
            let n = rows.len();
            let rows = rows
                .into_iter()
                .enumerate()
                .filter(|(i, r)| r.iter % every == 0 || i + 1 == n)
                .map(|(_, r)| r)
                .collect();
            Ok((rows, termination, best))
        }
        Err(e @ (CpdError::InvalidArgument(_) | CpdError::Shape(_) | CpdError::ZeroNorm)) => Err(e),
        Err(e) => {
            // keep the trace; the best model is not recoverable past a solver failure
            let model = seeded_init(t, cfg.rank, seed, cfg.rescale_init)?;
            Ok((rows, Termination::Failed(e.to_string()), model))
        }
    }
}

/// Runs `cfg` for `seed`. Configuration and problem errors are returned;
/// solver failures end the trace and are reported in the termination.
pub fn run(cfg: &RunConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let (t, meta) = load_problem(cfg, seed)?;
    run_on(cfg, &t, meta, seed)
}

/// Same as [`run`] on an already loaded tensor.
pub fn run_on(cfg: &RunConfig, t: &DenseTensor, problem_meta: BTreeMap<String, String>, seed: u64) -> Result<RunRecord> {
    if t.norm_sq() == 0.0 {
        return Err(CpdError::ZeroNorm);
    }
    let (rows, termination, final_model) = match cfg.algorithm {
        Algorithm::Cno => run_cno(cfg, t, seed)?,
        _ => run_single(cfg, t, seed)?,
    };
    Ok(RunRecord { config: cfg.clone(), seed, rows, termination, final_model, problem_meta })
}

/// Directory of one run: `<root>/<name>/<label>/seed<seed>`.
pub fn run_dir(root: &Path, cfg: &RunConfig, label: &str, seed: u64) -> PathBuf {
    root.join(&cfg.output.name).join(label).join(format!("seed{seed}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub label: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub final_rel_error: f64,
    pub termination: String,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub failed: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Sorted by label.
    pub rows: Vec<CompareRow>,
    /// Sorted by label, then seed.
    pub runs: Vec<RunOutcome>,
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

impl Comparison {
    pub fn from_outcomes(mut runs: Vec<RunOutcome>) -> Self {
        runs.sort_by(|a, b| a.label.cmp(&b.label).then(a.seed.cmp(&b.seed)));
        let mut rows: Vec<CompareRow> = Vec::new();
        for chunk in runs.chunk_by(|a, b| a.label == b.label) {
            let mut errs: Vec<f64> = chunk.iter().filter(|r| !r.failed).map(|r| r.final_rel_error).collect();
            errs.sort_by(f64::total_cmp);
            rows.push(CompareRow {
                label: chunk[0].label.clone(),
                algorithm: chunk[0].algorithm,
                runs: chunk.len(),
                failed: chunk.len() - errs.len(),
                median: median(&errs),
                min: errs.first().copied().unwrap_or(f64::NAN),
                max: errs.last().copied().unwrap_or(f64::NAN),
            });
        }
        Self { rows, runs }
    }

    pub fn all_failed(&self) -> bool {
        self.runs.iter().all(|r| r.failed)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,algorithm,runs,failed,median,min,max\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.label, r.algorithm, r.runs, r.failed, r.median, r.min, r.max
            ));
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from("label,algorithm,seed,final_rel_error,termination\n");
        for r in &self.runs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.label, r.algorithm, r.seed, r.final_rel_error, r.termination
            ));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let mut s = format!(
            "{:<w$}  {:<18}  {:>4}  {:>6}  {:>10}  {:>10}  {:>10}\n",
            "label", "algorithm", "runs", "failed", "median", "min", "max"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<w$}  {:<18}  {:>4}  {:>6}  {:>10.3e}  {:>10.3e}  {:>10.3e}\n",
                r.label,
                r.algorithm.as_str(),
                r.runs,
                r.failed,
                r.median,
                r.min,
                r.max
            ));
        }
        s
    }
}

/// The labelled variants of a comparison. Without `[[compare]]` entries the
/// base config is the only variant, labelled by its algorithm.
pub fn variants(base: &toml::Table) -> Result<Vec<(String, RunConfig)>> {
    let cfg = RunConfig::from_table(base.clone())?;
    if cfg.compare.is_empty() {
        return Ok(vec![(cfg.algorithm.to_string(), cfg)]);
    }
    let mut stripped = base.clone();
    stripped.remove("compare");
    let mut out: Vec<(String, RunConfig)> = Vec::with_capacity(cfg.compare.len());
    for v in &cfg.compare {
        if v.label.is_empty() || v.label.contains(['/', '\\', ',']) {
            return Err(CpdError::InvalidArgument(format!("bad variant label `{}`", v.label)));
        }
        if out.iter().any(|(l, _)| l == &v.label) {
            return Err(CpdError::InvalidArgument(format!("duplicate variant label `{}`", v.label)));
        }
        let mut table = stripped.clone();
        apply_overrides(&mut table, &v.set)?;
        out.push((v.label.clone(), RunConfig::from_table(table)?));
    }
    Ok(out)
}

/// Runs every variant for every seed, writing each run under `root` when
/// given. Runs that fail to start are marked failed; the rest proceed.
pub fn compare(base: &toml::Table, seeds: &[u64], root: Option<&Path>) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(CpdError::InvalidArgument("compare needs at least one seed".into()));
    }
    let vars = variants(base)?;
    let mut outcomes = Vec::new();
    let mut traces = Vec::new();
    for (label, cfg) in &vars {
        for &seed in seeds {
            match run(cfg, seed) {
                Ok(rec) => {
                    if let Some(root) = root {
                        let dir = run_dir(root, cfg, label, seed);
                        write_record(&rec, &dir)?;
                        if seed == seeds[0] {
                            traces.push((label.clone(), dir.join("trace.csv")));
                        }
                    }
                    outcomes.push(RunOutcome {
                        label: label.clone(),
                        algorithm: cfg.algorithm,
                        seed,
                        final_rel_error: rec.final_rel_error(),
                        termination: rec.termination.to_string(),
                        failed: rec.termination.is_failure(),
                    });
                }
                Err(e) => outcomes.push(RunOutcome {
                    label: label.clone(),
                    algorithm: cfg.algorithm,
                    seed,
                    final_rel_error: f64::NAN,
                    termination: format!("failed: {e}"),
                    failed: true,
                }),
            }
        }
    }
    let cmp = Comparison::from_outcomes(outcomes);
    if let (Some(root), Some((_, first))) = (root, vars.first()) {
        let dir = root.join(&first.output.name);
        write_atomic(&dir.join("compare.csv"), cmp.to_csv().as_bytes())?;
        write_atomic(&dir.join("runs.csv"), cmp.runs_csv().as_bytes())?;
        write_atomic(&dir.join("table.txt"), cmp.to_table().as_bytes())?;
        if first.output.gnuplot {
            write_atomic(&dir.join("plot.gp"), gnuplot_script(&dir, &traces).as_bytes())?;
        }
    }
    Ok(cmp)
}

/// Log-scale relative error against iteration for each `(title, csv)`.
pub fn gnuplot_script(base: &Path, traces: &[(String, PathBuf)]) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset key autotitle columnhead\nset logscale y\n\
         set xlabel 'iteration'\nset ylabel 'relative error'\n",
    );
    let curves: Vec<String> = traces
        .iter()
        .map(|(title, path)| {
            let rel = path.strip_prefix(base).unwrap_or(path);
            format!("'{}' using 1:3 with lines title '{}'", rel.display(), title)
        })
        .collect();
    if !curves.is_empty() {
        s.push_str("plot ");
        s.push_str(&curves.join(", \\\n     "));
        s.push('\n');
    }
    s
}

/// Inner-solver settings equivalent to a single-solver algorithm, so a
/// one-particle swarm can be compared with the plain run.
pub fn inner_for(cfg: &RunConfig) -> Option<InnerConfig> {
    let base = cfg.swarm.inner;
    let flow = |kind| InnerConfig {
        kind,
        time_constant: cfg.flow.time_constant,
        step_ratio: cfg.flow.step_ratio,
        preconditioned: cfg.flow.preconditioned,
        ridge: cfg.flow.ridge,
        ..base
    };
    let dtpnn = |kind| InnerConfig {
        kind,
        lambda: cfg.dtpnn.lambda,
        preconditioned: cfg.dtpnn.preconditioned,
        ridge: cfg.dtpnn.ridge,
        ..base
    };
    match cfg.algorithm {
        Algorithm::Flow => Some(flow(InnerKind::Flow)),
        Algorithm::DtpnnExplicit => Some(dtpnn(InnerKind::DtpnnExplicit)),
        Algorithm::DtpnnArmijo => Some(dtpnn(InnerKind::DtpnnArmijo)),
        Algorithm::DtpnnSemiimplicit => Some(dtpnn(InnerKind::DtpnnSemiimplicit)),
        _ => None,
    }
}
