//! Synthetic problems: random nonnegative low-rank tensors, rank-exceeds-
//! dimension tensors and factors with controlled column collinearity.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CpdError, Result};
use crate::tensor::{kruskal_full, DenseTensor, KruskalModel, Matrix};

const BISECTION_ITERS: usize = 200;
const RESAMPLE_ATTEMPTS: usize = 200;

/// Pairwise cosine `μ = a_m^T a_n / (‖a_m‖ ‖a_n‖)` between columns.
pub fn collinearity(m: &Matrix) -> Result<Matrix> {
    let norms: Vec<f64> = (0..m.cols()).map(|j| crate::tensor::dot(m.col(j), m.col(j)).sqrt()).collect();
    if let Some(j) = norms.iter().position(|&n| n == 0.0) {
        return Err(CpdError::InvalidArgument(format!("column {j} is zero")));
    }
    let r = m.cols();
    Ok(Matrix::from_fn(r, r, |i, j| {
        if i == j {
            1.0
        } else {
            crate::tensor::dot(m.col(i), m.col(j)) / (norms[i] * norms[j])
        }
    }))
}

/// Closed range of allowed off-diagonal `μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuRange {
    pub low: f64,
    pub high: f64,
}

impl MuRange {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(0.0 <= low && low <= high && high < 1.0) {
            return Err(CpdError::InvalidArgument(format!("need 0 <= low <= high < 1, got [{low}, {high}]")));
        }
        Ok(Self { low, high })
    }

    pub fn contains(&self, mu: f64) -> bool {
        self.low <= mu && mu <= self.high
    }

    fn mid(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

impl std::fmt::Display for MuRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.low, self.high)
    }
}

/// Requested collinearity: `high` on the listed factors, `other` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct CollinearitySpec {
    pub high: MuRange,
    pub which_factors: Vec<usize>,
    pub other: MuRange,
}

fn off_diagonal_extremes(mu: &Matrix) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..mu.rows() {
        for j in 0..i {
            lo = lo.min(mu[(i, j)]);
            hi = hi.max(mu[(i, j)]);
        }
    }
    (lo, hi)
}

fn blend(w: &[f64], u: &Matrix, eta: f64) -> Matrix {
    Matrix::from_fn(w.len(), u.cols(), |i, j| w[i] + eta * u[(i, j)])
}

/// Nonnegative `dim × rank` factor with every off-diagonal `μ` in `range`.
///
/// Columns are `w + η u_r` with a shared `w ~ U[0,1)` and perturbations
/// `u_r` on disjoint supports (dense `U^4` draws when `rank > dim`); `η` is
/// bisected so the extreme `μ`s straddle the middle of the range.
pub fn gen_collinear_factor<R: Rng + ?Sized>(dim: usize, rank: usize, range: MuRange, rng: &mut R) -> Result<Matrix> {
    if dim == 0 || rank == 0 {
        return Err(CpdError::InvalidArgument("dimension and rank must be >= 1".into()));
    }
    if rank == 1 {
        return Ok(Matrix::from_fn(dim, 1, |_, _| 0.5 + 0.5 * rng.random::<f64>()));
    }
    for _ in 0..RESAMPLE_ATTEMPTS {
        let w: Vec<f64> = (0..dim).map(|_| 0.5 + 0.5 * rng.random::<f64>()).collect();
        let u = if rank <= dim {
            let block = (dim / rank).max(1);
            let mut u = Matrix::zeros(dim, rank);
            for r in 0..rank {
                for i in r * block..(r + 1) * block {
                    u[(i, r)] = 0.5 + 0.5 * rng.random::<f64>();
                }
            }
            u
        } else {
            Matrix::from_fn(dim, rank, |_, _| rng.random::<f64>().powi(4))
        };
        let score = |eta: f64| -> Result<(f64, f64)> { Ok(off_diagonal_extremes(&collinearity(&blend(&w, &u, eta))?)) };
        let target = range.mid();
        let mut hi = 1.0;
        let mut grow = 0;
        while {
            let (lo_mu, hi_mu) = score(hi)?;
            0.5 * (lo_mu + hi_mu) > target
        } {
            hi *= 2.0;
            grow += 1;
            if grow > 60 {
                break;
            }
        }
        let mut lo = 0.0;
        for _ in 0..BISECTION_ITERS {
            let mid = 0.5 * (lo + hi);
            let (a, b) = score(mid)?;
            if 0.5 * (a + b) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let eta = 0.5 * (lo + hi);
        let m = blend(&w, &u, eta);
        let (a, b) = off_diagonal_extremes(&collinearity(&m)?);
        if range.contains(a) && range.contains(b) {
            return Ok(m);
        }
    }
    Err(CpdError::Infeasible(format!(
        "no {dim}x{rank} factor with collinearity in [{}, {}]",
        range.low, range.high
    )))
}

/// Problem families.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    /// 9×9×9 with rank `r` (10 unless given as `difficult9_R{r}`).
    Difficult9 { rank: usize },
    /// 70×70×70, rank 75.
    Medium70,
    /// 20×20×20, rank 10, third factor highly collinear.
    CaseI,
    /// 20×20×20, rank 10, second and third factors highly collinear.
    CaseII,
    Random { shape: Vec<usize>, rank: usize },
}

impl FromStr for ProblemKind {
    type Err = CpdError;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || CpdError::UnknownKind(s.to_string());
        match s {
            "difficult9" => return Ok(Self::Difficult9 { rank: 10 }),
            "medium70" => return Ok(Self::Medium70),
            "caseI" => return Ok(Self::CaseI),
            "caseII" => return Ok(Self::CaseII),
            _ => {}
        }
        if let Some(r) = s.strip_prefix("difficult9_R") {
            let rank: usize = r.parse().map_err(|_| unknown())?;
            return if rank == 0 { Err(unknown()) } else { Ok(Self::Difficult9 { rank }) };
        }
        if let Some(rest) = s.strip_prefix("random_") {
            let (dims, rank) = rest.split_once("_R").ok_or_else(unknown)?;
            let shape: Vec<usize> = dims.split('x').map(|d| d.parse().map_err(|_| unknown())).collect::<Result<_>>()?;
            let rank: usize = rank.parse().map_err(|_| unknown())?;
            if rank == 0 || shape.contains(&0) {
                return Err(unknown());
            }
            return Ok(Self::Random { shape, rank });
        }
        Err(unknown())
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Difficult9 { rank: 10 } => write!(f, "difficult9"),
            Self::Difficult9 { rank } => write!(f, "difficult9_R{rank}"),
            Self::Medium70 => write!(f, "medium70"),
            Self::CaseI => write!(f, "caseI"),
            Self::CaseII => write!(f, "caseII"),
            Self::Random { shape, rank } => {
                let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
                write!(f, "random_{}_R{rank}", dims.join("x"))
            }
        }
    }
}

impl ProblemKind {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Self::Difficult9 { .. } => vec![9, 9, 9],
            Self::Medium70 => vec![70, 70, 70],
            Self::CaseI | Self::CaseII => vec![20, 20, 20],
            Self::Random { shape, .. } => shape.clone(),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            Self::Difficult9 { rank } => *rank,
            Self::Medium70 => 75,
            Self::CaseI | Self::CaseII => 10,
            Self::Random { rank, .. } => *rank,
        }
    }

    /// Collinearity requested for each factor, if any.
    pub fn collinearity(&self) -> Option<CollinearitySpec> {
        let high = MuRange { low: 0.96, high: 0.99 };
        let other = MuRange { low: 0.4, high: 0.6 };
        match self {
            Self::CaseI => Some(CollinearitySpec { high, which_factors: vec![2], other }),
            Self::CaseII => Some(CollinearitySpec { high, which_factors: vec![1, 2], other }),
            _ => None,
        }
    }
}

/// A generated instance with its ground truth and metadata.
#[derive(Debug, Clone)]
pub struct Problem {
    pub tensor: DenseTensor,
    pub truth: KruskalModel,
    pub kind: ProblemKind,
    pub seed: u64,
    /// Signal-to-noise ratio in dB of the added noise, if any.
    pub snr_db: Option<f64>,
}

impl Problem {
    /// Sidecar `key=value` record.
    pub fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("kind".into(), self.kind.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("rank".into(), self.kind.rank().to_string());
        let dims: Vec<String> = self.kind.shape().iter().map(usize::to_string).collect();
        m.insert("shape".into(), dims.join("x"));
        if let Some(spec) = self.kind.collinearity() {
            for n in 0..self.truth.order() {
                let r = if spec.which_factors.contains(&n) { spec.high } else { spec.other };
                m.insert(format!("mu_factor{n}"), r.to_string());
            }
        }
        m.insert(
            "snr_db".into(),
            self.snr_db.map_or_else(|| "none".to_string(), |s| s.to_string()),
        );
        m
    }
}

/// Deterministic instance of `kind` for `seed`, noiseless.
pub fn gen_problem(kind: &str, seed: u64) -> Result<Problem> {
    gen_problem_with_noise(kind, seed, None)
}

/// As [`gen_problem`], optionally adding zero-mean uniform noise scaled to
/// `snr_db` and clipping the result at 0.
pub fn gen_problem_with_noise(kind: &str, seed: u64, snr_db: Option<f64>) -> Result<Problem> {
    let kind: ProblemKind = kind.parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = kind.shape();
    let rank = kind.rank();
    let factors = match kind.collinearity() {
        Some(spec) => (0..shape.len())
            .map(|n| {
                let range = if spec.which_factors.contains(&n) { spec.high } else { spec.other };
                gen_collinear_factor(shape[n], rank, range, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?,
        None => shape.iter().map(|&d| Matrix::random_uniform(d, rank, &mut rng)).collect(),
    };
    let truth = KruskalModel::new(factors)?;
    let mut tensor = kruskal_full(&truth);
    if let Some(db) = snr_db {
        add_noise(&mut tensor, db, &mut rng)?;
    }
    Ok(Problem { tensor, truth, kind, seed, snr_db })
}

fn add_noise<R: Rng + ?Sized>(t: &mut DenseTensor, snr_db: f64, rng: &mut R) -> Result<()> {
    if !snr_db.is_finite() {
        return Err(CpdError::InvalidArgument(format!("bad SNR {snr_db}")));
    }
    let noise: Vec<f64> = (0..t.len()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let noise_sq: f64 = noise.iter().map(|v| v * v).sum();
    if noise_sq == 0.0 {
        return Ok(());
    }
    let scale = (t.norm_sq() / noise_sq / 10f64.powf(snr_db / 10.0)).sqrt();
    for (x, n) in t.data_mut().iter_mut().zip(noise) {
        *x = (*x + scale * n).max(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relative_error;

    #[test]
    fn collinearity_examples() {
        let s = 1.0 / 2f64.sqrt();
        let m = Matrix::from_rows(&[&[1.0, s, 0.0], &[0.0, s, 1.0]]).unwrap();
        let mu = collinearity(&m).unwrap();
        assert!((mu[(0, 1)] - s).abs() < 1e-15);
        assert_eq!(mu[(0, 2)], 0.0);
        assert_eq!(mu[(1, 1)], 1.0);
        let dup = Matrix::from_rows(&[&[2.0, 2.0], &[1.0, 1.0]]).unwrap();
        assert!((collinearity(&dup).unwrap()[(0, 1)] - 1.0).abs() < 1e-15);
        assert!(collinearity(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn collinear_factor_membership_over_seeds() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for range in [MuRange::new(0.96, 0.99).unwrap(), MuRange::new(0.4, 0.6).unwrap()] {
                let f = gen_collinear_factor(20, 10, range, &mut rng).unwrap();
                assert!(f.min_entry() >= 0.0);
                let (lo, hi) = off_diagonal_extremes(&collinearity(&f).unwrap());
                assert!(range.contains(lo) && range.contains(hi), "seed {seed}: [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn near_one_collinearity_gives_near_identical_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = gen_collinear_factor(12, 4, MuRange::new(0.999, 0.9999).unwrap(), &mut rng).unwrap();
        let mu = collinearity(&f).unwrap();
        assert!(mu.data().iter().all(|&v| v >= 0.999));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("difficult9".parse::<ProblemKind>().unwrap().rank(), 10);
        assert_eq!("difficult9_R13".parse::<ProblemKind>().unwrap().rank(), 13);
        let k: ProblemKind = "random_5x6x7_R3".parse().unwrap();
        assert_eq!(k.shape(), vec![5, 6, 7]);
        assert_eq!(k.to_string(), "random_5x6x7_R3");
        for bad in ["difficult", "random_5x_R3", "random_5x5x5", "difficult9_R0", "caseIII"] {
            assert!(matches!(bad.parse::<ProblemKind>(), Err(CpdError::UnknownKind(_))), "{bad}");
        }
    }

    #[test]
    fn problems_are_deterministic_and_exact() {
        let a = gen_problem("difficult9", 4).unwrap();
        let b = gen_problem("difficult9", 4).unwrap();
        assert_eq!(a.tensor, b.tensor);
        assert_eq!(a.tensor.shape(), &[9, 9, 9]);
        assert_eq!(a.truth.rank(), 10);
        assert_eq!(relative_error(&a.tensor, &a.truth).unwrap(), 0.0);
    }

    #[test]
    fn case_one_meets_its_collinearity() {
        let p = gen_problem("caseI", 11).unwrap();
        assert_eq!(p.tensor.shape(), &[20, 20, 20]);
        let spec = p.kind.collinearity().unwrap();
        for n in 0..3 {
            let range = if spec.which_factors.contains(&n) { spec.high } else { spec.other };
            let (lo, hi) = off_diagonal_extremes(&collinearity(p.truth.factor(n)).unwrap());
            assert!(range.contains(lo) && range.contains(hi));
        }
        assert_eq!(p.metadata()["mu_factor2"], "0.96..0.99");
    }

    #[test]
    fn noise_hits_requested_snr_before_clipping() {
        let clean = gen_problem("random_6x6x6_R2", 1).unwrap();
        let noisy = gen_problem_with_noise("random_6x6x6_R2", 1, Some(20.0)).unwrap();
        assert!(noisy.tensor.is_nonnegative());
        let diff: f64 = clean.tensor.data().iter().zip(noisy.tensor.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let snr = 10.0 * (clean.tensor.norm_sq() / diff).log10();
        assert!(snr >= 20.0 - 1e-9, "{snr}");
    }
}
