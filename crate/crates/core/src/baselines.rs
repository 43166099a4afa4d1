//! Reference nonnegative CPD solvers: column-wise HALS and multiplicative
//! updates. Both work from MTTKRP and Gram quantities only.

use log::warn;
use rand::Rng;

use crate::error::Result;
use crate::tensor::{hadamard_gram, mttkrp, mttkrp_column, DenseTensor, KruskalModel};

const MUR_GUARD: f64 = 1e-16;

/// Columns re-seeded by a HALS sweep, as `(mode, column)`.
pub type Reseeded = Vec<(usize, usize)>;

/// `H[:, r]` of the Gram Hadamard product skipping `mode`, in `O(N I R)`.
fn gram_column(model: &KruskalModel, mode: usize, r: usize) -> Vec<f64> {
    let rank = model.rank();
    let mut h = vec![1.0; rank];
    for (m, f) in model.factors().iter().enumerate() {
        if m == mode {
            continue;
        }
        let cr = f.col(r);
        for (s, hs) in h.iter_mut().enumerate() {
            *hs *= crate::tensor::dot(f.col(s), cr);
        }
    }
    h
}

/// One HALS sweep: for `r = 0..R`, update column `r` of every factor in
/// turn by the projected closed-form rank-1 least-squares solution
/// `a_r ← [(M[:, r] − Σ_{s≠r} a_s H[s, r]) / H[r, r]]_+`.
///
/// When `H[r, r] = 0` the zero columns of the other factors are re-seeded
/// uniformly in `[0, 1)` (skipped for an all-zero tensor, where zero is the
/// solution).
pub fn hals_sweep<R: Rng + ?Sized>(
    t: &DenseTensor,
    model: &mut KruskalModel,
    rng: &mut R,
) -> Result<Reseeded> {
    let mut reseeded = Vec::new();
    let zero_data = t.norm_sq() == 0.0;
    let rank = model.rank();
    for r in 0..rank {
        for mode in 0..model.order() {
            let mut h = gram_column(model, mode, r);
            if h[r] <= 0.0 && !zero_data {
                for m in (0..model.order()).filter(|&m| m != mode) {
                    let col = model.factor_mut(m).col_mut(r);
                    if col.iter().all(|&v| v == 0.0) {
                        col.iter_mut().for_each(|v| *v = rng.random());
                        warn!("hals: re-seeded column {r} of factor {m}");
                        reseeded.push((m, r));
                    }
                }
                h = gram_column(model, mode, r);
            }
            let m_col = mttkrp_column(t, model, mode, r)?;
            let f = model.factor_mut(mode);
            let rows = f.rows();
            let mut num = m_col;
            for (s, &hs) in h.iter().enumerate() {
                if s == r || hs == 0.0 {
                    continue;
                }
                let cs = f.col(s);
                for i in 0..rows {
                    num[i] -= cs[i] * hs;
                }
            }
            let col = f.col_mut(r);
            if h[r] > 0.0 {
                for (c, v) in col.iter_mut().zip(&num) {
                    *c = (v / h[r]).max(0.0);
                }
            } else {
                col.iter_mut().for_each(|c| *c = 0.0);
            }
        }
    }
    Ok(reseeded)
}

/// One multiplicative sweep over the factors in order:
/// `A ← A ∗ M ⊘ (A H + 1e-16)`.
pub fn mur_sweep(t: &DenseTensor, model: &mut KruskalModel) -> Result<()> {
    for mode in 0..model.order() {
        let m = mttkrp(t, model, mode)?;
        let h = hadamard_gram(model, mode)?;
        let denom = model.factor(mode).matmul(&h)?;
        let f = model.factor_mut(mode);
        for ((a, &num), &den) in f.data_mut().iter_mut().zip(m.data()).zip(denom.data()) {
            *a *= num / (den + MUR_GUARD);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{kkt_residuals, objective};
    use crate::tensor::{kruskal_full, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hals_recovers_rank_one_in_one_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = KruskalModel::random_uniform(&[4, 5, 3], 1, &mut rng).unwrap();
        let t = kruskal_full(&truth);
        let mut m = KruskalModel::random_uniform(&[4, 5, 3], 1, &mut rng).unwrap();
        hals_sweep(&t, &mut m, &mut rng).unwrap();
        assert!(relative_error(&t, &m).unwrap() <= 1e-10);
    }

    #[test]
    fn hals_objective_non_increasing() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = DenseTensor::from_fn(&[5, 5, 5], |_| rng.random()).unwrap();
            let mut m = KruskalModel::random_uniform(&[5, 5, 5], 3, &mut rng).unwrap();
            let mut prev = objective(&t, &m).unwrap();
            for _ in 0..200 {
                let re = hals_sweep(&t, &mut m, &mut rng).unwrap();
                let f = objective(&t, &m).unwrap();
                if re.is_empty() {
                    assert!(f <= prev + 1e-12, "seed {seed}: {f} > {prev}");
                }
                assert!(m.is_nonnegative());
                prev = f;
            }
        }
    }

    #[test]
    fn hals_on_zero_tensor_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = DenseTensor::zeros(&[3, 3, 3]).unwrap();
        let mut m = KruskalModel::random_uniform(&[3, 3, 3], 2, &mut rng).unwrap();
        for _ in 0..2 {
            assert!(hals_sweep(&t, &mut m, &mut rng).unwrap().is_empty());
        }
        assert_eq!(m.factor(0).max_abs(), 0.0);
    }

    #[test]
    fn hals_reseeds_dead_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = DenseTensor::from_fn(&[3, 3, 3], |_| rng.random()).unwrap();
        let mut m = KruskalModel::random_uniform(&[3, 3, 3], 2, &mut rng).unwrap();
        m.factor_mut(1).col_mut(0).iter_mut().for_each(|v| *v = 0.0);
        let re = hals_sweep(&t, &mut m, &mut rng).unwrap();
        assert_eq!(re, vec![(1, 0)]);
    }

    #[test]
    fn mur_preserves_zeros_and_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = DenseTensor::from_fn(&[4, 4, 4], |_| rng.random()).unwrap();
        let mut m = KruskalModel::random_uniform(&[4, 4, 4], 2, &mut rng).unwrap();
        m.factor_mut(0)[(1, 1)] = 0.0;
        for _ in 0..50 {
            mur_sweep(&t, &mut m).unwrap();
            assert_eq!(m.factor(0)[(1, 1)], 0.0);
            assert!(m.is_nonnegative());
        }
    }

    #[test]
    fn mur_exact_fit_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = KruskalModel::random_uniform(&[4, 3, 5], 2, &mut rng).unwrap();
        let t = kruskal_full(&truth);
        let mut m = truth.clone();
        mur_sweep(&t, &mut m).unwrap();
        for n in 0..3 {
            assert!(m.factor(n).sub(truth.factor(n)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn mur_objective_non_increasing() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let t = DenseTensor::from_fn(&[5, 5, 5], |_| rng.random()).unwrap();
            let mut m = KruskalModel::random_uniform(&[5, 5, 5], 3, &mut rng).unwrap();
            let mut prev = objective(&t, &m).unwrap();
            for _ in 0..500 {
                mur_sweep(&t, &mut m).unwrap();
                let f = objective(&t, &m).unwrap();
                assert!(f <= prev + 1e-12 * prev.max(1.0), "seed {seed}");
                prev = f;
            }
        }
    }

    #[test]
    fn both_reach_kkt_on_exact_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = KruskalModel::random_uniform(&[5, 5, 5], 2, &mut rng).unwrap();
        let t = kruskal_full(&truth);
        let init = KruskalModel::random_uniform(&[5, 5, 5], 2, &mut rng).unwrap();
        let mut h = init.clone();
        for _ in 0..5000 {
            hals_sweep(&t, &mut h, &mut rng).unwrap();
        }
        assert!(kkt_residuals(&t, &h).unwrap().iter().all(|&r| r < 1e-4));
        let mut m = init;
        for _ in 0..5000 {
            mur_sweep(&t, &mut m).unwrap();
        }
        let r = kkt_residuals(&t, &m).unwrap();
        assert!(r.iter().all(|&v| v < 1e-4), "{r:?}");
    }
}
