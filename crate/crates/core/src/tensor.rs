//! Dense tensors, small column-major matrices, Kruskal models and the
//! multilinear kernels (unfolding, Khatri–Rao, Gram Hadamard products,
//! MTTKRP, reconstruction) shared by every solver.
//!
//! All storage is first-index-fastest. The mode-`n` unfolding orders its
//! columns over the remaining indices with the lowest remaining mode
//! fastest, which is the convention under which
//! `X_(1) = A (C ⊙ B)^T` holds for a third-order tensor.
//!
//! Modes are zero-based throughout the Rust API.

use rand::Rng;

use crate::error::{CpdError, Result};

/// Column-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CpdError::Shape(format!(
                "matrix {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices; convenient in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(CpdError::Shape("ragged rows".into()));
        }
        Ok(Self::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn random_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(CpdError::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for k in 0..self.cols {
                let s = other[(k, j)];
                if s == 0.0 {
                    continue;
                }
                for (d, a) in dst.iter_mut().zip(self.col(k)) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(CpdError::Shape(format!(
                "cannot form ({}x{})^T * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix::from_fn(self.cols, other.cols, |i, j| {
            dot(self.col(i), other.col(j))
        }))
    }

    /// Gram matrix `self^T self`, symmetric by construction.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = dot(self.col(i), self.col(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    pub fn hadamard_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.hadamard_assign(other);
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { data, ..*self }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix { data, ..*self }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Entrywise projection onto the nonnegative orthant, `[·]_+`.
    pub fn positive_part(&self) -> Matrix {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &Matrix) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Order-N dense array stored first-index-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(CpdError::Shape(format!("invalid tensor shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(CpdError::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    /// Fills a tensor from a function of the multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let mut idx = vec![0usize; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            increment(&mut idx, shape);
        }
        Ok(t)
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        let mut stride = 1;
        for (&i, &d) in idx.iter().zip(&self.shape) {
            lin += i * stride;
            stride *= d;
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}

fn check_mode(mode: usize, order: usize) -> Result<()> {
    if mode >= order {
        return Err(CpdError::ModeOutOfRange { mode, order });
    }
    Ok(())
}

/// Column index of `idx` in the mode-`mode` unfolding.
fn unfolded_column(idx: &[usize], shape: &[usize], mode: usize) -> usize {
    let mut col = 0;
    let mut stride = 1;
    for (m, (&i, &d)) in idx.iter().zip(shape).enumerate() {
        if m == mode {
            continue;
        }
        col += i * stride;
        stride *= d;
    }
    col
}

/// Mode-`mode` matricization `X_(mode)`, sized `I_mode × ∏_{m≠mode} I_m`.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    check_mode(mode, t.order())?;
    let rows = t.shape[mode];
    let cols = t.len() / rows;
    let mut out = Matrix::zeros(rows, cols);
    let mut idx = vec![0usize; t.order()];
    for &v in &t.data {
        let j = unfolded_column(&idx, &t.shape, mode);
        out[(idx[mode], j)] = v;
        increment(&mut idx, &t.shape);
    }
    Ok(out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, shape: &[usize], mode: usize) -> Result<DenseTensor> {
    check_mode(mode, shape.len())?;
    let total: usize = shape.iter().product();
    if m.rows() != shape[mode] || m.rows() * m.cols() != total {
        return Err(CpdError::Shape(format!(
            "cannot fold {}x{} into {shape:?} along mode {mode}",
            m.rows(),
            m.cols()
        )));
    }
    DenseTensor::from_fn(shape, |idx| {
        m[(idx[mode], unfolded_column(idx, shape, mode))]
    })
}

/// Column-wise Kronecker product `a ⊙ b`; row `(i, j)` maps to `i * b.rows + j`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(CpdError::Shape(format!(
            "Khatri-Rao needs equal column counts, got {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let rows = a.rows() * b.rows();
    let mut out = Matrix::zeros(rows, a.cols());
    for r in 0..a.cols() {
        let dst = out.col_mut(r);
        for (i, &av) in a.col(r).iter().enumerate() {
            for (j, &bv) in b.col(r).iter().enumerate() {
                dst[i * b.rows() + j] = av * bv;
            }
        }
    }
    Ok(out)
}

/// Factor matrices of a rank-R CP model in Kruskal form.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalModel {
    factors: Vec<Matrix>,
}

impl KruskalModel {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        let rank = factors
            .first()
            .map(Matrix::cols)
            .ok_or_else(|| CpdError::Shape("a Kruskal model needs at least one factor".into()))?;
        if rank == 0 {
            return Err(CpdError::Shape("rank must be at least 1".into()));
        }
        if let Some(bad) = factors.iter().position(|f| f.cols() != rank || f.rows() == 0) {
            return Err(CpdError::Shape(format!(
                "factor {bad} is {}x{}, expected R = {rank} columns",
                factors[bad].rows(),
                factors[bad].cols()
            )));
        }
        Ok(Self { factors })
    }

    pub fn zeros(shape: &[usize], rank: usize) -> Result<Self> {
        Self::new(shape.iter().map(|&d| Matrix::zeros(d, rank)).collect())
    }

    /// I.i.d. uniform `[0, 1)` factors.
    pub fn random_uniform<R: Rng + ?Sized>(shape: &[usize], rank: usize, rng: &mut R) -> Result<Self> {
        Self::new(
            shape
                .iter()
                .map(|&d| Matrix::random_uniform(d, rank, rng))
                .collect(),
        )
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.factors[0].cols()
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    #[inline]
    pub fn factor(&self, n: usize) -> &Matrix {
        &self.factors[n]
    }

    #[inline]
    pub fn factor_mut(&mut self, n: usize) -> &mut Matrix {
        &mut self.factors[n]
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn into_factors(self) -> Vec<Matrix> {
        self.factors
    }

    /// Replaces factor `n`, keeping its shape.
    pub fn set_factor(&mut self, n: usize, m: Matrix) -> Result<()> {
        let cur = &self.factors[n];
        if (cur.rows(), cur.cols()) != (m.rows(), m.cols()) {
            return Err(CpdError::Shape(format!(
                "factor {n} is {}x{}, replacement is {}x{}",
                cur.rows(),
                cur.cols(),
                m.rows(),
                m.cols()
            )));
        }
        self.factors[n] = m;
        Ok(())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.factors
            .iter()
            .all(|f| f.data().iter().all(|&v| v >= 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.factors.iter().all(Matrix::is_finite)
    }

    pub fn min_entry(&self) -> f64 {
        self.factors
            .iter()
            .map(Matrix::min_entry)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn num_params(&self) -> usize {
        self.factors.iter().map(|f| f.data().len()).sum()
    }

    /// Concatenated factor entries (factor 0 first, each column-major).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for f in &self.factors {
            v.extend_from_slice(f.data());
        }
        v
    }

    pub fn from_flat(shape: &[usize], rank: usize, flat: &[f64]) -> Result<Self> {
        let need: usize = shape.iter().map(|d| d * rank).sum();
        if flat.len() != need {
            return Err(CpdError::Shape(format!(
                "flat vector has {} entries, model needs {need}",
                flat.len()
            )));
        }
        let mut off = 0;
        let mut factors = Vec::with_capacity(shape.len());
        for &d in shape {
            factors.push(Matrix::new(d, rank, flat[off..off + d * rank].to_vec())?);
            off += d * rank;
        }
        Self::new(factors)
    }

    pub fn grams(&self) -> Vec<Matrix> {
        self.factors.iter().map(Matrix::gram).collect()
    }

    /// `‖⟦A^(1),…,A^(N)⟧‖_F²` through the Hadamard product of all Grams.
    pub fn norm_sq(&self) -> f64 {
        let grams = self.grams();
        let mut h = grams[0].clone();
        for g in &grams[1..] {
            h.hadamard_assign(g);
        }
        h.data().iter().sum()
    }

    fn check_tensor(&self, t: &DenseTensor) -> Result<()> {
        if t.shape() != self.shape().as_slice() {
            return Err(CpdError::Shape(format!(
                "tensor shape {:?} does not match model shape {:?}",
                t.shape(),
                self.shape()
            )));
        }
        Ok(())
    }
}

/// `∗_{n≠skip} (A^(n)ᵀ A^(n))`, equal to `KRᵀ KR` for the Khatri–Rao
/// product of every factor except `skip`.
pub fn hadamard_gram(model: &KruskalModel, skip: usize) -> Result<Matrix> {
    check_mode(skip, model.order())?;
    let r = model.rank();
    let mut h = Matrix::from_fn(r, r, |_, _| 1.0);
    for (n, f) in model.factors().iter().enumerate() {
        if n != skip {
            h.hadamard_assign(&f.gram());
        }
    }
    Ok(h)
}

/// Walks the fibers of `t` along `mode`; for each fiber the callback
/// receives the fiber's base offset and the multi-index of the other modes.
fn for_each_fiber(shape: &[usize], mode: usize, mut f: impl FnMut(usize, &[usize])) {
    let stride: usize = shape[..mode].iter().product();
    let dim = shape[mode];
    let outer: usize = shape[mode + 1..].iter().product();
    let mut idx = vec![0usize; shape.len()];
    for hi in 0..outer {
        let mut rem = hi;
        for m in mode + 1..shape.len() {
            idx[m] = rem % shape[m];
            rem /= shape[m];
        }
        for lo in 0..stride {
            let mut rem = lo;
            for m in 0..mode {
                idx[m] = rem % shape[m];
                rem /= shape[m];
            }
            f(lo + stride * dim * hi, &idx);
        }
    }
}

/// Matricized tensor times Khatri–Rao product, `X_(mode) (⊙_{m≠mode} A^(m))`,
/// computed fiber by fiber without forming the Khatri–Rao product.
pub fn mttkrp(t: &DenseTensor, model: &KruskalModel, mode: usize) -> Result<Matrix> {
    check_mode(mode, t.order())?;
    model.check_tensor(t)?;
    let shape = t.shape();
    let r = model.rank();
    let dim = shape[mode];
    let stride: usize = shape[..mode].iter().product();
    // row-major accumulator, transposed on exit
    let mut acc = vec![0.0; dim * r];
    let mut w = vec![0.0; r];
    let data = t.data();
    for_each_fiber(shape, mode, |base, idx| {
        w.iter_mut().for_each(|x| *x = 1.0);
        for (m, f) in model.factors().iter().enumerate() {
            if m == mode {
                continue;
            }
            let i = idx[m];
            for (c, wc) in w.iter_mut().enumerate() {
                *wc *= f[(i, c)];
            }
        }
        for i in 0..dim {
            let x = data[base + i * stride];
            if x == 0.0 {
                continue;
            }
            let row = &mut acc[i * r..(i + 1) * r];
            for (a, &wc) in row.iter_mut().zip(&w) {
                *a += x * wc;
            }
        }
    });
    Ok(Matrix::from_fn(dim, r, |i, c| acc[i * r + c]))
}

/// Single column `r` of [`mttkrp`].
pub fn mttkrp_column(t: &DenseTensor, model: &KruskalModel, mode: usize, r: usize) -> Result<Vec<f64>> {
    check_mode(mode, t.order())?;
    model.check_tensor(t)?;
    if r >= model.rank() {
        return Err(CpdError::InvalidArgument(format!(
            "column {r} out of range for rank {}",
            model.rank()
        )));
    }
    let shape = t.shape();
    let dim = shape[mode];
    let stride: usize = shape[..mode].iter().product();
    let data = t.data();
    let mut out = vec![0.0; dim];
    for_each_fiber(shape, mode, |base, idx| {
        let mut w = 1.0;
        for (m, f) in model.factors().iter().enumerate() {
            if m != mode {
                w *= f[(idx[m], r)];
            }
        }
        if w == 0.0 {
            return;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += data[base + i * stride] * w;
        }
    });
    Ok(out)
}

/// Dense reconstruction `Σ_r a_r^(1) ∘ … ∘ a_r^(N)`.
pub fn kruskal_full(model: &KruskalModel) -> DenseTensor {
    let shape = model.shape();
    let r = model.rank();
    let first = model.factor(0);
    let dim0 = shape[0];
    let mut out = DenseTensor::zeros(&shape).expect("model shapes are valid");
    let mut w = vec![0.0; r];
    let data = out.data_mut();
    for_each_fiber(&shape, 0, |base, idx| {
        w.iter_mut().for_each(|x| *x = 1.0);
        for (m, f) in model.factors().iter().enumerate().skip(1) {
            for (c, wc) in w.iter_mut().enumerate() {
                *wc *= f[(idx[m], c)];
            }
        }
        for (c, &wc) in w.iter().enumerate() {
            if wc == 0.0 {
                continue;
            }
            for (d, &a) in data[base..base + dim0].iter_mut().zip(first.col(c)) {
                *d += a * wc;
            }
        }
    });
    out
}

pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.frobenius_norm()
}

/// `‖X − ⟦model⟧‖_F / ‖X‖_F`, evaluated on the dense residual.
pub fn relative_error(t: &DenseTensor, model: &KruskalModel) -> Result<f64> {
    model.check_tensor(t)?;
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        return Err(CpdError::ZeroNorm);
    }
    let full = kruskal_full(model);
    let resid: f64 = t
        .data()
        .iter()
        .zip(full.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(resid.sqrt() / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq_tensor(shape: &[usize]) -> DenseTensor {
        let n: usize = shape.iter().product();
        DenseTensor::new(shape.to_vec(), (1..=n).map(|v| v as f64).collect()).unwrap()
    }

    // brute-force: X_(mode)[i_mode, col] where col enumerates the other
    // indices lowest-mode-fastest
    fn unfold_oracle(t: &DenseTensor, mode: usize) -> Vec<Vec<f64>> {
        let shape = t.shape();
        let cols: usize = t.len() / shape[mode];
        let mut out = vec![vec![f64::NAN; cols]; shape[mode]];
        let mut idx = vec![0; shape.len()];
        for lin in 0..t.len() {
            let mut rem = lin;
            for m in 0..shape.len() {
                idx[m] = rem % shape[m];
                rem /= shape[m];
            }
            let mut col = 0;
            let mut mult = 1;
            for m in 0..shape.len() {
                if m != mode {
                    col += idx[m] * mult;
                    mult *= shape[m];
                }
            }
            out[idx[mode]][col] = t.get(&idx);
        }
        out
    }

    #[test]
    fn unfold_2x2x2_mode1() {
        let t = seq_tensor(&[2, 2, 2]);
        let x1 = unfold(&t, 0).unwrap();
        assert_eq!(x1.row(0), vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(x1.row(1), vec![2.0, 4.0, 6.0, 8.0]);
        let oracle = unfold_oracle(&t, 0);
        assert_eq!(oracle[0], x1.row(0));
    }

    #[test]
    fn unfold_matches_oracle_every_mode() {
        let t = seq_tensor(&[2, 3, 4, 2]);
        for mode in 0..4 {
            let m = unfold(&t, mode).unwrap();
            let oracle = unfold_oracle(&t, mode);
            for (i, row) in oracle.iter().enumerate() {
                assert_eq!(&m.row(i), row, "mode {mode} row {i}");
            }
        }
    }

    #[test]
    fn unfold_degenerate_and_bad_mode() {
        let t = DenseTensor::new(vec![1, 1, 1], vec![5.0]).unwrap();
        for mode in 0..3 {
            let m = unfold(&t, mode).unwrap();
            assert_eq!((m.rows(), m.cols(), m[(0, 0)]), (1, 1, 5.0));
        }
        assert_eq!(
            unfold(&t, 3),
            Err(CpdError::ModeOutOfRange { mode: 3, order: 3 })
        );
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn khatri_rao_examples() {
        let i2 = Matrix::identity(2);
        let kr = khatri_rao(&i2, &i2).unwrap();
        let expect = Matrix::from_rows(&[&[1., 0.], &[0., 0.], &[0., 0.], &[0., 1.]]).unwrap();
        assert_eq!(kr, expect);

        let a = Matrix::from_rows(&[&[1., 2.], &[3., 4.]]).unwrap();
        let b = Matrix::from_rows(&[&[0., 1.], &[1., 0.]]).unwrap();
        let expect = Matrix::from_rows(&[&[0., 2.], &[1., 0.], &[0., 4.], &[3., 0.]]).unwrap();
        assert_eq!(khatri_rao(&a, &b).unwrap(), expect);

        assert!(khatri_rao(&a, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn khatri_rao_single_column_is_kronecker() {
        let a = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Matrix::new(3, 1, vec![3.0, 4.0, 5.0]).unwrap();
        let kr = khatri_rao(&a, &b).unwrap();
        assert_eq!(kr.data(), &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn hadamard_gram_small_cases() {
        let b = Matrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let model = KruskalModel::new(vec![b.clone(), b.clone(), b]).unwrap();
        let h = hadamard_gram(&model, 0).unwrap();
        assert_eq!(h.data(), &[4.0]);

        let q = Matrix::identity(3);
        let model = KruskalModel::new(vec![q.clone(), q.clone(), q]).unwrap();
        assert_eq!(hadamard_gram(&model, 1).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn mttkrp_scalar_and_zero() {
        let t = DenseTensor::new(vec![1, 1, 1], vec![3.0]).unwrap();
        let s = |v: f64| Matrix::new(1, 1, vec![v]).unwrap();
        let model = KruskalModel::new(vec![s(2.0), s(5.0), s(7.0)]).unwrap();
        assert_eq!(mttkrp(&t, &model, 0).unwrap().data(), &[3.0 * 5.0 * 7.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = DenseTensor::zeros(&[3, 4, 2]).unwrap();
        let model = KruskalModel::random_uniform(&[3, 4, 2], 2, &mut rng).unwrap();
        for mode in 0..3 {
            assert!(mttkrp(&z, &model, mode).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mttkrp_column_matches_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = KruskalModel::random_uniform(&[4, 3, 5], 3, &mut rng).unwrap();
        let t = DenseTensor::from_fn(&[4, 3, 5], |_| rng.random()).unwrap();
        for mode in 0..3 {
            let full = mttkrp(&t, &model, mode).unwrap();
            for r in 0..3 {
                let col = mttkrp_column(&t, &model, mode, r).unwrap();
                for (a, b) in col.iter().zip(full.col(r)) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn kruskal_full_rank_one_ones() {
        let ones = Matrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let model = KruskalModel::new(vec![ones.clone(), ones.clone(), ones]).unwrap();
        let full = kruskal_full(&model);
        assert_eq!(full.shape(), &[2, 2, 2]);
        assert!(full.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn norms_and_relative_error() {
        let ones = DenseTensor::new(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        assert!((ones.frobenius_norm() - 8f64.sqrt()).abs() < 1e-15);
        let zero = KruskalModel::zeros(&[2, 2, 2], 2).unwrap();
        assert_eq!(relative_error(&ones, &zero).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = KruskalModel::random_uniform(&[3, 4, 5], 2, &mut rng).unwrap();
        let exact = kruskal_full(&model);
        assert!(relative_error(&exact, &model).unwrap() < 1e-15);

        let z = DenseTensor::zeros(&[3, 4, 5]).unwrap();
        assert_eq!(relative_error(&z, &model), Err(CpdError::ZeroNorm));
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = KruskalModel::random_uniform(&[3, 4, 5], 2, &mut rng).unwrap();
        let back = KruskalModel::from_flat(&model.shape(), 2, &model.flatten()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn model_validation() {
        assert!(KruskalModel::new(vec![]).is_err());
        assert!(KruskalModel::new(vec![Matrix::zeros(2, 2), Matrix::zeros(2, 3)]).is_err());
        assert!(KruskalModel::new(vec![Matrix::zeros(2, 0)]).is_err());
    }
}
