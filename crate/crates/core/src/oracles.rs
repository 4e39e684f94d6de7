//! Scalar reference implementations of single-head attention.
//!
//! Every routine is generic over [`Real`], so the same code runs in binary32,
//! in binary64 (the ground truth for all accuracy checks), or in an
//! instrumented type that counts operations.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Arithmetic needed by the oracles. All comparisons go through
/// [`Real::max_of`] so instrumented types can count them.
pub trait Real:
    Copy + Debug + Default + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn zero() -> Self;
    fn neg_infinity() -> Self;
    fn from_f32(x: f32) -> Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn max_of(self, other: Self) -> Self;
}

impl Real for f32 {
    fn zero() -> Self {
        0.0
    }
    fn neg_infinity() -> Self {
        f32::NEG_INFINITY
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn zero() -> Self {
        0.0
    }
    fn neg_infinity() -> Self {
        f64::NEG_INFINITY
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

/// Inputs of one single-head attention evaluation.
///
/// Keys are stored transposed (`d x N`) so that vector kernels read score
/// blocks with unit stride.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProblem {
    q: Matrix,
    k_t: Matrix,
    v: Matrix,
    scale_scores: bool,
}

impl AttentionProblem {
    /// Builds a problem from `Q (N x d)`, `K (N x d)` and `V (N x d)`.
    /// The key matrix is transposed here, once.
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Result<Self> {
        Self::from_transposed(q, k.transpose(), v)
    }

    pub fn from_transposed(q: Matrix, k_t: Matrix, v: Matrix) -> Result<Self> {
        let (n, d) = (q.rows(), q.cols());
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput(format!("Q must be non-empty, got {n}x{d}")));
        }
        if k_t.rows() != d || k_t.cols() != n {
            return Err(Error::InvalidInput(format!(
                "transposed K must be {d}x{n}, got {}x{}",
                k_t.rows(),
                k_t.cols()
            )));
        }
        if v.rows() != n || v.cols() != d {
            return Err(Error::InvalidInput(format!("V must be {n}x{d}, got {}x{}", v.rows(), v.cols())));
        }
        for (name, m) in [("Q", &q), ("K", &k_t), ("V", &v)] {
            if !m.is_finite() {
                return Err(Error::InvalidInput(format!("{name} contains non-finite values")));
            }
        }
        Ok(Self { q, k_t, v, scale_scores: false })
    }

    /// Enables the `1/sqrt(d)` score factor.
    pub fn with_score_scaling(mut self, on: bool) -> Self {
        self.scale_scores = on;
        self
    }

    pub fn seq_len(&self) -> usize {
        self.q.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.q.cols()
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn k_t(&self) -> &Matrix {
        &self.k_t
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn scale_scores(&self) -> bool {
        self.scale_scores
    }

    /// Score factor `1/sqrt(d)` when scaling is on.
    pub fn score_scale(&self) -> Option<f64> {
        self.scale_scores.then(|| 1.0 / (self.head_dim() as f64).sqrt())
    }

    /// Permutes the key/value pairs: new pair `i` is old pair `perm[i]`.
    pub fn permute_keys(&self, perm: &[usize]) -> Self {
        let k = self.k_t.transpose().permute_rows(perm);
        Self { q: self.q.clone(), k_t: k.transpose(), v: self.v.permute_rows(perm), scale_scores: self.scale_scores }
    }

    /// Scores of query row `row` against every key.
    pub fn scores<T: Real>(&self, row: usize) -> Vec<T> {
        let (n, d) = (self.seq_len(), self.head_dim());
        let q = self.q.row(row);
        let scale = self.score_scale().map(T::from_f64);
        (0..n)
            .map(|i| {
                let mut acc = T::zero();
                for (j, &qj) in q.iter().enumerate().take(d) {
                    acc = acc + T::from_f32(qj) * T::from_f32(self.k_t.get(j, i));
                }
                match scale {
                    Some(s) => acc * s,
                    None => acc,
                }
            })
            .collect()
    }
}

fn finite_row<T: Real>(row: &[T], what: &str) -> Result<()> {
    if row.iter().all(|x| x.to_f64().is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericDomain(format!("{what} produced a non-finite value")))
    }
}

/// Safe-softmax attention of one query given its score vector: weights are
/// normalized before they multiply the value rows.
pub fn attend_scores<T: Real>(scores: &[T], v: &Matrix) -> Result<Vec<T>> {
    let d = v.cols();
    let m = scores.iter().fold(T::neg_infinity(), |m, &s| m.max_of(s));
    let weights: Vec<T> = scores.iter().map(|&s| (s - m).exp()).collect();
    let total = weights.iter().fold(T::zero(), |acc, &w| acc + w);
    let mut out = vec![T::zero(); d];
    for (i, &w) in weights.iter().enumerate() {
        let p = w / total;
        for (o, &x) in out.iter_mut().zip(v.row(i)) {
            *o = *o + p * T::from_f32(x);
        }
    }
    finite_row(&out, "safe softmax")?;
    Ok(out)
}

fn collect_rows<T: Real>(n: usize, d: usize, mut row: impl FnMut(usize) -> Result<Vec<T>>) -> Result<Matrix<T>> {
    let mut data = Vec::with_capacity(n * d);
    for k in 0..n {
        data.extend(row(k)?);
    }
    Matrix::from_vec(n, d, data)
}

/// Baseline attention with a max-subtracted softmax.
pub fn attention_safe<T: Real>(p: &AttentionProblem) -> Result<Matrix<T>> {
    collect_rows(p.seq_len(), p.head_dim(), |k| attend_scores(&p.scores::<T>(k), p.v()))
}

/// Two-pass attention with the softmax division deferred to the end.
pub fn attention_lazy<T: Real>(p: &AttentionProblem) -> Result<Matrix<T>> {
    let d = p.head_dim();
    collect_rows(p.seq_len(), d, |k| {
        // pass 1: scores and their maximum
        let scores = p.scores::<T>(k);
        let m = scores.iter().fold(T::neg_infinity(), |m, &s| m.max_of(s));
        // pass 2: unnormalized output and exponent sum
        let mut ell = T::zero();
        let mut o = vec![T::zero(); d];
        for (i, &s) in scores.iter().enumerate() {
            let w = (s - m).exp();
            ell = ell + w;
            for (oj, &x) in o.iter_mut().zip(p.v().row(i)) {
                *oj = *oj + w * T::from_f32(x);
            }
        }
        let out: Vec<T> = o.into_iter().map(|x| x / ell).collect();
        finite_row(&out, "lazy softmax")?;
        Ok(out)
    })
}

/// Running statistics of the online softmax for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningState<T> {
    /// Running maximum score; starts at negative infinity.
    pub m: T,
    /// Running exponent sum relative to `m`.
    pub ell: T,
    /// Running unnormalized output relative to `m`.
    pub o: Vec<T>,
}

impl<T: Real> RunningState<T> {
    pub fn new(d: usize) -> Self {
        Self { m: T::neg_infinity(), ell: T::zero(), o: vec![T::zero(); d] }
    }

    /// One step of the recurrence for score `s` and value row `v`.
    pub fn push(&mut self, s: T, v: &[f32]) {
        let m_new = self.m.max_of(s);
        // With m = -inf this is exp(-inf) = 0, which zeroes the empty history.
        let alpha = (self.m - m_new).exp();
        let w = (s - m_new).exp();
        self.ell = self.ell * alpha + w;
        for (o, &x) in self.o.iter_mut().zip(v) {
            *o = *o * alpha + w * T::from_f32(x);
        }
        self.m = m_new;
    }

    /// One lookahead step over a block of scores whose value rows are
    /// `v.row(first)`, `v.row(first + 1)`, ...
    pub fn push_block(&mut self, scores: &[T], v: &Matrix, first: usize) {
        let block_max = scores.iter().fold(T::neg_infinity(), |m, &s| m.max_of(s));
        let m_new = self.m.max_of(block_max);
        let alpha = (self.m - m_new).exp();
        let weights: Vec<T> = scores.iter().map(|&s| (s - m_new).exp()).collect();
        let mut block_sum = weights[0];
        for &w in &weights[1..] {
            block_sum = block_sum + w;
        }
        self.ell = self.ell * alpha + block_sum;
        for (j, o) in self.o.iter_mut().enumerate() {
            let mut acc = weights[0] * T::from_f32(v.get(first, j));
            for (t, &w) in weights.iter().enumerate().skip(1) {
                acc = acc + w * T::from_f32(v.get(first + t, j));
            }
            *o = *o * alpha + acc;
        }
        self.m = m_new;
    }

    /// Final normalization `o / ell`.
    pub fn finish(&self) -> Result<Vec<T>> {
        let out: Vec<T> = self.o.iter().map(|&x| x / self.ell).collect();
        finite_row(&out, "online softmax")?;
        Ok(out)
    }
}

/// Final running states of the single-pass recurrence, one per query.
pub fn flash_scalar_states<T: Real>(p: &AttentionProblem) -> Result<Vec<RunningState<T>>> {
    (0..p.seq_len())
        .map(|k| {
            let mut st = RunningState::new(p.head_dim());
            for (i, s) in p.scores::<T>(k).into_iter().enumerate() {
                st.push(s, p.v().row(i));
            }
            if !(st.ell.to_f64() > 0.0 && st.m.to_f64().is_finite()) {
                return Err(Error::NumericDomain(format!("row {k}: degenerate running state")));
            }
            Ok(st)
        })
        .collect()
}

/// Single-pass online softmax attention with delayed division.
pub fn flash_scalar<T: Real>(p: &AttentionProblem) -> Result<Matrix<T>> {
    let states = flash_scalar_states::<T>(p)?;
    collect_rows(p.seq_len(), p.head_dim(), |k| states[k].finish())
}

/// Online softmax applied to blocks of `b` keys. A final block shorter than
/// `b` covers the remainder when `b` does not divide `N`.
pub fn flash_blocked<T: Real>(p: &AttentionProblem, b: usize) -> Result<Matrix<T>> {
    let n = p.seq_len();
    if b == 0 || b > n {
        return Err(Error::Config(format!("block size must be in 1..={n}, got {b}")));
    }
    collect_rows(n, p.head_dim(), |k| {
        let scores = p.scores::<T>(k);
        let mut st = RunningState::new(p.head_dim());
        for start in (0..n).step_by(b) {
            let end = (start + b).min(n);
            st.push_block(&scores[start..end], p.v(), start);
        }
        st.finish()
    })
}

/// Scalar operation counts of [`flash_scalar`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ScalarOpCount {
    pub mul: u64,
    pub add: u64,
    pub exp: u64,
    pub cmp: u64,
    pub div: u64,
}

impl ScalarOpCount {
    pub fn total(&self) -> u64 {
        self.mul + self.add + self.exp + self.cmp + self.div
    }
}

/// Closed-form operation count of [`flash_scalar`].
///
/// Per query and key: `d` multiplies and `d` adds for the score (plus one
/// multiply when scores are scaled), one compare for the running max, two
/// subtractions and two exponentials for the correction and weight, one
/// multiply and add for `ell`, and `2d` multiplies with `d` adds for the
/// output. Per query: `d` divisions.
pub fn scalar_flop_count(p: &AttentionProblem) -> ScalarOpCount {
    let (n, d) = (p.seq_len() as u64, p.head_dim() as u64);
    let scaled = u64::from(p.scale_scores());
    ScalarOpCount {
        mul: n * (n * (3 * d + 1 + scaled)),
        add: n * (n * (2 * d + 3)),
        exp: n * (2 * n),
        cmp: n * n,
        div: n * d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(n: usize, d: usize, seed: u64) -> AttentionProblem {
        // small LCG; these tests only need varied inputs
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
        };
        let q = Matrix::from_fn(n, d, |_, _| next());
        let k = Matrix::from_fn(n, d, |_, _| next());
        let v = Matrix::from_fn(n, d, |_, _| next());
        AttentionProblem::new(q, k, v).unwrap()
    }

    #[test]
    fn validation() {
        let q = Matrix::zeros(2, 3);
        assert!(AttentionProblem::new(q.clone(), Matrix::zeros(2, 2), Matrix::zeros(2, 3)).is_err());
        assert!(AttentionProblem::new(q.clone(), Matrix::zeros(2, 3), Matrix::zeros(3, 3)).is_err());
        assert!(AttentionProblem::new(Matrix::zeros(0, 3), Matrix::zeros(0, 3), Matrix::zeros(0, 3)).is_err());
        let mut bad = Matrix::zeros(2, 3);
        bad.set(1, 1, f32::NAN);
        assert!(AttentionProblem::new(q, Matrix::zeros(2, 3), bad).is_err());
    }

    #[test]
    fn single_key_returns_value_row() {
        let p = problem(1, 5, 3);
        let expect: Vec<f64> = p.v().row(0).iter().map(|&x| x as f64).collect();
        for out in [
            attention_safe::<f64>(&p).unwrap(),
            attention_lazy::<f64>(&p).unwrap(),
            flash_scalar::<f64>(&p).unwrap(),
            flash_blocked::<f64>(&p, 1).unwrap(),
        ] {
            for (a, b) in out.row(0).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_query_gives_column_mean() {
        let base = problem(6, 3, 5);
        let p = AttentionProblem::from_transposed(Matrix::zeros(6, 3), base.k_t().clone(), base.v().clone()).unwrap();
        let mean: Vec<f64> = (0..3).map(|j| (0..6).map(|i| p.v().get(i, j) as f64).sum::<f64>() / 6.0).collect();
        let out = attention_safe::<f64>(&p).unwrap();
        for k in 0..6 {
            for j in 0..3 {
                assert!((out.get(k, j) - mean[j]).abs() < 1e-12);
            }
        }
        let out32 = attention_lazy::<f32>(&p).unwrap();
        for j in 0..3 {
            assert!((out32.get(2, j) as f64 - mean[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn running_max_trace() {
        let mut st = RunningState::<f64>::new(1);
        let mut trace = vec![];
        for s in [3.0, 1.0, 5.0] {
            st.push(s, &[1.0]);
            trace.push(st.m);
            assert!(st.ell > 0.0);
        }
        assert_eq!(trace, vec![3.0, 3.0, 5.0]);
    }

    #[test]
    fn block_of_one_is_scalar_recurrence() {
        let p = problem(9, 4, 11);
        let a = flash_scalar::<f64>(&p).unwrap();
        let b = flash_blocked::<f64>(&p, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blocked_rejects_bad_block() {
        let p = problem(4, 2, 1);
        assert!(flash_blocked::<f64>(&p, 0).is_err());
        assert!(flash_blocked::<f64>(&p, 5).is_err());
    }

    #[test]
    fn scaling_changes_scores() {
        let p = problem(3, 4, 2);
        let s0 = p.scores::<f64>(1);
        let s1 = p.clone().with_score_scaling(true).scores::<f64>(1);
        for (a, b) in s0.iter().zip(&s1) {
            assert!((a * 0.5 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn flop_count_linear_in_queries() {
        let c = scalar_flop_count(&problem(2, 2, 0));
        assert_eq!(c, ScalarOpCount { mul: 2 * 2 * 7, add: 2 * 2 * 7, exp: 8, cmp: 4, div: 4 });
    }
}
