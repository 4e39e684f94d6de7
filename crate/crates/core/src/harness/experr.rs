//! Error of the bit-trick exponential against `exp` in binary64.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exp_approx::{exp_approx_scalar, QuantSpec};
use crate::harness::gen::UniformStream;

/// One evaluated point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpPoint {
    pub x: f32,
    pub approx: f32,
    pub exact: f64,
    pub rel_err: f64,
}

impl ExpPoint {
    fn eval(x: f32, spec: &QuantSpec) -> Result<Self> {
        let approx = exp_approx_scalar(x, spec)?;
        let exact = (x as f64).exp();
        Ok(Self { x, approx, exact, rel_err: (approx as f64 - exact).abs() / exact })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpErrorReport {
    pub samples: usize,
    pub seed: u64,
    pub clip_threshold: f32,
    pub clip_value: f32,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    /// Sample that attained `max_rel_err`.
    pub argmax: f32,
    /// Smallest `approx / exact` seen; at least 1 means the approximation
    /// never fell below the true value.
    pub min_ratio: f64,
    pub monotone: bool,
    /// Multiples `k * ln2` for `k = 0..16`.
    pub dyadic: Vec<ExpPoint>,
    pub dyadic_max_rel_err: f64,
    /// Points below the clip threshold; each returns the clip constant.
    pub clipped: Vec<ExpPoint>,
}

/// Samples `samples` points uniformly in `[clip_threshold, 0]`.
pub fn experr(samples: usize, seed: u64, spec: &QuantSpec) -> Result<ExpErrorReport> {
    if samples == 0 {
        return Err(Error::InvalidInput("sample count must be >= 1".into()));
    }
    let lo = spec.clip_threshold as f64;
    let mut rng = UniformStream::new(seed);
    let mut xs: Vec<f32> = (0..samples).map(|_| (lo * rng.next_unit() as f64) as f32).collect();
    let (mut max_rel, mut sum_rel, mut argmax, mut min_ratio) = (0.0f64, 0.0f64, 0.0f32, f64::INFINITY);
    for &x in &xs {
        let p = ExpPoint::eval(x, spec)?;
        sum_rel += p.rel_err;
        if p.rel_err > max_rel {
            max_rel = p.rel_err;
            argmax = x;
        }
        min_ratio = min_ratio.min(p.approx as f64 / p.exact);
    }
    xs.sort_by(f32::total_cmp);
    let mut monotone = true;
    let mut prev = 0.0f32;
    for &x in &xs {
        let a = exp_approx_scalar(x, spec)?;
        if a < prev {
            monotone = false;
        }
        prev = a;
    }

    let dyadic = (0..16)
        .map(|k| ExpPoint::eval(-(k as f64 * std::f64::consts::LN_2) as f32, spec))
        .collect::<Result<Vec<_>>>()?;
    let dyadic_max_rel_err = dyadic.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    let clipped = [-15.5f32, -16.0, -17.0, -18.0, -20.0, -50.0]
        .iter()
        .map(|&x| ExpPoint::eval(x, spec))
        .collect::<Result<Vec<_>>>()?;

    Ok(ExpErrorReport {
        samples,
        seed,
        clip_threshold: spec.clip_threshold,
        clip_value: spec.clip_value,
        max_rel_err: max_rel,
        mean_rel_err: sum_rel / samples as f64,
        argmax,
        min_ratio,
        monotone,
        dyadic,
        dyadic_max_rel_err,
        clipped,
    })
}
