//! Runs, sweeps and reports behind the `vfa` command-line tool.
//!
//! A [`RunRequest`] selects one implementation and its configuration. Running
//! it yields the output matrix plus a [`RunReport`]: a flat, ordered list of
//! key/value pairs that serializes identically to a JSON object and to a CSV
//! row. Reports are deterministic; wall time is only included on request.

pub mod experr;
pub mod gen;
pub mod matrix_file;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::engine::{ExecStats, VectorEngine};
use crate::error::{Error, Result};
use crate::kernel::{flash_vec, flash_vec_multiquery, flash_vec_tiled, ExpMode, KernelConfig};
use crate::matrix::Matrix;
use crate::oracles::{
    attention_lazy, attention_safe, flash_blocked, flash_scalar, scalar_flop_count, AttentionProblem, ScalarOpCount,
};

/// Exit status for a completed run whose accuracy check failed.
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Implementation {
    /// Safe-softmax attention (scalar, binary32).
    Baseline,
    /// Two-pass attention with deferred division (scalar, binary32).
    Lazy,
    /// Online recurrence (scalar, binary32).
    FlashScalar,
    /// Online recurrence over blocks of `vlen` keys (scalar, binary32).
    FlashBlocked,
    FlashVec,
    FlashVecTiled,
    FlashVecMq,
}

impl Implementation {
    pub fn name(self) -> &'static str {
        match self {
            Implementation::Baseline => "baseline",
            Implementation::Lazy => "lazy",
            Implementation::FlashScalar => "flash-scalar",
            Implementation::FlashBlocked => "flash-blocked",
            Implementation::FlashVec => "flash-vec",
            Implementation::FlashVecTiled => "flash-vec-tiled",
            Implementation::FlashVecMq => "flash-vec-mq",
        }
    }

    pub fn is_vector(self) -> bool {
        matches!(self, Implementation::FlashVec | Implementation::FlashVecTiled | Implementation::FlashVecMq)
    }
}

/// Where the Q, K and V matrices come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    /// Q, K and V generated from `seed`, `seed + 1` and `seed + 2`.
    Seed(u64),
    /// Matrix files; K is given as `N x d` and transposed on ingestion.
    Files { q: PathBuf, k: PathBuf, v: PathBuf },
}

fn default_vlen() -> usize {
    32
}
fn one() -> usize {
    1
}
fn default_tolerance() -> f64 {
    1e-5
}
fn default_exp() -> ExpMode {
    ExpMode::Exact
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    #[serde(rename = "impl")]
    pub implementation: Implementation,
    #[serde(default = "default_exp")]
    pub exp: ExpMode,
    pub seq_len: usize,
    pub head_dim: usize,
    #[serde(default = "default_vlen")]
    pub vlen: usize,
    #[serde(default = "one")]
    pub br: usize,
    #[serde(default = "one")]
    pub unroll: usize,
    #[serde(default)]
    pub scale: bool,
    pub input: InputSource,
    #[serde(default)]
    pub check: bool,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Include wall time in the report (makes reports non-reproducible).
    #[serde(default)]
    pub timing: bool,
}

impl RunRequest {
    pub fn new(implementation: Implementation, seq_len: usize, head_dim: usize, seed: u64) -> Self {
        Self {
            implementation,
            exp: ExpMode::Exact,
            seq_len,
            head_dim,
            vlen: default_vlen(),
            br: 1,
            unroll: 1,
            scale: false,
            input: InputSource::Seed(seed),
            check: false,
            tolerance: default_tolerance(),
            timing: false,
        }
    }

    pub fn kernel_config(&self) -> KernelConfig {
        KernelConfig::new(self.vlen)
            .with_br(self.br)
            .with_unroll(self.unroll)
            .with_exp(self.exp)
            .with_scaling(self.scale)
    }

    fn validate(&self) -> Result<()> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidInput(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.seq_len == 0 || self.head_dim == 0 {
            return Err(Error::InvalidInput("sequence length and head dimension must be >= 1".into()));
        }
        Ok(())
    }
}

/// Builds the attention problem a request describes.
pub fn load_problem(req: &RunRequest) -> Result<AttentionProblem> {
    let (n, d) = (req.seq_len, req.head_dim);
    let (q, k, v) = match &req.input {
        InputSource::Seed(seed) => (
            gen::generate(n, d, *seed)?,
            gen::generate(n, d, seed.wrapping_add(1))?,
            gen::generate(n, d, seed.wrapping_add(2))?,
        ),
        InputSource::Files { q, k, v } => {
            let (qm, km, vm) = (matrix_file::read(q)?, matrix_file::read(k)?, matrix_file::read(v)?);
            for (name, m) in [("Q", &qm), ("K", &km), ("V", &vm)] {
                if m.rows() != n || m.cols() != d {
                    return Err(Error::InvalidInput(format!(
                        "{name} is {}x{}, expected {n}x{d} (--seq-len x --head-dim)",
                        m.rows(),
                        m.cols()
                    )));
                }
            }
            (qm, km, vm)
        }
    };
    Ok(AttentionProblem::new(q, k, v)?.with_score_scaling(req.scale))
}

/// Error of an output against the binary64 reference.
///
/// `max_scaled_err` divides absolute errors by `max|V|`; since every output
/// row is a convex combination of value rows, that is the natural magnitude
/// of the output and the metric used for `--check`. Elementwise relative
/// errors are reported too but blow up where an output is near zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorMetrics {
    pub max_abs_err: f64,
    pub mean_abs_err: f64,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub max_scaled_err: f64,
}

impl ErrorMetrics {
    pub fn compare(output: &Matrix, reference: &Matrix<f64>, value_scale: f64) -> Self {
        let n = output.as_slice().len().max(1) as f64;
        let (mut max_abs, mut sum_abs, mut max_rel, mut sum_rel) = (0.0f64, 0.0, 0.0f64, 0.0);
        for (&a, &b) in output.as_slice().iter().zip(reference.as_slice()) {
            let abs = (a as f64 - b).abs();
            let rel = if b == 0.0 {
                if abs == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                abs / b.abs()
            };
            max_abs = max_abs.max(abs);
            sum_abs += abs;
            max_rel = max_rel.max(rel);
            sum_rel += rel;
        }
        let scale = if value_scale > 0.0 { value_scale } else { 1.0 };
        Self {
            max_abs_err: max_abs,
            mean_abs_err: sum_abs / n,
            max_rel_err: max_rel,
            mean_rel_err: sum_rel / n,
            max_scaled_err: max_abs / scale,
        }
    }
}

/// Flat, ordered report of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    fields: Vec<(String, Value)>,
}

impl RunReport {
    fn push(&mut self, key: &str, value: impl Into<Value>) {
        self.fields.push((key.to_string(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn fields(&self) -> &[(String, Value)] {
        &self.fields
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(k, _)| k.as_str())
    }

    pub fn to_json(&self) -> Value {
        let map: Map<String, Value> = self.fields.iter().cloned().collect();
        Value::Object(map)
    }

    /// Whether the accuracy check ran and failed.
    pub fn check_failed(&self) -> bool {
        self.get("check_passed") == Some(&Value::Bool(false))
    }

    pub fn error(&self) -> Option<&str> {
        self.get("error").and_then(Value::as_str)
    }
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output: Matrix,
    pub report: RunReport,
    pub stats: Option<ExecStats>,
    pub metrics: Option<ErrorMetrics>,
}

fn null_stats(r: &mut RunReport) {
    for (k, _) in ExecStats::default().fields() {
        r.push(k, Value::Null);
    }
}

fn header(r: &mut RunReport, req: &RunRequest) {
    let q = req.kernel_config().quant;
    r.push("impl", req.implementation.name());
    r.push("exp", req.exp.to_string());
    r.push("seq_len", req.seq_len);
    r.push("head_dim", req.head_dim);
    r.push("vlen", req.vlen);
    r.push("br", req.br);
    r.push("unroll", req.unroll);
    r.push("scale", req.scale);
    match &req.input {
        InputSource::Seed(s) => r.push("input", format!("seed:{s}")),
        InputSource::Files { q, k, v } => {
            r.push("input", format!("files:{},{},{}", q.display(), k.display(), v.display()))
        }
    }
    r.push("quant_bits", q.bits);
    r.push("quant_clip_magnitude", q.clip_magnitude);
    r.push("quant_scale", q.scale as f64);
    r.push("quant_fused_scale", q.fused_scale as f64);
    r.push("quant_bias", q.bias);
    r.push("quant_mantissa_width", q.mantissa_width);
    r.push("quant_clip_threshold", q.clip_threshold as f64);
}

fn scalar_counts(r: &mut RunReport, c: Option<ScalarOpCount>) {
    let get = |f: fn(&ScalarOpCount) -> u64| c.as_ref().map_or(Value::Null, |c| Value::from(f(c)));
    r.push("scalar_mul", get(|c| c.mul));
    r.push("scalar_add", get(|c| c.add));
    r.push("scalar_exp", get(|c| c.exp));
    r.push("scalar_cmp", get(|c| c.cmp));
    r.push("scalar_div", get(|c| c.div));
    r.push("scalar_total", get(|c| c.total()));
}

fn metrics_fields(r: &mut RunReport, m: Option<&ErrorMetrics>, tolerance: f64) {
    let get = |f: fn(&ErrorMetrics) -> f64| m.map_or(Value::Null, |m| Value::from(f(m)));
    r.push("max_abs_err", get(|m| m.max_abs_err));
    r.push("mean_abs_err", get(|m| m.mean_abs_err));
    r.push("max_rel_err", get(|m| m.max_rel_err));
    r.push("mean_rel_err", get(|m| m.mean_rel_err));
    r.push("max_scaled_err", get(|m| m.max_scaled_err));
    r.push("tolerance", m.map_or(Value::Null, |_| Value::from(tolerance)));
    r.push("check_passed", m.map_or(Value::Null, |m| Value::from(m.max_scaled_err <= tolerance)));
}

/// Executes one request.
pub fn run(req: &RunRequest) -> Result<RunOutcome> {
    req.validate()?;
    let problem = load_problem(req)?;
    let started = Instant::now();
    let (output, stats) = match req.implementation {
        Implementation::Baseline => (attention_safe::<f32>(&problem)?, None),
        Implementation::Lazy => (attention_lazy::<f32>(&problem)?, None),
        Implementation::FlashScalar => (flash_scalar::<f32>(&problem)?, None),
        Implementation::FlashBlocked => (flash_blocked::<f32>(&problem, req.vlen.min(problem.seq_len()))?, None),
        imp => {
            let cfg = req.kernel_config();
            let mut engine = VectorEngine::with_vlen(req.vlen)?;
            let run = match imp {
                Implementation::FlashVec => flash_vec(&problem, &cfg, &mut engine)?,
                Implementation::FlashVecTiled => flash_vec_tiled(&problem, &cfg, &mut engine)?,
                _ => flash_vec_multiquery(&problem, &cfg, &mut engine)?,
            };
            (run.output, Some(run.stats))
        }
    };
    let elapsed = started.elapsed();

    let scalar = scalar_flop_count(&problem);
    let metrics = if req.check {
        let reference = attention_safe::<f64>(&problem)?;
        Some(ErrorMetrics::compare(&output, &reference, problem.v().max_abs() as f64))
    } else {
        None
    };

    let mut report = RunReport::default();
    header(&mut report, req);
    match &stats {
        Some(s) => {
            for (k, v) in s.fields() {
                report.push(k, v);
            }
        }
        None => null_stats(&mut report),
    }
    let show_scalar = stats.is_some() || req.implementation == Implementation::FlashScalar;
    scalar_counts(&mut report, show_scalar.then_some(scalar));
    report.push(
        "speedup_proxy",
        stats.as_ref().map_or(Value::Null, |s| Value::from(scalar.total() as f64 / s.total_instructions() as f64)),
    );
    metrics_fields(&mut report, metrics.as_ref(), req.tolerance);
    report.push("error", Value::Null);
    if req.timing {
        report.push("wall_time_ms", elapsed.as_secs_f64() * 1e3);
    }
    Ok(RunOutcome { output, report, stats, metrics })
}

/// Report row for a request that failed before producing output.
pub fn failed_report(req: &RunRequest, err: &Error) -> RunReport {
    let mut r = RunReport::default();
    header(&mut r, req);
    null_stats(&mut r);
    scalar_counts(&mut r, None);
    r.push("speedup_proxy", Value::Null);
    metrics_fields(&mut r, None, req.tolerance);
    r.push("error", err.to_string());
    if req.timing {
        r.push("wall_time_ms", Value::Null);
    }
    r
}

/// Runs every request in order; one report per request.
pub fn sweep(requests: &[RunRequest]) -> Vec<RunReport> {
    requests
        .iter()
        .map(|req| match run(req) {
            Ok(outcome) => outcome.report,
            Err(e) => failed_report(req, &e),
        })
        .collect()
}

/// Parses a sweep configuration: a JSON array of run requests.
pub fn parse_sweep_config(text: &str) -> Result<Vec<RunRequest>> {
    serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("sweep config: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Renders reports as a JSON array (one object per run) or as CSV with a
/// header row. Column order is the report field order.
pub fn render(reports: &[RunReport], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let arr = Value::Array(reports.iter().map(RunReport::to_json).collect());
            let mut s = serde_json::to_string_pretty(&arr).map_err(|e| Error::Io(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            if let Some(first) = reports.first() {
                w.write_record(first.keys()).map_err(|e| Error::Io(e.to_string()))?;
            }
            for r in reports {
                w.write_record(r.fields().iter().map(|(_, v)| csv_cell(v))).map_err(|e| Error::Io(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
        }
    }
}

/// Renders a single run: a bare JSON object, or a CSV header plus one row.
pub fn render_one(report: &RunReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&report.to_json()).map_err(|e| Error::Io(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => render(std::slice::from_ref(report), format),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_field_count() {
        assert_eq!(ExecStats::default().fields().len(), 29);
    }

    #[test]
    fn failed_and_successful_reports_share_columns() {
        let req = RunRequest::new(Implementation::FlashVec, 4, 4, 1);
        let ok = run(&RunRequest { vlen: 4, ..req.clone() }).unwrap().report;
        let bad = failed_report(&req, &Error::Config("x".into()));
        assert_eq!(ok.keys().collect::<Vec<_>>(), bad.keys().collect::<Vec<_>>());
    }

    #[test]
    fn request_json_defaults() {
        let reqs =
            parse_sweep_config(r#"[{"impl":"flash-vec-mq","seq_len":8,"head_dim":4,"input":{"seed":3}}]"#).unwrap();
        assert_eq!(reqs[0].vlen, 32);
        assert_eq!(reqs[0].br, 1);
        assert_eq!(reqs[0].exp, ExpMode::Exact);
        assert_eq!(reqs[0].input, InputSource::Seed(3));
        assert!(parse_sweep_config(r#"[{"impl":"nope","seq_len":8,"head_dim":4,"input":{"seed":3}}]"#).is_err());
    }

    #[test]
    fn bad_tolerance_rejected() {
        let mut req = RunRequest::new(Implementation::Baseline, 4, 4, 1);
        req.tolerance = 0.0;
        assert!(run(&req).is_err());
    }
}
