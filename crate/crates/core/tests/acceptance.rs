//! Acceptance suite. Each test checks one criterion and prints a single
//! `PASS`/`FAIL` line; run with `--nocapture` to see them.

use rvv_flash::harness::experr::experr;
use rvv_flash::harness::gen::{generate, UniformStream};
use rvv_flash::harness::{self, render, render_one, Implementation, ReportFormat, RunRequest};
use rvv_flash::{
    attention_lazy, attention_safe, exp_approx_scalar, flash_blocked, flash_scalar, flash_vec, flash_vec_multiquery,
    flash_vec_tiled, scalar_flop_count, AttentionProblem, ExecStats, ExpMode, KernelConfig, Matrix, QuantSpec,
    VectorEngine,
};

fn report(id: u32, name: &str, ok: bool, detail: String) {
    println!("{} criterion {id} ({name}): {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn problem(n: usize, d: usize, seed: u64) -> AttentionProblem {
    AttentionProblem::new(
        generate(n, d, seed).unwrap(),
        generate(n, d, seed + 1).unwrap(),
        generate(n, d, seed + 2).unwrap(),
    )
    .unwrap()
}

/// `max |a - b| / max|V|`.
fn scaled_err(a: &Matrix, reference: &Matrix<f64>, vmax: f64) -> f64 {
    a.as_slice().iter().zip(reference.as_slice()).map(|(&x, &r)| (x as f64 - r).abs()).fold(0.0, f64::max) / vmax
}

fn scaled_err64(a: &Matrix<f64>, reference: &Matrix<f64>, vmax: f64) -> f64 {
    a.as_slice().iter().zip(reference.as_slice()).map(|(&x, &r)| (x - r).abs()).fold(0.0, f64::max) / vmax
}

fn run_kernel(kind: Implementation, p: &AttentionProblem, cfg: &KernelConfig) -> (Matrix, ExecStats) {
    let mut engine = VectorEngine::with_vlen(cfg.vlen).unwrap();
    let r = match kind {
        Implementation::FlashVec => flash_vec(p, cfg, &mut engine),
        Implementation::FlashVecTiled => flash_vec_tiled(p, cfg, &mut engine),
        Implementation::FlashVecMq => flash_vec_multiquery(p, cfg, &mut engine),
        other => panic!("{other:?} is not a vector kernel"),
    }
    .unwrap_or_else(|e| panic!("{kind:?} {cfg:?}: {e}"));
    (r.output, r.stats)
}

const GRID_N: [usize; 4] = [32, 100, 256, 512];
const GRID_D: [usize; 4] = [16, 48, 128, 256];
const GRID_VLEN: [usize; 3] = [16, 32, 64];
const GRID_BR: [usize; 3] = [1, 4, 32];
const GRID_UNROLL: [usize; 2] = [1, 4];

/// Worst scaled error of every kernel over the full grid, for one exp mode.
fn grid_worst(mode: ExpMode) -> (f64, String, usize) {
    let (mut worst, mut at, mut runs) = (0.0f64, String::new(), 0);
    for (i, &n) in GRID_N.iter().enumerate() {
        for (j, &d) in GRID_D.iter().enumerate() {
            let p = problem(n, d, 1000 + 10 * i as u64 + j as u64);
            let reference = attention_safe::<f64>(&p).unwrap();
            let vmax = p.v().max_abs() as f64;
            for &vlen in &GRID_VLEN {
                for &unroll in &GRID_UNROLL {
                    let base = KernelConfig::new(vlen).with_unroll(unroll).with_exp(mode);
                    let mut cases = vec![(Implementation::FlashVecTiled, base)];
                    if d <= vlen {
                        cases.push((Implementation::FlashVec, base));
                    }
                    for &br in &GRID_BR {
                        cases.push((Implementation::FlashVecMq, base.with_br(br)));
                    }
                    for (kind, cfg) in cases {
                        let (out, _) = run_kernel(kind, &p, &cfg);
                        let e = scaled_err(&out, &reference, vmax);
                        runs += 1;
                        if e > worst {
                            worst = e;
                            at = format!("{} N={n} d={d} vlen={vlen} br={} unroll={unroll}", kind.name(), cfg.br);
                        }
                    }
                }
            }
        }
    }
    (worst, at, runs)
}

#[test]
fn criterion_1_oracle_agreement() {
    let mut rng = UniformStream::new(77);
    let mut worst = 0.0f64;
    let instances = 120;
    for t in 0..instances {
        let n = 4 + (rng.next_unit() * 61.0) as usize;
        let d = 1 + (rng.next_unit() * 32.0) as usize;
        let p = problem(n, d, 5000 + 3 * t).with_score_scaling(t % 2 == 1);
        let reference = attention_safe::<f64>(&p).unwrap();
        let vmax = p.v().max_abs() as f64;
        let mut outs = vec![attention_lazy::<f64>(&p).unwrap(), flash_scalar::<f64>(&p).unwrap()];
        for b in [1, 3, 32.min(n), n] {
            outs.push(flash_blocked::<f64>(&p, b).unwrap());
        }
        for o in &outs {
            worst = worst.max(scaled_err64(o, &reference, vmax));
        }
    }
    report(1, "oracle agreement", worst <= 1e-12, format!("{instances} instances, worst error {worst:.3e} <= 1e-12"));
}

#[test]
fn criterion_2_vector_kernels_exact() {
    let (worst, at, runs) = grid_worst(ExpMode::Exact);
    report(
        2,
        "vector kernel correctness",
        worst <= 1e-5,
        format!("{runs} runs, worst error {worst:.3e} <= 1e-5 at {at}"),
    );
}

#[test]
fn criterion_3_exp_approx() {
    let q = QuantSpec::default();
    let r = experr(1_000_000, 3, &q).unwrap();
    let positive = r.min_ratio > 0.0;
    let clip_ok = r.clipped.iter().all(|p| p.approx.to_bits() == q.clip_value.to_bits())
        && q.clip_value == (-15.0f64).exp() as f32
        && (q.clip_value as f64 - 3.06e-7).abs() < 5e-10;
    let dyadic_bound = 2f64.powi(-20);
    let ok = r.max_rel_err <= 0.062 && r.dyadic_max_rel_err <= dyadic_bound && r.monotone && positive && clip_ok;
    let zero_ok = exp_approx_scalar(0.0, &q).unwrap() == 1.0;
    report(
        3,
        "exponential approximation",
        ok && zero_ok,
        format!(
            "max rel {:.6} <= 0.062, dyadic max {:.3e} <= 2^-20, monotone {}, positive {positive}, clip {}",
            r.max_rel_err, r.dyadic_max_rel_err, r.monotone, q.clip_value
        ),
    );
}

#[test]
fn criterion_4_approx_impact() {
    let (worst, at, runs) = grid_worst(ExpMode::Approx);
    report(
        4,
        "approximation impact",
        worst <= 0.07,
        format!("{runs} runs, worst deviation {worst:.4} * max|V| <= 0.07 at {at}"),
    );
}

#[test]
fn criterion_5_speedup_proxy() {
    let p = problem(512, 128, 9);
    let scalar = scalar_flop_count(&p).total() as f64;
    let proxy = |vlen| {
        let (_, stats) = run_kernel(Implementation::FlashVecTiled, &p, &KernelConfig::new(vlen).with_unroll(4));
        scalar / stats.total_instructions() as f64
    };
    let (s16, s32) = (proxy(16), proxy(32));
    report(
        5,
        "speedup proxy",
        s32 >= 20.0 && s16 < s32,
        format!("vlen 32: {s32:.2} >= 20, vlen 16: {s16:.2} < vlen 32"),
    );
}

#[test]
fn criterion_6_tiling_locality() {
    let p = problem(256, 64, 11);
    let kv = |br| run_kernel(Implementation::FlashVecMq, &p, &KernelConfig::new(32).with_br(br)).1.kv_loads();
    let base = kv(1);
    let mut parts = vec![format!("Br=1: {base}")];
    let mut ok = true;
    for r in [2u64, 4, 8, 32] {
        let got = kv(r as usize);
        ok &= got * r == base;
        parts.push(format!("Br={r}: {got}"));
    }
    report(6, "tiling locality", ok, format!("K/V loads {}", parts.join(", ")));
}

#[test]
fn criterion_7_spill_law() {
    let (n, vlen) = (128, 16);
    let p = problem(n, 2 * vlen, 13);
    let pairs = (n * n.div_ceil(vlen)) as f64;
    let partial = |unroll| {
        let (_, s) = run_kernel(Implementation::FlashVecTiled, &p, &KernelConfig::new(vlen).with_unroll(unroll));
        (s.loads_by_operand.partial, s.stores_by_operand.partial)
    };
    let (l1, s1) = partial(1);
    let (l2, s2) = partial(2);
    let ok = l1 as f64 == 2.0 * pairs && s1 as f64 == 2.0 * pairs && l2 == 0 && s2 == 0;
    report(
        7,
        "spill law",
        ok,
        format!(
            "unroll 1: {:.2} loads + {:.2} stores per pair; unroll 2: {l2} loads + {s2} stores",
            l1 as f64 / pairs,
            s1 as f64 / pairs
        ),
    );
}

#[test]
fn criterion_8_vmacc_closed_form() {
    let mut ok = true;
    let mut parts = vec![];
    for (n, d, vlen) in [(64, 16, 16), (256, 32, 32), (128, 8, 64), (512, 64, 64)] {
        let (_, s) = run_kernel(Implementation::FlashVec, &problem(n, d, 17), &KernelConfig::new(vlen));
        let expect = (n * (n / vlen) * (d + vlen)) as u64;
        ok &= s.multiply_accumulate == expect;
        parts.push(format!("N={n},d={d},vlen={vlen}: {}={expect}", s.multiply_accumulate));
    }
    report(8, "vmacc closed form", ok, parts.join("; "));
}

#[test]
fn criterion_9_determinism() {
    let mut requests = vec![];
    for imp in [
        Implementation::Baseline,
        Implementation::FlashBlocked,
        Implementation::FlashVec,
        Implementation::FlashVecTiled,
        Implementation::FlashVecMq,
    ] {
        let mut r = RunRequest::new(imp, 100, 48, 21);
        r.vlen = 64;
        r.br = 4;
        r.exp = ExpMode::Approx;
        r.check = true;
        r.tolerance = 0.07;
        requests.push(r);
    }
    let mut ok = true;
    for req in &requests {
        let (a, b) = (harness::run(req).unwrap(), harness::run(req).unwrap());
        ok &= a.output.bit_eq(&b.output);
        for f in [ReportFormat::Json, ReportFormat::Csv] {
            ok &= render_one(&a.report, f).unwrap() == render_one(&b.report, f).unwrap();
        }
    }
    let sweep = |f| render(&harness::sweep(&requests), f).unwrap();
    ok &=
        sweep(ReportFormat::Csv) == sweep(ReportFormat::Csv) && sweep(ReportFormat::Json) == sweep(ReportFormat::Json);
    ok &= generate(4, 4, 42).unwrap().bit_eq(&generate(4, 4, 42).unwrap());
    report(9, "determinism", ok, format!("{} requests repeated, outputs and reports byte-identical", requests.len()));
}
