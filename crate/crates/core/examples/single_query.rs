//! One query row at a time with the head dimension in a single register:
//! output error against the reference and the instruction mix.

use rvv_flash::harness::gen::generate;
use rvv_flash::{attention_safe, flash_vec, AttentionProblem, ExpMode, KernelConfig, Result, VectorEngine};

fn main() -> Result<()> {
    let (n, d, vlen) = (256, 32, 32);
    let p = AttentionProblem::new(generate(n, d, 7)?, generate(n, d, 8)?, generate(n, d, 9)?)?;
    let reference = attention_safe::<f64>(&p)?;
    let vmax = p.v().max_abs() as f64;

    for mode in [ExpMode::Exact, ExpMode::Approx] {
        let cfg = KernelConfig::new(vlen).with_exp(mode);
        let run = flash_vec(&p, &cfg, &mut VectorEngine::with_vlen(vlen)?)?;
        let err = run
            .output
            .as_slice()
            .iter()
            .zip(reference.as_slice())
            .map(|(a, b)| (*a as f64 - b).abs())
            .fold(0.0, f64::max);
        println!("exp={mode}: max error {:.3e} x max|V|, {} instructions", err / vmax, run.stats.total_instructions());
        println!("  vmacc {} (closed form {})", run.stats.multiply_accumulate, n * (n / vlen) * (d + vlen));
        println!(
            "  exp {} / convert {} / reductions {}+{}",
            run.stats.exact_exp, run.stats.convert_f2i, run.stats.reduction_max, run.stats.reduction_sum
        );
    }
    Ok(())
}
