//! Ratio of scalar operations to vector instructions as the vector length
//! grows, for a few head dimensions and both exponential modes.

use rvv_flash::harness::gen::generate;
use rvv_flash::{flash_vec_tiled, scalar_flop_count, AttentionProblem, ExpMode, KernelConfig, Result, VectorEngine};

fn main() -> Result<()> {
    let n = 512;
    for d in [64, 128, 256] {
        let p = AttentionProblem::new(generate(n, d, 1)?, generate(n, d, 2)?, generate(n, d, 3)?)?;
        let scalar = scalar_flop_count(&p).total() as f64;
        for mode in [ExpMode::Exact, ExpMode::Approx] {
            let row: Vec<String> = [8, 16, 32, 64, 128]
                .iter()
                .map(|&vlen| {
                    let cfg = KernelConfig::new(vlen).with_unroll(4).with_exp(mode);
                    let run = flash_vec_tiled(&p, &cfg, &mut VectorEngine::with_vlen(vlen)?)?;
                    Ok(format!("{vlen}:{:.1}", scalar / run.stats.total_instructions() as f64))
                })
                .collect::<Result<_>>()?;
            println!("d={d:<4} exp={mode:<6} {}", row.join("  "));
        }
    }
    Ok(())
}
