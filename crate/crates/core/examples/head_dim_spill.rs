//! Head dimensions wider than one register: output chunks either stay in
//! registers (enough unrolling) or are spilled to memory and reloaded for
//! every key block.

use rvv_flash::harness::gen::generate;
use rvv_flash::{flash_vec_tiled, AttentionProblem, KernelConfig, Result, VectorEngine};

fn main() -> Result<()> {
    let (n, vlen) = (128, 16);
    for d in [16, 32, 64, 128] {
        let p = AttentionProblem::new(generate(n, d, 1)?, generate(n, d, 2)?, generate(n, d, 3)?)?;
        let pairs = (n * n.div_ceil(vlen)) as f64;
        for unroll in [1, 2, 4, 8] {
            let cfg = KernelConfig::new(vlen).with_unroll(unroll);
            let run = match flash_vec_tiled(&p, &cfg, &mut VectorEngine::with_vlen(vlen)?) {
                Ok(run) => run,
                Err(e) => {
                    println!("d={d:<4} unroll={unroll}: {e}");
                    continue;
                }
            };
            let s = &run.stats;
            println!(
                "d={d:<4} unroll={unroll} registers={:<3} spill loads/pair={:.1} stores/pair={:.1} instructions={}",
                cfg.live_registers(d),
                s.loads_by_operand.partial as f64 / pairs,
                s.stores_by_operand.partial as f64 / pairs,
                s.total_instructions()
            );
        }
    }
    Ok(())
}
