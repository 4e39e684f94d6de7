//! Several query rows share each staged key/value block. Key/value traffic
//! falls as 1/Br while staging and row-state traffic grows.

use rvv_flash::harness::gen::generate;
use rvv_flash::{flash_vec_multiquery, AttentionProblem, KernelConfig, Result, VectorEngine};

fn main() -> Result<()> {
    let (n, d, vlen) = (256, 64, 32);
    let p = AttentionProblem::new(generate(n, d, 4)?, generate(n, d, 5)?, generate(n, d, 6)?)?;
    let mut first = None;
    println!("{:>3} {:>9} {:>9} {:>9} {:>9} {:>12}", "Br", "kv loads", "tile", "partial", "row state", "instructions");
    for br in [1, 2, 4, 8, 16, 32] {
        let cfg = KernelConfig::new(vlen).with_br(br);
        let run = flash_vec_multiquery(&p, &cfg, &mut VectorEngine::with_vlen(vlen)?)?;
        let s = &run.stats;
        let l = &s.loads_by_operand;
        println!(
            "{br:>3} {:>9} {:>9} {:>9} {:>9} {:>12}",
            s.kv_loads(),
            l.tile,
            l.partial,
            l.row_state,
            s.total_instructions()
        );
        let out = first.get_or_insert(run.output.clone());
        assert!(out.bit_eq(&run.output), "blocking changed the output");
    }
    Ok(())
}
