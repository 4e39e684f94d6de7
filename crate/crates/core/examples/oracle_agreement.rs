//! The scalar formulations of attention agree: safe softmax, deferred
//! division, the online recurrence and its block form.

use rvv_flash::harness::gen::generate;
use rvv_flash::{attention_lazy, attention_safe, flash_blocked, flash_scalar, AttentionProblem, Matrix, Result};

fn max_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn main() -> Result<()> {
    let (n, d) = (50, 24);
    let p = AttentionProblem::new(generate(n, d, 1)?, generate(n, d, 2)?, generate(n, d, 3)?)?;
    let safe = attention_safe::<f64>(&p)?;
    println!("lazy         {:.3e}", max_diff(&safe, &attention_lazy(&p)?));
    println!("online       {:.3e}", max_diff(&safe, &flash_scalar(&p)?));
    for b in [1, 3, 16, n] {
        println!("blocks of {b:<3}{:.3e}", max_diff(&safe, &flash_blocked(&p, b)?));
    }

    // binary32 against binary64
    let single = attention_safe::<f32>(&p)?.to_f64();
    println!("f32 vs f64   {:.3e}", max_diff(&safe, &single));
    Ok(())
}
