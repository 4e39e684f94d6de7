//! Error profile of the bit-trick exponential over [-15, 0] and beyond.

use rvv_flash::harness::experr::experr;
use rvv_flash::{exp_approx_scalar, quantize, QuantSpec, Result};

fn main() -> Result<()> {
    let spec = QuantSpec::default();
    println!("scale {} fused scale {} bias term {}", spec.scale, spec.fused_scale, spec.bias_term());

    for x in [0.0f32, -0.25, -0.5, -1.0, -std::f32::consts::LN_2, -7.3, -14.9] {
        let a = exp_approx_scalar(x, &spec)?;
        let e = (x as f64).exp();
        println!("x={x:>9.5} x_f={:>10} approx={a:.7} exp={e:.7} rel={:+.5}", quantize(x, &spec)?, a as f64 / e - 1.0);
    }

    let r = experr(1_000_000, 1, &spec)?;
    println!("uniform samples: max rel {:.6} at {}, mean rel {:.6}", r.max_rel_err, r.argmax, r.mean_rel_err);
    println!("powers of two: max rel {:.3e}", r.dyadic_max_rel_err);
    for p in &r.clipped {
        println!("clipped x={:>6} -> {:e} (rel {:.3e})", p.x, p.approx, p.rel_err);
    }
    Ok(())
}
