//! Drives the vector engine by hand: a masked update, a reduction and a
//! tail-length load, then prints the instruction counters.

use rvv_flash::engine::{MemRef, Operand};
use rvv_flash::{Matrix, Result, VReg, VectorEngine};

fn main() -> Result<()> {
    let mut e = VectorEngine::with_vlen(8)?;
    let (a, b, m) = (VReg::new(0)?, VReg::new(1)?, VReg::new(2)?);

    let row = Matrix::from_vec(1, 6, vec![3.0, -1.0, 4.0, 1.5, -9.0, 2.0])?;
    let six = e.avl(6)?;
    e.vload(a, MemRef::new(&row, Operand::Query), 0, 0, six)?;
    e.vfmv_splat(m, f32::MIN, six)?;
    e.vredmax(m, a, m, six)?;
    println!("max of {:?} = {}", row.as_slice(), e.lane0_f32(m));

    // halve only the lanes that are not the maximum
    e.vrgather_bcast(b, m, 0, six)?;
    let not_max = e.vmsneq(a, b, six)?;
    e.vfmv_splat(b, 0.5, six)?;
    e.vfmul_masked(a, a, b, &not_max, six)?;
    println!("masked halving: {:?}", &e.read(a).to_f32_vec()[..6]);

    e.vredsum(b, a, six)?;
    println!("ordered sum: {}", e.lane0_f32(b));

    for (name, count) in e.stats().fields().into_iter().filter(|&(_, c)| c > 0) {
        println!("{name:>20} {count}");
    }
    Ok(())
}
