//! Builds a sweep programmatically and prints it as CSV, the same table the
//! `vfa sweep` command writes.

use rvv_flash::harness::{render, sweep, Implementation, ReportFormat, RunRequest};
use rvv_flash::Result;

fn main() -> Result<()> {
    let mut requests = vec![];
    for vlen in [32, 64, 128] {
        let mut r = RunRequest::new(Implementation::FlashVecMq, 256, 128, 1);
        r.vlen = vlen;
        r.br = 32;
        r.check = true;
        requests.push(r);
    }
    let reports = sweep(&requests);
    print!("{}", render(&reports, ReportFormat::Csv)?);
    Ok(())
}
