//! `gradcheck`: finite-difference verification of the analytic gradients on
//! a small f64 network. Exits 0 on pass, 4 (numeric failure) otherwise.

use volgen_core::model::run_standard_gradient_check;
use volgen_core::Result;

const MIN_PARAMS: usize = 100;
const TOLERANCE: f64 = 1e-3;

pub fn run(seed: u64) -> Result<u8> {
    let report = run_standard_gradient_check(seed, MIN_PARAMS, TOLERANCE)?;
    println!("{report}");
    Ok(if report.passed() { 0 } else { 4 })
}
