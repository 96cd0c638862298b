//! Runs the finite-difference gradient suite and prints one line per op.

use sddkit::selfcheck::{run_gradient_suite, DEFAULT_TOL};

fn main() {
    let t = std::time::Instant::now();
    let reports = run_gradient_suite(DEFAULT_TOL);
    for r in &reports {
        println!(
            "{:<20} {:>5} coords  max rel {:.2e}  {}",
            r.name,
            r.checked,
            r.max_rel_err,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    println!("{:.1}s", t.elapsed().as_secs_f64());
    if reports.iter().any(|r| !r.passed) {
        std::process::exit(1);
    }
}
