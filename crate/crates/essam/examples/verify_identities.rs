//! The Monte-Carlo identity suite on a linear objective.
//!
//! With rewards centered by their sample mean and scaled by 1/sigma, the
//! population estimate has mean ((N-1)/N) g, the reward sample variance
//! satisfies E[s^2] = sigma^2 ||g||^2, and the norm/variance ratio is
//! invariant to scaling g or sigma. Each check prints one JSONL row;
//! "report" rows are informational comparisons, never asserted.

use essam::verify::{run_suite, suite_passed, write_reports, SuiteConfig, ALL_CHECKS};

fn main() {
    let cfg = SuiteConfig {
        trials: 20_000,
        ..SuiteConfig::default()
    };
    println!(
        "g = {:?}, sigma = {:e}, N = {}, {} trials per check",
        cfg.g, cfg.sigma, cfg.population, cfg.trials
    );
    let reports = run_suite(&cfg, &ALL_CHECKS).unwrap();
    write_reports(std::io::stdout().lock(), &reports).unwrap();
    println!(
        "suite {}",
        if suite_passed(&reports) { "passed" } else { "FAILED" }
    );
}
