use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use cresp_core::suite::{run_suite, Fault, SuiteConfig};

use crate::io;

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Random tabular instances in the value-bound sweep (0 skips it).
    #[arg(long, default_value_t = 50)]
    pub bound_sweep: usize,
    /// Deliberately break a component to see the suite catch it.
    #[arg(long)]
    pub inject_fault: Option<Fault>,
    /// JSON report path.
    #[arg(long, default_value = "verify_report.json")]
    pub report: PathBuf,
}

pub fn run(a: &VerifyArgs) -> Result<ExitCode> {
    let cfg = SuiteConfig { seed: a.seed, bound_sweep: a.bound_sweep, fault: a.inject_fault };
    let report = run_suite(&cfg)?;
    io::write_json(&a.report, &report)?;
    for c in &report.checks {
        println!(
            "{} {:<32} measured {:.3e}  tolerance {:.3e}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance
        );
    }
    if report.passed {
        println!("all {} checks passed", report.checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        let failed = report.failures();
        eprintln!("{} check(s) failed: {}", failed.len(), failed.join(", "));
        Ok(ExitCode::from(1))
    }
}
