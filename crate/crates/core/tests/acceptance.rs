//! Acceptance gate: runs every numbered suite at full size and prints one
//! line per criterion. Exits non-zero if a criterion fails, except those in
//! `UNATTAINABLE`, which still print FAIL together with the reason.

use std::process::ExitCode;
use std::time::Instant;

use brwlab::spine::exact_var_delta;
use brwlab::stats::write_report_csv;
use brwlab::suites::{Verifier, SUITES};

const SEED: u64 = 20_240_601;

/// Criteria that cannot pass as stated.
const UNATTAINABLE: &[(&str, &str)] = &[(
    "yaglom",
    "the target Exp(mean 2/s2) contradicts n pi_n -> 2/s2 (criterion 4); the conditional mean of Z_n/n tends to s2/2",
)];

fn main() -> ExitCode {
    brwlab::parallel::init_threads();
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let v = Verifier::new(SEED);
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut hard_failures = 0;
    for name in SUITES {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match v.run(name) {
            Ok(o) => {
                let known = UNATTAINABLE.iter().find(|u| u.0 == name);
                let tag = if o.pass { "PASS" } else { "FAIL" };
                println!("[{}] criterion {:>2} {:<14} {} ({:.1}s)", tag, o.id, o.name, o.summary, o.seconds);
                if !o.pass {
                    match known {
                        Some((_, why)) => println!("       known unattainable: {}", why),
                        None => hard_failures += 1,
                    }
                }
                rows.extend(o.rows);
            }
            Err(e) => {
                println!("[FAIL] criterion {} errored: {}", name, e);
                hard_failures += 1;
            }
        }
    }
    if filter.is_empty() || filter.iter().any(|f| f == "supplementary") {
        supplementary();
    }
    let out = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_report.csv");
    if let Ok(f) = std::fs::File::create(&out) {
        let _ = write_report_csv(&rows, f);
        println!("report rows written to {}", out.display());
    }
    println!("acceptance finished in {:.1}s, {} unexpected failure(s)", start.elapsed().as_secs_f64(), hard_failures);
    if hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// Values that are checked elsewhere or not part of the numbered criteria.
fn supplementary() {
    let a = 5.0 / (4.0 * std::f64::consts::PI);
    match exact_var_delta(1024, 2) {
        Ok(var) => {
            let ratio = var / (1024f64.ln().powi(2) * a * a / 8.0);
            let verdict = if (0.5..=2.0).contains(&ratio) { "in" } else { "outside" };
            println!("[INFO] supplementary: Var(Delta_1024) / (ln^2 n A^2/8) = {:.3}, {} the [0.5, 2] band", ratio, verdict);
        }
        Err(e) => println!("[INFO] supplementary: Var(Delta) errored: {}", e),
    }
}
