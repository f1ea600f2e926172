//! One PASS/FAIL line per acceptance criterion. Failures listed in
//! `checks::KNOWN_DEVIATIONS` are printed as failures but do not fail the
//! target; any other failure does.

use std::process::ExitCode;

use pil_core::checks::{self, CheckResult};

const SEED: u64 = 20_240_601;

struct Criterion {
    title: &'static str,
    parts: Vec<CheckResult>,
}

fn criterion(title: &'static str, run: impl FnOnce() -> pil_core::error::Result<Vec<CheckResult>>) -> Criterion {
    match run() {
        Ok(parts) => Criterion { title, parts },
        Err(e) => Criterion {
            title,
            parts: vec![CheckResult {
                name: "error".into(),
                passed: false,
                detail: e.to_string(),
                failures: vec![format!("error: {e}")],
                documented: vec![],
                seconds: 0.0,
            }],
        },
    }
}

fn main() -> ExitCode {
    // `cargo test` passes libtest flags; a name filter that excludes us skips the run
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    type Runner = Box<dyn FnOnce() -> pil_core::error::Result<Vec<CheckResult>>>;
    let plan: Vec<(&'static str, Runner)> = vec![
        ("exact MDP optimal rows", Box::new(|| Ok(vec![checks::check_exact_mdp()?]))),
        ("Zipkin heuristic rows", Box::new(|| Ok(vec![checks::check_zipkin_heuristics(SEED)?.0]))),
        (
            "exponential theory suite",
            Box::new(|| {
                Ok(vec![
                    checks::check_bias(SEED)?,
                    checks::check_dominance_chain(SEED, &[1, 2, 4, 8], &[4.0, 9.0, 19.0])?,
                    checks::check_divergence(SEED)?,
                ])
            }),
        ),
        ("back-order dominance", Box::new(|| Ok(vec![checks::check_backorder(SEED)?]))),
        ("monotonicity in the PIL level", Box::new(|| Ok(vec![checks::check_monotonicity(SEED)?]))),
        ("guaranteed grid", Box::new(|| Ok(vec![checks::check_grid(SEED)?]))),
        ("projection backends", Box::new(|| Ok(vec![checks::check_backends(SEED)?]))),
        ("lead-time trend", Box::new(|| Ok(vec![checks::check_leadtime(SEED)?.0]))),
    ];
    let mut unexpected = 0;
    println!();
    for (i, (title, run)) in plan.into_iter().enumerate() {
        let c = criterion(title, run);
        let passed = c.parts.iter().all(|p| p.passed);
        let surprise: usize = c.parts.iter().map(|p| p.unexpected().len()).sum();
        unexpected += surprise;
        let note = if passed {
            String::new()
        } else if surprise == 0 {
            " (all failures documented)".into()
        } else {
            format!(" ({surprise} undocumented failures)")
        };
        println!("{} criterion {}: {}{note}", if passed { "PASS" } else { "FAIL" }, i + 1, c.title);
        for p in &c.parts {
            for line in p.to_string().lines() {
                println!("    {line}");
            }
        }
    }
    if unexpected > 0 {
        println!("acceptance: {unexpected} undocumented failures");
        ExitCode::FAILURE
    } else {
        println!("acceptance: no undocumented failures");
        ExitCode::SUCCESS
    }
}
