//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any binding criterion fails.
//!
//! Positional arguments filter criteria by substring, e.g.
//! `cargo test --test acceptance -- ratio`.

mod cleanup;
mod cv;
mod dice;
mod end_to_end;
mod entropy;
mod gradient;
mod ratios;
mod reference;
mod segmentation;
mod trees;

use std::panic;
use std::process::ExitCode;
use std::time::Instant;

pub type Outcome = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Criterion {
    id: u8,
    name: &'static str,
    run: fn() -> Outcome,
}

const BINDING: [Criterion; 10] = [
    Criterion {
        id: 1,
        name: "entropy suite",
        run: entropy::run,
    },
    Criterion {
        id: 2,
        name: "gradient conformance",
        run: gradient::run,
    },
    Criterion {
        id: 3,
        name: "tree constraints",
        run: trees::constraints,
    },
    Criterion {
        id: 4,
        name: "monotone-transform invariance",
        run: trees::monotone,
    },
    Criterion {
        id: 5,
        name: "leave-two-out cv",
        run: cv::run,
    },
    Criterion {
        id: 6,
        name: "dice suite",
        run: dice::run,
    },
    Criterion {
        id: 7,
        name: "segmentation desk-scale",
        run: segmentation::run,
    },
    Criterion {
        id: 8,
        name: "mask cleanup",
        run: cleanup::run,
    },
    Criterion {
        id: 9,
        name: "frequency-ratio suite",
        run: ratios::run,
    },
    Criterion {
        id: 10,
        name: "end-to-end pipeline",
        run: end_to_end::run,
    },
];

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn execute(id: u8, name: &str, run: impl FnOnce() -> Outcome + panic::UnwindSafe) -> Outcome {
    let started = Instant::now();
    let outcome = panic::catch_unwind(run).unwrap_or_else(|p| Err(panic_text(p)));
    let secs = started.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => println!("PASS criterion {id:>2} {name}: {detail} [{secs:.1}s]"),
        Err(msg) => println!("FAIL criterion {id:>2} {name}: {msg} [{secs:.1}s]"),
    }
    outcome
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for c in &BINDING {
            println!("criterion {:>2} {}: test", c.id, c.name);
        }
        return ExitCode::SUCCESS;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));

    let mut failed = 0;
    for c in BINDING.iter().filter(|c| selected(c.name)) {
        if execute(c.id, c.name, c.run).is_err() {
            failed += 1;
        }
    }
    if selected(reference::NAME) {
        match reference::run_dir() {
            None => println!(
                "SKIP criterion 11 {}: set {} to a run directory produced with real data",
                reference::NAME,
                reference::ENV
            ),
            Some(dir) => {
                if execute(11, reference::NAME, || reference::run(&dir)).is_err() {
                    failed += 1;
                }
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    }
}
