//! Verifies tape gradients of every primitive, layer and the whole network
//! against central finite differences.
//!
//!     cargo run --release --example gradient_check -- [seed]

fn main() -> dcnt::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let entries = dcnt::gradsuite::run_suite(seed)?;
    for e in &entries {
        println!(
            "{:<24} max rel error {:.3e} over {:>4} components ({} kinks skipped) {}",
            e.name,
            e.report.max_rel_error,
            e.report.checked,
            e.report.kinks,
            if e.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = entries.iter().filter(|e| !e.passed()).count();
    println!("{} of {} blocks within tolerance", entries.len() - failed, entries.len());
    Ok(())
}
