// Runs every self-check suite: finite-difference gradients, reward and
// advantage arithmetic, exact top-k against a full sort, closed-form losses.

use lrem::verify::{run_suite, Check, Suite};

pub fn run_example() -> lrem::Result<Vec<Check>> {
    let checks = run_suite(Suite::All)?;
    for c in &checks {
        println!("{c}");
    }
    Ok(checks)
}

fn main() -> lrem::Result<()> {
    let failed = run_example()?.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        eprintln!("{failed} checks failed");
        std::process::exit(2);
    }
    Ok(())
}
