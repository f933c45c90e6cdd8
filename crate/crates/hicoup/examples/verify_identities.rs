//! Run the oracle-backed identity checklist (the same checks as
//! `hicoup verify`).

use hicoup::cli::verify_checks;

fn main() {
    let checks = verify_checks(2, 0x5EED).unwrap();
    let mut failed = 0;
    for c in &checks {
        println!(
            "{:<42} {}  ({:.3e})",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.value
        );
        if !c.pass {
            failed += 1;
        }
    }
    std::process::exit(if failed > 0 { 1 } else { 0 });
}
