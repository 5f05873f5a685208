//! Entry point of the built-in input/output judge. Reads judge metadata on
//! standard input and prints a feedback document. Always exits 0 once it has
//! printed feedback.

use std::io::Write;

use forge_judge_core::builtin_judge::judge_main;
use forge_judge_core::sandbox::HostProcessBackend;

fn main() {
    let launcher = HostProcessBackend::default();
    let tree = judge_main(&mut std::io::stdin().lock(), &launcher);
    let mut out = std::io::stdout().lock();
    if out.write_all(&tree.to_canonical_json()).and_then(|_| out.flush()).is_err() {
        std::process::exit(1);
    }
}
