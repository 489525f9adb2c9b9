//! The `invariant` and `verify` subcommands driven from a config file.

use center_manifold::cli::{run, Subcommand};
use std::path::Path;

fn main() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/curved2.toml");
    let out = std::env::temp_dir().join("center-manifold-cli-example");
    for cmd in [Subcommand::Invariant, Subcommand::Verify] {
        let code = run(cmd, &config, &out);
        println!("{} exited with {code}", cmd.name());
    }
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    println!("manifest of the last run ({} bytes) in {}", manifest.len(), out.display());
}
