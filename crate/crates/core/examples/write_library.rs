//! Writes the builtin template library as STL files plus `library.json`.
//!
//! cargo run -p treesim --example write_library -- assets/library

use std::path::PathBuf;

fn main() {
    let dir: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("assets/library"));
    match treesim::MeshLibrary::builtin().write_to_dir(&dir) {
        Ok(manifest) => println!("manifest={}", manifest.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(4);
        }
    }
}
