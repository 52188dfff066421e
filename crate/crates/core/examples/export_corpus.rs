//! Writes the built-in descriptor corpus as `NN_<name>.toml` files.
//!
//! `cargo run -p emarch-core --example export_corpus -- crates/core/corpus`
use std::path::PathBuf;

use emarch_core::simulator::zoo;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "corpus".into()));
    std::fs::create_dir_all(&dir)?;
    for (i, d) in zoo::builtin_corpus(zoo::DEFAULT_INPUT).iter().enumerate() {
        let path = dir.join(format!("{i:02}_{}.toml", d.name));
        std::fs::write(&path, d.to_toml()?)?;
        println!("{}", path.display());
    }
    Ok(())
}
