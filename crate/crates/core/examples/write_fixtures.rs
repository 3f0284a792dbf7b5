//! Regenerate the synthetic fixtures shipped under `data/`.
//!
//!     cargo run --example write_fixtures [out-dir]

use pearlkit::synthetic::{AliasDataset, TypedDataset};

fn main() -> pearlkit::Result<()> {
    let root = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data").to_string());
    let root = std::path::Path::new(&root);
    let alias = AliasDataset::standard();
    alias.write_files(root.join("alias"))?;
    TypedDataset::standard().write_files(root.join("typed"))?;
    println!(
        "wrote {} alias groups ({} held out) and the typed corpus to {}",
        alias.groups.len(),
        alias.held_out().count(),
        root.display()
    );
    Ok(())
}
