//! Writes a small synthetic PNG dataset and builds its train/val manifest.
//!
//! ```text
//! cargo run --example prepare -- [out_dir] [count]
//! ```

use std::path::PathBuf;

use dam_inpaint::data::{build_manifest, Split};
use dam_inpaint::synthetic::write_dataset;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = args.first().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dam_synthetic"));
    let count: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(24);

    let files = write_dataset(&dir, count, 64, 0)?;
    println!("wrote {} images to {}", files.len(), dir.display());
    let build = build_manifest(&dir, 0.25, 0, 64)?;
    let manifest_path = dir.join("manifest.tsv");
    build.manifest.write(&manifest_path)?;
    println!(
        "train={} val={} skipped={} -> {}",
        build.manifest.count(Split::Train),
        build.manifest.count(Split::Val),
        build.skipped.len(),
        manifest_path.display()
    );
    println!("val ids: {}", build.manifest.ids(Split::Val).collect::<Vec<_>>().join(", "));
    Ok(())
}
