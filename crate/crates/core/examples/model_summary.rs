//! Prints the parameter tensors of the generator and discriminator.
//!
//! ```text
//! cargo run --example model_summary -- [resolution] [base_width]
//! ```

use dam_inpaint::model::{build_discriminator, build_generator, ModelConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ModelConfig::default();
    if let Some(r) = args.first() {
        cfg.resolution = r.parse()?;
    }
    if let Some(w) = args.get(1) {
        cfg.base_width = w.parse()?;
    }
    let gen = build_generator(&cfg, 0)?;
    let disc = build_discriminator(&cfg, 0)?;
    for (title, store) in [("generator", &gen), ("discriminator", &disc)] {
        println!("{title}:");
        for (name, t) in store.iter() {
            println!("  {name:<28} {:?}", t.shape());
        }
    }
    let stage = |prefix: &str| gen.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.len()).sum::<usize>();
    println!("coarse stage:  {:>10}", stage("coarse."));
    println!("dam stage:     {:>10}", stage("dam."));
    println!("generator:     {:>10}", gen.parameter_count());
    println!("discriminator: {:>10}", disc.parameter_count());
    Ok(())
}
