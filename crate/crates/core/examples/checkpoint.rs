//! Saves a training state, reloads it bit-exactly, and shows that a single
//! flipped payload byte is rejected.
//!
//! ```text
//! cargo run --example checkpoint
//! ```

use dam_inpaint::checkpoint;
use dam_inpaint::config::RunConfig;
use dam_inpaint::trainer::TrainState;

fn main() -> anyhow::Result<()> {
    let state = TrainState::new(RunConfig::micro())?;
    let bytes = checkpoint::to_bytes(&state)?;
    println!("checkpoint: {} bytes, step {}", bytes.len(), state.step);

    let back = checkpoint::from_bytes(&bytes)?;
    println!("generator identical after reload: {}", back.generator == state.generator);
    println!("re-serialised bytes identical: {}", checkpoint::to_bytes(&back)? == bytes);

    let mut corrupt = bytes.clone();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 0x01;
    match checkpoint::from_bytes(&corrupt) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("flipped byte rejected: {e}"),
    }
    Ok(())
}
