//! Trains the micro model on synthetic images with checkpoints, periodic
//! validation and a CSV loss log, exactly as the `train` subcommand does.
//!
//! ```text
//! cargo run --release --example train -- [out_dir] [steps]
//! ```

use std::path::PathBuf;

use dam_inpaint::config::RunConfig;
use dam_inpaint::synthetic::smooth_images;
use dam_inpaint::trainer::{run_training, Dataset, TrainEvent, TrainState, LOG_FILE};

fn synthetic(count: usize, res: usize, seed: u64) -> Dataset {
    Dataset {
        ids: (0..count).map(|i| format!("img_{seed}_{i:04}")).collect(),
        images: smooth_images(count, res, seed),
    }
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dam_train"));
    let steps: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(40);

    let mut cfg = RunConfig::micro();
    cfg.train.steps = steps;
    cfg.train.checkpoint_every = 20;
    cfg.train.eval_every = 20;
    let res = cfg.model.resolution;
    let (train, val) = (synthetic(24, res, 0), synthetic(8, res, 1));

    let state = run_training(TrainState::new(cfg)?, &train, Some(&val), &out, |event| match event {
        TrainEvent::Step { step, losses } if step % 10 == 0 => {
            println!("step {step:>4}: l_total {:.5} l_re {:.5}", losses.l_total, losses.l_re)
        }
        TrainEvent::Step { .. } => {}
        TrainEvent::Checkpoint { path, .. } => println!("checkpoint {}", path.display()),
        TrainEvent::Eval { step, psnr, ssim } => println!("step {step:>4}: val psnr {psnr:.3} dB, ssim {ssim:.4}"),
    })?;
    println!("finished at step {}; log in {}", state.step, out.join(LOG_FILE).display());
    Ok(())
}
