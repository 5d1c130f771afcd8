//! Command-line front end: `prepare`, `train`, `eval`, `inpaint`, `grid`.
//!
//! Exit codes: 0 success, 2 usage/config/data error, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use image::RgbImage;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{apply_mask, build_manifest, load_image, resolve_id, save_png, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::metrics::{composite, fmt_sig6, MaskTag};
use crate::model::generator_forward;
use crate::trainer::{eval_mask, evaluate_model, latest_checkpoint, run_training, Dataset, TrainEvent, TrainState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dam-inpaint", version, about = "Two-stage GAN image inpainting with dynamic attention maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a dataset directory and write a train/val manifest.
    Prepare(PrepareArgs),
    /// Train (or resume training) from a config file.
    Train(TrainArgs),
    /// Score a checkpoint on the validation split.
    Eval(EvalArgs),
    /// Inpaint a single image.
    Inpaint(InpaintArgs),
    /// Write a ground truth / input / output comparison grid.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub data_root: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest path; defaults to `<data-root>/manifest.tsv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Resume from a checkpoint, or from `<output_dir>/checkpoints/latest.ckpt`
    /// when no path is given.
    #[arg(long, num_args = 0..=1, value_name = "CHECKPOINT")]
    pub resume: Option<Option<PathBuf>>,
    /// Override a config key, e.g. `--set train.steps=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print the effective config and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskArg {
    Center,
    Free,
}

impl From<MaskArg> for MaskTag {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Center => MaskTag::Center,
            MaskArg::Free => MaskTag::Free,
        }
    }
}

/// Dataset location overrides for commands that read a checkpoint.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Defaults to the data root recorded in the checkpoint config.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Defaults to the manifest recorded in the checkpoint config.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = MaskArg::Center)]
    pub mask: MaskArg,
    /// Composited report; the raw report goes next to it as `<stem>_raw.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Grayscale mask image at model resolution; white marks the hole.
    #[arg(long, conflicts_with = "mask")]
    pub mask_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mask: Option<MaskArg>,
    /// Output directory for `masked.png`, `raw.png`, and `composited.png`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest ids, comma separated or repeated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ids: Vec<String>,
    #[arg(long, value_enum, default_value_t = MaskArg::Center)]
    pub mask: MaskArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

/// Parses `args` (including the program name), runs the command, and returns
/// the process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Inpaint(a) => inpaint(a),
        Command::Grid(a) => grid(a),
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let built = build_manifest(&a.data_root, a.val_fraction, a.seed, 0)?;
    for (id, reason) in &built.skipped {
        eprintln!("skipped {id}: {reason}");
    }
    let out = a.out.unwrap_or_else(|| a.data_root.join("manifest.tsv"));
    built.manifest.write(&out)?;
    println!(
        "train={} val={}",
        built.manifest.count(Split::Train),
        built.manifest.count(Split::Val)
    );
    Ok(())
}

fn load_manifest(path: &Path, resolution: usize) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(Error::Data(format!("manifest {} does not exist", path.display())));
    }
    DatasetManifest::read(path, resolution)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => RunConfig::load(path, &a.overrides)?,
        None => RunConfig::parse("", &a.overrides)?,
    };
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let state = match &a.resume {
        None => TrainState::new(cfg.clone())?,
        Some(p) => {
            let path = p.clone().unwrap_or_else(|| latest_checkpoint(&cfg.paths.output_dir));
            let mut state = checkpoint::load(&path)?;
            if state.config.model != cfg.model {
                return Err(Error::Config(format!(
                    "model section differs from the one stored in {}",
                    path.display()
                )));
            }
            // schedule and locations may change on resume; the rest is the run's identity
            state.config.paths = cfg.paths.clone();
            state.config.train.steps = cfg.train.steps;
            state.config.train.checkpoint_every = cfg.train.checkpoint_every;
            state.config.train.eval_every = cfg.train.eval_every;
            println!("resuming from {} at step {}", path.display(), state.step);
            state
        }
    };
    let cfg = state.config.clone();
    let manifest = load_manifest(&cfg.paths.manifest, cfg.model.resolution)?;
    let res = cfg.model.resolution;
    let train = Dataset::load(&cfg.paths.data_root, &manifest, Split::Train, res)?;
    let val = Dataset::load(&cfg.paths.data_root, &manifest, Split::Val, res)?;
    let out = &cfg.paths.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;

    let final_state = run_training(state, &train, Some(&val), out, |e| match e {
        TrainEvent::Step { .. } => {}
        TrainEvent::Checkpoint { step, path } => println!("step {step}: checkpoint {}", path.display()),
        TrainEvent::Eval { step, psnr, ssim } => {
            println!("step {step}: val center composited psnr={} ssim={}", fmt_sig6(*psnr), fmt_sig6(*ssim))
        }
    })?;
    println!("done: step {}", final_state.step);
    Ok(())
}

fn data_location(state: &TrainState, d: &DataArgs) -> (PathBuf, PathBuf) {
    (
        d.data_root.clone().unwrap_or_else(|| state.config.paths.data_root.clone()),
        d.manifest.clone().unwrap_or_else(|| state.config.paths.manifest.clone()),
    )
}

fn raw_report_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_raw.csv"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn eval(a: EvalArgs) -> Result<()> {
    let state = checkpoint::load(&a.checkpoint)?;
    let (root, manifest_path) = data_location(&state, &a.data);
    let res = state.config.model.resolution;
    let manifest = load_manifest(&manifest_path, res)?;
    let val = Dataset::load(&root, &manifest, Split::Val, res)?;
    let reports = evaluate_model(&state, &val, a.mask.into())?;
    write_file(&a.out, &reports.composited.to_csv())?;
    write_file(&raw_report_path(&a.out), &reports.raw.to_csv())?;
    for r in [&reports.composited, &reports.raw] {
        println!(
            "mask={} compositing={} n={} psnr_db={} ssim={}",
            r.mask,
            r.compositing,
            r.rows.len(),
            fmt_sig6(r.mean_psnr),
            fmt_sig6(r.mean_ssim)
        );
    }
    Ok(())
}

fn inpaint(a: InpaintArgs) -> Result<()> {
    let state = checkpoint::load(&a.checkpoint)?;
    let cfg = &state.config;
    let res = cfg.model.resolution;
    let image = load_image(&a.image, res)?;
    let mask = match (&a.mask_file, a.mask) {
        (Some(path), _) => {
            let img = image::open(path)
                .map_err(|e| Error::Decode { path: path.clone(), reason: e.to_string() })?
                .to_luma8();
            if img.dimensions() != (res as u32, res as u32) {
                return Err(Error::Data(format!(
                    "mask file {} is {}x{}, model expects {res}x{res}",
                    path.display(),
                    img.width(),
                    img.height()
                )));
            }
            Mask::from_luma(&img)?
        }
        (None, m) => {
            let id = a.image.to_string_lossy();
            eval_mask(cfg, &id, m.unwrap_or(MaskArg::Center).into())?
        }
    };
    let input = apply_mask(&image, &mask, state.fill)?;
    let out = generator_forward(&cfg.model, &state.generator, &input.generator_input)?;
    let composited = composite(&out.final_image, &input.masked, &mask)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (name, img) in [("masked", &input.masked), ("raw", &out.final_image), ("composited", &composited)] {
        let path = a.out.join(format!("{name}.png"));
        save_png(img, 0, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn grid(a: GridArgs) -> Result<()> {
    let state = checkpoint::load(&a.checkpoint)?;
    let (root, manifest_path) = data_location(&state, &a.data);
    let cfg = &state.config;
    let res = cfg.model.resolution;
    let manifest = load_manifest(&manifest_path, res)?;
    let unknown: Vec<&str> = a
        .ids
        .iter()
        .map(String::as_str)
        .filter(|id| !manifest.entries.iter().any(|e| e.path == *id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Data(format!("unknown ids: {}", unknown.join(", "))));
    }
    let side = res as u32;
    let mut canvas = RgbImage::new(3 * side, a.ids.len() as u32 * side);
    for (row, id) in a.ids.iter().enumerate() {
        let image = load_image(&resolve_id(&root, id), res)?;
        let mask = eval_mask(cfg, id, a.mask.into())?;
        let input = apply_mask(&image, &mask, state.fill)?;
        let out = generator_forward(&cfg.model, &state.generator, &input.generator_input)?;
        let ours = composite(&out.final_image, &input.masked, &mask)?;
        for (col, tile) in [&image, &input.masked, &ours].into_iter().enumerate() {
            image::imageops::replace(&mut canvas, &tile.to_rgb8(0)?, col as i64 * side as i64, row as i64 * side as i64);
        }
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    canvas.save(&a.out)?;
    println!("wrote {} ({} rows)", a.out.display(), a.ids.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["dam-inpaint", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["dam-inpaint", "prepare"]), EXIT_USAGE);
        assert_eq!(run(["dam-inpaint", "--help"]), EXIT_OK);
    }

    #[test]
    fn raw_report_sits_next_to_the_main_report() {
        assert_eq!(raw_report_path(Path::new("out/report.csv")), PathBuf::from("out/report_raw.csv"));
    }
}
