//! Adversarial training: alternating discriminator and generator updates,
//! CSV logging, checkpointing, resumption, and validation scoring.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Gradients, Graph};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{apply_mask, channel_means, load_image, resolve_id, DatasetManifest, Fill, ImageTensor, MaskedInput, Split};
use crate::error::{Error, Result};
use crate::losses::{discriminator_loss_graph, fakeness_targets, generator_loss_graph, LossBreakdown, LossWeights};
use crate::mask::{center_mask, generate, Mask, MaskMode, MaskSpec};
use crate::metrics::{aggregate, evaluate_pair, fmt_sig6, Compositing, MaskTag, MetricRow, MetricsReport};
use crate::model::{build_discriminator, build_generator, discriminator_graph, generator_forward, generator_graph, Bound, ParameterStore};
use crate::optim::{Adam, AdamConfig};

pub const LOG_HEADER: &str = "step,l_re,l_adv_d,l_adv_g,l_dam,l_total";
pub const LOG_FILE: &str = "train_log.csv";

/// Which masks training batches use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSchedule {
    Center,
    FreeForm,
    /// Center masks on even steps, free-form masks on odd steps.
    Mixed,
}

/// Value written into the hole of the generator input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    Zeros,
    DatasetMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub d_steps_per_g: usize,
    pub lambda_re: f64,
    pub lambda_adv: f64,
    pub lambda_dam: f64,
    pub mask_schedule: MaskSchedule,
    pub fill: FillPolicy,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// 0 disables periodic validation.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            batch_size: 16,
            steps: 100_000,
            lr_g: 1e-4,
            lr_d: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            d_steps_per_g: 1,
            lambda_re: w.lambda_re,
            lambda_adv: w.lambda_adv,
            lambda_dam: w.lambda_dam,
            mask_schedule: MaskSchedule::Mixed,
            fill: FillPolicy::Zeros,
            seed: 0,
            checkpoint_every: 5_000,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    /// Short schedule matching [`crate::model::ModelConfig::micro`].
    pub fn micro() -> Self {
        Self {
            batch_size: 4,
            steps: 10,
            checkpoint_every: 5,
            ..Self::default()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_re: self.lambda_re,
            lambda_adv: self.lambda_adv,
            lambda_dam: self.lambda_dam,
        }
    }

    pub fn adam_g(&self) -> AdamConfig {
        AdamConfig { lr: self.lr_g, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn adam_d(&self) -> AdamConfig {
        AdamConfig { lr: self.lr_d, ..self.adam_g() }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return err("train.batch_size must be positive".into());
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("adam_eps", self.adam_eps)] {
            if !(v.is_finite() && v > 0.0) {
                return err(format!("train.{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return err(format!("train.{name} must be in [0, 1), got {v}"));
            }
        }
        if self.d_steps_per_g == 0 {
            return err("train.d_steps_per_g must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return err("train.checkpoint_every must be positive".into());
        }
        self.weights().validate()
    }
}

/// Everything needed to continue a run: parameters, optimizer moments, step
/// counter, and the sampling RNG.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: RunConfig,
    pub step: u64,
    pub generator: ParameterStore,
    pub discriminator: ParameterStore,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub fill: Fill,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.train.seed;
        let generator = build_generator(&config.model, seed)?;
        let discriminator = build_discriminator(&config.model, seed.wrapping_add(1))?;
        Ok(Self {
            opt_g: Adam::new(config.train.adam_g(), &generator),
            opt_d: Adam::new(config.train.adam_d(), &discriminator),
            generator,
            discriminator,
            step: 0,
            fill: Fill::Zeros,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(2)),
            config,
        })
    }
}

/// One training batch: targets, masks, and the derived generator input.
#[derive(Debug, Clone)]
pub struct Batch {
    pub target: ImageTensor,
    pub mask: Mask,
    pub input: MaskedInput,
}

impl Batch {
    pub fn new(target: ImageTensor, mask: Mask, fill: Fill) -> Result<Self> {
        let input = apply_mask(&target, &mask, fill)?;
        Ok(Self { target, mask, input })
    }
}

/// Images of one split, held in memory as `[1, 3, r, r]` tensors.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub images: Vec<ImageTensor>,
}

impl Dataset {
    pub fn load(root: &Path, manifest: &DatasetManifest, split: Split, resolution: usize) -> Result<Self> {
        let ids: Vec<String> = manifest.ids(split).map(str::to_string).collect();
        let images = ids
            .iter()
            .map(|id| load_image(&resolve_id(root, id), resolution))
            .collect::<Result<_>>()?;
        Ok(Self { ids, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Draws the batch for the state's next step and advances its RNG.
pub fn sample_batch(state: &mut TrainState, data: &Dataset) -> Result<Batch> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Data("training split is empty".into()));
    }
    let b = state.config.train.batch_size;
    let picks: Vec<usize> = if b <= n {
        index::sample(&mut state.rng, n, b).into_vec()
    } else {
        (0..b).map(|_| state.rng.random_range(0..n)).collect()
    };
    let res = state.config.model.resolution;
    let center = match state.config.train.mask_schedule {
        MaskSchedule::Center => true,
        MaskSchedule::FreeForm => false,
        MaskSchedule::Mixed => state.step.is_multiple_of(2),
    };
    let mut masks = Vec::with_capacity(b);
    for _ in 0..b {
        masks.push(if center {
            center_mask(res, state.config.mask.center_size)?
        } else {
            let spec = MaskSpec {
                mode: MaskMode::FreeForm,
                seed: state.rng.random(),
                ..state.config.mask.clone()
            };
            generate(&spec, res)?
        });
    }
    let images: Vec<ImageTensor> = picks.iter().map(|&i| data.images[i].clone()).collect();
    Batch::new(ImageTensor::stack(&images)?, Mask::stack(&masks)?, state.fill)
}

fn collect_grads(bound: &Bound, grads: &mut Gradients) -> BTreeMap<String, crate::tensor::Tensor> {
    bound
        .iter()
        .filter_map(|(name, v)| grads.take(v).map(|t| (name.to_string(), t)))
        .collect()
}

fn finite(term: &'static str, v: f64, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term, step })
    }
}

/// `d_steps_per_g` discriminator updates on detached generator output, then
/// one generator update on the weighted total loss. Returns the losses as
/// evaluated before the updates and increments `state.step`.
pub fn train_step(state: &mut TrainState, batch: &Batch) -> Result<LossBreakdown> {
    let cfg = state.config.clone();
    let step = state.step + 1;
    let fake = {
        let mut g = Graph::new();
        let pg = state.generator.bind(&mut g, false);
        let gv = generator_graph(&mut g, &cfg.model, &pg, &batch.input.generator_input)?;
        let out = g.value(gv.final_image).clone();
        if !out.all_finite() {
            return Err(Error::NonFinite { term: "generator output", step });
        }
        out
    };

    let mut l_adv_d = f64::NAN;
    for k in 0..cfg.train.d_steps_per_g {
        let mut g = Graph::new();
        let pd = state.discriminator.bind(&mut g, true);
        let real = g.constant(batch.target.tensor().clone());
        let fake_v = g.constant(fake.clone());
        let s_real = discriminator_graph(&mut g, &cfg.model, &pd, real)?;
        let s_fake = discriminator_graph(&mut g, &cfg.model, &pd, fake_v)?;
        let loss = discriminator_loss_graph(&mut g, s_real, s_fake)?;
        let value = finite("l_adv_d", g.value(loss).item(), step)?;
        if k == 0 {
            l_adv_d = value;
        }
        let mut grads = g.backward(loss)?;
        state.opt_d.update(&mut state.discriminator, &collect_grads(&pd, &mut grads))?;
    }

    let mut g = Graph::new();
    let pg = state.generator.bind(&mut g, true);
    let pd = state.discriminator.bind(&mut g, false);
    let gv = generator_graph(&mut g, &cfg.model, &pg, &batch.input.generator_input)?;
    let s_fake = discriminator_graph(&mut g, &cfg.model, &pd, gv.final_image)?;
    let final_image = ImageTensor::new(g.value(gv.final_image).clone())?;
    let targets = fakeness_targets(&batch.target, &final_image)?;
    let lv = generator_loss_graph(
        &mut g,
        batch.target.tensor(),
        gv.coarse,
        gv.final_image,
        &gv.fakeness,
        &targets,
        s_fake,
        cfg.train.weights(),
    )?;
    let losses = LossBreakdown {
        l_re: finite("l_re", g.value(lv.l_re).item(), step)?,
        l_adv_d,
        l_adv_g: finite("l_adv_g", g.value(lv.l_adv_g).item(), step)?,
        l_dam: finite("l_dam", g.value(lv.l_dam).item(), step)?,
        l_total: finite("l_total", g.value(lv.total).item(), step)?,
    };
    let mut grads = g.backward(lv.total)?;
    state.opt_g.update(&mut state.generator, &collect_grads(&pg, &mut grads))?;
    if !(state.opt_g.all_finite() && state.opt_d.all_finite()) {
        return Err(Error::NonFinite { term: "optimizer moments", step });
    }
    state.step = step;
    Ok(losses)
}

/// Progress notifications from [`run_training`].
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    Step { step: u64, losses: LossBreakdown },
    Checkpoint { step: u64, path: PathBuf },
    Eval { step: u64, psnr: f64, ssim: f64 },
}

pub fn log_row(step: u64, l: &LossBreakdown) -> String {
    let mut row = step.to_string();
    for (_, v) in l.terms() {
        row.push(',');
        row.push_str(&fmt_sig6(v));
    }
    row
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step_{step:06}.ckpt"))
}

pub fn latest_checkpoint(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoints").join("latest.ckpt")
}

/// Opens the log for appending, keeping only rows up to `step`.
fn open_log(path: &Path, step: u64) -> Result<File> {
    let mut text = format!("{LOG_HEADER}\n");
    if step > 0 && path.exists() {
        let existing = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for line in existing.lines().skip(1) {
            let row_step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
            if row_step.is_some_and(|s| s <= step) {
                text.push_str(line);
                text.push('\n');
            }
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
}

fn save_checkpoint(state: &TrainState, out_dir: &Path) -> Result<PathBuf> {
    let path = checkpoint_path(out_dir, state.step);
    checkpoint::save(state, &path)?;
    checkpoint::save(state, &latest_checkpoint(out_dir))?;
    Ok(path)
}

/// Runs `state` up to `config.train.steps`, writing `train_log.csv` and
/// checkpoints under `out_dir`. A state loaded from a checkpoint continues
/// exactly where the original run would have gone.
pub fn run_training(
    mut state: TrainState,
    train: &Dataset,
    val: Option<&Dataset>,
    out_dir: &Path,
    mut on_event: impl FnMut(&TrainEvent),
) -> Result<TrainState> {
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if state.step == 0 && state.config.train.fill == FillPolicy::DatasetMean {
        state.fill = Fill::DatasetMean(channel_means(&train.images));
    }
    let log_path = out_dir.join(LOG_FILE);
    let mut log = open_log(&log_path, state.step)?;
    let total = state.config.train.steps;
    if total == 0 {
        let path = save_checkpoint(&state, out_dir)?;
        on_event(&TrainEvent::Checkpoint { step: 0, path });
        return Ok(state);
    }
    while state.step < total {
        let batch = sample_batch(&mut state, train)?;
        let losses = train_step(&mut state, &batch)?;
        let step = state.step;
        writeln!(log, "{}", log_row(step, &losses)).map_err(|e| Error::io(&log_path, e))?;
        on_event(&TrainEvent::Step { step, losses });
        let every = state.config.train.checkpoint_every;
        if step.is_multiple_of(every) || step == total {
            let path = save_checkpoint(&state, out_dir)?;
            on_event(&TrainEvent::Checkpoint { step, path });
        }
        let eval_every = state.config.train.eval_every;
        if let Some(val) = val.filter(|v| !v.is_empty() && eval_every > 0 && step.is_multiple_of(eval_every)) {
            let r = evaluate_model(&state, val, MaskTag::Center)?;
            on_event(&TrainEvent::Eval {
                step,
                psnr: r.composited.mean_psnr,
                ssim: r.composited.mean_ssim,
            });
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(state)
}

/// Per-image mask seed for free-form evaluation: stable across runs and
/// independent of dataset order.
pub fn eval_mask_seed(id: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(id.as_bytes());
    h.update(seed.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

pub fn eval_mask(config: &RunConfig, id: &str, mode: MaskTag) -> Result<Mask> {
    let res = config.model.resolution;
    match mode {
        MaskTag::Center => center_mask(res, config.mask.center_size),
        MaskTag::Free => {
            let spec = MaskSpec {
                mode: MaskMode::FreeForm,
                seed: eval_mask_seed(id, config.train.seed),
                ..config.mask.clone()
            };
            generate(&spec, res)
        }
    }
}

/// Validation scores in both compositing modes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReports {
    pub raw: MetricsReport,
    pub composited: MetricsReport,
}

pub fn evaluate_model(state: &TrainState, val: &Dataset, mode: MaskTag) -> Result<EvalReports> {
    if val.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let cfg = &state.config;
    let (mut raw, mut comp) = (Vec::new(), Vec::new());
    for (id, image) in val.ids.iter().zip(&val.images) {
        let mask = eval_mask(cfg, id, mode)?;
        let input = apply_mask(image, &mask, state.fill)?;
        let out = generator_forward(&cfg.model, &state.generator, &input.generator_input)?;
        for (rows, c) in [(&mut raw, Compositing::Raw), (&mut comp, Compositing::Composited)] {
            let (psnr, ssim) = evaluate_pair(image, &out.final_image, &input.masked, &mask, c)?;
            rows.push(MetricRow { id: id.clone(), psnr, ssim });
        }
    }
    Ok(EvalReports {
        raw: aggregate(raw, mode, Compositing::Raw)?,
        composited: aggregate(comp, mode, Compositing::Composited)?,
    })
}
