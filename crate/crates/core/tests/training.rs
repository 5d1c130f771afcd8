//! Training-loop contracts that need more than one module.

mod common;

use std::collections::BTreeMap;

use dam_inpaint::autograd::Graph;
use dam_inpaint::config::RunConfig;
use dam_inpaint::losses::reconstruction_loss;
use dam_inpaint::model::{build_discriminator, generator_forward, generator_graph, ParameterStore};
use dam_inpaint::optim::Adam;
use dam_inpaint::trainer::{run_training, train_step, TrainState, LOG_FILE};

use common::{center_batch, small_dataset};

fn reconstruction_only() -> RunConfig {
    let mut cfg = RunConfig::micro();
    cfg.train.lambda_adv = 0.0;
    cfg.train.lambda_dam = 0.0;
    cfg
}

fn max_delta(a: &ParameterStore, b: &ParameterStore) -> f64 {
    a.iter()
        .map(|(name, t)| t.max_abs_diff(b.get(name).unwrap()))
        .fold(0.0, f64::max)
}

#[test]
fn zero_adversarial_and_dam_weights_give_a_pure_l1_step() {
    let cfg = reconstruction_only();
    let data = small_dataset(4, cfg.model.resolution, 3);
    let batch = center_batch(&cfg, &data);

    let mut state = TrainState::new(cfg.clone()).unwrap();
    let mut reference = state.generator.clone();
    train_step(&mut state, &batch).unwrap();

    // independent L1-only update
    let mut g = Graph::new();
    let p = reference.bind(&mut g, true);
    let v = generator_graph(&mut g, &cfg.model, &p, &batch.input.generator_input).unwrap();
    let a = g.mean_abs_diff(v.coarse, batch.target.tensor().clone()).unwrap();
    let b = g.mean_abs_diff(v.final_image, batch.target.tensor().clone()).unwrap();
    let loss = g.weighted_sum(&[(a, 1.0), (b, 1.0)]).unwrap();
    let mut grads = g.backward(loss).unwrap();
    let grads: BTreeMap<_, _> = p
        .iter()
        .filter_map(|(n, var)| grads.take(var).map(|t| (n.to_string(), t)))
        .collect();
    let mut opt = Adam::new(cfg.train.adam_g(), &reference);
    opt.update(&mut reference, &grads).unwrap();

    assert!(max_delta(&state.generator, &reference) <= 1e-7);
}

#[test]
fn generator_update_ignores_the_discriminator_when_adversarial_weight_is_zero() {
    let cfg = reconstruction_only();
    let data = small_dataset(4, cfg.model.resolution, 5);
    let batch = center_batch(&cfg, &data);
    let mut a = TrainState::new(cfg.clone()).unwrap();
    let mut b = a.clone();
    b.discriminator = build_discriminator(&cfg.model, 999).unwrap();
    let d_before = b.discriminator.clone();
    train_step(&mut a, &batch).unwrap();
    train_step(&mut b, &batch).unwrap();
    assert_eq!(a.generator, b.generator);
    assert_ne!(b.discriminator, d_before);
}

#[test]
fn reconstruction_loss_is_non_increasing_on_a_frozen_batch() {
    let cfg = reconstruction_only();
    let data = small_dataset(4, cfg.model.resolution, 9);
    let batch = center_batch(&cfg, &data);
    let mut state = TrainState::new(cfg).unwrap();
    let l_re = |s: &TrainState| {
        let out = generator_forward(&s.config.model, &s.generator, &batch.input.generator_input).unwrap();
        reconstruction_loss(&batch.target, &out.coarse, &out.final_image).unwrap()
    };
    let mut last = l_re(&state);
    for step in 1..=50 {
        train_step(&mut state, &batch).unwrap();
        let now = l_re(&state);
        assert!(now <= last, "step {step}: {now} > {last}");
        last = now;
    }
}

#[test]
fn resuming_drops_log_rows_past_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::micro();
    cfg.train.steps = 8;
    cfg.train.checkpoint_every = 4;
    let data = small_dataset(6, cfg.model.resolution, 1);
    run_training(TrainState::new(cfg.clone()).unwrap(), &data, None, dir.path(), |_| {}).unwrap();
    let full = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();

    let mid = dam_inpaint::checkpoint::load(&dir.path().join("checkpoints/step_000004.ckpt")).unwrap();
    assert_eq!(mid.step, 4);
    run_training(mid, &data, None, dir.path(), |_| {}).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap(), full);
}
