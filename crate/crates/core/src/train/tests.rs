use std::collections::HashMap;

use super::*;
use crate::data::{default_h36m17_skeleton, synth_pairs, MotionParams, Split};
use crate::model::ModelConfig;

fn small_config() -> ModelConfig {
    ModelConfig {
        frames: 9,
        joints: 17,
        in_channels: 2,
        hidden: 8,
        proxy_len: 3,
        layers: 1,
        heads: 2,
        ..ModelConfig::for_frames(9)
    }
}

fn small_train() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        epochs: 2,
        lr0: 1e-3,
        train_stride: 9,
        max_steps: Some(4),
        ..TrainConfig::default()
    }
}

fn dataset(seed: u64, n: usize, frames: usize) -> Dataset {
    let sk = default_h36m17_skeleton();
    let pairs = synth_pairs(&mut Rng::new(seed), n, frames, &sk, &MotionParams::default()).unwrap();
    Dataset::from_pairs(sk, Split::Train, pairs)
}

fn run(cfg: TrainConfig, ds: &Dataset) -> (Trainer, Vec<LogRecord>) {
    let mut t = Trainer::new(Model::new(small_config(), 7).unwrap(), cfg).unwrap();
    let log = t.run(ds, None, |_, _| Ok(())).unwrap();
    (t, log)
}

fn step_losses(log: &[LogRecord]) -> Vec<f64> {
    log.iter()
        .filter_map(|r| match r {
            LogRecord::Step(s) => Some(s.loss),
            _ => None,
        })
        .collect()
}

fn param_bits(m: &Model) -> Vec<u64> {
    m.params().iter().flat_map(|(_, p)| p.value.data().iter().map(|x| x.to_bits())).collect()
}

#[test]
fn training_is_bitwise_deterministic() {
    let ds = dataset(1, 2, 18);
    let (a, la) = run(small_train(), &ds);
    let (b, lb) = run(small_train(), &ds);
    assert_eq!(la, lb);
    assert_eq!(param_bits(&a.model), param_bits(&b.model));
    assert_eq!(a.step, 4);
    assert_eq!(step_losses(&la).len(), 4);
}

#[test]
fn log_records_have_the_expected_fields() {
    let ds = dataset(1, 2, 18);
    let (_, log) = run(small_train(), &ds);
    let step: serde_json::Value = serde_json::from_str(&log[0].to_json_line()).unwrap();
    for k in ["step", "epoch", "lr", "loss", "loss_3d", "loss_t"] {
        assert!(step.get(k).is_some(), "missing {k}");
    }
    let ep = log.iter().find(|r| matches!(r, LogRecord::Epoch(_))).unwrap();
    let ep: serde_json::Value = serde_json::from_str(&ep.to_json_line()).unwrap();
    for k in ["epoch", "mpjpe", "p_mpjpe", "pck", "auc"] {
        assert!(ep.get(k).is_some(), "missing {k}");
    }
    if let LogRecord::Step(s) = &log[0] {
        assert!((s.loss - (s.loss_3d + 0.5 * s.loss_t)).abs() < 1e-9 * s.loss.max(1.0));
    }
}

#[test]
fn temporal_weight_changes_the_trajectory() {
    let ds = dataset(1, 2, 18);
    let (a, _) = run(small_train(), &ds);
    let (b, _) = run(
        TrainConfig {
            lambda_t: 0.0,
            ..small_train()
        },
        &ds,
    );
    assert_ne!(param_bits(&a.model), param_bits(&b.model));
}

#[test]
fn learning_rate_decays_per_epoch() {
    let ds = dataset(1, 2, 18);
    let (_, log) = run(small_train(), &ds);
    let lrs: Vec<(usize, f64)> = log
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step(s) => Some((s.epoch, s.lr)),
            _ => None,
        })
        .collect();
    // 4 windows, batch 2: two steps per epoch.
    assert_eq!(lrs, vec![(0, 1e-3), (0, 1e-3), (1, 1e-3 * 0.99), (1, 1e-3 * 0.99)]);
}

#[test]
fn resume_from_checkpoint_is_bitwise_identical() {
    let ds = dataset(2, 2, 18);
    let (full, full_log) = run(small_train(), &ds);

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(
        Model::new(small_config(), 7).unwrap(),
        TrainConfig {
            max_steps: Some(2),
            ..small_train()
        },
    )
    .unwrap();
    let mut log = first.run(&ds, None, |_, _| Ok(())).unwrap();
    checkpoint_save(dir.path(), &first.checkpoint(7)).unwrap();

    let mut ck = checkpoint_load(dir.path()).unwrap();
    assert_eq!(ck.step, 2);
    ck.train.max_steps = Some(4);
    let mut resumed = Trainer::from_checkpoint(ck).unwrap();
    log.extend(resumed.run(&ds, None, |_, _| Ok(())).unwrap());

    assert_eq!(param_bits(&resumed.model), param_bits(&full.model));
    assert_eq!(step_losses(&log), step_losses(&full_log));
}

#[test]
fn checkpoint_round_trip_and_shape_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(Model::new(small_config(), 3).unwrap(), small_train()).unwrap();
    t.step = 5;
    t.optimizer.step = 5;
    t.optimizer.m[0].data_mut()[0] = 0.25;
    checkpoint_save(dir.path(), &t.checkpoint(3)).unwrap();
    let back = checkpoint_load(dir.path()).unwrap();
    assert_eq!(back.step, 5);
    assert_eq!(back.optimizer, t.optimizer);
    assert_eq!(param_bits(&back.model), param_bits(&t.model));
    assert_eq!(back.train, t.config);

    // Changing the window length changes the temporal parameter shapes.
    let cfg_path = dir.path().join("config.json");
    let text = std::fs::read_to_string(&cfg_path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["model"]["frames"] = 27.into();
    v["model"]["proxy_len"] = 9.into();
    std::fs::write(&cfg_path, v.to_string()).unwrap();
    assert!(matches!(
        checkpoint_load(dir.path()),
        Err(Error::FileShapeMismatch { .. })
    ));
    assert!(matches!(
        checkpoint_load(&dir.path().join("nope")),
        Err(Error::MissingFile(_))
    ));
}

struct Oracle(HashMap<Vec<u64>, Tensor>);

impl Lifter for Oracle {
    fn lift(&self, x: &Tensor) -> Result<Tensor> {
        let key: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        self.0.get(&key).cloned().ok_or_else(|| Error::Invalid("unknown clip".into()))
    }
}

#[test]
fn perfect_lifter_scores_zero_error() {
    let ds = dataset(4, 2, 20);
    let windows = eval_windows(&ds, 9).unwrap();
    assert!(windows.iter().any(|w| w.padded));
    let map = windows
        .iter()
        .map(|w| (w.input.data().iter().map(|v| v.to_bits()).collect(), w.target.clone()))
        .collect();
    let r = evaluate(&Oracle(map), &windows, ds.skeleton(), false).unwrap();
    assert_eq!(r.mpjpe_mm, 0.0);
    assert_eq!(r.pck_pct, 100.0);
    assert_eq!(r.auc_pct, 100.0 * 30.0 / 31.0);
    assert_eq!(r.n_frames, 40);
}

/// Appends a zero depth and scales; commutes with mirroring.
struct Planar;

impl Lifter for Planar {
    fn lift(&self, x: &Tensor) -> Result<Tensor> {
        let (t, j) = (x.shape()[0], x.shape()[1]);
        let mut out = Tensor::zeros(&[t, j, 3]);
        for a in 0..t {
            for b in 0..j {
                out.set(&[a, b, 0], 1000.0 * x.get(&[a, b, 0]));
                out.set(&[a, b, 1], 1000.0 * x.get(&[a, b, 1]));
            }
        }
        Ok(out)
    }
}

#[test]
fn flip_tta_is_a_no_op_for_a_mirror_equivariant_lifter() {
    let ds = dataset(5, 1, 18);
    let sk = ds.skeleton();
    let w = &eval_windows(&ds, 9).unwrap()[0];
    let plain = lift_with_tta(&Planar, &w.input, sk, false).unwrap();
    let tta = lift_with_tta(&Planar, &w.input, sk, true).unwrap();
    assert_eq!(plain, tta);
}

#[test]
fn flip_tta_averages_with_the_mirrored_prediction() {
    let ds = dataset(5, 1, 18);
    let sk = ds.skeleton();
    let model = Model::new(small_config(), 9).unwrap();
    let w = &eval_windows(&ds, 9).unwrap()[0];
    let a = model.lift(&w.input).unwrap();
    let b = flip_tensor(&model.lift(&flip_tensor(&w.input, sk).unwrap()).unwrap(), sk).unwrap();
    let tta = lift_with_tta(&model, &w.input, sk, true).unwrap();
    for ((t, a), b) in tta.data().iter().zip(a.data()).zip(b.data()) {
        assert!((t - 0.5 * (a + b)).abs() < 1e-12);
    }
}

#[test]
fn non_finite_loss_aborts_with_step_and_epoch() {
    let mut ds = dataset(1, 2, 18);
    ds.sequences[0].pose3d.data.data_mut()[5] = f64::NAN;
    ds.sequences[1].pose3d.data.data_mut()[5] = f64::NAN;
    let mut t = Trainer::new(Model::new(small_config(), 7).unwrap(), small_train()).unwrap();
    let before = param_bits(&t.model);
    match t.run(&ds, None, |_, _| Ok(())) {
        Err(Error::NonFiniteLoss { step: 0, epoch: 0, value }) => assert!(value.is_nan()),
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
    assert_eq!(param_bits(&t.model), before);
}

#[test]
fn too_few_windows_for_a_batch_is_a_config_error() {
    let ds = dataset(1, 1, 9);
    let mut t = Trainer::new(Model::new(small_config(), 7).unwrap(), small_train()).unwrap();
    assert!(matches!(t.run(&ds, None, |_, _| Ok(())), Err(Error::InvalidConfig(_))));
}

#[test]
fn events_fire_at_every_epoch_end() {
    let ds = dataset(1, 2, 18);
    let mut t = Trainer::new(Model::new(small_config(), 7).unwrap(), small_train()).unwrap();
    let mut ends = Vec::new();
    t.run(&ds, None, |tr, ev| {
        if let TrainEvent::EpochEnd(e) = ev {
            ends.push((e, tr.step));
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(ends, vec![(0, 2), (1, 4)]);
}

#[test]
fn shuffles_differ_between_epochs_but_are_reproducible() {
    let t = Trainer::new(Model::new(small_config(), 7).unwrap(), small_train()).unwrap();
    assert_eq!(t.epoch_order(3, 50), t.epoch_order(3, 50));
    assert_ne!(t.epoch_order(3, 50), t.epoch_order(4, 50));
    let mut o = t.epoch_order(0, 50);
    o.sort();
    assert_eq!(o, (0..50).collect::<Vec<_>>());
}
