//! Optimizer, schedule, training loop, evaluation and checkpoints.

mod checkpoint;
mod config;
mod optim;

use serde::{Deserialize, Serialize};

use crate::data::{flip_tensor, Dataset, Skeleton, WindowPair};
use crate::error::{Error, Result};
use crate::metrics::{loss_3d, tc_loss, MetricReport};
use crate::model::Model;
use crate::tensor::{Rng, Tape, Tensor};

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_VERSION};
pub use config::{RunConfig, TrainConfig};
pub use optim::{adamw_step, AdamWHyper, AdamWState};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const FLIP_STREAM: u64 = 0x464c_4950;

/// Anything that maps a `(T, J, C_in)` clip to `(T, J, 3)` joints.
pub trait Lifter {
    fn lift(&self, x: &Tensor) -> Result<Tensor>;
}

impl Lifter for Model {
    fn lift(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, false)?.y_hat)
    }
}

/// Lift one clip, optionally averaging with the mirrored prediction.
pub fn lift_with_tta(lifter: &dyn Lifter, x: &Tensor, skeleton: &Skeleton, flip_tta: bool) -> Result<Tensor> {
    let y = lifter.lift(x)?;
    if !flip_tta {
        return Ok(y);
    }
    let yf = flip_tensor(&lifter.lift(&flip_tensor(x, skeleton)?)?, skeleton)?;
    let data = y.data().iter().zip(yf.data()).map(|(a, b)| 0.5 * (a + b)).collect();
    Tensor::new(y.shape(), data)
}

/// Metrics over the valid frames of every window.
pub fn evaluate(lifter: &dyn Lifter, windows: &[WindowPair], skeleton: &Skeleton, flip_tta: bool) -> Result<MetricReport> {
    if windows.is_empty() {
        return Err(Error::Invalid("no windows to evaluate".into()));
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut frames = 0;
    let mut joints = 0;
    for w in windows {
        let y = lift_with_tta(lifter, &w.input, skeleton, flip_tta)?;
        if y.shape() != w.target.shape() {
            return Err(Error::ShapeMismatch {
                op: "evaluate",
                lhs: y.shape().to_vec(),
                rhs: w.target.shape().to_vec(),
            });
        }
        joints = w.target.shape()[1];
        let n = w.valid_frames * joints * 3;
        pred.extend_from_slice(&y.data()[..n]);
        truth.extend_from_slice(&w.target.data()[..n]);
        frames += w.valid_frames;
    }
    let shape = [frames, joints, 3];
    MetricReport::compute(&Tensor::new(&shape, pred)?, &Tensor::new(&shape, truth)?)
}

/// Non-overlapping clips covering every frame of `ds` once.
pub fn eval_windows(ds: &Dataset, frames: usize) -> Result<Vec<WindowPair>> {
    ds.windows(frames, frames)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_3d: f64,
    pub loss_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mpjpe: f64,
    pub p_mpjpe: f64,
    pub pck: f64,
    pub auc: f64,
}

impl EpochRecord {
    pub fn new(epoch: usize, r: &MetricReport) -> Self {
        EpochRecord {
            epoch,
            mpjpe: r.mpjpe_mm,
            p_mpjpe: r.p_mpjpe_mm,
            pck: r.pck_pct,
            auc: r.auc_pct,
        }
    }
}

/// One JSONL line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

/// Callback hooks fired by [`Trainer::run`].
pub enum TrainEvent<'a> {
    Log(&'a LogRecord),
    /// All steps of the given epoch are done (and it was evaluated if due).
    EpochEnd(usize),
}

/// Losses of one optimizer step, averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub loss: f64,
    pub loss_3d: f64,
    pub loss_t: f64,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamWState,
    pub config: TrainConfig,
    /// Optimizer steps taken so far.
    pub step: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamWState::new(model.params());
        Ok(Trainer {
            model,
            optimizer,
            config,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.train.validate()?;
        Ok(Trainer {
            model: ck.model,
            optimizer: ck.optimizer,
            config: ck.train,
            step: ck.step,
        })
    }

    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            train: self.config.clone(),
            seed,
            step: self.step,
        }
    }

    /// Full batches per epoch; the remainder is dropped.
    pub fn steps_per_epoch(&self, n_windows: usize) -> Result<usize> {
        let spe = n_windows / self.config.batch_size;
        if spe == 0 {
            return Err(Error::InvalidConfig(format!(
                "{n_windows} training windows cannot fill one batch of {}",
                self.config.batch_size
            )));
        }
        Ok(spe)
    }

    pub fn total_steps(&self, steps_per_epoch: usize) -> usize {
        let all = self.config.epochs * steps_per_epoch;
        self.config.max_steps.map_or(all, |m| m.min(all))
    }

    /// Window order for `epoch`; depends only on the seed and the epoch.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        Rng::with_stream(self.config.seed ^ SHUFFLE_STREAM, epoch as u64).shuffle(&mut order);
        order
    }

    /// Mirroring decisions for the batch of global step `step`.
    pub fn flip_mask(&self, step: usize, batch: usize) -> Vec<bool> {
        if !self.config.flip_augment {
            return vec![false; batch];
        }
        let mut rng = Rng::with_stream(self.config.seed ^ FLIP_STREAM, step as u64);
        (0..batch).map(|_| rng.bernoulli(self.config.flip_prob)).collect()
    }

    /// Forward and backward over a batch of `(input, target)` clips, then
    /// one AdamW update at `lr`.
    pub fn train_step(&mut self, batch: &[(Tensor, Tensor)], lr: f64) -> Result<StepLosses> {
        let inv_b = 1.0 / batch.len() as f64;
        let lambda = self.config.lambda_t;
        let mut acc = StepLosses {
            loss: 0.0,
            loss_3d: 0.0,
            loss_t: 0.0,
        };
        for (x, y) in batch {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let (yh, _) = self.model.forward_on_tape(&mut tape, xv, false)?;
            let yv = tape.constant(y.clone());
            let l3 = loss_3d(&mut tape, yh, yv)?;
            let mut total = l3;
            let mut lt_value = 0.0;
            if y.shape()[0] >= 2 {
                let lt = tc_loss(&mut tape, yh, yv)?;
                lt_value = tape.value(lt).item();
                let weighted = tape.scale(lt, lambda);
                total = tape.add(l3, weighted)?;
            }
            acc.loss_3d += tape.value(l3).item() * inv_b;
            acc.loss_t += lt_value * inv_b;
            acc.loss += tape.value(total).item() * inv_b;
            let scaled = tape.scale(total, inv_b);
            tape.backward(scaled, self.model.params_mut())?;
        }
        if !acc.loss.is_finite() {
            self.model.params_mut().zero_grad();
            return Err(Error::NonFiniteLoss {
                step: self.step,
                epoch: 0,
                value: acc.loss,
            });
        }
        let hyper = self.config.hyper();
        adamw_step(self.model.params_mut(), &mut self.optimizer, lr, &hyper)?;
        Ok(acc)
    }

    /// Train on the unpadded windows of `train` until the configured number
    /// of steps, evaluating on `eval` (or `train`) at epoch boundaries.
    pub fn run(
        &mut self,
        train: &Dataset,
        eval: Option<&Dataset>,
        mut on_event: impl FnMut(&Trainer, TrainEvent<'_>) -> Result<()>,
    ) -> Result<Vec<LogRecord>> {
        let frames = self.model.config().frames;
        let windows: Vec<WindowPair> = train
            .windows(frames, self.config.train_stride)?
            .into_iter()
            .filter(|w| !w.padded)
            .collect();
        let spe = self.steps_per_epoch(windows.len())?;
        let total = self.total_steps(spe);
        let eval_ds = eval.unwrap_or(train);
        let eval_set = eval_windows(eval_ds, frames)?;
        let skeleton = train.skeleton().clone();
        let b = self.config.batch_size;
        let mut log = Vec::new();
        while self.step < total {
            let epoch = self.step / spe;
            let pos = self.step % spe;
            let order = self.epoch_order(epoch, windows.len());
            let flips = self.flip_mask(self.step, b);
            let mut batch = Vec::with_capacity(b);
            for (&i, &flip) in order[pos * b..(pos + 1) * b].iter().zip(&flips) {
                let w = &windows[i];
                if flip {
                    batch.push((flip_tensor(&w.input, &skeleton)?, flip_tensor(&w.target, &skeleton)?));
                } else {
                    batch.push((w.input.clone(), w.target.clone()));
                }
            }
            let lr = self.config.lr_at(epoch);
            let losses = self.train_step(&batch, lr).map_err(|e| match e {
                Error::NonFiniteLoss { step, value, .. } => Error::NonFiniteLoss { step, epoch, value },
                other => other,
            })?;
            let rec = LogRecord::Step(StepRecord {
                step: self.step,
                epoch,
                lr,
                loss: losses.loss,
                loss_3d: losses.loss_3d,
                loss_t: losses.loss_t,
            });
            self.step += 1;
            on_event(self, TrainEvent::Log(&rec))?;
            log.push(rec);
            let epoch_done = self.step % spe == 0;
            if epoch_done || self.step == total {
                let due = self.config.eval_every > 0 && (epoch + 1) % self.config.eval_every == 0;
                if due || self.step == total {
                    let report = evaluate(&self.model, &eval_set, eval_ds.skeleton(), self.config.flip_tta)?;
                    let rec = LogRecord::Epoch(EpochRecord::new(epoch, &report));
                    on_event(self, TrainEvent::Log(&rec))?;
                    log.push(rec);
                }
                on_event(self, TrainEvent::EpochEnd(epoch))?;
            }
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests;
