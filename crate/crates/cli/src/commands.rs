use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use proxyattn::data::{default_h36m17_skeleton, synth_generate, Dataset, MotionParams, PoseSequence, Split};
use proxyattn::metrics::{total_loss, MetricReport};
use proxyattn::model::{param_group, Model, ModelConfig};
use proxyattn::tensor::{finite_diff_check_with, Distribution, GradcheckEntry, OpKind, Rng, DEFAULT_STEP};
use proxyattn::train::{
    checkpoint_load, checkpoint_save, eval_windows, evaluate, RunConfig, TrainEvent, Trainer,
};
use proxyattn::Error;

use crate::{resolve_seed, CliError, CliResult};

/// Largest model `gradcheck` will accept.
pub const GRADCHECK_MAX_PARAMS: usize = 100_000;
pub const GRADCHECK_TOL: f64 = 1e-4;

const PUBLISHED_PARAMS: &str = "35.1M";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    writeln!(out, "{text}").map_err(|e| CliError::internal(format!("cannot write output: {e}")))
}

pub fn cmd_synth(dir: &Path, sequences: usize, frames: usize, seed: u64, split: &str, out: &mut dyn Write) -> CliResult<()> {
    let split = match split {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(CliError::user(format!("unknown split {other:?}; expected train or test"))),
    };
    let manifest = synth_generate(
        dir,
        &mut Rng::new(seed),
        sequences,
        frames,
        &default_h36m17_skeleton(),
        &MotionParams::default(),
        split,
    )?;
    emit(
        out,
        &format!(
            "wrote {} sequences of {frames} frames to {}",
            manifest.sequences.len(),
            dir.display()
        ),
    )
}

fn check_compatible(model: &ModelConfig, data: &Dataset, path: &Path) -> CliResult<()> {
    for s in &data.sequences {
        let (j, c) = (s.pose2d.joints(), s.pose2d.channels());
        if j != model.joints || c != model.in_channels {
            return Err(CliError::user(format!(
                "{}: sequence {} has {j} joints with {c} channels, the model expects {} joints with {} channels",
                path.display(),
                s.id,
                model.joints,
                model.in_channels
            )));
        }
    }
    Ok(())
}

pub fn cmd_train(
    data: &Path,
    dir: &Path,
    config: &Path,
    resume: Option<&Path>,
    eval_data: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let mut cfg = RunConfig::load(config)?;
    cfg.train.seed = resolve_seed(cfg.train.seed)?;
    let train = Dataset::load(data)?;
    check_compatible(&cfg.model, &train, data)?;
    let eval = match eval_data {
        Some(p) => {
            let ds = Dataset::load(p)?;
            check_compatible(&cfg.model, &ds, p)?;
            Some(ds)
        }
        None => None,
    };
    let mut trainer = match resume {
        Some(ck_dir) => {
            let ck = checkpoint_load(ck_dir)?;
            if ck.model.config() != &cfg.model {
                return Err(CliError::user(format!(
                    "{}: checkpoint model configuration differs from {}",
                    ck_dir.display(),
                    config.display()
                )));
            }
            let step = ck.step;
            let mut t = Trainer::from_checkpoint(ck)?;
            t.config = cfg.train.clone();
            t.step = step;
            t
        }
        None => Trainer::new(Model::new(cfg.model.clone(), cfg.train.seed)?, cfg.train.clone())?,
    };
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, cfg.to_json() + "\n").map_err(|e| io_err(&cfg_path, e))?;
    let log_path = dir.join("log.jsonl");
    let file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let ckpt_root = dir.join("checkpoints");
    let seed = cfg.train.seed;

    let records = trainer.run(&train, eval.as_ref(), |t, ev| {
        let wrap = |e| Error::Io {
            path: log_path.clone(),
            source: e,
        };
        match ev {
            TrainEvent::Log(rec) => writeln!(log, "{}", rec.to_json_line()).map_err(wrap),
            TrainEvent::EpochEnd(epoch) => {
                log.flush().map_err(wrap)?;
                let ck = t.checkpoint(seed);
                checkpoint_save(&ckpt_root.join(format!("epoch_{epoch:04}")), &ck)?;
                checkpoint_save(&ckpt_root.join("last"), &ck)
            }
        }
    })?;
    log.flush().map_err(|e| io_err(&log_path, e))?;
    let last = records
        .iter()
        .rev()
        .find(|r| matches!(r, proxyattn::train::LogRecord::Epoch(_)))
        .map(|r| r.to_json_line())
        .unwrap_or_else(|| "null".into());
    emit(
        out,
        &format!(
            "{{\"steps\":{},\"checkpoint\":{},\"final\":{last}}}",
            trainer.step,
            serde_json::to_string(&ckpt_root.join("last")).expect("path serializes")
        ),
    )
}

pub fn cmd_eval(data: &Path, ckpt: &Path, flip_tta: bool, out: &mut dyn Write) -> CliResult<MetricReport> {
    let ck = checkpoint_load(ckpt)?;
    let ds = Dataset::load(data)?;
    check_compatible(ck.model.config(), &ds, data)?;
    let windows = eval_windows(&ds, ck.model.config().frames)?;
    let report = evaluate(&ck.model, &windows, ds.skeleton(), flip_tta)?;
    emit(out, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct GradcheckOutcome {
    pub groups: Vec<GradcheckEntry>,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn cmd_gradcheck(config: Option<&Path>, seed: u64, fault: Option<&str>, out: &mut dyn Write) -> CliResult<GradcheckOutcome> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig {
            model: ModelConfig::tiny(),
            ..RunConfig::default()
        },
    };
    let fault = match fault {
        Some(name) => Some(OpKind::parse(name).ok_or_else(|| CliError::user(format!("unknown op {name:?}")))?),
        None => None,
    };
    let mut model = Model::new(cfg.model.clone(), seed)?;
    let n = model.param_count();
    if n > GRADCHECK_MAX_PARAMS {
        return Err(CliError::user(format!(
            "model has {n} parameters; gradcheck needs two forward passes per parameter and refuses more than {GRADCHECK_MAX_PARAMS}"
        )));
    }
    let c = &cfg.model;
    let mut rng = Rng::with_stream(seed, 7);
    let x = rng.sample(Distribution::Gaussian { sigma: 0.5 }, &[c.frames, c.joints, c.in_channels])?;
    let y = rng.sample(Distribution::Gaussian { sigma: 300.0 }, &[c.frames, c.joints, c.out_channels])?;
    let weights = cfg.train.loss_weights();
    let probe = model.clone();
    let report = finite_diff_check_with(
        model.params_mut(),
        |store, tape| {
            let mut m = probe.clone();
            *m.params_mut() = store.clone();
            let xv = tape.constant(x.clone());
            let (yh, _) = m.forward_on_tape(tape, xv, false)?;
            let yv = tape.constant(y.clone());
            total_loss(tape, yh, yv, weights)
        },
        DEFAULT_STEP,
        fault,
    )?;
    let groups = report.grouped(param_group);
    for g in &groups {
        let verdict = if g.max_rel_error < GRADCHECK_TOL { "ok" } else { "FAIL" };
        emit(
            out,
            &format!("{:<28} {:>7} {:>12.3e}  {verdict}", g.name, g.coords, g.max_rel_error),
        )?;
    }
    let max = report.max_rel_error();
    let passed = max < GRADCHECK_TOL;
    emit(
        out,
        &format!(
            "max relative error {max:.3e} over {n} parameters: {}",
            if passed { "PASS" } else { "FAIL" }
        ),
    )?;
    Ok(GradcheckOutcome {
        groups,
        max_rel_error: max,
        passed,
    })
}

pub fn cmd_params(config: Option<&Path>, out: &mut dyn Write) -> CliResult<Vec<(String, usize)>> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let model = Model::new(cfg.model.clone(), 0)?;
    let mut lines: Vec<(String, usize)> = model
        .param_breakdown()
        .into_iter()
        .map(|(m, n)| (m.to_string(), n))
        .collect();
    for (name, count) in &lines {
        emit(out, &format!("{name:<10} {count:>12}"))?;
    }
    let total = model.param_count();
    emit(out, &format!("{:<10} {total:>12}  ({:.2}M)", "total", total as f64 / 1e6))?;
    let c = &cfg.model;
    emit(
        out,
        &format!(
            "configuration: T={} J={} C_f={} H={} L={} N={}; published reference count for T=243: {PUBLISHED_PARAMS}",
            c.frames, c.joints, c.hidden, c.heads, c.proxy_len, c.layers
        ),
    )?;
    lines.push(("total".into(), total));
    Ok(lines)
}
