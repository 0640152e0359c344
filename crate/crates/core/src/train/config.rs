use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamWHyper;
use crate::error::{Error, Result};
use crate::metrics::LossWeights;
use crate::model::{default_proxy_len, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub lambda_t: f64,
    pub seed: u64,
    pub flip_augment: bool,
    pub flip_tta: bool,
    /// Probability of mirroring a training clip when `flip_augment` is on.
    pub flip_prob: f64,
    /// Frames between consecutive training windows.
    pub train_stride: usize,
    /// Evaluate every this many epochs; 0 disables per-epoch evaluation.
    pub eval_every: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 90,
            lr0: 5e-4,
            lr_decay: 0.99,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            lambda_t: 0.5,
            seed: 0,
            flip_augment: true,
            flip_tta: true,
            flip_prob: 0.5,
            train_stride: 1,
            eval_every: 1,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.batch_size == 0 || self.epochs == 0 || self.train_stride == 0 {
            return bad("batch_size, epochs and train_stride must be positive");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr0 must be positive and lr_decay in (0, 1]");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || !(self.eps > 0.0) {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        if !(self.weight_decay >= 0.0) || !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("weight_decay must be nonnegative and flip_prob a probability");
        }
        LossWeights::new(self.lambda_t)?;
        Ok(())
    }

    /// `lr0 · lr_decay^epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch as i32)
    }

    pub fn hyper(&self) -> AdamWHyper {
        AdamWHyper {
            betas: self.betas,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_t: self.lambda_t,
        }
    }
}

/// Everything that defines a run, as one flat JSON object.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub train: TrainConfig,
}

fn known_keys() -> BTreeSet<String> {
    match serde_json::to_value(RunConfig::default()) {
        Ok(serde_json::Value::Object(m)) => m.keys().cloned().collect(),
        _ => unreachable!("run config serializes to an object"),
    }
}

impl RunConfig {
    /// Parse a flat JSON run configuration. Missing fields take their
    /// defaults; `proxy_len` defaults to a third of `frames`. Unknown keys
    /// are rejected.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let malformed = |reason: String| Error::Malformed {
            path: origin.to_path_buf(),
            reason,
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("expected a JSON object".into()))?;
        let known = known_keys();
        let unknown: Vec<&String> = obj.keys().filter(|k| !known.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(malformed(format!("unknown keys {unknown:?}")));
        }
        // Parsed separately so type errors point at the offending line.
        let model: ModelConfig = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let train: TrainConfig = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let mut cfg = RunConfig { model, train };
        if !obj.contains_key("proxy_len") {
            cfg.model.proxy_len = default_proxy_len(cfg.model.frames);
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_hyperparameters() {
        let t = TrainConfig::default();
        assert_eq!(t.batch_size, 16);
        assert_eq!(t.epochs, 90);
        assert_eq!(t.lr0, 5e-4);
        assert_eq!(t.lr_decay, 0.99);
        assert_eq!(t.weight_decay, 0.01);
        assert_eq!(t.lr_at(0), 5e-4);
        assert_eq!(t.lr_at(1), 4.95e-4);
        assert_eq!(t.lr_at(90), 5e-4 * 0.99f64.powi(90));
        let m = ModelConfig::for_frames(243);
        assert_eq!((m.layers, m.heads, m.hidden, m.proxy_len), (16, 8, 128, 81));
    }

    #[test]
    fn flat_json_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn proxy_len_follows_frames_unless_given() {
        let c = RunConfig::from_json(r#"{"frames": 27}"#, Path::new("x")).unwrap();
        assert_eq!(c.model.proxy_len, 9);
        let c = RunConfig::from_json(r#"{"frames": 27, "proxy_len": 3}"#, Path::new("x")).unwrap();
        assert_eq!(c.model.proxy_len, 3);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let e = RunConfig::from_json(r#"{"frames": 27, "lr": 1}"#, Path::new("cfg.json")).unwrap_err();
        assert!(e.to_string().contains("lr"), "{e}");
        let e = RunConfig::from_json("{\n  \"frames\": 27,\n  \"heads\": \"x\"\n}", Path::new("cfg.json")).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(RunConfig::from_json(r#"{"batch_size": 0}"#, Path::new("x")).is_err());
        assert!(RunConfig::from_json(r#"{"hidden": 10, "heads": 4}"#, Path::new("x")).is_err());
        assert!(RunConfig::from_json("[1]", Path::new("x")).is_err());
    }
}
