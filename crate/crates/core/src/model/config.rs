use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Distribution;

/// Initial distribution of the proxy bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyInit {
    Gaussian,
    Laplacian,
    Uniform,
}

impl ProxyInit {
    pub const SCALE: f64 = 0.02;

    pub fn distribution(self) -> Distribution {
        match self {
            ProxyInit::Gaussian => Distribution::Gaussian { sigma: Self::SCALE },
            ProxyInit::Laplacian => Distribution::Laplacian { scale: Self::SCALE },
            ProxyInit::Uniform => Distribution::Uniform {
                lo: -Self::SCALE,
                hi: Self::SCALE,
            },
        }
    }
}

/// How a proxy block mixes in its counterpart sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    CrossAttention,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Frames per clip (T).
    pub frames: usize,
    /// Joints per pose (J).
    pub joints: usize,
    /// Channels per input keypoint (C_in): 2, or 3 with a confidence.
    pub in_channels: usize,
    /// Hidden width (C_f).
    pub hidden: usize,
    pub out_channels: usize,
    /// Temporal length of the proxy bank (L).
    pub proxy_len: usize,
    /// Number of stacked layers (N).
    pub layers: usize,
    pub heads: usize,
    pub proxy_init: ProxyInit,
    /// μ is drawn uniformly from this interval; equal ends give a constant.
    pub mu_init_range: (f64, f64),
    pub mu_trainable: bool,
    pub pum_kind: MixerKind,
    pub pim_kind: MixerKind,
    pub encoder_enabled: bool,
    /// Hidden width of every feed-forward sublayer, as a multiple of `hidden`.
    pub ffn_ratio: usize,
    /// The network regresses metres; outputs are multiplied by this to give
    /// millimetres.
    pub output_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_frames(243)
    }
}

impl ModelConfig {
    /// Full-size configuration for clips of `frames` frames.
    pub fn for_frames(frames: usize) -> Self {
        ModelConfig {
            frames,
            joints: 17,
            in_channels: 2,
            hidden: 128,
            out_channels: 3,
            proxy_len: default_proxy_len(frames),
            layers: 16,
            heads: 8,
            proxy_init: ProxyInit::Gaussian,
            mu_init_range: (0.0, 1.0),
            mu_trainable: true,
            pum_kind: MixerKind::CrossAttention,
            pim_kind: MixerKind::CrossAttention,
            encoder_enabled: true,
            ffn_ratio: 4,
            output_scale: 1000.0,
        }
    }

    /// Smallest configuration that exercises every block; used for
    /// gradient checking.
    pub fn tiny() -> Self {
        ModelConfig {
            frames: 9,
            joints: 3,
            in_channels: 2,
            hidden: 8,
            proxy_len: 3,
            layers: 2,
            heads: 2,
            ..Self::for_frames(9)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [
            ("frames", self.frames),
            ("joints", self.joints),
            ("in_channels", self.in_channels),
            ("hidden", self.hidden),
            ("out_channels", self.out_channels),
            ("proxy_len", self.proxy_len),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_ratio", self.ffn_ratio),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.hidden % self.heads != 0 {
            return bad(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if self.hidden < 2 {
            return bad("hidden width must be at least 2 for layer normalization".into());
        }
        let (lo, hi) = self.mu_init_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("mu_init_range ({lo}, {hi}) is not an interval"));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return bad("output_scale must be positive".into());
        }
        Ok(())
    }
}

/// Proxy length rule: one third of the clip, at least one.
pub fn default_proxy_len(frames: usize) -> usize {
    (frames / 3).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proxy_length_is_a_third_of_the_clip() {
        assert_eq!(ModelConfig::for_frames(243).proxy_len, 81);
        assert_eq!(ModelConfig::for_frames(27).proxy_len, 9);
        assert_eq!(default_proxy_len(1), 1);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::tiny().validate().is_ok());
        let mut c = ModelConfig::tiny();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.proxy_len = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.mu_init_range = (1.0, 0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_defaults_fill_missing_fields() {
        let c: ModelConfig = serde_json::from_str(r#"{"frames": 27, "proxy_len": 9}"#).unwrap();
        assert_eq!(c.layers, 16);
        assert_eq!(c.proxy_len, 9);
    }
}
