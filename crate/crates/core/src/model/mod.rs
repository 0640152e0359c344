//! The lifting network.
//!
//! A clip `X ∈ R^{T×J×C_in}` is embedded to `R^{T×J×C_f}` and passed through
//! `N` layers. Each layer runs a spatio-temporal encoder, then
//!
//! 1. the proxy update block: the working proxy `P ∈ R^{J×L×C_f}` attends to
//!    the per-joint features `F ∈ R^{J×T×C_f}` (`M_{P→F}`, `L×T`);
//! 2. the proxy invocation block: `F` attends to the updated proxy
//!    (`M_{F→P}`, `T×L`);
//! 3. the proxy attention block: self-attention over `F` whose logits blend
//!    the aggregation matrix `M = M_{F→P}·M_{P→F}` with `Q·Kᵀ`.
//!
//! The proxy bank is a single learned parameter; every forward pass starts a
//! working copy from it and each layer's update block refines that copy.

mod blocks;
mod config;

pub use config::{default_proxy_len, MixerKind, ModelConfig, ProxyInit};

use blocks::{
    CrossAttnIds, Ctx, EncoderIds, FfnIds, MixerIds, NormIds, PamIds, PoolMlpIds, ProjIds,
    ProxyBlockIds, SelfAttnIds,
};

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Rng, Tape, Tensor, Var};

/// The learned proxy bank `P_base ∈ R^{J×L×C_f}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyBank {
    pub base: Tensor,
}

/// Samples a proxy bank from the configured initial distribution.
pub fn init_proxy(config: &ModelConfig, rng: &mut Rng) -> Result<ProxyBank> {
    let shape = [config.joints, config.proxy_len, config.hidden];
    Ok(ProxyBank {
        base: rng.sample(config.proxy_init.distribution(), &shape)?,
    })
}

/// Attention matrices captured from one layer. Shapes are per joint and head.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// `[J, H, L, T]`
    pub m_p_to_f: Tensor,
    /// `[J, H, T, L]`
    pub m_f_to_p: Tensor,
    /// `[J, H, T, T]`, row-stochastic.
    pub m_agg: Tensor,
    /// Raw `Q·Kᵀ` of the proxy attention block, `[J, H, T, T]`.
    pub m_self_logits: Tensor,
    /// `σ(μ)·M + (1 − σ(μ))·Q·Kᵀ`, `[J, H, T, T]`.
    pub m_fused_logits: Tensor,
    /// `softmax(fused / sqrt(C_f))`, `[J, H, T, T]`.
    pub m_fused_attn: Tensor,
    pub sigmoid_mu: f64,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[T, J, C_out]`
    pub y_hat: Tensor,
    pub traces: Vec<LayerTrace>,
}

/// Outputs of the proxy attention block.
pub struct PamOutput {
    pub f_bar: Var,
    pub self_logits: Var,
    pub fused_logits: Var,
    pub fused_attn: Var,
    pub sigmoid_mu: Var,
}

#[derive(Clone, Copy, Debug)]
struct LayerIds {
    encoder: Option<EncoderIds>,
    pum: ProxyBlockIds,
    pim: ProxyBlockIds,
    pam: PamIds,
}

#[derive(Clone, Debug)]
struct ModelIds {
    embed_w: ParamId,
    embed_b: ParamId,
    pos_time: ParamId,
    pos_joint: ParamId,
    proxy: ParamId,
    layers: Vec<LayerIds>,
    head_w1: ParamId,
    head_b1: ParamId,
    head_w2: ParamId,
    head_b2: ParamId,
}

const POS_EMBED_SIGMA: f64 = 0.02;

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn tensor(&mut self, name: String, value: Tensor) -> Result<ParamId> {
        self.store.register(name, value)
    }

    /// Xavier-normal `[d_in, d_out]` weight.
    fn weight(&mut self, name: String, d_in: usize, d_out: usize) -> Result<ParamId> {
        let sigma = (2.0 / (d_in + d_out) as f64).sqrt();
        let v = self.rng.sample(crate::tensor::Distribution::Gaussian { sigma }, &[d_in, d_out])?;
        self.tensor(name, v)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> Result<ParamId> {
        self.tensor(name, Tensor::zeros(shape))
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Result<NormIds> {
        Ok(NormIds {
            gain: self.tensor(format!("{prefix}.gain"), Tensor::full(&[d], 1.0))?,
            bias: self.zeros(format!("{prefix}.bias"), &[d])?,
        })
    }

    fn ffn(&mut self, prefix: &str, d: usize, ratio: usize) -> Result<FfnIds> {
        Ok(FfnIds {
            norm: self.norm(&format!("{prefix}.norm"), d)?,
            w1: self.weight(format!("{prefix}.w1"), d, d * ratio)?,
            b1: self.zeros(format!("{prefix}.b1"), &[d * ratio])?,
            w2: self.weight(format!("{prefix}.w2"), d * ratio, d)?,
            b2: self.zeros(format!("{prefix}.b2"), &[d])?,
        })
    }

    fn proj(&mut self, prefix: &str, d: usize) -> Result<ProjIds> {
        Ok(ProjIds {
            wq: self.weight(format!("{prefix}.wq"), d, d)?,
            wk: self.weight(format!("{prefix}.wk"), d, d)?,
            wv: self.weight(format!("{prefix}.wv"), d, d)?,
            wo: self.weight(format!("{prefix}.wo"), d, d)?,
            bo: self.zeros(format!("{prefix}.bo"), &[d])?,
        })
    }

    fn self_attn(&mut self, prefix: &str, d: usize) -> Result<SelfAttnIds> {
        Ok(SelfAttnIds {
            norm: self.norm(&format!("{prefix}.norm"), d)?,
            proj: self.proj(prefix, d)?,
        })
    }

    fn proxy_block(&mut self, prefix: &str, kind: MixerKind, d: usize, ratio: usize) -> Result<ProxyBlockIds> {
        let mixer = match kind {
            MixerKind::CrossAttention => MixerIds::Attention(CrossAttnIds {
                norm_q: self.norm(&format!("{prefix}.norm_q"), d)?,
                norm_kv: self.norm(&format!("{prefix}.norm_kv"), d)?,
                proj: self.proj(prefix, d)?,
            }),
            MixerKind::Mlp => MixerIds::Mlp(PoolMlpIds {
                ffn: self.ffn(&format!("{prefix}.mlp"), d, ratio)?,
            }),
        };
        Ok(ProxyBlockIds {
            mixer,
            ffn: self.ffn(&format!("{prefix}.ffn"), d, ratio)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    ids: ModelIds,
}

impl Model {
    /// Builds and randomly initializes a model. Everything is derived from
    /// `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let c = &config;
        let d = c.hidden;
        let r = c.ffn_ratio;

        let proxy_bank = init_proxy(c, &mut Rng::with_stream(seed, 1))?;
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let embed_w = b.weight("embed.proj.w".into(), c.in_channels, d)?;
        let embed_b = b.zeros("embed.proj.b".into(), &[d])?;
        let sigma = crate::tensor::Distribution::Gaussian { sigma: POS_EMBED_SIGMA };
        let pos_time = {
            let v = b.rng.sample(sigma, &[c.frames, d])?;
            b.tensor("embed.pos_time".into(), v)?
        };
        let pos_joint = {
            let v = b.rng.sample(sigma, &[c.joints, d])?;
            b.tensor("embed.pos_joint".into(), v)?
        };
        let proxy = b.tensor("proxy".into(), proxy_bank.base)?;

        let mut layers = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let pre = format!("layer{l}");
            let encoder = if c.encoder_enabled {
                Some(EncoderIds {
                    spatial: b.self_attn(&format!("{pre}.encoder.spatial"), d)?,
                    spatial_ffn: b.ffn(&format!("{pre}.encoder.spatial_ffn"), d, r)?,
                    temporal: b.self_attn(&format!("{pre}.encoder.temporal"), d)?,
                    temporal_ffn: b.ffn(&format!("{pre}.encoder.temporal_ffn"), d, r)?,
                })
            } else {
                None
            };
            let pum = b.proxy_block(&format!("{pre}.pum"), c.pum_kind, d, r)?;
            let pim = b.proxy_block(&format!("{pre}.pim"), c.pim_kind, d, r)?;
            let attn = b.self_attn(&format!("{pre}.pam"), d)?;
            let ffn = b.ffn(&format!("{pre}.pam.ffn"), d, r)?;
            let (lo, hi) = c.mu_init_range;
            let mu_value = if lo < hi { b.rng.uniform_range(lo, hi) } else { lo };
            let mu = b.tensor(format!("{pre}.mu"), Tensor::scalar(mu_value))?;
            layers.push(LayerIds {
                encoder,
                pum,
                pim,
                pam: PamIds { attn, ffn, mu },
            });
        }
        let hd = d * 4;
        let head_w1 = b.weight("head.fc1.w".into(), d, hd)?;
        let head_b1 = b.zeros("head.fc1.b".into(), &[hd])?;
        let head_w2 = b.weight("head.fc2.w".into(), hd, c.out_channels)?;
        let head_b2 = b.zeros("head.fc2.b".into(), &[c.out_channels])?;

        if !c.mu_trainable {
            for l in &layers {
                store.get_mut(l.pam.mu).trainable = false;
            }
        }

        Ok(Model {
            ids: ModelIds {
                embed_w,
                embed_b,
                pos_time,
                pos_joint,
                proxy,
                layers,
                head_w1,
                head_b1,
                head_w2,
                head_b2,
            },
            config,
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.num_elements()
    }

    /// Overwrites a parameter value by name, checking its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.store.id(name)?;
        let p = self.store.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn proxy(&self) -> &Tensor {
        self.store.value(self.ids.proxy)
    }

    pub fn mu(&self, layer: usize) -> f64 {
        self.store.value(self.ids.layers[layer].pam.mu).item()
    }

    pub fn set_mu(&mut self, layer: usize, value: f64) {
        let id = self.ids.layers[layer].pam.mu;
        self.store.get_mut(id).value = Tensor::scalar(value);
    }

    /// Zeroes every value projection, output projection and second
    /// feed-forward layer, which turns every residual block into the
    /// identity.
    pub fn zero_residual_branches(&mut self) {
        for p in self.store.iter_mut() {
            let leaf = p.name.rsplit('.').next().unwrap_or("");
            let in_block = p.name.starts_with("layer");
            if in_block && matches!(leaf, "wv" | "wo" | "bo" | "w2" | "b2") {
                p.value.data_mut().fill(0.0);
            }
        }
    }

    fn ctx<'a>(&'a self, tape: &'a mut Tape) -> Ctx<'a> {
        Ctx {
            tape,
            store: &self.store,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let c = &self.config;
        let expected = [c.frames, c.joints, c.in_channels];
        if x.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "model input",
                lhs: expected.to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Per-joint projection to `C_f` plus learned spatial and temporal
    /// position embeddings. `[T, J, C_in] -> [T, J, C_f]`.
    pub fn embed_input(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let ids = &self.ids;
        let mut ctx = self.ctx(tape);
        let (w, b) = (ctx.p(ids.embed_w), ctx.p(ids.embed_b));
        let h = ctx.tape.linear(x, w, Some(b))?;
        let pj = ctx.p(ids.pos_joint);
        let h = ctx.tape.add(h, pj)?;
        let h = ctx.tape.permute(h, &[1, 0, 2])?;
        let pt = ctx.p(ids.pos_time);
        let h = ctx.tape.add(h, pt)?;
        ctx.tape.permute(h, &[1, 0, 2])
    }

    fn layer(&self, layer: usize) -> Result<&LayerIds> {
        self.ids.layers.get(layer).ok_or_else(|| {
            Error::Invalid(format!("layer {layer} out of range (model has {})", self.ids.layers.len()))
        })
    }

    /// One spatio-temporal encoder block on `[T, J, C_f]`.
    pub fn encoder_block(&self, tape: &mut Tape, layer: usize, b: Var) -> Result<Var> {
        let ids = self
            .layer(layer)?
            .encoder
            .ok_or_else(|| Error::Invalid("encoder disabled in this configuration".into()))?;
        let heads = self.config.heads;
        let mut ctx = self.ctx(tape);
        let f = ctx.tape.permute(b, &[1, 0, 2])?;
        let f = blocks::encoder(&mut ctx, f, &ids, heads)?;
        ctx.tape.permute(f, &[1, 0, 2])
    }

    /// Proxy update: `p [J, L, C_f]` attends to `f [J, T, C_f]`. Returns the
    /// updated proxy and `M_{P→F}` `[J, H, L, T]`.
    pub fn pum_forward(&self, tape: &mut Tape, layer: usize, p: Var, f: Var) -> Result<(Var, Var)> {
        let ids = self.layer(layer)?.pum;
        let r = blocks::proxy_block(&mut self.ctx(tape), p, f, &ids, self.config.heads)?;
        Ok((r.out, r.probs))
    }

    /// Proxy invocation: `f [J, T, C_f]` attends to the updated proxy.
    /// Returns the enhanced features and `M_{F→P}` `[J, H, T, L]`.
    pub fn pim_forward(&self, tape: &mut Tape, layer: usize, f: Var, p: Var) -> Result<(Var, Var)> {
        let ids = self.layer(layer)?.pim;
        let r = blocks::proxy_block(&mut self.ctx(tape), f, p, &ids, self.config.heads)?;
        Ok((r.out, r.probs))
    }

    pub fn aggregate_attention(&self, tape: &mut Tape, m_f_to_p: Var, m_p_to_f: Var) -> Result<Var> {
        blocks::aggregate(&mut self.ctx(tape), m_f_to_p, m_p_to_f)
    }

    pub fn pam_forward(&self, tape: &mut Tape, layer: usize, f_tilde: Var, m_agg: Var) -> Result<PamOutput> {
        let ids = self.layer(layer)?.pam;
        let r = blocks::pam(&mut self.ctx(tape), f_tilde, m_agg, &ids, self.config.heads)?;
        Ok(PamOutput {
            f_bar: r.out,
            self_logits: r.self_logits,
            fused_logits: r.fused_logits,
            fused_attn: r.fused_probs,
            sigmoid_mu: r.sigmoid_mu,
        })
    }

    /// `linear → tanh → linear`, scaled to millimetres. `[.., C_f] -> [.., C_out]`.
    pub fn regression_head(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let ids = &self.ids;
        let mut ctx = self.ctx(tape);
        let (w1, b1, w2, b2) = (
            ctx.p(ids.head_w1),
            ctx.p(ids.head_b1),
            ctx.p(ids.head_w2),
            ctx.p(ids.head_b2),
        );
        let z = ctx.tape.linear(h, w1, Some(b1))?;
        let z = ctx.tape.tanh(z);
        let y = ctx.tape.linear(z, w2, Some(b2))?;
        Ok(ctx.tape.scale(y, self.config.output_scale))
    }

    /// Full forward pass on a tape. `x` is `[T, J, C_in]`; the result is
    /// `[T, J, C_out]`.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: Var, trace: bool) -> Result<(Var, Vec<LayerTrace>)> {
        let b = self.embed_input(tape, x)?;
        let mut f = tape.permute(b, &[1, 0, 2])?;
        let mut p = tape.param(&self.store, self.ids.proxy);
        let mut traces = Vec::new();
        let heads = self.config.heads;
        for ids in &self.ids.layers {
            let mut ctx = self.ctx(tape);
            if let Some(enc) = &ids.encoder {
                f = blocks::encoder(&mut ctx, f, enc, heads)?;
            }
            let upd = blocks::proxy_block(&mut ctx, p, f, &ids.pum, heads)?;
            p = upd.out;
            let inv = blocks::proxy_block(&mut ctx, f, p, &ids.pim, heads)?;
            let m_agg = blocks::aggregate(&mut ctx, inv.probs, upd.probs)?;
            let pam = blocks::pam(&mut ctx, inv.out, m_agg, &ids.pam, heads)?;
            f = pam.out;
            if trace {
                let v = |var| tape.value(var).clone();
                traces.push(LayerTrace {
                    m_p_to_f: v(upd.probs),
                    m_f_to_p: v(inv.probs),
                    m_agg: v(m_agg),
                    m_self_logits: v(pam.self_logits),
                    m_fused_logits: v(pam.fused_logits),
                    m_fused_attn: v(pam.fused_probs),
                    sigmoid_mu: tape.value(pam.sigmoid_mu).item(),
                });
            }
        }
        let y = self.regression_head(tape, f)?;
        let y = tape.permute(y, &[1, 0, 2])?;
        Ok((y, traces))
    }

    pub fn forward(&self, x: &Tensor, trace: bool) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (y, traces) = self.forward_on_tape(&mut tape, xv, trace)?;
        Ok(ForwardOutput {
            y_hat: tape.value(y).clone(),
            traces,
        })
    }

    /// Regression head applied directly to the input embedding, skipping
    /// every layer.
    pub fn head_on_embedding(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let b = self.embed_input(&mut tape, xv)?;
        let y = self.regression_head(&mut tape, b)?;
        Ok(tape.value(y).clone())
    }

    /// Parameter element counts per module, in a fixed order.
    pub fn param_breakdown(&self) -> Vec<(&'static str, usize)> {
        let mut out: Vec<(&'static str, usize)> = MODULES.iter().map(|&m| (m, 0)).collect();
        for (_, p) in self.store.iter() {
            let m = module_of(&p.name);
            out.iter_mut().find(|(n, _)| *n == m).unwrap().1 += p.value.len();
        }
        out
    }
}

const MODULES: [&str; 7] = ["embed", "proxy", "encoder", "pum", "pim", "pam", "head"];

/// Module a parameter belongs to, for reporting.
pub fn module_of(name: &str) -> &'static str {
    let mut parts = name.split('.');
    let first = parts.next().unwrap_or("");
    if first.starts_with("layer") {
        match parts.next() {
            Some("encoder") => "encoder",
            Some("pum") => "pum",
            Some("pim") => "pim",
            _ => "pam",
        }
    } else {
        MODULES.iter().find(|&&m| m == first).copied().unwrap_or("head")
    }
}

/// Gradient-check group of a parameter: `layer<k>.<block>` inside layers,
/// the top-level name elsewhere.
pub fn param_group(name: &str) -> String {
    let mut parts = name.split('.');
    let first = parts.next().unwrap_or("");
    match (first.starts_with("layer"), parts.next()) {
        (true, Some(second)) => format!("{first}.{second}"),
        _ => first.to_string(),
    }
}

/// Parameter count for a configuration, without keeping the model.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(Model::new(config.clone(), 0)?.param_count())
}
