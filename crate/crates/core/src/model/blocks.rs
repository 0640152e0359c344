//! Sublayers of the lifting network, expressed as tape computations.
//!
//! Feature tensors are laid out `[group, sequence, channel]`; attention
//! probabilities are `[group, head, query, key]`.

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Tape plus read-only parameters for one forward pass.
pub(crate) struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
}

impl Ctx<'_> {
    pub fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

/// Pre-norm feed-forward sublayer with residual: `x + W2 gelu(W1 LN(x) + b1) + b2`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FfnIds {
    pub norm: NormIds,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Query/key/value/output projections. Q, K and V carry no bias.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ProjIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct SelfAttnIds {
    pub norm: NormIds,
    pub proj: ProjIds,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct CrossAttnIds {
    pub norm_q: NormIds,
    pub norm_kv: NormIds,
    pub proj: ProjIds,
}

/// Stand-in for cross-attention: the counterpart sequence is average-pooled
/// onto the query length and passed through a two-layer MLP.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolMlpIds {
    pub ffn: FfnIds,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum MixerIds {
    Attention(CrossAttnIds),
    Mlp(PoolMlpIds),
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ProxyBlockIds {
    pub mixer: MixerIds,
    pub ffn: FfnIds,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PamIds {
    pub attn: SelfAttnIds,
    pub ffn: FfnIds,
    pub mu: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderIds {
    pub spatial: SelfAttnIds,
    pub spatial_ffn: FfnIds,
    pub temporal: SelfAttnIds,
    pub temporal_ffn: FfnIds,
}

pub(crate) fn layer_norm(ctx: &mut Ctx, x: Var, ids: NormIds) -> Result<Var> {
    let g = ctx.p(ids.gain);
    let b = ctx.p(ids.bias);
    ctx.tape.layer_norm(x, g, b)
}

pub(crate) fn ffn(ctx: &mut Ctx, x: Var, ids: &FfnIds) -> Result<Var> {
    let h = ffn_branch(ctx, x, ids)?;
    ctx.tape.add(x, h)
}

fn ffn_branch(ctx: &mut Ctx, x: Var, ids: &FfnIds) -> Result<Var> {
    let n = layer_norm(ctx, x, ids.norm)?;
    let (w1, b1, w2, b2) = (ctx.p(ids.w1), ctx.p(ids.b1), ctx.p(ids.w2), ctx.p(ids.b2));
    let h = ctx.tape.linear(n, w1, Some(b1))?;
    let h = ctx.tape.gelu(h);
    ctx.tape.linear(h, w2, Some(b2))
}

/// `[G, S, C] -> [G, H, S, C/H]`
fn split_heads(ctx: &mut Ctx, x: Var, heads: usize) -> Result<Var> {
    let s = ctx.tape.shape(x).to_vec();
    let (g, len, c) = (s[0], s[1], s[2]);
    let r = ctx.tape.reshape(x, &[g, len, heads, c / heads])?;
    ctx.tape.permute(r, &[0, 2, 1, 3])
}

/// `[G, H, S, D] -> [G, S, H·D]`
fn merge_heads(ctx: &mut Ctx, x: Var) -> Result<Var> {
    let s = ctx.tape.shape(x).to_vec();
    let (g, h, len, d) = (s[0], s[1], s[2], s[3]);
    let p = ctx.tape.permute(x, &[0, 2, 1, 3])?;
    ctx.tape.reshape(p, &[g, len, h * d])
}

/// Output projection of concatenated heads.
fn project_out(ctx: &mut Ctx, heads_out: Var, proj: &ProjIds) -> Result<Var> {
    let merged = merge_heads(ctx, heads_out)?;
    let (wo, bo) = (ctx.p(proj.wo), ctx.p(proj.bo));
    ctx.tape.linear(merged, wo, Some(bo))
}

pub(crate) struct AttnOut {
    pub out: Var,
    pub probs: Var,
}

/// Multi-head cross-attention with residual: queries from `q_src`, keys and
/// values from `kv_src`, scaled by `1/sqrt(C/H)`.
pub(crate) fn cross_attention(
    ctx: &mut Ctx,
    q_src: Var,
    kv_src: Var,
    ids: &CrossAttnIds,
    heads: usize,
) -> Result<AttnOut> {
    let qn = layer_norm(ctx, q_src, ids.norm_q)?;
    let kvn = layer_norm(ctx, kv_src, ids.norm_kv)?;
    attend(ctx, q_src, qn, kvn, &ids.proj, heads)
}

/// Multi-head self-attention with pre-norm and residual.
pub(crate) fn self_attention(ctx: &mut Ctx, x: Var, ids: &SelfAttnIds, heads: usize) -> Result<AttnOut> {
    let n = layer_norm(ctx, x, ids.norm)?;
    attend(ctx, x, n, n, &ids.proj, heads)
}

fn attend(
    ctx: &mut Ctx,
    residual: Var,
    q_in: Var,
    kv_in: Var,
    proj: &ProjIds,
    heads: usize,
) -> Result<AttnOut> {
    let (wq, wk, wv) = (ctx.p(proj.wq), ctx.p(proj.wk), ctx.p(proj.wv));
    let q = ctx.tape.linear(q_in, wq, None)?;
    let k = ctx.tape.linear(kv_in, wk, None)?;
    let v = ctx.tape.linear(kv_in, wv, None)?;
    let (q, k, v) = (
        split_heads(ctx, q, heads)?,
        split_heads(ctx, k, heads)?,
        split_heads(ctx, v, heads)?,
    );
    let head_dim = *ctx.tape.shape(q).last().unwrap();
    let logits = ctx.tape.matmul_bt(q, k)?;
    let logits = ctx.tape.scale(logits, 1.0 / (head_dim as f64).sqrt());
    let probs = ctx.tape.softmax_last(logits);
    let mixed = ctx.tape.matmul(probs, v)?;
    let o = project_out(ctx, mixed, proj)?;
    let out = ctx.tape.add(residual, o)?;
    Ok(AttnOut { out, probs })
}

/// Row-stochastic averaging matrix `[rows, cols]` with every entry `1/cols`.
fn uniform_rows(rows: usize, cols: usize) -> Tensor {
    Tensor::full(&[rows, cols], 1.0 / cols as f64)
}

/// MLP mixer: `q_src + MLP(LN(A · kv_src))` with `A` the uniform averaging
/// matrix. Returns `A` broadcast over heads as its "attention".
pub(crate) fn pool_mlp(ctx: &mut Ctx, q_src: Var, kv_src: Var, ids: &PoolMlpIds, heads: usize) -> Result<AttnOut> {
    let qs = ctx.tape.shape(q_src).to_vec();
    let ks = ctx.tape.shape(kv_src).to_vec();
    let (groups, q_len, k_len) = (qs[0], qs[1], ks[1]);
    let avg = ctx.tape.constant(uniform_rows(q_len, k_len));
    let pooled = ctx.tape.matmul(avg, kv_src)?;
    let h = ffn_branch(ctx, pooled, &ids.ffn)?;
    let out = ctx.tape.add(q_src, h)?;
    let probs = ctx.tape.constant(Tensor::full(&[groups, heads, q_len, k_len], 1.0 / k_len as f64));
    Ok(AttnOut { out, probs })
}

pub(crate) fn proxy_block(
    ctx: &mut Ctx,
    q_src: Var,
    kv_src: Var,
    ids: &ProxyBlockIds,
    heads: usize,
) -> Result<AttnOut> {
    let mixed = match &ids.mixer {
        MixerIds::Attention(a) => cross_attention(ctx, q_src, kv_src, a, heads)?,
        MixerIds::Mlp(m) => pool_mlp(ctx, q_src, kv_src, m, heads)?,
    };
    let out = ffn(ctx, mixed.out, &ids.ffn)?;
    Ok(AttnOut {
        out,
        probs: mixed.probs,
    })
}

/// Aggregation matrix `M = M_{F→P} · M_{P→F}` per group and head.
pub(crate) fn aggregate(ctx: &mut Ctx, f_to_p: Var, p_to_f: Var) -> Result<Var> {
    ctx.tape.matmul(f_to_p, p_to_f)
}

pub(crate) struct PamOut {
    pub out: Var,
    pub self_logits: Var,
    pub fused_logits: Var,
    pub fused_probs: Var,
    pub sigmoid_mu: Var,
}

/// Proxy attention: self-attention whose logits blend the aggregation matrix
/// with raw `Q·Kᵀ` as `σ(μ)·M + (1 − σ(μ))·Q·Kᵀ`, normalized by
/// `softmax(· / sqrt(C_f))`.
pub(crate) fn pam(ctx: &mut Ctx, f: Var, m_agg: Var, ids: &PamIds, heads: usize) -> Result<PamOut> {
    let hidden = *ctx.tape.shape(f).last().unwrap();
    let n = layer_norm(ctx, f, ids.attn.norm)?;
    let proj = &ids.attn.proj;
    let (wq, wk, wv) = (ctx.p(proj.wq), ctx.p(proj.wk), ctx.p(proj.wv));
    let q = ctx.tape.linear(n, wq, None)?;
    let k = ctx.tape.linear(n, wk, None)?;
    let v = ctx.tape.linear(n, wv, None)?;
    let (q, k, v) = (
        split_heads(ctx, q, heads)?,
        split_heads(ctx, k, heads)?,
        split_heads(ctx, v, heads)?,
    );
    let self_logits = ctx.tape.matmul_bt(q, k)?;
    let mu = ctx.p(ids.mu);
    let sigmoid_mu = ctx.tape.sigmoid(mu);
    // qk + s·(M − qk) == s·M + (1 − s)·qk
    let delta = ctx.tape.sub(m_agg, self_logits)?;
    let blended = ctx.tape.mul_scalar(delta, sigmoid_mu)?;
    let fused_logits = ctx.tape.add(self_logits, blended)?;
    let scaled = ctx.tape.scale(fused_logits, 1.0 / (hidden as f64).sqrt());
    let fused_probs = ctx.tape.softmax_last(scaled);
    let mixed = ctx.tape.matmul(fused_probs, v)?;
    let o = project_out(ctx, mixed, proj)?;
    let out = ctx.tape.add(f, o)?;
    let out = ffn(ctx, out, &ids.ffn)?;
    Ok(PamOut {
        out,
        self_logits,
        fused_logits,
        fused_probs,
        sigmoid_mu,
    })
}

/// Spatial self-attention over joints, then temporal self-attention over
/// frames, each followed by a feed-forward sublayer. Takes and returns the
/// per-joint layout `[J, T, C]`.
pub(crate) fn encoder(ctx: &mut Ctx, x: Var, ids: &EncoderIds, heads: usize) -> Result<Var> {
    let s = ctx.tape.permute(x, &[1, 0, 2])?;
    let s = self_attention(ctx, s, &ids.spatial, heads)?.out;
    let s = ffn(ctx, s, &ids.spatial_ffn)?;
    let t = ctx.tape.permute(s, &[1, 0, 2])?;
    let t = self_attention(ctx, t, &ids.temporal, heads)?.out;
    ffn(ctx, t, &ids.temporal_ffn)
}
