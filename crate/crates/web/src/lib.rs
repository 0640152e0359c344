//! WebAssembly entry points for the demo page in `www/`. Every export takes
//! plain numbers and returns a JSON string.

use proxyattn::data::{default_h36m17_skeleton, flip_tensor, synth_pairs, MotionParams};
use proxyattn::metrics::{mpjpe, p_mpjpe, procrustes_align, AlignMode, Vec3};
use proxyattn::model::{Model, ModelConfig};
use proxyattn::tensor::{Rng, Tensor};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DEMO_FRAMES: usize = 27;

#[derive(Serialize)]
pub struct Heatmaps {
    pub frames: usize,
    pub sigmoid_mu: f64,
    /// Row-major `frames × frames` matrices.
    pub self_attn: Vec<f64>,
    pub agg: Vec<f64>,
    pub fused: Vec<f64>,
}

/// `[J, H, T, T]` slice for one joint, averaged over heads.
fn head_mean(t: &Tensor, joint: usize) -> Vec<f64> {
    let s = t.shape();
    let (h_n, block) = (s[1], s[2] * s[3]);
    let mut acc = vec![0.0; block];
    for h in 0..h_n {
        let start = (joint * h_n + h) * block;
        for (a, v) in acc.iter_mut().zip(&t.data()[start..start + block]) {
            *a += v / h_n as f64;
        }
    }
    acc
}

/// Attention maps of a freshly initialized two-layer model on a synthetic
/// clip, with μ of the chosen layer forced to `mu`.
pub fn heatmaps(seed: u64, layer: usize, joint: usize, mu: f64) -> Result<Heatmaps, String> {
    let sk = default_h36m17_skeleton();
    let cfg = ModelConfig {
        hidden: 16,
        heads: 2,
        layers: 2,
        ..ModelConfig::for_frames(DEMO_FRAMES)
    };
    if layer >= cfg.layers || joint >= cfg.joints {
        return Err(format!("layer < {} and joint < {} required", cfg.layers, cfg.joints));
    }
    let mut model = Model::new(cfg.clone(), seed).map_err(|e| e.to_string())?;
    model.set_mu(layer, mu);
    let pair = synth_pairs(&mut Rng::new(seed), 1, DEMO_FRAMES, &sk, &MotionParams::default())
        .map_err(|e| e.to_string())?
        .remove(0);
    let out = model.forward(&pair.pose2d.data, true).map_err(|e| e.to_string())?;
    let tr = &out.traces[layer];
    let scale = 1.0 / (cfg.hidden as f64).sqrt();
    let self_attn = tr.m_self_logits.map(|v| v * scale).softmax_last();
    Ok(Heatmaps {
        frames: DEMO_FRAMES,
        sigmoid_mu: tr.sigmoid_mu,
        self_attn: head_mean(&self_attn, joint),
        agg: head_mean(&tr.m_agg, joint),
        fused: head_mean(&tr.m_fused_attn, joint),
    })
}

#[derive(Serialize)]
pub struct ProcrustesDemo {
    pub parents: Vec<i64>,
    pub target: Vec<Vec3>,
    pub source: Vec<Vec3>,
    pub aligned: Vec<Vec3>,
    pub mpjpe_mm: f64,
    pub p_mpjpe_mm: f64,
}

/// Rotate a skeleton by `yaw_deg` about the vertical axis, scale it, shift
/// it and add Gaussian noise, then align it back to the original.
pub fn procrustes(seed: u64, yaw_deg: f64, scale: f64, noise_mm: f64) -> Result<ProcrustesDemo, String> {
    let sk = default_h36m17_skeleton();
    let pair = synth_pairs(&mut Rng::new(seed), 1, 2, &sk, &MotionParams::default())
        .map_err(|e| e.to_string())?
        .remove(0);
    let target: Vec<Vec3> = pair.pose3d.data.data()[..sk.num_joints() * 3]
        .chunks_exact(3)
        .map(|p| [p[0], p[1], p[2]])
        .collect();
    let (s, c) = yaw_deg.to_radians().sin_cos();
    let mut rng = Rng::with_stream(seed, 9);
    let source: Vec<Vec3> = target
        .iter()
        .map(|p| {
            let x = c * p[0] + s * p[2];
            let z = -s * p[0] + c * p[2];
            [
                scale * x + 150.0 + rng.gaussian(noise_mm),
                scale * p[1] - 80.0 + rng.gaussian(noise_mm),
                scale * z + rng.gaussian(noise_mm),
            ]
        })
        .collect();
    let al = procrustes_align(&source, &target, AlignMode::Similarity).map_err(|e| e.to_string())?;
    let to_tensor = |v: &[Vec3]| Tensor::new(&[1, v.len(), 3], v.iter().flatten().copied().collect());
    let (src_t, tgt_t) = (
        to_tensor(&source).map_err(|e| e.to_string())?,
        to_tensor(&target).map_err(|e| e.to_string())?,
    );
    Ok(ProcrustesDemo {
        parents: sk.parents.clone(),
        mpjpe_mm: mpjpe(&src_t, &tgt_t).map_err(|e| e.to_string())?,
        p_mpjpe_mm: p_mpjpe(&src_t, &tgt_t).map_err(|e| e.to_string())?,
        target,
        source,
        aligned: al.aligned,
    })
}

#[derive(Serialize)]
pub struct FlipDemo {
    pub parents: Vec<i64>,
    pub names: Vec<String>,
    pub original: Vec<[f64; 2]>,
    pub flipped: Vec<[f64; 2]>,
    pub involution_exact: bool,
}

/// One frame of a synthetic 2D clip and its horizontal mirror.
pub fn flip(seed: u64, frame: usize) -> Result<FlipDemo, String> {
    let sk = default_h36m17_skeleton();
    let pair = synth_pairs(&mut Rng::new(seed), 1, DEMO_FRAMES, &sk, &MotionParams::default())
        .map_err(|e| e.to_string())?
        .remove(0);
    let x = &pair.pose2d.data;
    let f = flip_tensor(x, &sk).map_err(|e| e.to_string())?;
    let back = flip_tensor(&f, &sk).map_err(|e| e.to_string())?;
    let j = sk.num_joints();
    let frame = frame.min(DEMO_FRAMES - 1);
    let points = |t: &Tensor| -> Vec<[f64; 2]> {
        t.data()[frame * j * 2..(frame + 1) * j * 2]
            .chunks_exact(2)
            .map(|p| [p[0], p[1]])
            .collect()
    };
    Ok(FlipDemo {
        parents: sk.parents.clone(),
        names: sk.joint_names.clone(),
        original: points(x),
        flipped: points(&f),
        involution_exact: &back == x,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.map(|v| serde_json::to_string(&v).expect("demo output serializes"))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn attention_heatmaps(seed: u32, layer: u32, joint: u32, mu: f64) -> Result<String, JsError> {
    to_js(heatmaps(seed as u64, layer as usize, joint as usize, mu))
}

#[wasm_bindgen]
pub fn procrustes_demo(seed: u32, yaw_deg: f64, scale: f64, noise_mm: f64) -> Result<String, JsError> {
    to_js(procrustes(seed as u64, yaw_deg, scale, noise_mm))
}

#[wasm_bindgen]
pub fn flip_demo(seed: u32, frame: u32) -> Result<String, JsError> {
    to_js(flip(seed as u64, frame as usize))
}
