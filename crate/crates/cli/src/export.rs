use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use proxyattn::data::{load_pose2d, window_split, PoseSequence};
use proxyattn::tensor::Tensor;
use proxyattn::train::checkpoint_load;
use serde::Serialize;

use crate::{CliError, CliResult};

/// Which head of a `[J, H, a, b]` trace to export.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadSelect {
    Index(usize),
    Mean,
}

impl FromStr for HeadSelect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "mean" {
            return Ok(HeadSelect::Mean);
        }
        s.parse()
            .map(HeadSelect::Index)
            .map_err(|_| format!("expected a head index or `mean`, got {s:?}"))
    }
}

impl fmt::Display for HeadSelect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadSelect::Index(h) => write!(f, "{h}"),
            HeadSelect::Mean => f.write_str("mean"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExportSummary {
    pub files: Vec<PathBuf>,
    pub sigmoid_mu: f64,
    /// Largest `|row sum − 1|` of the exported aggregation matrix before
    /// normalization.
    pub agg_row_sum_error: f64,
}

/// `[a, b]` slice of a `[J, H, a, b]` tensor for one joint, one head or the
/// head mean.
fn select(t: &Tensor, joint: usize, head: HeadSelect) -> (usize, usize, Vec<f64>) {
    let s = t.shape();
    let (h_n, a, b) = (s[1], s[2], s[3]);
    let block = a * b;
    let at = |h: usize| &t.data()[(joint * h_n + h) * block..(joint * h_n + h + 1) * block];
    let data = match head {
        HeadSelect::Index(h) => at(h).to_vec(),
        HeadSelect::Mean => {
            let mut acc = vec![0.0; block];
            for h in 0..h_n {
                for (x, v) in acc.iter_mut().zip(at(h)) {
                    *x += v;
                }
            }
            acc.iter().map(|x| x / h_n as f64).collect()
        }
    };
    (a, b, data)
}

/// Min-max rescale to `[0, 1]`; a constant matrix maps to zeros.
fn normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

fn write_csv(path: &Path, cols: usize, data: &[f64]) -> CliResult<()> {
    let err = |e: csv::Error| CliError::user(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(err)?;
    for row in data.chunks_exact(cols) {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::user(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_export_attention(
    ckpt: &Path,
    input: &Path,
    layer: usize,
    joint: usize,
    head: HeadSelect,
    dir: &Path,
    out: &mut dyn Write,
) -> CliResult<ExportSummary> {
    let ck = checkpoint_load(ckpt)?;
    let c = ck.model.config().clone();
    if layer >= c.layers {
        return Err(CliError::user(format!("layer {layer} out of range (model has {})", c.layers)));
    }
    if joint >= c.joints {
        return Err(CliError::user(format!("joint {joint} out of range (model has {})", c.joints)));
    }
    if let HeadSelect::Index(h) = head {
        if h >= c.heads {
            return Err(CliError::user(format!("head {h} out of range (model has {})", c.heads)));
        }
    }
    let seq = load_pose2d(input)?;
    if seq.joints() != c.joints || seq.channels() != c.in_channels {
        return Err(CliError::user(format!(
            "{}: {} joints with {} channels, the model expects {} with {}",
            input.display(),
            seq.joints(),
            seq.channels(),
            c.joints,
            c.in_channels
        )));
    }
    let clip = window_split(&seq, c.frames, c.frames)?.swap_remove(0).seq;
    let fwd = ck.model.forward(clip.data(), true)?;
    let trace = &fwd.traces[layer];

    let scale = 1.0 / (c.hidden as f64).sqrt();
    let self_attn = trace.m_self_logits.map(|v| v * scale).softmax_last();
    let (t, _, agg) = select(&trace.m_agg, joint, head);
    let agg_row_sum_error = agg
        .chunks_exact(t)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let (_, _, self_sel) = select(&self_attn, joint, head);
    let (_, _, fused) = select(&trace.m_fused_attn, joint, head);
    let (l, _, p2f) = select(&trace.m_p_to_f, joint, head);
    let (_, _, f2p) = select(&trace.m_f_to_p, joint, head);

    std::fs::create_dir_all(dir).map_err(|e| CliError::user(format!("cannot create {}: {e}", dir.display())))?;
    let tag = format!("L{layer}_j{joint}_h{head}");
    let mut files = Vec::new();
    let mut put = |stem: &str, rows: usize, cols: usize, data: &[f64]| -> CliResult<()> {
        let path = dir.join(format!("{stem}_{tag}_{rows}x{cols}.csv"));
        write_csv(&path, cols, data)?;
        files.push(path);
        Ok(())
    };
    put("self", t, t, &normalize(&self_sel))?;
    put("agg", t, t, &normalize(&agg))?;
    put("fused", t, t, &normalize(&fused))?;
    put("p2f", l, t, &p2f)?;
    put("f2p", t, l, &f2p)?;

    let summary = ExportSummary {
        files,
        sigmoid_mu: trace.sigmoid_mu,
        agg_row_sum_error,
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("summary serializes"))
        .map_err(|e| CliError::internal(format!("cannot write output: {e}")))?;
    Ok(summary)
}
