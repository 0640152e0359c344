//! Training losses and evaluation metrics.
//!
//! Losses are recorded on a [`Tape`] so they can be differentiated; metrics
//! work on plain tensors of shape `(..., J, 3)` in millimetres with the root
//! at joint 0.

mod procrustes;
mod svd;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub use procrustes::{procrustes_align, AlignMode, Alignment, SimilarityTransform};
pub use svd::{det, mat_mul, svd_3x3, transpose, Mat3, Svd3, Vec3};

pub const ROOT_JOINT: usize = 0;
pub const PCK_THRESHOLD_MM: f64 = 150.0;
/// Thresholds averaged by [`auc`]: 0, 5, ..., 150 mm.
pub const AUC_THRESHOLDS: usize = 31;
pub const AUC_STEP_MM: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_t: 0.5 }
    }
}

impl LossWeights {
    pub fn new(lambda_t: f64) -> Result<Self> {
        if !(lambda_t.is_finite() && lambda_t >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_t must be finite and nonnegative, got {lambda_t}"
            )));
        }
        Ok(LossWeights { lambda_t })
    }
}

fn check_pose_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    if a.len() < 2 || a[a.len() - 1] != 3 {
        return Err(Error::InvalidShape {
            shape: a.to_vec(),
            reason: format!("{op} expects (..., J, 3)"),
        });
    }
    Ok(())
}

/// Mean per-joint Euclidean distance, `(1/(J·T)) Σ ‖ŷ − y‖`.
pub fn loss_3d(tape: &mut Tape, y_hat: Var, y: Var) -> Result<Var> {
    check_pose_shapes("loss_3d", tape.shape(y_hat), tape.shape(y))?;
    let d = tape.sub(y_hat, y)?;
    let n = tape.norm_last(d);
    Ok(tape.mean(n))
}

/// `(T-1) × T` forward-difference operator.
fn difference_matrix(t: usize) -> Tensor {
    let mut d = Tensor::zeros(&[t - 1, t]);
    for i in 0..t - 1 {
        d.set(&[i, i], -1.0);
        d.set(&[i, i + 1], 1.0);
    }
    d
}

/// Mean distance between the frame-to-frame velocities of `y_hat` and `y`,
/// both shaped `(T, J, 3)`.
pub fn tc_loss(tape: &mut Tape, y_hat: Var, y: Var) -> Result<Var> {
    check_pose_shapes("tc_loss", tape.shape(y_hat), tape.shape(y))?;
    let shape = tape.shape(y_hat).to_vec();
    if shape.len() != 3 {
        return Err(Error::InvalidShape {
            shape,
            reason: "tc_loss expects (T, J, 3)".into(),
        });
    }
    let (t, j) = (shape[0], shape[1]);
    if t < 2 {
        return Err(Error::InvalidShape {
            shape,
            reason: "tc_loss needs at least 2 frames".into(),
        });
    }
    let e = tape.sub(y_hat, y)?;
    let e = tape.reshape(e, &[t, j * 3])?;
    let d = tape.constant(difference_matrix(t));
    let de = tape.matmul(d, e)?;
    let de = tape.reshape(de, &[t - 1, j, 3])?;
    let n = tape.norm_last(de);
    Ok(tape.mean(n))
}

/// `loss_3d + λ · tc_loss`.
pub fn total_loss(tape: &mut Tape, y_hat: Var, y: Var, w: LossWeights) -> Result<Var> {
    let l3 = loss_3d(tape, y_hat, y)?;
    let lt = tc_loss(tape, y_hat, y)?;
    let lt = tape.scale(lt, w.lambda_t);
    tape.add(l3, lt)
}

/// Root-relative per-joint errors, one per (frame, joint).
fn root_relative_errors(y_hat: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
    check_pose_shapes("mpjpe", y_hat.shape(), y.shape())?;
    let j = y.shape()[y.rank() - 2];
    let mut out = Vec::with_capacity(y.len() / 3);
    for (fa, fb) in y_hat.data().chunks_exact(3 * j).zip(y.data().chunks_exact(3 * j)) {
        let ra = &fa[3 * ROOT_JOINT..3 * ROOT_JOINT + 3];
        let rb = &fb[3 * ROOT_JOINT..3 * ROOT_JOINT + 3];
        for (pa, pb) in fa.chunks_exact(3).zip(fb.chunks_exact(3)) {
            let d2: f64 = (0..3).map(|k| ((pa[k] - ra[k]) - (pb[k] - rb[k])).powi(2)).sum();
            out.push(d2.sqrt());
        }
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean per-joint position error after aligning the roots of each frame.
pub fn mpjpe(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    Ok(mean(&root_relative_errors(y_hat, y)?))
}

fn frames_of(t: &Tensor) -> Vec<Vec<Vec3>> {
    let j = t.shape()[t.rank() - 2];
    t.data()
        .chunks_exact(3 * j)
        .map(|f| f.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect())
        .collect()
}

/// Mean per-joint error after aligning each predicted frame to the ground
/// truth (similarity transform by default).
pub fn p_mpjpe_with(y_hat: &Tensor, y: &Tensor, mode: AlignMode) -> Result<f64> {
    check_pose_shapes("p_mpjpe", y_hat.shape(), y.shape())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (fa, fb) in frames_of(y_hat).iter().zip(frames_of(y).iter()) {
        let a = procrustes_align(fa, fb, mode)?;
        for (p, q) in a.aligned.iter().zip(fb) {
            total += (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>().sqrt();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn p_mpjpe(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    p_mpjpe_with(y_hat, y, AlignMode::Similarity)
}

fn pck_of(errors: &[f64], threshold_mm: f64) -> f64 {
    let hits = errors.iter().filter(|&&e| e < threshold_mm).count();
    100.0 * hits as f64 / errors.len() as f64
}

/// Percentage of root-relative joint errors strictly below `threshold_mm`.
pub fn pck(y_hat: &Tensor, y: &Tensor, threshold_mm: f64) -> Result<f64> {
    if !(threshold_mm >= 0.0) {
        return Err(Error::Invalid(format!("pck threshold must be nonnegative, got {threshold_mm}")));
    }
    Ok(pck_of(&root_relative_errors(y_hat, y)?, threshold_mm))
}

/// Mean PCK over the thresholds 0, 5, ..., 150 mm.
pub fn auc(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    let errors = root_relative_errors(y_hat, y)?;
    Ok(auc_of(&errors))
}

fn auc_of(errors: &[f64]) -> f64 {
    (0..AUC_THRESHOLDS)
        .map(|i| pck_of(errors, i as f64 * AUC_STEP_MM))
        .sum::<f64>()
        / AUC_THRESHOLDS as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe_mm: f64,
    pub p_mpjpe_mm: f64,
    pub pck_pct: f64,
    pub auc_pct: f64,
    pub n_frames: usize,
    pub n_joints: usize,
}

impl MetricReport {
    /// All four metrics over `(..., J, 3)` prediction and ground truth.
    pub fn compute(y_hat: &Tensor, y: &Tensor) -> Result<MetricReport> {
        let errors = root_relative_errors(y_hat, y)?;
        let n_joints = y.shape()[y.rank() - 2];
        Ok(MetricReport {
            mpjpe_mm: mean(&errors),
            p_mpjpe_mm: p_mpjpe(y_hat, y)?,
            pck_pct: pck_of(&errors, PCK_THRESHOLD_MM),
            auc_pct: auc_of(&errors),
            n_frames: errors.len() / n_joints,
            n_joints,
        })
    }
}
