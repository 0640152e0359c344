//! Skeletons, pose sequences, synthetic motion and datasets on disk.

mod skeleton;
mod store;
mod synth;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use skeleton::{default_h36m17_skeleton, Skeleton};
pub use store::{
    check_reprojection, load_pose2d, load_pose3d, load_root, save_fixture, save_sequence, Dataset,
    DatasetManifest, SequenceEntry, SequencePair, Split, WindowPair, MANIFEST_FILE, REPROJECTION_TOL,
};
pub use synth::{project, synth_generate, synth_pairs, Camera, MotionParams, BONE_TOLERANCE};

/// 2D keypoints `(T, J, C_in)` in normalised image coordinates, with an
/// optional confidence as the third channel.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence2D {
    pub data: Tensor,
}

/// 3D joints `(T, J, 3)` in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence3D {
    pub data: Tensor,
    /// Joint 0 sits at the origin in every frame.
    pub root_relative: bool,
}

/// Common view of 2D and 3D sequences.
pub trait PoseSequence: Clone {
    const IS_3D: bool;

    fn data(&self) -> &Tensor;
    fn with_data(&self, data: Tensor) -> Self;

    fn frames(&self) -> usize {
        self.data().shape()[0]
    }

    fn joints(&self) -> usize {
        self.data().shape()[1]
    }

    fn channels(&self) -> usize {
        self.data().shape()[2]
    }
}

fn check_sequence(data: &Tensor, channels: &[usize]) -> Result<()> {
    let s = data.shape();
    if s.len() != 3 || s[0] == 0 || s[1] == 0 || !channels.contains(&s[2]) {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("pose sequence must be (T, J, C) with C in {channels:?}"),
        });
    }
    if !data.all_finite() {
        return Err(Error::Invalid("pose sequence has non-finite coordinates".into()));
    }
    Ok(())
}

impl PoseSequence2D {
    pub fn new(data: Tensor) -> Result<Self> {
        check_sequence(&data, &[2, 3])?;
        Ok(PoseSequence2D { data })
    }

    pub fn has_confidence(&self) -> bool {
        self.channels() == 3
    }
}

impl PoseSequence3D {
    pub fn new(data: Tensor, root_relative: bool) -> Result<Self> {
        check_sequence(&data, &[3])?;
        Ok(PoseSequence3D { data, root_relative })
    }
}

impl PoseSequence for PoseSequence2D {
    const IS_3D: bool = false;

    fn data(&self) -> &Tensor {
        &self.data
    }

    fn with_data(&self, data: Tensor) -> Self {
        PoseSequence2D { data }
    }
}

impl PoseSequence for PoseSequence3D {
    const IS_3D: bool = true;

    fn data(&self) -> &Tensor {
        &self.data
    }

    fn with_data(&self, data: Tensor) -> Self {
        PoseSequence3D {
            data,
            root_relative: self.root_relative,
        }
    }
}

/// Mirror a `(..., J, C)` tensor: negate channel 0 and swap left/right
/// joints. Other channels are untouched.
pub fn flip_tensor(t: &Tensor, skeleton: &Skeleton) -> Result<Tensor> {
    let perm = skeleton.flip_permutation()?;
    let s = t.shape();
    if s.len() < 2 || s[s.len() - 2] != perm.len() {
        return Err(Error::ShapeMismatch {
            op: "horizontal_flip",
            lhs: s.to_vec(),
            rhs: vec![perm.len()],
        });
    }
    let c = s[s.len() - 1];
    let frame = c * perm.len();
    let mut out = t.clone();
    for (dst, src) in out.data_mut().chunks_exact_mut(frame).zip(t.data().chunks_exact(frame)) {
        for (j, &from) in perm.iter().enumerate() {
            let p = &src[from * c..from * c + c];
            let q = &mut dst[j * c..j * c + c];
            q.copy_from_slice(p);
            q[0] = -p[0];
        }
    }
    Ok(out)
}

pub fn horizontal_flip<S: PoseSequence>(seq: &S, skeleton: &Skeleton) -> Result<S> {
    Ok(seq.with_data(flip_tensor(seq.data(), skeleton)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window<S> {
    pub offset: usize,
    pub seq: S,
    /// Frames taken from the source; the rest replicate the last one.
    pub valid_frames: usize,
    pub padded: bool,
}

/// Frame offsets of [`window_split`] and whether the last one is padded.
pub fn window_offsets(frames: usize, window: usize, stride: usize) -> Result<Vec<(usize, bool)>> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidWindow("window length and stride must be positive".into()));
    }
    if window > frames {
        return Err(Error::InvalidWindow(format!(
            "window of {window} frames exceeds sequence of {frames}"
        )));
    }
    let mut out: Vec<(usize, bool)> = (0..=frames - window).step_by(stride).map(|o| (o, false)).collect();
    let next = out.last().map_or(0, |&(o, _)| o + stride);
    let covered = out.last().map_or(0, |&(o, _)| o + window);
    if covered < frames && next < frames {
        out.push((next, true));
    }
    Ok(out)
}

/// Windows at offsets `0, stride, 2·stride, ...`. When they stop short of
/// the end, one more window is added and padded by repeating the last
/// frame.
pub fn window_split<S: PoseSequence>(seq: &S, window: usize, stride: usize) -> Result<Vec<Window<S>>> {
    let frames = seq.frames();
    let per_frame = seq.joints() * seq.channels();
    let src = seq.data().data();
    let mut shape = seq.data().shape().to_vec();
    shape[0] = window;
    window_offsets(frames, window, stride)?
        .into_iter()
        .map(|(offset, padded)| {
            let valid = window.min(frames - offset);
            let mut buf = Vec::with_capacity(window * per_frame);
            for t in 0..window {
                let f = (offset + t).min(frames - 1);
                buf.extend_from_slice(&src[f * per_frame..(f + 1) * per_frame]);
            }
            Ok(Window {
                offset,
                seq: seq.with_data(Tensor::new(&shape, buf)?),
                valid_frames: valid,
                padded,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
