use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{save_sequence, DatasetManifest, SequenceEntry, SequencePair, Split};
use super::{PoseSequence2D, PoseSequence3D, Skeleton};
use crate::error::{Error, Result};
use crate::tensor::{io::save_tensor, Rng, Tensor};

/// Fixed pinhole camera; normalised coordinates are `(u - w/2) / (w/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            focal_px: 1000.0,
            cx: 500.0,
            cy: 500.0,
            width: 1000.0,
            height: 1000.0,
        }
    }
}

/// Project a camera-frame point in millimetres to normalised coordinates.
pub fn project(camera: &Camera, p: [f64; 3]) -> [f64; 2] {
    let u = camera.focal_px * p[0] / p[2] + camera.cx;
    let v = camera.focal_px * p[1] / p[2] + camera.cy;
    [
        (u - camera.width / 2.0) / (camera.width / 2.0),
        (v - camera.height / 2.0) / (camera.height / 2.0),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionParams {
    /// Upper bound of each joint's per-axis sinusoid amplitude.
    pub max_amplitude_mm: f64,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    pub fps: f64,
    /// Upper bound of the root trajectory amplitude per axis.
    pub root_amplitude_mm: f64,
    /// Distance from the camera to the rest position of the root.
    pub distance_mm: f64,
    /// Yaw of each sequence is drawn from `[-max_yaw, max_yaw]` radians.
    pub max_yaw: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams {
            max_amplitude_mm: 100.0,
            min_freq_hz: 0.2,
            max_freq_hz: 1.5,
            fps: 50.0,
            root_amplitude_mm: 200.0,
            distance_mm: 4000.0,
            max_yaw: PI / 4.0,
        }
    }
}

impl MotionParams {
    fn validate(&self) -> Result<()> {
        let ok = self.max_amplitude_mm >= 0.0
            && self.max_amplitude_mm <= 100.0
            && self.min_freq_hz >= 0.0
            && self.min_freq_hz <= self.max_freq_hz
            && self.max_freq_hz.is_finite()
            && self.fps > 0.0
            && self.root_amplitude_mm >= 0.0
            && self.distance_mm > self.root_amplitude_mm + 2500.0
            && self.max_yaw.abs() <= PI;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid motion parameters {self:?}")))
        }
    }
}

/// Bone vector from parent to joint in the rest pose. Camera axes: x right,
/// y down, z away from the camera.
fn rest_bone(name: &str, index: usize) -> [f64; 3] {
    match name {
        "r_hip" => [-130.0, 0.0, 0.0],
        "l_hip" => [130.0, 0.0, 0.0],
        "r_knee" | "l_knee" => [0.0, 450.0, 0.0],
        "r_ankle" | "l_ankle" => [0.0, 440.0, 0.0],
        "spine" => [0.0, -230.0, 0.0],
        "thorax" => [0.0, -250.0, 0.0],
        "neck" => [0.0, -110.0, 0.0],
        "head" => [0.0, -120.0, 0.0],
        "l_shoulder" => [150.0, 20.0, 0.0],
        "r_shoulder" => [-150.0, 20.0, 0.0],
        "l_elbow" | "r_elbow" => [0.0, 280.0, 0.0],
        "l_wrist" | "r_wrist" => [0.0, 250.0, 0.0],
        _ => {
            let a = index as f64;
            [200.0 * a.sin(), 200.0 * a.cos(), 50.0]
        }
    }
}

pub(crate) fn rest_pose(skeleton: &Skeleton) -> Vec<[f64; 3]> {
    let mut pos = vec![[0.0; 3]; skeleton.num_joints()];
    for &j in skeleton.topological_order().iter().skip(1) {
        let p = pos[skeleton.parents[j] as usize];
        let b = rest_bone(&skeleton.joint_names[j], j);
        pos[j] = [p[0] + b[0], p[1] + b[1], p[2] + b[2]];
    }
    pos
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[derive(Clone, Copy)]
struct Sinusoid {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Sinusoid {
    fn draw(rng: &mut Rng, max_amp: f64, m: &MotionParams) -> Self {
        Sinusoid {
            amp: rng.uniform_range(0.0, max_amp),
            freq: rng.uniform_range(m.min_freq_hz, m.max_freq_hz),
            phase: rng.uniform_range(0.0, 2.0 * PI),
        }
    }

    fn at(&self, seconds: f64) -> f64 {
        self.amp * (2.0 * PI * self.freq * seconds + self.phase).sin()
    }
}

/// Relative bone-length tolerance enforced on every generated frame.
pub const BONE_TOLERANCE: f64 = 0.05;

/// One synthetic sequence: root-relative 3D, root trajectory and the
/// projected 2D keypoints.
pub(crate) fn synth_sequence(
    rng: &mut Rng,
    frames: usize,
    skeleton: &Skeleton,
    motion: &MotionParams,
    camera: &Camera,
) -> Result<(PoseSequence2D, PoseSequence3D, Tensor)> {
    let j_n = skeleton.num_joints();
    let rest = rest_pose(skeleton);
    let order = skeleton.topological_order();
    let yaw = rng.uniform_range(-motion.max_yaw, motion.max_yaw);
    let joint_motion: Vec<[Sinusoid; 3]> = (0..j_n)
        .map(|_| [0; 3].map(|_| Sinusoid::draw(rng, motion.max_amplitude_mm, motion)))
        .collect();
    let root_motion = [0; 3].map(|_| Sinusoid::draw(rng, motion.root_amplitude_mm, motion));
    let (cy, sy) = (yaw.cos(), yaw.sin());

    let mut rel = Vec::with_capacity(frames * j_n * 3);
    let mut root = Vec::with_capacity(frames * 3);
    let mut kp = Vec::with_capacity(frames * j_n * 2);
    for t in 0..frames {
        let sec = t as f64 / motion.fps;
        let target: Vec<[f64; 3]> = (0..j_n)
            .map(|j| [0, 1, 2].map(|k| rest[j][k] + joint_motion[j][k].at(sec)))
            .collect();
        // Walk the chain from the root, keeping each bone at its rest length
        // and pointing towards the displaced child.
        let mut pos = vec![[0.0; 3]; j_n];
        for &j in order.iter().skip(1) {
            let p = skeleton.parents[j] as usize;
            let len = norm(sub(rest[j], rest[p]));
            let mut dir = sub(target[j], pos[p]);
            if norm(dir) < 1e-9 {
                dir = sub(rest[j], rest[p]);
            }
            let n = norm(dir);
            pos[j] = [0, 1, 2].map(|k| pos[p][k] + dir[k] * len / n);
            let got = norm(sub(pos[j], pos[p]));
            if (got - len).abs() > BONE_TOLERANCE * len {
                return Err(Error::Invalid(format!("bone {p}->{j} length {got} vs rest {len}")));
            }
        }
        let r = [0, 1, 2].map(|k| root_motion[k].at(sec));
        let r = [r[0], r[1], motion.distance_mm + r[2]];
        root.extend_from_slice(&r);
        for p in &pos {
            let q = [cy * p[0] + sy * p[2], p[1], -sy * p[0] + cy * p[2]];
            rel.extend_from_slice(&q);
            let uv = project(camera, [q[0] + r[0], q[1] + r[1], q[2] + r[2]]);
            if !(uv[0].abs() <= 1.0 && uv[1].abs() <= 1.0) {
                return Err(Error::Invalid(format!("synthetic joint leaves the image at {uv:?}")));
            }
            kp.extend_from_slice(&uv);
        }
    }
    Ok((
        PoseSequence2D::new(Tensor::new(&[frames, j_n, 2], kp)?)?,
        PoseSequence3D::new(Tensor::new(&[frames, j_n, 3], rel)?, true)?,
        Tensor::new(&[frames, 3], root)?,
    ))
}

/// Generate `n_sequences` sequences in memory.
pub fn synth_pairs(
    rng: &mut Rng,
    n_sequences: usize,
    frames: usize,
    skeleton: &Skeleton,
    motion: &MotionParams,
) -> Result<Vec<SequencePair>> {
    if frames < 2 {
        return Err(Error::InvalidConfig(format!(
            "synthetic sequences need at least 2 frames, got {frames}"
        )));
    }
    if n_sequences == 0 {
        return Err(Error::InvalidConfig("need at least one sequence".into()));
    }
    motion.validate()?;
    skeleton.validate()?;
    let camera = Camera::default();
    (0..n_sequences)
        .map(|i| {
            let (pose2d, pose3d, root) = synth_sequence(rng, frames, skeleton, motion, &camera)?;
            Ok(SequencePair {
                id: format!("seq{i:04}"),
                pose2d,
                pose3d,
                root: Some(root),
            })
        })
        .collect()
}

/// Generate a dataset and write it under `dir` with a manifest.
pub fn synth_generate(
    dir: &Path,
    rng: &mut Rng,
    n_sequences: usize,
    frames: usize,
    skeleton: &Skeleton,
    motion: &MotionParams,
    split: Split,
) -> Result<DatasetManifest> {
    let pairs = synth_pairs(rng, n_sequences, frames, skeleton, motion)?;
    let mut entries = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let entry = SequenceEntry {
            id: pair.id.clone(),
            pose2d: format!("{}_2d", pair.id),
            pose3d: format!("{}_3d", pair.id),
            root: Some(format!("{}_root", pair.id)),
            frames,
            joints: skeleton.num_joints(),
        };
        save_sequence(&pair.pose2d, &dir.join(&entry.pose2d))?;
        save_sequence(&pair.pose3d, &dir.join(&entry.pose3d))?;
        if let (Some(root), Some(stem)) = (&pair.root, &entry.root) {
            save_tensor(root, &dir.join(stem))?;
        }
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        version: DatasetManifest::VERSION,
        skeleton: skeleton.clone(),
        split,
        camera: Some(Camera::default()),
        sequences: entries,
    };
    manifest.save(dir)?;
    Ok(manifest)
}
