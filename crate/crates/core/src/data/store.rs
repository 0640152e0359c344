use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::{project, Camera};
use super::{window_split, PoseSequence, PoseSequence2D, PoseSequence3D, Skeleton};
use crate::error::{Error, Result};
use crate::tensor::io::{load_tensor, save_tensor};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Largest allowed gap, in normalised image units, between stored 2D
/// keypoints and the projection of the stored 3D joints.
pub const REPROJECTION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: String,
    /// Tensor stems relative to the manifest directory.
    pub pose2d: String,
    pub pose3d: String,
    /// Camera-frame root trajectory `(T, 3)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<String>,
    pub frames: usize,
    pub joints: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub skeleton: Skeleton,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
    pub sequences: Vec<SequenceEntry>,
}

impl DatasetManifest {
    pub const VERSION: u32 = 1;

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::MissingFile(dir.to_path_buf()));
        }
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if m.version != Self::VERSION {
            return Err(Error::Malformed {
                path,
                reason: format!("unsupported manifest version {}", m.version),
            });
        }
        m.skeleton.validate()?;
        for e in &m.sequences {
            if e.joints != m.skeleton.num_joints() || e.frames == 0 {
                return Err(Error::FileShapeMismatch {
                    path: path.clone(),
                    reason: format!(
                        "sequence {} declares {} frames of {} joints for a {}-joint skeleton",
                        e.id,
                        e.frames,
                        e.joints,
                        m.skeleton.num_joints()
                    ),
                });
            }
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequencePair {
    pub id: String,
    pub pose2d: PoseSequence2D,
    pub pose3d: PoseSequence3D,
    pub root: Option<Tensor>,
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FixtureKind {
    Pose2d,
    Pose3d,
}

/// Single-file JSON form of a sequence: nested `[T][J][C]` arrays.
#[derive(Serialize, Deserialize)]
struct Fixture {
    kind: FixtureKind,
    data: Vec<Vec<Vec<f64>>>,
}

fn read_fixture(path: &Path) -> Result<Option<(FixtureKind, Tensor)>> {
    if path.extension().and_then(|e| e.to_str()) != Some("json") || !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if value.get("data").is_none() {
        // A tensor sidecar; the caller loads the binary pair.
        return Ok(None);
    }
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let fx: Fixture = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    let t = fx.data.len();
    let j = fx.data.first().map_or(0, Vec::len);
    let c = fx.data.first().and_then(|f| f.first()).map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(t * j * c);
    for frame in &fx.data {
        if frame.len() != j || frame.iter().any(|p| p.len() != c) {
            return Err(Error::FileShapeMismatch {
                path: path.to_path_buf(),
                reason: "ragged nested arrays".into(),
            });
        }
        frame.iter().for_each(|p| flat.extend_from_slice(p));
    }
    let tensor = Tensor::new(&[t, j, c], flat).map_err(|e| malformed(e.to_string()))?;
    Ok(Some((fx.kind, tensor)))
}

fn load_kind(path: &Path, want: FixtureKind) -> Result<Tensor> {
    match read_fixture(path)? {
        Some((kind, t)) => {
            if kind != want {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    reason: "fixture holds the other pose kind".into(),
                });
            }
            Ok(t)
        }
        None => load_tensor(path),
    }
}

fn shape_error(path: &Path, e: Error) -> Error {
    match e {
        Error::InvalidShape { shape, reason } => Error::FileShapeMismatch {
            path: path.to_path_buf(),
            reason: format!("{reason}, found {shape:?}"),
        },
        other => other,
    }
}

/// Load a 2D sequence from a tensor stem or a JSON fixture.
pub fn load_pose2d(path: &Path) -> Result<PoseSequence2D> {
    PoseSequence2D::new(load_kind(path, FixtureKind::Pose2d)?).map_err(|e| shape_error(path, e))
}

/// Load a 3D sequence from a tensor stem or a JSON fixture.
pub fn load_pose3d(path: &Path) -> Result<PoseSequence3D> {
    let data = load_kind(path, FixtureKind::Pose3d)?;
    let mut seq = PoseSequence3D::new(data, false).map_err(|e| shape_error(path, e))?;
    let frame = 3 * seq.joints();
    seq.root_relative = seq.data.data().chunks_exact(frame).all(|f| f[..3] == [0.0; 3]);
    Ok(seq)
}

pub fn load_root(path: &Path, frames: usize) -> Result<Tensor> {
    let t = load_tensor(path)?;
    if t.shape() != [frames, 3] {
        return Err(Error::FileShapeMismatch {
            path: path.to_path_buf(),
            reason: format!("root trajectory must be ({frames}, 3), found {:?}", t.shape()),
        });
    }
    Ok(t)
}

pub fn save_sequence<S: PoseSequence>(seq: &S, path: &Path) -> Result<()> {
    save_tensor(seq.data(), path)
}

fn to_nested(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let (j, c) = (t.shape()[1], t.shape()[2]);
    t.data()
        .chunks_exact(j * c)
        .map(|f| f.chunks_exact(c).map(<[f64]>::to_vec).collect())
        .collect()
}

/// Write a sequence as a single JSON fixture file.
pub fn save_fixture<S: PoseSequence>(seq: &S, path: &Path) -> Result<()> {
    let fx = Fixture {
        kind: if S::IS_3D { FixtureKind::Pose3d } else { FixtureKind::Pose2d },
        data: to_nested(seq.data()),
    };
    let text = serde_json::to_string(&fx).expect("fixture serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One training or evaluation clip.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub sequence: usize,
    pub offset: usize,
    /// `(T, J, C_in)` keypoints.
    pub input: Tensor,
    /// `(T, J, 3)` root-relative joints in millimetres.
    pub target: Tensor,
    pub valid_frames: usize,
    pub padded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub sequences: Vec<SequencePair>,
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

impl Dataset {
    /// Load every sequence listed in `dir/manifest.json`, validating shapes
    /// and reprojection.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(dir)?;
        let mut sequences = Vec::with_capacity(manifest.sequences.len());
        for e in &manifest.sequences {
            let p2 = dir.join(&e.pose2d);
            let p3 = dir.join(&e.pose3d);
            let pose2d = load_pose2d(&p2)?;
            let pose3d = load_pose3d(&p3)?;
            for (path, shape) in [(&p2, pose2d.data.shape()), (&p3, pose3d.data.shape())] {
                if shape[0] != e.frames || shape[1] != e.joints {
                    return Err(Error::FileShapeMismatch {
                        path: path.clone(),
                        reason: format!(
                            "manifest declares ({}, {}), file holds {:?}",
                            e.frames, e.joints, shape
                        ),
                    });
                }
            }
            let root = match &e.root {
                Some(stem) => Some(load_root(&dir.join(stem), e.frames)?),
                None => None,
            };
            let pair = SequencePair {
                id: e.id.clone(),
                pose2d,
                pose3d,
                root,
            };
            if let Some(camera) = &manifest.camera {
                check_reprojection(&pair, camera).map_err(|reason| Error::Malformed {
                    path: p2.clone(),
                    reason,
                })?;
            }
            sequences.push(pair);
        }
        Ok(Dataset { manifest, sequences })
    }

    pub fn from_pairs(skeleton: Skeleton, split: Split, sequences: Vec<SequencePair>) -> Self {
        let manifest = DatasetManifest {
            version: DatasetManifest::VERSION,
            skeleton,
            split,
            camera: None,
            sequences: sequences
                .iter()
                .map(|s| SequenceEntry {
                    id: s.id.clone(),
                    pose2d: String::new(),
                    pose3d: String::new(),
                    root: None,
                    frames: s.pose2d.frames(),
                    joints: s.pose2d.joints(),
                })
                .collect(),
        };
        Dataset { manifest, sequences }
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.manifest.skeleton
    }

    /// All clips of `frames` frames taken every `stride` frames.
    pub fn windows(&self, frames: usize, stride: usize) -> Result<Vec<WindowPair>> {
        let mut out = Vec::new();
        for (i, s) in self.sequences.iter().enumerate() {
            let xs = window_split(&s.pose2d, frames, stride)?;
            let ys = window_split(&s.pose3d, frames, stride)?;
            for (x, y) in xs.into_iter().zip(ys) {
                out.push(WindowPair {
                    sequence: i,
                    offset: x.offset,
                    input: x.seq.data,
                    target: y.seq.data,
                    valid_frames: x.valid_frames,
                    padded: x.padded,
                });
            }
        }
        Ok(out)
    }
}

/// Re-project the stored 3D joints (plus root trajectory) and compare with
/// the stored keypoints.
pub fn check_reprojection(pair: &SequencePair, camera: &Camera) -> std::result::Result<(), String> {
    let Some(root) = &pair.root else {
        return Ok(());
    };
    let (t_n, j_n) = (pair.pose3d.frames(), pair.pose3d.joints());
    let c_in = pair.pose2d.channels();
    let p3 = pair.pose3d.data.data();
    let p2 = pair.pose2d.data.data();
    for t in 0..t_n {
        let r = &root.data()[3 * t..3 * t + 3];
        for j in 0..j_n {
            let q = &p3[(t * j_n + j) * 3..(t * j_n + j) * 3 + 3];
            let uv = project(camera, [q[0] + r[0], q[1] + r[1], q[2] + r[2]]);
            let got = &p2[(t * j_n + j) * c_in..(t * j_n + j) * c_in + 2];
            let err = max_abs(&uv, got);
            if !(err <= REPROJECTION_TOL) {
                return Err(format!(
                    "keypoint of joint {j} in frame {t} is {err:e} from the projected 3D joint"
                ));
            }
        }
    }
    Ok(())
}
