use std::fs;
use std::path::Path;

use super::synth::rest_pose;
use super::*;
use crate::tensor::io::tensor_paths;
use crate::tensor::{Distribution, Rng};

fn h36m() -> Skeleton {
    default_h36m17_skeleton()
}

fn small_set(seed: u64, n: usize, frames: usize) -> Vec<SequencePair> {
    synth_pairs(&mut Rng::new(seed), n, frames, &h36m(), &MotionParams::default()).unwrap()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn synth_is_deterministic() {
    assert_eq!(small_set(7, 3, 20), small_set(7, 3, 20));
    assert_ne!(small_set(7, 3, 20), small_set(8, 3, 20));
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        synth_generate(d.path(), &mut Rng::new(3), 2, 12, &h36m(), &MotionParams::default(), Split::Train)
            .unwrap();
    }
    let ca = dir_contents(a.path());
    assert_eq!(ca.len(), 1 + 2 * 3 * 2);
    assert_eq!(ca, dir_contents(b.path()));
}

#[test]
fn synth_rejects_bad_arguments() {
    let m = MotionParams::default();
    assert!(synth_pairs(&mut Rng::new(0), 1, 1, &h36m(), &m).is_err());
    assert!(synth_pairs(&mut Rng::new(0), 0, 5, &h36m(), &m).is_err());
    let loud = MotionParams {
        max_amplitude_mm: 150.0,
        ..m
    };
    assert!(synth_pairs(&mut Rng::new(0), 1, 5, &h36m(), &loud).is_err());
}

#[test]
fn principal_point_projects_to_origin() {
    let cam = Camera::default();
    assert_eq!(project(&cam, [0.0, 0.0, 4000.0]), [0.0, 0.0]);
    assert_eq!(project(&cam, [2000.0, -1000.0, 4000.0]), [1.0, -0.5]);
}

#[test]
fn synthetic_sequences_keep_bone_lengths_and_stay_in_frame() {
    let s = h36m();
    let rest = rest_pose(&s);
    for pair in small_set(11, 4, 60) {
        assert!(pair.pose3d.root_relative);
        let d = &pair.pose3d.data;
        for t in 0..60 {
            assert_eq!([d.get(&[t, 0, 0]), d.get(&[t, 0, 1]), d.get(&[t, 0, 2])], [0.0; 3]);
            for j in 1..17 {
                let p = s.parents[j] as usize;
                let len = |a: &dyn Fn(usize) -> f64| {
                    (0..3).map(|k| (a(k)).powi(2)).sum::<f64>().sqrt()
                };
                let got = len(&|k| d.get(&[t, j, k]) - d.get(&[t, p, k]));
                let want = len(&|k| rest[j][k] - rest[p][k]);
                assert!((got - want).abs() <= BONE_TOLERANCE * want);
                assert!((got - want).abs() < 1e-9);
            }
        }
        assert!(pair.pose2d.data.data().iter().all(|v| v.abs() <= 1.0));
        assert!(check_reprojection(&pair, &Camera::default()).is_ok());
    }
}

#[test]
fn flip_is_an_involution() {
    let s = h36m();
    for pair in small_set(2, 2, 15) {
        let f2 = horizontal_flip(&pair.pose2d, &s).unwrap();
        assert_ne!(f2, pair.pose2d);
        assert_eq!(horizontal_flip(&f2, &s).unwrap(), pair.pose2d);
        let f3 = horizontal_flip(&pair.pose3d, &s).unwrap();
        assert_eq!(horizontal_flip(&f3, &s).unwrap(), pair.pose3d);
    }
}

#[test]
fn flip_swaps_sides_and_negates_x() {
    let s = h36m();
    let pair = &small_set(4, 1, 5)[0];
    let f = horizontal_flip(&pair.pose3d, &s).unwrap();
    let (l_wrist, r_wrist) = (13, 16);
    for t in 0..5 {
        let src = &pair.pose3d.data;
        assert_eq!(f.data.get(&[t, l_wrist, 0]), -src.get(&[t, r_wrist, 0]));
        assert_eq!(f.data.get(&[t, l_wrist, 1]), src.get(&[t, r_wrist, 1]));
        assert_eq!(f.data.get(&[t, l_wrist, 2]), src.get(&[t, r_wrist, 2]));
        assert_eq!(f.data.get(&[t, 10, 0]), -src.get(&[t, 10, 0]));
    }
    // The flipped projection is the projection of the flipped joints.
    let root = pair.root.as_ref().unwrap();
    let mut mirrored_root = root.clone();
    for t in 0..5 {
        mirrored_root.set(&[t, 0], -root.get(&[t, 0]));
    }
    let flipped = SequencePair {
        id: "f".into(),
        pose2d: horizontal_flip(&pair.pose2d, &s).unwrap(),
        pose3d: f,
        root: Some(mirrored_root),
    };
    assert!(check_reprojection(&flipped, &Camera::default()).is_ok());
}

#[test]
fn symmetric_pose_is_a_fixed_point() {
    let s = h36m();
    let rest = rest_pose(&s);
    let data: Vec<f64> = rest.iter().flatten().copied().collect();
    let seq = PoseSequence3D::new(Tensor::new(&[1, 17, 3], data).unwrap(), true).unwrap();
    assert_eq!(horizontal_flip(&seq, &s).unwrap(), seq);
}

#[test]
fn flip_needs_pairs_and_matching_joints() {
    let names = vec!["a".to_string(), "b".to_string()];
    let s = Skeleton::new(names, vec![-1, 0], vec![], 0).unwrap();
    let seq = PoseSequence2D::new(Tensor::zeros(&[2, 2, 2])).unwrap();
    assert!(matches!(horizontal_flip(&seq, &s), Err(Error::MissingFlipPairs)));
    let seq = PoseSequence2D::new(Tensor::zeros(&[2, 5, 2])).unwrap();
    assert!(horizontal_flip(&seq, &h36m()).is_err());
}

#[test]
fn window_examples() {
    let seq = PoseSequence2D::new(
        Rng::new(1).sample(Distribution::Uniform { lo: -1.0, hi: 1.0 }, &[10, 3, 2]).unwrap(),
    )
    .unwrap();
    let one = window_split(&seq, 10, 3).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].seq, seq);
    assert!(!one[0].padded);

    let w = window_split(&seq, 4, 2).unwrap();
    assert_eq!(w.iter().map(|w| w.offset).collect::<Vec<_>>(), vec![0, 2, 4, 6]);
    assert!(w.iter().all(|w| !w.padded && w.seq.data.shape() == [4, 3, 2]));

    let w = window_split(&seq, 4, 3).unwrap();
    assert_eq!(w.iter().map(|w| (w.offset, w.padded)).collect::<Vec<_>>(), vec![(0, false), (3, false), (6, false)]);
    let w = window_split(&seq, 3, 2).unwrap();
    assert_eq!(w.len(), 5);
    let last = w.last().unwrap();
    assert_eq!((last.offset, last.padded, last.valid_frames), (8, true, 2));

    assert!(window_split(&seq, 11, 1).is_err());
    assert!(window_split(&seq, 4, 0).is_err());
}

#[test]
fn window_counts_match_enumeration() {
    for frames in 1..25 {
        for window in 1..=frames {
            for stride in 1..8 {
                // Enumerate the frames each window covers and count.
                let mut covered = vec![false; frames];
                let mut full = 0;
                let mut o = 0;
                while o + window <= frames {
                    covered[o..o + window].iter_mut().for_each(|c| *c = true);
                    full += 1;
                    o += stride;
                }
                let tail_uncovered = !covered[frames - 1];
                let padded = usize::from(tail_uncovered && o < frames);
                let seq = PoseSequence2D::new(Tensor::zeros(&[frames, 1, 2])).unwrap();
                let ws = window_split(&seq, window, stride).unwrap();
                assert_eq!(ws.len(), full + padded, "T={frames} W={window} s={stride}");
                assert_eq!(ws.iter().filter(|w| w.padded).count(), padded);
            }
        }
    }
}

#[test]
fn unflagged_windows_are_exact_slices_and_padding_repeats() {
    let seq = &small_set(5, 1, 23)[0].pose3d;
    let per = 17 * 3;
    for w in window_split(seq, 6, 4).unwrap() {
        assert_eq!(w.seq.data.shape(), &[6, 17, 3]);
        let src = seq.data.data();
        if !w.padded {
            assert_eq!(w.seq.data.data(), &src[w.offset * per..(w.offset + 6) * per]);
        } else {
            let v = w.valid_frames;
            assert_eq!(&w.seq.data.data()[..v * per], &src[w.offset * per..]);
            for t in v..6 {
                assert_eq!(&w.seq.data.data()[t * per..(t + 1) * per], &src[22 * per..]);
            }
        }
    }
}

#[test]
fn sequence_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let pair = &small_set(6, 1, 9)[0];
    save_sequence(&pair.pose2d, &dir.path().join("a")).unwrap();
    save_sequence(&pair.pose3d, &dir.path().join("b")).unwrap();
    let a = load_pose2d(&dir.path().join("a")).unwrap();
    let b = load_pose3d(&dir.path().join("b")).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.data), bits(&pair.pose2d.data));
    assert_eq!(bits(&b.data), bits(&pair.pose3d.data));
    assert!(b.root_relative);
}

#[test]
fn load_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("s");
    assert!(matches!(load_pose2d(&stem), Err(Error::MissingFile(_))));
    save_sequence(&PoseSequence2D::new(Tensor::zeros(&[4, 3, 2])).unwrap(), &stem).unwrap();
    let (json, _) = tensor_paths(&stem);
    fs::write(&json, r#"{"shape":[5,3,2],"dtype":"f64","order":"row-major"}"#).unwrap();
    assert!(matches!(load_pose2d(&stem), Err(Error::FileShapeMismatch { .. })));
    fs::write(&json, r#"{"shape":[4,3,2],"dtype":"f32","order":"row-major"}"#).unwrap();
    assert!(matches!(load_pose2d(&stem), Err(Error::DtypeMismatch { .. })));
    fs::write(&json, r#"{"shape":[4,6],"dtype":"f64","order":"row-major"}"#).unwrap();
    assert!(matches!(load_pose2d(&stem), Err(Error::FileShapeMismatch { .. })));
}

#[test]
fn json_fixture_matches_binary() {
    let dir = tempfile::tempdir().unwrap();
    let pair = &small_set(9, 1, 4)[0];
    save_sequence(&pair.pose3d, &dir.path().join("bin3")).unwrap();
    save_fixture(&pair.pose3d, &dir.path().join("fix3.json")).unwrap();
    save_fixture(&pair.pose2d, &dir.path().join("fix2.json")).unwrap();
    assert_eq!(
        load_pose3d(&dir.path().join("fix3.json")).unwrap(),
        load_pose3d(&dir.path().join("bin3")).unwrap()
    );
    assert_eq!(load_pose2d(&dir.path().join("fix2.json")).unwrap(), pair.pose2d);
    assert!(load_pose2d(&dir.path().join("fix3.json")).is_err());
    // A hand-written fixture.
    fs::write(dir.path().join("hand.json"), r#"{"kind":"pose2d","data":[[[0.5,-0.25],[0,1]]]}"#).unwrap();
    let hand = load_pose2d(&dir.path().join("hand.json")).unwrap();
    assert_eq!(hand.data, Tensor::new(&[1, 2, 2], vec![0.5, -0.25, 0.0, 1.0]).unwrap());
    fs::write(dir.path().join("ragged.json"), r#"{"kind":"pose2d","data":[[[0.5,-0.25],[0]]]}"#).unwrap();
    assert!(matches!(
        load_pose2d(&dir.path().join("ragged.json")),
        Err(Error::FileShapeMismatch { .. })
    ));
}

#[test]
fn dataset_load_validates_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_generate(dir.path(), &mut Rng::new(1), 3, 14, &h36m(), &MotionParams::default(), Split::Test)
        .unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    assert_eq!(ds.manifest, m);
    assert_eq!(ds.sequences, small_set(1, 3, 14));
    let ws = ds.windows(9, 3).unwrap();
    // Offsets 0 and 3 are full, 6 is padded.
    assert_eq!(ws.len(), 9);
    assert_eq!(ws.iter().filter(|w| w.padded).count(), 3);

    // A keypoint nudged off its projection is caught at load time.
    let stem = dir.path().join(&m.sequences[1].pose2d);
    let mut kp = load_pose2d(&stem).unwrap();
    let v = kp.data.get(&[3, 4, 1]);
    kp.data.set(&[3, 4, 1], v + 1e-6);
    save_sequence(&kp, &stem).unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(Error::Malformed { .. })));

    assert!(matches!(Dataset::load(&dir.path().join("nope")), Err(Error::MissingFile(_))));
}

#[test]
fn manifest_shape_declarations_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = synth_generate(dir.path(), &mut Rng::new(1), 1, 6, &h36m(), &MotionParams::default(), Split::Train)
        .unwrap();
    m.sequences[0].frames = 7;
    m.save(dir.path()).unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(Error::FileShapeMismatch { .. })));
    m.sequences[0].frames = 6;
    m.sequences[0].joints = 16;
    m.save(dir.path()).unwrap();
    assert!(matches!(DatasetManifest::load(dir.path()), Err(Error::FileShapeMismatch { .. })));
}
