use serde::{Deserialize, Serialize};

use super::svd::{det, mat_mul, mat_vec, svd_3x3, Mat3, Vec3, IDENTITY};
use crate::error::{Error, Result};

/// `x ↦ scale · rotation · x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: Mat3,
    pub scale: f64,
    pub translation: Vec3,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            rotation: IDENTITY,
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, x);
        [0, 1, 2].map(|i| self.scale * r[i] + self.translation[i])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// Rotation, uniform scale and translation.
    #[default]
    Similarity,
    /// Rotation and translation only.
    Rigid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub transform: SimilarityTransform,
    pub aligned: Vec<Vec3>,
    /// The source points span fewer than two dimensions, so only the
    /// centroids were matched.
    pub degenerate: bool,
}

// Relative to the largest eigenvalue of the source scatter matrix.
const RANK_TOL: f64 = 1e-14;

fn centroid(points: &[Vec3]) -> Vec3 {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for i in 0..3 {
            c[i] += p[i];
        }
    }
    c.map(|v| v / n)
}

/// Least-squares similarity transform taking `source` onto `target`
/// (Umeyama), with a sign correction so the rotation is never a reflection.
pub fn procrustes_align(source: &[Vec3], target: &[Vec3], mode: AlignMode) -> Result<Alignment> {
    if source.len() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "procrustes_align",
            lhs: vec![source.len(), 3],
            rhs: vec![target.len(), 3],
        });
    }
    if source.len() < 3 {
        return Err(Error::InvalidShape {
            shape: vec![source.len(), 3],
            reason: "procrustes alignment needs at least 3 points".into(),
        });
    }
    let n = source.len() as f64;
    let (mx, my) = (centroid(source), centroid(target));
    let mut cov = [[0.0; 3]; 3];
    let mut var_x = 0.0;
    for (x, y) in source.iter().zip(target) {
        let xc = [0, 1, 2].map(|i| x[i] - mx[i]);
        let yc = [0, 1, 2].map(|i| y[i] - my[i]);
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += yc[i] * xc[j] / n;
            }
        }
        var_x += (xc[0] * xc[0] + xc[1] * xc[1] + xc[2] * xc[2]) / n;
    }

    let svd = svd_3x3(&cov);
    let scatter = svd_3x3(&source_scatter(source, &mx)).sigma;
    let degenerate = var_x == 0.0 || scatter[1] <= RANK_TOL * scatter[0] || svd.sigma[0] == 0.0;
    let transform = if degenerate {
        SimilarityTransform {
            rotation: IDENTITY,
            scale: 1.0,
            translation: [0, 1, 2].map(|i| my[i] - mx[i]),
        }
    } else {
        let vt = super::svd::transpose(&svd.v);
        let sign = if det(&svd.u) * det(&svd.v) < 0.0 { -1.0 } else { 1.0 };
        let mut us = svd.u;
        for row in us.iter_mut() {
            row[2] *= sign;
        }
        let rotation = mat_mul(&us, &vt);
        let scale = match mode {
            AlignMode::Similarity => {
                (svd.sigma[0] + svd.sigma[1] + sign * svd.sigma[2]) / var_x
            }
            AlignMode::Rigid => 1.0,
        };
        let rmx = mat_vec(&rotation, &mx);
        SimilarityTransform {
            rotation,
            scale,
            translation: [0, 1, 2].map(|i| my[i] - scale * rmx[i]),
        }
    };
    let aligned = source.iter().map(|x| transform.apply(x)).collect();
    Ok(Alignment {
        transform,
        aligned,
        degenerate,
    })
}

fn source_scatter(source: &[Vec3], mean: &Vec3) -> Mat3 {
    let mut s = [[0.0; 3]; 3];
    for x in source {
        let xc = [0, 1, 2].map(|i| x[i] - mean[i]);
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += xc[i] * xc[j];
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::super::svd::transpose;
    use super::*;
    use crate::tensor::Rng;

    fn random_points(rng: &mut Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| [rng.gaussian(1.0), rng.gaussian(1.0), rng.gaussian(1.0)].map(|v| 100.0 * v))
            .collect()
    }

    pub(crate) fn random_rotation(rng: &mut Rng) -> Mat3 {
        let q = [rng.gaussian(1.0), rng.gaussian(1.0), rng.gaussian(1.0), rng.gaussian(1.0)];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|v| v / n);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    fn sse(t: &SimilarityTransform, src: &[Vec3], dst: &[Vec3]) -> f64 {
        src.iter()
            .zip(dst)
            .map(|(x, y)| {
                let a = t.apply(x);
                (0..3).map(|i| (a[i] - y[i]).powi(2)).sum::<f64>()
            })
            .sum()
    }

    fn max_err(a: &[Vec3], b: &[Vec3]) -> f64 {
        a.iter()
            .zip(b)
            .flat_map(|(p, q)| (0..3).map(move |i| (p[i] - q[i]).abs()))
            .fold(0.0, f64::max)
    }

    fn assert_proper_rotation(r: &Mat3) {
        let rtr = mat_mul(&transpose(r), r);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((rtr[i][j] - e).abs() < 1e-9);
            }
        }
        assert!((det(r) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_rigid_motion() {
        let mut rng = Rng::new(1);
        for _ in 0..50 {
            let y = random_points(&mut rng, 17);
            let r0 = random_rotation(&mut rng);
            let t0 = [rng.gaussian(1.0), rng.gaussian(1.0), rng.gaussian(1.0)].map(|v| 500.0 * v);
            let yh: Vec<Vec3> = y
                .iter()
                .map(|p| {
                    let r = mat_vec(&r0, p);
                    [0, 1, 2].map(|i| r[i] + t0[i])
                })
                .collect();
            let a = procrustes_align(&yh, &y, AlignMode::Similarity).unwrap();
            assert!(!a.degenerate);
            assert!(max_err(&a.aligned, &y) < 1e-9);
            assert!((a.transform.scale - 1.0).abs() < 1e-12);
            assert_proper_rotation(&a.transform.rotation);
        }
    }

    #[test]
    fn recovers_scale() {
        let mut rng = Rng::new(2);
        let y = random_points(&mut rng, 17);
        let yh: Vec<Vec3> = y.iter().map(|p| p.map(|v| 2.0 * v)).collect();
        let a = procrustes_align(&yh, &y, AlignMode::Similarity).unwrap();
        assert!((a.transform.scale - 0.5).abs() < 1e-12);
        assert!(max_err(&a.aligned, &y) < 1e-9);
        let r = procrustes_align(&yh, &y, AlignMode::Rigid).unwrap();
        assert_eq!(r.transform.scale, 1.0);
    }

    #[test]
    fn reflection_is_not_used() {
        let mut rng = Rng::new(3);
        let y = random_points(&mut rng, 10);
        let mirrored: Vec<Vec3> = y.iter().map(|p| [-p[0], p[1], p[2]]).collect();
        let a = procrustes_align(&mirrored, &y, AlignMode::Similarity).unwrap();
        assert_proper_rotation(&a.transform.rotation);
        assert!(a.transform.scale > 0.0);
    }

    #[test]
    fn beats_random_search() {
        let mut rng = Rng::new(4);
        for _ in 0..5 {
            let src = random_points(&mut rng, 17);
            let dst = random_points(&mut rng, 17);
            for mode in [AlignMode::Similarity, AlignMode::Rigid] {
                let best = procrustes_align(&src, &dst, mode).unwrap().transform;
                let best_sse = sse(&best, &src, &dst);
                for k in 0..1000 {
                    // Half the candidates are global samples, half are
                    // perturbations of the returned optimum.
                    let cand = if k % 2 == 0 {
                        SimilarityTransform {
                            rotation: random_rotation(&mut rng),
                            scale: if mode == AlignMode::Rigid { 1.0 } else { rng.uniform_range(0.01, 3.0) },
                            translation: [rng.gaussian(1.0), rng.gaussian(1.0), rng.gaussian(1.0)].map(|v| 100.0 * v),
                        }
                    } else {
                        let small = random_rotation(&mut rng);
                        let eps = 1e-3;
                        let mut r = IDENTITY;
                        for i in 0..3 {
                            for j in 0..3 {
                                r[i][j] = (1.0 - eps) * r[i][j] + eps * small[i][j];
                            }
                        }
                        let svd = svd_3x3(&r);
                        let r = mat_mul(&svd.u, &transpose(&svd.v));
                        SimilarityTransform {
                            rotation: mat_mul(&r, &best.rotation),
                            scale: if mode == AlignMode::Rigid {
                                1.0
                            } else {
                                best.scale * (1.0 + 0.01 * rng.gaussian(1.0))
                            },
                            translation: best.translation.map(|v| v + rng.gaussian(1.0)),
                        }
                    };
                    assert!(sse(&cand, &src, &dst) >= best_sse - 1e-9 * best_sse);
                }
            }
        }
    }

    #[test]
    fn degenerate_sets_fall_back_to_translation() {
        let line: Vec<Vec3> = (0..5).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        let target: Vec<Vec3> = (0..5).map(|i| [0.0, i as f64, 1.0]).collect();
        let a = procrustes_align(&line, &target, AlignMode::Similarity).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.transform.rotation, IDENTITY);
        assert_eq!(a.transform.scale, 1.0);
        let same = vec![[1.0, 1.0, 1.0]; 4];
        assert!(procrustes_align(&same, &target[..4], AlignMode::Similarity).unwrap().degenerate);
        assert!(procrustes_align(&line[..2], &target[..2], AlignMode::Similarity).is_err());
        assert!(procrustes_align(&line, &target[..4], AlignMode::Similarity).is_err());
    }
}
