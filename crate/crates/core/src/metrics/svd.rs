pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

const MAX_SWEEPS: usize = 64;
// Squared norm below which a scaled column is treated as exactly zero.
const NEGLIGIBLE: f64 = 1e-200;

/// Singular value decomposition `a = u · diag(sigma) · vᵀ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Svd3 {
    pub u: Mat3,
    /// Nonincreasing and nonnegative.
    pub sigma: Vec3,
    pub v: Mat3,
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub fn mat_vec(a: &Mat3, x: &Vec3) -> Vec3 {
    [0, 1, 2].map(|i| a[i][0] * x[0] + a[i][1] * x[1] + a[i][2] * x[2])
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalized(a: Vec3) -> Option<Vec3> {
    let n = dot(&a, &a).sqrt();
    (n > 0.0 && n.is_finite()).then(|| a.map(|v| v / n))
}

fn column(a: &Mat3, j: usize) -> Vec3 {
    [a[0][j], a[1][j], a[2][j]]
}

fn from_columns(cols: [Vec3; 3]) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..3 {
            out[i][j] = c[i];
        }
    }
    out
}

/// Any unit vector orthogonal to `u`.
fn orthogonal_to(u: &Vec3) -> Vec3 {
    let axis = (0..3)
        .min_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()))
        .unwrap_or(0);
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    normalized(cross(u, &e)).unwrap_or([1.0, 0.0, 0.0])
}

/// Sum of squared pairwise column inner products, relative to the column
/// norms.
fn off_diagonal(w: &[Vec3; 3]) -> f64 {
    let mut off = 0.0;
    for (p, q) in [(0, 1), (0, 2), (1, 2)] {
        let (a, b) = (dot(&w[p], &w[p]), dot(&w[q], &w[q]));
        if a > NEGLIGIBLE && b > NEGLIGIBLE {
            off += dot(&w[p], &w[q]).powi(2) / (a * b);
        }
    }
    off.sqrt()
}

/// Cyclic one-sided Jacobi: plane rotations are applied to the columns of
/// `a` until they are mutually orthogonal, which diagonalises `aᵀa`
/// implicitly. `u` is recovered from the normalised columns.
pub fn svd_3x3(a: &Mat3) -> Svd3 {
    // Work on a copy scaled to unit max-norm so squared column norms never
    // underflow.
    let scale = a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let inv = if scale > 0.0 && scale.is_finite() { 1.0 / scale } else { 1.0 };
    let mut w = [0, 1, 2].map(|j| column(a, j).map(|x| x * inv));
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let alpha = dot(&w[p], &w[p]);
            let beta = dot(&w[q], &w[q]);
            let gamma = dot(&w[p], &w[q]);
            if alpha <= NEGLIGIBLE
                || beta <= NEGLIGIBLE
                || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt()
            {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for cols in [&mut w, &mut v] {
                for i in 0..3 {
                    let (x, y) = (cols[p][i], cols[q][i]);
                    cols[p][i] = c * x - s * y;
                    cols[q][i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    debug_assert!(off_diagonal(&w) < 1e-12 || !scale.is_finite());

    let mut order = [0, 1, 2];
    let norms = w.map(|c| dot(&c, &c).sqrt() * scale);
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let w = order.map(|i| w[i]);
    let v = order.map(|i| v[i]);
    let sigma = order.map(|i| norms[i]);

    let u0 = normalized(w[0]).unwrap_or([1.0, 0.0, 0.0]);
    let w1 = w[1];
    let proj = dot(&u0, &w1);
    let u1 = normalized([0, 1, 2].map(|i| w1[i] - proj * u0[i])).unwrap_or_else(|| orthogonal_to(&u0));
    let mut u2 = cross(&u0, &u1);
    if dot(&u2, &w[2]) < 0.0 {
        u2 = u2.map(|x| -x);
    }
    Svd3 {
        u: from_columns([u0, u1, u2]),
        sigma,
        v: from_columns(v),
    }
}

impl Svd3 {
    pub fn reconstruct(&self) -> Mat3 {
        let mut us = self.u;
        for row in us.iter_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x *= self.sigma[j];
            }
        }
        mat_mul(&us, &transpose(&self.v))
    }
}
