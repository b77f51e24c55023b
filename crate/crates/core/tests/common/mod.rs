//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

/// Rotation matrix of a rotation vector via the unit quaternion.
pub fn quat_rotation(theta: [f64; 3]) -> [[f64; 3]; 3] {
    let angle = (theta[0] * theta[0] + theta[1] * theta[1] + theta[2] * theta[2]).sqrt();
    if angle == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let s = (angle / 2.0).sin() / angle;
    let (w, x, y, z) = ((angle / 2.0).cos(), theta[0] * s, theta[1] * s, theta[2] * s);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Distorted projection of a target point with parameters laid out as
/// `fx, fy, u0, v0, theta(3), t(3), k1, k2, k3`.
pub fn project(p: &[f64], pw: (f64, f64)) -> (f64, f64) {
    let r = quat_rotation([p[4], p[5], p[6]]);
    let xc = r[0][0] * pw.0 + r[0][1] * pw.1 + p[7];
    let yc = r[1][0] * pw.0 + r[1][1] * pw.1 + p[8];
    let zc = r[2][0] * pw.0 + r[2][1] * pw.1 + p[9];
    let (xn, yn) = (xc / zc, yc / zc);
    let r2 = xn * xn + yn * yn;
    let d = 1.0 + p[10] * r2 + p[11] * r2 * r2 + p[12] * r2 * r2 * r2;
    (p[0] * xn * d + p[2], p[1] * yn * d + p[3])
}

/// Central-difference Jacobian of the stacked residuals `project - observed`.
pub fn fd_jacobian(p: &[f64], target: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let mut jac = vec![vec![0.0; p.len()]; 2 * target.len()];
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1e-2);
        let (mut a, mut b) = (p.to_vec(), p.to_vec());
        a[j] += h;
        b[j] -= h;
        for (i, &pw) in target.iter().enumerate() {
            let (pa, pb) = (project(&a, pw), project(&b, pw));
            jac[2 * i][j] = (pa.0 - pb.0) / (2.0 * h);
            jac[2 * i + 1][j] = (pa.1 - pb.1) / (2.0 * h);
        }
    }
    jac
}

/// Median of a list.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Solves the symmetric positive-definite system `a x = b` by Cholesky.
pub fn spd_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

/// First-order standard deviation of parameter `index` under i.i.d. image noise `sigma`,
/// from `sigma^2 (J^T J)^-1` of the noise-free problem. Columns are scaled to unit
/// norm before inversion for conditioning.
pub fn linearized_std(p: &[f64], target: &[(f64, f64)], sigma: f64, index: usize) -> f64 {
    let jac = fd_jacobian(p, target);
    let m = p.len();
    let norms: Vec<f64> = (0..m)
        .map(|j| jac.iter().map(|row| row[j] * row[j]).sum::<f64>().sqrt())
        .collect();
    let mut jtj = vec![vec![0.0; m]; m];
    for row in &jac {
        for a in 0..m {
            for b in 0..m {
                jtj[a][b] += row[a] / norms[a] * row[b] / norms[b];
            }
        }
    }
    let mut e = vec![0.0; m];
    e[index] = 1.0;
    let col = spd_solve(&jtj, &e);
    sigma * col[index].sqrt() / norms[index]
}
