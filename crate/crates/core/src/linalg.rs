//! Small dense helpers.

/// Inverts the complex matrix `r + j x` through its real 2k x 2k embedding.
/// Returns `(g, b)` with `g + j b = (r + j x)^-1`, or `None` when singular.
pub fn complex_inverse(r: &[Vec<f64>], x: &[Vec<f64>]) -> Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let k = r.len();
    if x.len() != k || r.iter().chain(x).any(|row| row.len() != k) {
        return None;
    }
    // [ r -x ; x r ] represents multiplication by r + jx.
    let n = 2 * k;
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..k {
        for j in 0..k {
            a[i][j] = r[i][j];
            a[i][j + k] = -x[i][j];
            a[i + k][j] = x[i][j];
            a[i + k][j + k] = r[i][j];
        }
    }
    let inv = dense_inverse(a)?;
    let g = (0..k).map(|i| inv[i][..k].to_vec()).collect();
    let b = (0..k).map(|i| inv[i + k][..k].to_vec()).collect();
    Some((g, b))
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn dense_inverse(mut a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..n {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[i][col];
                if f != 0.0 {
                    for j in 0..n {
                        a[i][j] -= f * a[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Some(inv)
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_inverse_of_scalar() {
        // 1 / (3 + 4j) = (3 - 4j) / 25
        let (g, b) = complex_inverse(&[vec![3.0]], &[vec![4.0]]).unwrap();
        assert!((g[0][0] - 0.12).abs() < 1e-15);
        assert!((b[0][0] + 0.16).abs() < 1e-15);
    }

    #[test]
    fn complex_inverse_is_symmetric_for_symmetric_input() {
        let r = vec![
            vec![0.4576, 0.1560, 0.1535],
            vec![0.1560, 0.4666, 0.1580],
            vec![0.1535, 0.1580, 0.4615],
        ];
        let x = vec![
            vec![1.0780, 0.5017, 0.3849],
            vec![0.5017, 1.0482, 0.4236],
            vec![0.3849, 0.4236, 1.0651],
        ];
        let (g, b) = complex_inverse(&r, &x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[i][j] - g[j][i]).abs() < 1e-12);
                assert!((b[i][j] - b[j][i]).abs() < 1e-12);
            }
        }
        // (r + jx)(g + jb) = I
        for i in 0..3 {
            for j in 0..3 {
                let re: f64 = (0..3).map(|k| r[i][k] * g[k][j] - x[i][k] * b[k][j]).sum();
                let im: f64 = (0..3).map(|k| r[i][k] * b[k][j] + x[i][k] * g[k][j]).sum();
                assert!((re - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                assert!(im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_is_none() {
        assert!(dense_inverse(vec![vec![1.0, 2.0], vec![2.0, 4.0]]).is_none());
    }
}
