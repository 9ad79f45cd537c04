//! Dense symmetric eigendecomposition by cyclic Jacobi rotations.

use ndarray::Array2;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in descending order and the matching unit eigenvectors as
/// the columns of the returned matrix.
///
/// The input must be square and symmetric; only symmetry up to rounding is
/// assumed, the strict lower triangle is never trusted over the upper one.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            m[[i, j]] = m[[j, i]];
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let frob = m.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| m[[p, q]] * m[[p, q]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * frob || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * kp - s * kq;
                    m[[k, q]] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * pk - s * qk;
                    m[[q, k]] = s * pk + c * qk;
                }
                for k in 0..n {
                    let (kp, kq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * kp - s * kq;
                    v[[k, q]] = s * kp + c * kq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].total_cmp(&m[[i, i]]));
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let a = Array2::from_diag(&ndarray::arr1(&[1.0, 3.0, 2.0]));
        let (vals, vecs) = symmetric_eigen(&a);
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        assert_eq!(vecs[[1, 0]].abs(), 1.0);
    }

    #[test]
    fn reconstructs_input() {
        let a = ndarray::arr2(&[[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 1.0]]);
        let (vals, vecs) = symmetric_eigen(&a);
        let lambda = Array2::from_diag(&ndarray::Array1::from(vals.clone()));
        let back = vecs.dot(&lambda).dot(&vecs.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let gram = vecs.t().dot(&vecs);
        for ((i, j), g) in gram.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((g - want).abs() < 1e-12);
        }
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn empty_and_scalar() {
        let (vals, _) = symmetric_eigen(&Array2::zeros((0, 0)));
        assert!(vals.is_empty());
        let (vals, vecs) = symmetric_eigen(&ndarray::arr2(&[[5.0]]));
        assert_eq!(vals, vec![5.0]);
        assert_eq!(vecs[[0, 0]], 1.0);
    }
}
