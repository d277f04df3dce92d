//! Dense symmetric eigensolver (cyclic Jacobi).
//!
//! Reference implementation used by tests and harnesses as an independent
//! oracle for the power-iteration path. O(N^3) per sweep; fine for N <= ~200.
//! Never called from the engine's own numeric paths.

use crate::linalg::tensor::Tensor;

/// All eigenvalues of a symmetric matrix, unordered precision `off_tol` on the
/// final off-diagonal Frobenius norm.
pub fn symmetric_eigenvalues(mat: &Tensor, off_tol: f64) -> Vec<f64> {
    let (n, m) = mat.dims2().expect("dense_eig: rank-2 input");
    assert_eq!(n, m, "dense_eig: square input");
    let mut a: Vec<f64> = mat.data().to_vec();
    let idx = |i: usize, j: usize| i * n + j;
    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[idx(i, j)] * a[idx(i, j)];
            }
        }
        if (2.0 * off).sqrt() <= off_tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[idx(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                // tangent of the rotation angle, smaller root for stability
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[idx(i, i)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_returns_diagonal() {
        let m = Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let mut evs = symmetric_eigenvalues(&m, 1e-14);
        evs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((evs[0] - 3.0).abs() < 1e-12);
        assert!((evs[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_hand_case() {
        // [[0,1],[1,0]] has eigenvalues +1, -1
        let m = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut evs = symmetric_eigenvalues(&m, 1e-14);
        evs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((evs[0] - 1.0).abs() < 1e-12);
        assert!((evs[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_and_frobenius_are_preserved() {
        use crate::linalg::rng::Rng;
        let mut rng = Rng::new(5);
        let n = 12;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.normal();
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        let m = Tensor::new(vec![n, n], data).unwrap();
        let evs = symmetric_eigenvalues(&m, 1e-13);
        let trace: f64 = (0..n).map(|i| m.get2(i, i)).sum();
        assert!((evs.iter().sum::<f64>() - trace).abs() < 1e-9);
        let frob2: f64 = m.data().iter().map(|x| x * x).sum();
        let ev2: f64 = evs.iter().map(|x| x * x).sum();
        assert!((frob2 - ev2).abs() < 1e-8);
    }
}
