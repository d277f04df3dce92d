//! Sinkhorn-Knopp projection onto (an approximation of) the Birkhoff polytope.
//!
//! This is the plain numeric path used by analysis and tests; the training
//! path unrolls the same iteration through the autodiff tape, and a test pins
//! the two bitwise against each other.

use crate::error::{MhcError, Result};
use crate::linalg::tensor::Tensor;

/// Batch of n x n matrices driven toward doubly stochastic. `max_deviation`
/// is the worst |row sum - 1| / |col sum - 1| over the whole batch at exit.
#[derive(Clone, Debug)]
pub struct DoublyStochasticBatch {
    /// [B, n, n]
    pub mats: Tensor,
    pub iterations: usize,
    pub max_deviation: f64,
}

/// Clamp bound on pre-exponential entries, in units of tau: exp(+-30) stays
/// comfortably inside double range even after products.
pub const CLAMP_IN_TAU_UNITS: f64 = 30.0;

fn as_batch(h: &Tensor) -> Result<(usize, usize)> {
    match h.shape() {
        &[n, m] => {
            if n != m {
                return Err(MhcError::shape("sinkhorn_project", format!("non-square {n}x{m}")));
            }
            Ok((1, n))
        }
        &[b, n, m] => {
            if n != m {
                return Err(MhcError::shape("sinkhorn_project", format!("non-square {n}x{m}")));
            }
            Ok((b, n))
        }
        s => Err(MhcError::shape("sinkhorn_project", format!("rank {} input", s.len()))),
    }
}

/// Project a batch of square matrices: M0 = exp(clamp(h)/tau), then T rounds
/// of row normalization followed by column normalization, ending on columns so
/// column sums are exact and rows carry the residual.
pub fn sinkhorn_project(h_hat: &Tensor, t_iters: usize, tau: f64) -> Result<DoublyStochasticBatch> {
    if tau <= 0.0 {
        return Err(MhcError::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if t_iters < 1 {
        return Err(MhcError::InvalidArgument("sinkhorn needs T >= 1".into()));
    }
    let (b, n) = as_batch(h_hat)?;
    let bound = CLAMP_IN_TAU_UNITS * tau;
    let mut data: Vec<f64> =
        h_hat.data().iter().map(|&v| (v.clamp(-bound, bound) / tau).exp()).collect();
    for mat in data.chunks_mut(n * n) {
        for _ in 0..t_iters {
            row_normalize(mat, n);
            col_normalize(mat, n);
        }
    }
    let mats = Tensor::new(vec![b, n, n], data)?;
    let max_deviation = marginal_deviation(&mats)?;
    Ok(DoublyStochasticBatch { mats, iterations: t_iters, max_deviation })
}

pub fn row_normalize(mat: &mut [f64], n: usize) {
    for r in 0..n {
        let row = &mut mat[r * n..(r + 1) * n];
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
    }
}

pub fn col_normalize(mat: &mut [f64], n: usize) {
    for c in 0..n {
        let mut s = 0.0;
        for r in 0..n {
            s += mat[r * n + c];
        }
        if s > 0.0 {
            for r in 0..n {
                mat[r * n + c] /= s;
            }
        }
    }
}

/// Worst |marginal - 1| over rows and columns of every matrix in the batch.
pub fn marginal_deviation(mats: &Tensor) -> Result<f64> {
    let (b, n) = as_batch(mats)?;
    let mut worst: f64 = 0.0;
    for k in 0..b {
        let mat = &mats.data()[k * n * n..(k + 1) * n * n];
        for r in 0..n {
            let s: f64 = mat[r * n..(r + 1) * n].iter().sum();
            worst = worst.max((s - 1.0).abs());
        }
        for c in 0..n {
            let mut s = 0.0;
            for r in 0..n {
                s += mat[r * n + c];
            }
            worst = worst.max((s - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Frobenius distance to the identity, one value per batch entry. This is the
/// epsilon that the over-smoothing bound tracks.
pub fn identity_deviation(batch: &Tensor) -> Result<Vec<f64>> {
    let (b, n) = as_batch(batch)?;
    let mut out = Vec::with_capacity(b);
    for k in 0..b {
        let mat = &batch.data()[k * n * n..(k + 1) * n * n];
        let mut acc = 0.0;
        for r in 0..n {
            for c in 0..n {
                let d = mat[r * n + c] - if r == c { 1.0 } else { 0.0 };
                acc += d * d;
            }
        }
        out.push(acc.sqrt());
    }
    Ok(out)
}

/// Deviation of the product a*b from doubly stochastic; closure check for the
/// multi-layer composition.
pub fn product_closure_check(a: &Tensor, b: &Tensor) -> Result<f64> {
    let prod = crate::linalg::tensor::matmul(a, b)?;
    let (n, _) = prod.dims2()?;
    marginal_deviation(&prod.reshape(vec![1, n, n])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rng::Rng;

    #[test]
    fn zeros_give_uniform_exactly() {
        let h = Tensor::zeros(&[2, 2]);
        let b = sinkhorn_project(&h, 10, 0.1).unwrap();
        assert_eq!(b.mats.data(), &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(b.max_deviation, 0.0);
    }

    #[test]
    fn doubly_stochastic_start_is_fixed_point() {
        // h/tau = ln of a doubly stochastic matrix => M0 already in the polytope
        let tau = 1.0;
        let m = [0.25, 0.75, 0.75, 0.25];
        let h = Tensor::new(vec![2, 2], m.iter().map(|v: &f64| v.ln()).collect()).unwrap();
        let b = sinkhorn_project(&h, 10, tau).unwrap();
        for (got, want) in b.mats.data().iter().zip(m.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_iteration_example() {
        // exp(h/tau) = [[2,1],[1,2]]: row normalization gives [[2/3,1/3],[1/3,2/3]],
        // column sums are already 1, and further iterations keep it fixed.
        let tau = 1.0;
        let h = Tensor::new(vec![2, 2], vec![2.0f64.ln(), 0.0, 0.0, 2.0f64.ln()]).unwrap();
        for t in [1usize, 3, 10] {
            let b = sinkhorn_project(&h, t, tau).unwrap();
            let want = [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
            for (got, want) in b.mats.data().iter().zip(want.iter()) {
                assert!((got - want).abs() < 1e-12, "T={t}");
            }
        }
    }

    #[test]
    fn identity_deviation_hand_values() {
        assert_eq!(identity_deviation(&Tensor::eye(2)).unwrap(), vec![0.0]);
        let uniform2 = Tensor::full(&[2, 2], 0.5);
        assert!((identity_deviation(&uniform2).unwrap()[0] - 1.0).abs() < 1e-15);
        let uniform4 = Tensor::full(&[4, 4], 0.25);
        // sqrt(4*(0.75)^2 + 12*(0.25)^2) = sqrt(3)
        assert!((identity_deviation(&uniform4).unwrap()[0] - 3.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn product_closure_trivial_cases() {
        let i = Tensor::eye(3);
        assert_eq!(product_closure_check(&i, &i).unwrap(), 0.0);
        // permutation matrices are Birkhoff vertices
        let p = Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(product_closure_check(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn monotone_convergence_in_t() {
        let mut rng = Rng::new(8);
        for _ in 0..20 {
            let n = 2 + rng.below(5) as usize;
            let h = Tensor::new(vec![n, n], (0..n * n).map(|_| rng.normal()).collect()).unwrap();
            let mut prev = f64::INFINITY;
            for t in 1..=12 {
                let dev = sinkhorn_project(&h, t, 0.1).unwrap().max_deviation;
                assert!(dev <= prev + 1e-12, "deviation increased at T={t}: {dev} > {prev}");
                prev = dev;
            }
        }
    }

    #[test]
    fn mean_conservation_of_h_times_x() {
        // doubly stochastic H preserves the column mean of x
        let mut rng = Rng::new(9);
        for _ in 0..50 {
            let n = 2 + rng.below(7) as usize;
            let d = 1 + rng.below(6) as usize;
            let h = Tensor::new(vec![n, n], (0..n * n).map(|_| rng.normal() * 2.0).collect()).unwrap();
            let out = sinkhorn_project(&h, 10, 0.1).unwrap();
            let hm = out.mats.reshape(vec![n, n]).unwrap();
            let x = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap();
            let hx = crate::linalg::tensor::matmul(&hm, &x).unwrap();
            let norm = x.frobenius_norm();
            for j in 0..d {
                let m1: f64 = (0..n).map(|s| x.get2(s, j)).sum::<f64>() / n as f64;
                let m2: f64 = (0..n).map(|s| hx.get2(s, j)).sum::<f64>() / n as f64;
                assert!((m1 - m2).abs() <= 1e-6 * norm.max(1.0), "mean drift {}", (m1 - m2).abs());
            }
        }
    }

    #[test]
    fn diversity_bound_in_small_epsilon_regime() {
        // Var_stream(Hx) >= (1 - 2 eps) Var_stream(x) when ||H - I||_F = eps <= 0.1.
        // The bound assumes H is doubly stochastic. Near-identity matrices sit
        // close to a Birkhoff vertex where Sinkhorn contracts slowly, so the
        // test iterates far past T=10: at T=10 the leftover row-sum residual
        // times ||mean(x)|| can eat the whole 1e-6 slack.
        let mut rng = Rng::new(10);
        let mut tested = 0;
        for _ in 0..200 {
            let n = 2 + rng.below(4) as usize;
            let d = 1 + rng.below(5) as usize;
            // near-identity logits give small epsilon
            let mut h = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for j in 0..n {
                    h.set2(i, j, if i == j { 0.6 } else { 0.0 } + 0.01 * rng.normal());
                }
            }
            let out = sinkhorn_project(&h, 4000, 0.1).unwrap();
            if out.max_deviation > 1e-10 {
                continue;
            }
            let eps = identity_deviation(&out.mats).unwrap()[0];
            if eps > 0.1 {
                continue;
            }
            tested += 1;
            let hm = out.mats.reshape(vec![n, n]).unwrap();
            let x = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap();
            let hx = crate::linalg::tensor::matmul(&hm, &x).unwrap();
            let var = stream_variance(&x);
            let var_mixed = stream_variance(&hx);
            assert!(
                var_mixed >= (1.0 - 2.0 * eps - 1e-6) * var,
                "diversity bound violated: {var_mixed} < (1-2*{eps}) * {var}"
            );
        }
        assert!(tested > 40, "only {tested} cases landed in the small-eps regime");
    }

    fn stream_variance(x: &Tensor) -> f64 {
        let (n, d) = x.dims2().unwrap();
        let mut mean = vec![0.0; d];
        for s in 0..n {
            for j in 0..d {
                mean[j] += x.get2(s, j) / n as f64;
            }
        }
        let mut acc = 0.0;
        for s in 0..n {
            for j in 0..d {
                let dv = x.get2(s, j) - mean[j];
                acc += dv * dv;
            }
        }
        acc / n as f64
    }
}
