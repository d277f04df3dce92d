//! Central finite-difference verification of tape gradients.

use crate::autodiff::tape::{Tape, Var};
use crate::error::{MhcError, Result};
use crate::linalg::tensor::Tensor;

/// Both-gradients-negligible threshold; below it elements are treated as zero
/// rather than fed into a relative error.
const NEGLIGIBLE: f64 = 1e-7;

/// Compare tape gradients of a deterministic scalar function against central
/// finite differences, elementwise over every parameter. Returns the worst
/// relative error.
///
/// `f` is called with a fresh tape and parameter leaves each evaluation, so it
/// must be a pure function of the parameter values.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> =
            values.iter().map(|t| tape.param(std::rc::Rc::new(t.clone()))).collect();
        let loss = f(&mut tape, &vars)?;
        if tape.value(loss).len() != 1 {
            return Err(MhcError::InvalidArgument("finite_difference_check needs a scalar".into()));
        }
        Ok(tape.value(loss).data()[0])
    };

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(std::rc::Rc::new(t.clone()))).collect();
    let loss = f(&mut tape, &vars)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for ei in 0..param.len() {
            let orig = param.data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[ei] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let fd = (up - down) / (2.0 * h);
            let ad = analytic[pi].data()[ei];
            if ad.abs() < NEGLIGIBLE && fd.abs() < NEGLIGIBLE {
                continue;
            }
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs());
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::{GraphSupport, SpmmKind};
    use crate::graphs::{normalize_adjacency, synth};
    use crate::linalg::Rng;
    use std::rc::Rc;

    fn randt(rng: &mut Rng, shape: &[usize]) -> Tensor {
        Tensor::new(shape.to_vec(), (0..shape.iter().product()).map(|_| rng.normal()).collect()).unwrap()
    }

    /// inputs kept away from relu/clamp kinks
    fn randt_off_kink(rng: &mut Rng, shape: &[usize]) -> Tensor {
        Tensor::new(
            shape.to_vec(),
            (0..shape.iter().product())
                .map(|_| {
                    let v = rng.normal();
                    v + 0.2 * v.signum()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn quadratic_form_is_machine_exact() {
        // loss = sum((x W) * x): gradient analytic, central differences exact
        // for quadratics up to roundoff
        let mut rng = Rng::new(1);
        let x = randt(&mut rng, &[3, 3]);
        let w = randt(&mut rng, &[3, 3]);
        let err = finite_difference_check(
            |t, vs| {
                let xw = t.matmul(vs[0], vs[1])?;
                let q = t.mul_elem(xw, vs[0])?;
                Ok(t.sum_all(q))
            },
            &[x, w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "quadratic form error {err}");
    }

    #[test]
    fn sigmoid_chain_depth_8() {
        // gradients decay like (1/4)^8 here; h = 1e-3 keeps the oracle's own
        // cancellation noise below the 1e-6 bar (at h = 1e-5 the subtraction
        // noise alone is ~1e-5 relative to such small gradients)
        let mut rng = Rng::new(2);
        let x = randt(&mut rng, &[4, 4]);
        let err = finite_difference_check(
            |t, vs| {
                let mut v = vs[0];
                for _ in 0..8 {
                    v = t.sigmoid(v);
                }
                Ok(t.sum_all(v))
            },
            &[x],
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-6, "sigmoid chain error {err}");
    }

    #[test]
    fn sigmoid_local_derivative_at_zero() {
        // sigma(0) = 0.5 with local derivative 0.25
        let mut tape = Tape::new();
        let x = tape.param(Rc::new(Tensor::scalar(0.0)));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).data()[0], 0.5);
        let loss = tape.sum_all(y);
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(grads.take(x).unwrap().data()[0], 0.25);
    }

    #[test]
    fn pass_through_identities() {
        // add with zeros and matmul with identity leave gradients untouched
        let mut tape = Tape::new();
        let x = tape.param(Rc::new(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()));
        let z = tape.constant(Tensor::zeros(&[2, 2]));
        let i = tape.constant(Tensor::eye(2));
        let a = tape.add(x, z).unwrap();
        let b = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(b), tape.value(x));
        let loss = tape.sum_all(b);
        let mut grads = tape.backward(loss).unwrap();
        assert!(grads.take(x).unwrap().approx_eq(&Tensor::full(&[2, 2], 1.0), 0.0));
    }

    #[test]
    fn backward_trivial_gradients() {
        // loss = sum(x) over R^3 gives ones; loss = x^2 at x=3 gives 6
        let mut tape = Tape::new();
        let x = tape.param(Rc::new(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()));
        let loss = tape.sum_all(x);
        let mut grads = tape.backward(loss).unwrap();
        assert!(grads.take(x).unwrap().approx_eq(&Tensor::full(&[3], 1.0), 0.0));

        let mut tape = Tape::new();
        let x = tape.param(Rc::new(Tensor::scalar(3.0)));
        let sq = tape.mul_elem(x, x).unwrap();
        let loss = tape.sum_all(sq);
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(grads.take(x).unwrap().data()[0], 6.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Rc::new(Tensor::zeros(&[2, 2])));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn elementwise_and_shape_ops() {
        let mut rng = Rng::new(3);
        for (name, f) in [
            ("sigmoid", 0usize),
            ("relu", 1),
            ("leaky", 2),
            ("elu", 3),
            ("exp", 4),
            ("clamp", 5),
            ("rms", 6),
            ("softmax", 7),
            ("scale_addconst", 8),
        ] {
            let x = randt_off_kink(&mut rng, &[3, 5]);
            let err = finite_difference_check(
                |t, vs| {
                    let v = match f {
                        0 => t.sigmoid(vs[0]),
                        1 => t.relu(vs[0]),
                        2 => t.leaky_relu(vs[0], 0.2),
                        3 => t.elu(vs[0], 1.0),
                        4 => t.exp(vs[0]),
                        5 => t.clamp(vs[0], -0.9, 0.9),
                        6 => t.rms_norm(vs[0], 1e-8),
                        7 => t.softmax_rows(vs[0]),
                        _ => {
                            let s = t.scale(vs[0], -1.7);
                            t.add_const(s, 0.3)
                        }
                    };
                    // mix with a second nonlinearity so upstream grads vary
                    let sq = t.mul_elem(v, v)?;
                    Ok(t.sum_all(sq))
                },
                &[x],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{name} error {err}");
        }
    }

    #[test]
    fn binary_and_batched_ops() {
        let mut rng = Rng::new(4);
        // add/sub/mul
        let a = randt(&mut rng, &[4, 3]);
        let b = randt(&mut rng, &[4, 3]);
        let err = finite_difference_check(
            |t, vs| {
                let s = t.add(vs[0], vs[1])?;
                let d = t.sub(s, vs[1])?;
                let m = t.mul_elem(d, vs[1])?;
                Ok(t.sum_all(m))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "add/sub/mul error {err}");

        // matmul + row bias + concat
        let x = randt(&mut rng, &[5, 4]);
        let w = randt(&mut rng, &[8, 3]);
        let bias = randt(&mut rng, &[1, 3]);
        let err = finite_difference_check(
            |t, vs| {
                let c = t.concat_cols(vs[0], vs[0])?;
                let y = t.matmul(c, vs[1])?;
                let y = t.add_row_bias(y, vs[2])?;
                let y = t.sigmoid(y);
                Ok(t.sum_all(y))
            },
            &[x, w, bias],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "matmul chain error {err}");

        // bmm + shared batch bias
        let a3 = randt(&mut rng, &[3, 2, 4]);
        let b3 = randt(&mut rng, &[3, 4, 2]);
        let sb = randt(&mut rng, &[2, 2]);
        let err = finite_difference_check(
            |t, vs| {
                let p = t.bmm(vs[0], vs[1])?;
                let p = t.add_shared_batch(p, vs[2])?;
                let p = t.sigmoid(p);
                Ok(t.sum_all(p))
            },
            &[a3, b3, sb],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "bmm error {err}");
    }

    #[test]
    fn stream_ops() {
        let mut rng = Rng::new(5);
        let x = randt(&mut rng, &[4, 3, 5]); // [B,n,d]
        let theta = randt(&mut rng, &[3, 5]);
        let w = randt(&mut rng, &[4, 3]);
        let f = randt(&mut rng, &[4, 5]);
        let flat = randt(&mut rng, &[4, 5]);
        let alpha = randt(&mut rng, &[1]);
        let err = finite_difference_check(
            |t, vs| {
                let scores = t.stream_scores(vs[0], vs[1])?; // [4,3,3]
                let scores = t.scale_by_param(scores, vs[5])?;
                let agg = t.weight_streams(vs[2], vs[0])?; // [4,5]
                let outer = t.outer_streams(vs[2], vs[3])?; // [4,3,5]
                let rep = t.replicate_streams(vs[4], 3)?; // [4,3,5]
                let sum1 = t.add(outer, rep)?;
                let mean = t.mean_streams(sum1)?; // [4,5]
                let mix = t.add(agg, mean)?;
                let s1 = t.sum_all(scores);
                let s2 = t.sum_all(mix);
                let both = t.add(s1, s2)?;
                let sq = t.mul_elem(both, both)?;
                Ok(t.sum_all(sq))
            },
            &[x, theta, w, f, flat, alpha],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "stream ops error {err}");
    }

    #[test]
    fn normalization_ops_positive_inputs() {
        let mut rng = Rng::new(6);
        // strictly positive via exp
        let x = randt(&mut rng, &[3, 4, 4]);
        let err = finite_difference_check(
            |t, vs| {
                let e = t.exp(vs[0]);
                let r = t.row_normalize(e);
                let c = t.col_normalize(r)?;
                let r2 = t.row_normalize(c);
                let sq = t.mul_elem(r2, r2)?;
                Ok(t.sum_all(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "row/col normalize error {err}");
    }

    #[test]
    fn sinkhorn_unrolled_t10_on_4x4() {
        let mut rng = Rng::new(7);
        let h = randt(&mut rng, &[1, 4, 4]);
        let tau = 0.1;
        let err = finite_difference_check(
            |t, vs| {
                let c = t.clamp(vs[0], -30.0 * tau, 30.0 * tau);
                let s = t.scale(c, 1.0 / tau);
                let mut m = t.exp(s);
                for _ in 0..10 {
                    m = t.row_normalize(m);
                    m = t.col_normalize(m)?;
                }
                let sq = t.mul_elem(m, m)?;
                Ok(t.sum_all(sq))
            },
            &[h],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "unrolled sinkhorn error {err}");
    }

    #[test]
    fn graph_ops_and_attention() {
        let mut rng = Rng::new(8);
        let (g, _) = synth::make_sbm(&[4, 4], 0.7, 0.3, &mut rng).unwrap();
        let csr = g.adjacency_list();
        let support = Rc::new(GraphSupport::new(normalize_adjacency(&g, true), csr));
        let n = g.num_nodes;

        for kind in [SpmmKind::SymNorm, SpmmKind::MeanNeighbor, SpmmKind::SumNeighbor] {
            let x = randt(&mut rng, &[n, 3]);
            let sup = Rc::clone(&support);
            let err = finite_difference_check(
                |t, vs| {
                    let y = t.spmm(kind, &sup, vs[0])?;
                    let y = t.sigmoid(y);
                    Ok(t.sum_all(y))
                },
                &[x],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "spmm {kind:?} error {err}");
        }

        // attention: 2 heads, 3 dims per head
        let z = randt(&mut rng, &[n, 2, 3]);
        let s_src = randt(&mut rng, &[n, 2]);
        let s_dst = randt(&mut rng, &[n, 2]);
        let sup = Rc::clone(&support);
        let err = finite_difference_check(
            |t, vs| {
                let out = t.gat_aggregate(&sup, vs[1], vs[2], vs[0], 0.2)?;
                let sq = t.mul_elem(out, out)?;
                Ok(t.sum_all(sq))
            },
            &[z, s_src, s_dst],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "gat_aggregate error {err}");
    }

    #[test]
    fn cross_entropy_matches_differences() {
        let mut rng = Rng::new(9);
        let logits = randt(&mut rng, &[6, 3]);
        let labels = Rc::new(vec![0usize, 2, 1, 1, 0, 2]);
        let mask = Rc::new(vec![true, true, false, true, true, false]);
        let err = finite_difference_check(
            |t, vs| t.cross_entropy(vs[0], Rc::clone(&labels), Rc::clone(&mask)),
            &[logits],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "cross_entropy error {err}");
    }

    #[test]
    fn dropout_mask_reproducible_and_scaled() {
        let x = Tensor::full(&[10, 10], 1.0);
        let mut t1 = Tape::new();
        let v1 = t1.param(Rc::new(x.clone()));
        let d1 = t1.dropout(v1, 0.5, &mut Rng::new(77).derive_named("drop")).unwrap();
        let mut t2 = Tape::new();
        let v2 = t2.param(Rc::new(x.clone()));
        let d2 = t2.dropout(v2, 0.5, &mut Rng::new(77).derive_named("drop")).unwrap();
        assert_eq!(t1.value(d1), t2.value(d2));
        // inverted scaling: surviving entries are 1/keep
        assert!(t1.value(d1).data().iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-15));
        // backward passes the same mask
        let loss = t1.sum_all(d1);
        let mut grads = t1.backward(loss).unwrap();
        let gx = grads.take(v1).unwrap();
        assert_eq!(gx.data(), t1.value(d1).data());
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut tape = Tape::new();
        let x = tape.param(Rc::new(Tensor::scalar(2.0)));
        let y = tape.mul_elem(x, x).unwrap();
        let stopped = tape.stop_grad(y);
        let z = tape.mul_elem(stopped, x).unwrap(); // value 8, d/dx through live path = 4
        let loss = tape.sum_all(z);
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(tape.value(loss).data()[0], 8.0);
        assert_eq!(grads.take(x).unwrap().data()[0], 4.0);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x) + sum(x*x): grad = 1 + 2x
        let mut tape = Tape::new();
        let x = tape.param(Rc::new(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap()));
        let s1 = tape.sum_all(x);
        let sq = tape.mul_elem(x, x).unwrap();
        let s2 = tape.sum_all(sq);
        let loss = tape.add(s1, s2).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        let gx = grads.take(x).unwrap();
        assert!(gx.approx_eq(&Tensor::new(vec![2], vec![7.0, -1.0]).unwrap(), 1e-12));
    }
}
