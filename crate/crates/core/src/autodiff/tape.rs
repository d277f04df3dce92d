//! Tape-based reverse-mode gradient engine.
//!
//! The tape records a topologically ordered list of primitive operations;
//! `backward` walks it once in reverse, accumulating gradients by addition
//! where a value fans out. The op set is exactly what the models need,
//! including batched per-node ops over [N, n, d] stream states and the
//! unrolled Sinkhorn normalization steps.

use crate::error::{MhcError, Result};
use crate::graphs::graph::{Csr, NormalizedAdjacency};
use crate::linalg::tensor::{self, Tensor};
use std::rc::Rc;

/// Handle into a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Sparse graph operators shared by recorded ops.
#[derive(Debug)]
pub struct GraphSupport {
    pub adj: NormalizedAdjacency,
    pub csr: Csr,
    pub degrees: Vec<f64>,
}

impl GraphSupport {
    pub fn new(adj: NormalizedAdjacency, csr: Csr) -> Self {
        let n = csr.num_nodes();
        let degrees = (0..n).map(|v| csr.degree(v) as f64).collect();
        GraphSupport { adj, csr, degrees }
    }

    pub fn num_nodes(&self) -> usize {
        self.csr.num_nodes()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpmmKind {
    /// D^{-1/2} (A + sI) D^{-1/2}; symmetric, its own transpose.
    SymNorm,
    /// Row-mean over raw neighbors (no self edge).
    MeanNeighbor,
    /// Sum over raw neighbors; symmetric 0/1 adjacency.
    SumNeighbor,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    Scale(Var, f64),
    AddConst(Var, f64),
    /// x * s[0] with a scalar parameter s.
    ScaleByParam(Var, Var),
    Matmul(Var, Var),
    /// [R,C] + [1,C]
    AddRowBias(Var, Var),
    /// [B,p,q] + [p,q], bias shared across the batch
    AddSharedBatch(Var, Var),
    /// [B,p,q] x [B,q,r]
    Bmm(Var, Var),
    /// theta [m,d] against x [B,n,d]: out[b,a,c] = sum_d theta[a,d] x[b,c,d]
    StreamScores(Var, Var),
    /// w [B,n] weighting x [B,n,d]: out[b,j] = sum_s w[b,s] x[b,s,j]
    WeightStreams(Var, Var),
    /// outer product w [B,n] x f [B,d] -> [B,n,d]
    OuterStreams(Var, Var),
    /// per-head contraction: z [N,H,D], a [H,D] -> out[i,h] = <z[i,h,:], a[h,:]>
    HeadScores(Var, Var),
    Replicate(Var, usize),
    MeanStreams(Var),
    Reshape(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Elu(Var, f64),
    Exp(Var),
    Clamp(Var, f64, f64),
    RmsNormRows(Var, f64),
    RowNormalize(Var),
    ColNormalize(Var),
    SoftmaxRows(Var),
    ConcatCols(Var, Var),
    Dropout(Var, Rc<Vec<f64>>),
    Spmm(SpmmKind, Rc<GraphSupport>, Var),
    GatAggregate {
        support: Rc<GraphSupport>,
        s_src: Var,
        s_dst: Var,
        z: Var,
        slope: f64,
        /// per (node, incident edge, head) attention weights
        alphas: Rc<Vec<f64>>,
    },
    CrossEntropy {
        logits: Var,
        labels: Rc<Vec<usize>>,
        mask: Rc<Vec<bool>>,
        probs: Rc<Tensor>,
    },
    SumAll(Var),
    StopGrad(Var),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode computation record. One tape per training step; confined to a
/// single thread.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients keyed by tape node, filled by `backward`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: &Tensor) {
    match slot {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta.clone()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn rc_value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes[v.0].value)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Rc::new(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_rc(&mut self, value: Rc<Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Rc<Tensor>) -> Var {
        self.push_rc(value, Op::Leaf, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MulElem(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(v, Op::AddConst(a, c), ng)
    }

    pub fn scale_by_param(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(MhcError::shape("scale_by_param", "scale must be a 1-element tensor"));
        }
        let c = self.value(s).data()[0];
        let v = self.value(x).scale(c);
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(v, Op::ScaleByParam(x, s), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Matmul(a, b), ng))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let (br, bc) = self.value(bias).dims2()?;
        if br != 1 || bc != c {
            return Err(MhcError::shape("add_row_bias", format!("[{r}x{c}] + [{br}x{bc}]")));
        }
        let mut v = self.value(x).clone();
        let bd = self.rc_value(bias);
        for row in v.data_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bd.data()) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(v, Op::AddRowBias(x, bias), ng))
    }

    pub fn add_shared_batch(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (b, p, q) = self.value(x).dims3()?;
        let (bp, bq) = self.value(bias).dims2()?;
        if bp != p || bq != q {
            return Err(MhcError::shape("add_shared_batch", format!("[{b},{p},{q}] + [{bp},{bq}]")));
        }
        let mut v = self.value(x).clone();
        let bd = self.rc_value(bias);
        for mat in v.data_mut().chunks_mut(p * q) {
            for (o, bv) in mat.iter_mut().zip(bd.data()) {
                *o += bv;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(v, Op::AddSharedBatch(x, bias), ng))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, p, q) = self.value(a).dims3()?;
        let (bb, q2, r) = self.value(b).dims3()?;
        if ba != bb || q != q2 {
            return Err(MhcError::shape("bmm", format!("[{ba},{p},{q}] x [{bb},{q2},{r}]")));
        }
        let mut out = vec![0.0; ba * p * r];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for k in 0..ba {
            let am = &ad[k * p * q..(k + 1) * p * q];
            let bm = &bd[k * q * r..(k + 1) * q * r];
            let om = &mut out[k * p * r..(k + 1) * p * r];
            for i in 0..p {
                for kk in 0..q {
                    let aik = am[i * q + kk];
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bm[kk * r..(kk + 1) * r];
                    let orow = &mut om[i * r..(i + 1) * r];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += aik * bv;
                    }
                }
            }
        }
        let v = Tensor::new(vec![ba, p, r], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Bmm(a, b), ng))
    }

    /// out[b,a,c] = sum_d theta[a,d] * x[b,c,d]; the per-node mapping head.
    pub fn stream_scores(&mut self, x: Var, theta: Var) -> Result<Var> {
        let (b, n, d) = self.value(x).dims3()?;
        let (m, d2) = self.value(theta).dims2()?;
        if d != d2 {
            return Err(MhcError::shape("stream_scores", format!("x d={d} vs theta d={d2}")));
        }
        let (xd, td) = (self.value(x).data(), self.value(theta).data());
        let mut out = vec![0.0; b * m * n];
        for k in 0..b {
            for a in 0..m {
                let trow = &td[a * d..(a + 1) * d];
                for c in 0..n {
                    let xrow = &xd[k * n * d + c * d..k * n * d + (c + 1) * d];
                    let mut acc = 0.0;
                    for (t, xv) in trow.iter().zip(xrow) {
                        acc += t * xv;
                    }
                    out[k * m * n + a * n + c] = acc;
                }
            }
        }
        let v = Tensor::new(vec![b, m, n], out)?;
        let ng = self.ng(x) || self.ng(theta);
        Ok(self.push(v, Op::StreamScores(x, theta), ng))
    }

    /// out[b,j] = sum_s w[b,s] x[b,s,j]; stream aggregation.
    pub fn weight_streams(&mut self, w: Var, x: Var) -> Result<Var> {
        let (bw, nw) = self.value(w).dims2()?;
        let (b, n, d) = self.value(x).dims3()?;
        if bw != b || nw != n {
            return Err(MhcError::shape("weight_streams", format!("w [{bw},{nw}] vs x [{b},{n},{d}]")));
        }
        let (wd, xd) = (self.value(w).data(), self.value(x).data());
        let mut out = vec![0.0; b * d];
        for k in 0..b {
            let orow = &mut out[k * d..(k + 1) * d];
            for s in 0..n {
                let ws = wd[k * n + s];
                if ws == 0.0 {
                    continue;
                }
                let xrow = &xd[k * n * d + s * d..k * n * d + (s + 1) * d];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += ws * xv;
                }
            }
        }
        let v = Tensor::new(vec![b, d], out)?;
        let ng = self.ng(w) || self.ng(x);
        Ok(self.push(v, Op::WeightStreams(w, x), ng))
    }

    /// out[b,s,j] = w[b,s] * f[b,j]; stream expansion.
    pub fn outer_streams(&mut self, w: Var, f: Var) -> Result<Var> {
        let (bw, n) = self.value(w).dims2()?;
        let (b, d) = self.value(f).dims2()?;
        if bw != b {
            return Err(MhcError::shape("outer_streams", format!("w batch {bw} vs f batch {b}")));
        }
        let (wd, fd) = (self.value(w).data(), self.value(f).data());
        let mut out = vec![0.0; b * n * d];
        for k in 0..b {
            let frow = &fd[k * d..(k + 1) * d];
            for s in 0..n {
                let ws = wd[k * n + s];
                let orow = &mut out[k * n * d + s * d..k * n * d + (s + 1) * d];
                for (o, &fv) in orow.iter_mut().zip(frow) {
                    *o = ws * fv;
                }
            }
        }
        let v = Tensor::new(vec![b, n, d], out)?;
        let ng = self.ng(w) || self.ng(f);
        Ok(self.push(v, Op::OuterStreams(w, f), ng))
    }

    /// out[i,h] = <z[i,h,:], a[h,:]>; per-head attention scores.
    pub fn head_scores(&mut self, z: Var, a: Var) -> Result<Var> {
        let (n, h, d) = self.value(z).dims3()?;
        let (h2, d2) = self.value(a).dims2()?;
        if h != h2 || d != d2 {
            return Err(MhcError::shape("head_scores", format!("z [{n},{h},{d}] vs a [{h2},{d2}]")));
        }
        let (zd, ad) = (self.value(z).data(), self.value(a).data());
        let mut out = vec![0.0; n * h];
        for i in 0..n {
            for hh in 0..h {
                let zrow = &zd[i * h * d + hh * d..i * h * d + (hh + 1) * d];
                let arow = &ad[hh * d..(hh + 1) * d];
                let mut acc = 0.0;
                for (x, y) in zrow.iter().zip(arow) {
                    acc += x * y;
                }
                out[i * h + hh] = acc;
            }
        }
        let v = Tensor::new(vec![n, h], out)?;
        let ng = self.ng(z) || self.ng(a);
        Ok(self.push(v, Op::HeadScores(z, a), ng))
    }

    /// [N,d] -> [N,n,d] by copying each row into n streams.
    pub fn replicate_streams(&mut self, x: Var, n: usize) -> Result<Var> {
        let (b, d) = self.value(x).dims2()?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * n * d];
        for k in 0..b {
            let row = &xd[k * d..(k + 1) * d];
            for s in 0..n {
                out[k * n * d + s * d..k * n * d + (s + 1) * d].copy_from_slice(row);
            }
        }
        let v = Tensor::new(vec![b, n, d], out)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Replicate(x, n), ng))
    }

    /// [N,n,d] -> [N,d], mean over streams.
    pub fn mean_streams(&mut self, x: Var) -> Result<Var> {
        let (b, n, d) = self.value(x).dims3()?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * d];
        let inv = 1.0 / n as f64;
        for k in 0..b {
            let orow = &mut out[k * d..(k + 1) * d];
            for s in 0..n {
                let xrow = &xd[k * n * d + s * d..k * n * d + (s + 1) * d];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += xv * inv;
                }
            }
        }
        let v = Tensor::new(vec![b, d], out)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::MeanStreams(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Reshape(x), ng))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = tensor::sigmoid(self.value(x));
        let ng = self.ng(x);
        self.push(v, Op::Sigmoid(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = tensor::relu(self.value(x));
        let ng = self.ng(x);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).map(|t| if t > 0.0 { t } else { slope * t });
        let ng = self.ng(x);
        self.push(v, Op::LeakyRelu(x, slope), ng)
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        let v = self.value(x).map(|t| if t > 0.0 { t } else { alpha * (t.exp() - 1.0) });
        let ng = self.ng(x);
        self.push(v, Op::Elu(x, alpha), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        let ng = self.ng(x);
        self.push(v, Op::Exp(x), ng)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|t| t.clamp(lo, hi));
        let ng = self.ng(x);
        self.push(v, Op::Clamp(x, lo, hi), ng)
    }

    pub fn rms_norm(&mut self, x: Var, eps: f64) -> Var {
        let v = tensor::rms_norm(self.value(x), eps);
        let ng = self.ng(x);
        self.push(v, Op::RmsNormRows(x, eps), ng)
    }

    /// Normalize each last-dimension row by its sum (rows with sum <= 0 pass
    /// through unchanged; Sinkhorn inputs are strictly positive).
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = *t.shape().last().unwrap();
        let mut v = t.clone();
        for row in v.data_mut().chunks_mut(d) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                for o in row.iter_mut() {
                    *o /= s;
                }
            }
        }
        let ng = self.ng(x);
        self.push(v, Op::RowNormalize(x), ng)
    }

    /// Normalize columns of each matrix in a [B,n,m] batch by their sums.
    pub fn col_normalize(&mut self, x: Var) -> Result<Var> {
        let (_b, n, m) = self.value(x).dims3()?;
        let mut v = self.value(x).clone();
        for mat in v.data_mut().chunks_mut(n * m) {
            for c in 0..m {
                let mut s = 0.0;
                for r in 0..n {
                    s += mat[r * m + c];
                }
                if s > 0.0 {
                    for r in 0..n {
                        mat[r * m + c] /= s;
                    }
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(v, Op::ColNormalize(x), ng))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = tensor::softmax_rows(self.value(x));
        let ng = self.ng(x);
        self.push(v, Op::SoftmaxRows(x), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.value(a).dims2()?;
        let (rb, cb) = self.value(b).dims2()?;
        if ra != rb {
            return Err(MhcError::shape("concat_cols", format!("{ra} vs {rb} rows")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&ad[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bd[i * cb..(i + 1) * cb]);
        }
        let v = Tensor::new(vec![ra, ca + cb], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::ConcatCols(a, b), ng))
    }

    /// Inverted dropout with a caller-supplied stream; records the mask.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut crate::linalg::Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(MhcError::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let inv = 1.0 / keep;
        let mask: Vec<f64> =
            (0..self.value(x).len()).map(|_| if rng.chance(keep) { inv } else { 0.0 }).collect();
        let t = self.value(x);
        let data: Vec<f64> = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let v = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Dropout(x, Rc::new(mask)), ng))
    }

    pub fn spmm(&mut self, kind: SpmmKind, support: &Rc<GraphSupport>, x: Var) -> Result<Var> {
        let v = spmm_forward(kind, support, self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Spmm(kind, Rc::clone(support), x), ng))
    }

    /// Multi-head attention aggregation over N(i) + self: per head, softmax of
    /// leaky_relu(s_src[j] + s_dst[i]) over incident j, then the alpha-weighted
    /// sum of z[j]. Returns [N,H,D].
    pub fn gat_aggregate(
        &mut self,
        support: &Rc<GraphSupport>,
        s_src: Var,
        s_dst: Var,
        z: Var,
        slope: f64,
    ) -> Result<Var> {
        let (n, h, d) = self.value(z).dims3()?;
        let (ns, hs) = self.value(s_src).dims2()?;
        let (nd, hd) = self.value(s_dst).dims2()?;
        if ns != n || nd != n || hs != h || hd != h {
            return Err(MhcError::shape("gat_aggregate", "score shapes do not match z"));
        }
        if support.num_nodes() != n {
            return Err(MhcError::shape("gat_aggregate", "graph size does not match z"));
        }
        let (src, dst, zd) = (self.value(s_src).data(), self.value(s_dst).data(), self.value(z).data());
        let mut out = vec![0.0; n * h * d];
        let mut alphas: Vec<f64> = Vec::new();
        for i in 0..n {
            let incident = incident_with_self(&support.csr, i);
            for hh in 0..h {
                // stable softmax over incident scores
                let mut mx = f64::NEG_INFINITY;
                for &j in &incident {
                    let e = leaky(src[j * h + hh] + dst[i * h + hh], slope);
                    mx = mx.max(e);
                }
                let mut denom = 0.0;
                let base = alphas.len();
                for &j in &incident {
                    let e = leaky(src[j * h + hh] + dst[i * h + hh], slope);
                    let w = (e - mx).exp();
                    alphas.push(w);
                    denom += w;
                }
                for (slot, &j) in incident.iter().enumerate() {
                    let a = alphas[base + slot] / denom;
                    alphas[base + slot] = a;
                    let zrow = &zd[j * h * d + hh * d..j * h * d + (hh + 1) * d];
                    let orow = &mut out[i * h * d + hh * d..i * h * d + (hh + 1) * d];
                    for (o, &zv) in orow.iter_mut().zip(zrow) {
                        *o += a * zv;
                    }
                }
            }
        }
        let v = Tensor::new(vec![n, h, d], out)?;
        let ng = self.ng(s_src) || self.ng(s_dst) || self.ng(z);
        Ok(self.push(
            v,
            Op::GatAggregate { support: Rc::clone(support), s_src, s_dst, z, slope, alphas: Rc::new(alphas) },
            ng,
        ))
    }

    /// Mean cross-entropy over masked rows with a fused stable log-softmax.
    pub fn cross_entropy(&mut self, logits: Var, labels: Rc<Vec<usize>>, mask: Rc<Vec<bool>>) -> Result<Var> {
        let (n, c) = self.value(logits).dims2()?;
        if labels.len() != n || mask.len() != n {
            return Err(MhcError::shape("cross_entropy", "labels/mask length mismatch"));
        }
        let m = mask.iter().filter(|&&b| b).count();
        if m == 0 {
            return Err(MhcError::InvalidArgument("cross_entropy: empty mask".into()));
        }
        let probs = tensor::softmax_rows(self.value(logits));
        let ld = self.value(logits).data();
        let mut loss = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            if labels[i] >= c {
                return Err(MhcError::InvalidArgument(format!("label {} out of {c} classes", labels[i])));
            }
            let row = &ld[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
            loss += lse - row[labels[i]];
        }
        loss /= m as f64;
        let v = Tensor::scalar(loss);
        let ng = self.ng(logits);
        Ok(self.push(v, Op::CrossEntropy { logits, labels, mask, probs: Rc::new(probs) }, ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).data().iter().sum());
        let ng = self.ng(x);
        self.push(v, Op::SumAll(x), ng)
    }

    /// Forward identity; gradients do not flow past it.
    pub fn stop_grad(&mut self, x: Var) -> Var {
        let v = self.rc_value(x);
        self.push_rc(v, Op::StopGrad(x), false)
    }

    /// Reverse pass from a scalar loss. Every node is visited exactly once;
    /// gradients accumulate by addition where values fan out.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(MhcError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.backprop_node(id, &g, &mut grads)?;
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[id];
        let send = |v: Var, delta: Tensor, grads: &mut [Option<Tensor>]| {
            if self.nodes[v.0].needs_grad {
                accumulate(&mut grads[v.0], &delta);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.scale(-1.0), grads);
            }
            Op::MulElem(a, b) => {
                send(*a, tensor::mul(g, self.value(*b))?, grads);
                send(*b, tensor::mul(g, self.value(*a))?, grads);
            }
            Op::Scale(a, c) => send(*a, g.scale(*c), grads),
            Op::AddConst(a, _) => send(*a, g.clone(), grads),
            Op::ScaleByParam(x, s) => {
                let c = self.value(*s).data()[0];
                send(*x, g.scale(c), grads);
                let ds: f64 = g.data().iter().zip(self.value(*x).data()).map(|(gv, xv)| gv * xv).sum();
                send(*s, Tensor::scalar(ds), grads);
            }
            Op::Matmul(a, b) => {
                send(*a, tensor::matmul_a_bt(g, self.value(*b))?, grads);
                send(*b, tensor::matmul_at_b(self.value(*a), g)?, grads);
            }
            Op::AddRowBias(x, bias) => {
                send(*x, g.clone(), grads);
                let (_, c) = self.value(*x).dims2()?;
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (o, &v) in db.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                send(*bias, Tensor::new(vec![1, c], db)?, grads);
            }
            Op::AddSharedBatch(x, bias) => {
                send(*x, g.clone(), grads);
                let (_, p, q) = self.value(*x).dims3()?;
                let mut db = vec![0.0; p * q];
                for mat in g.data().chunks(p * q) {
                    for (o, &v) in db.iter_mut().zip(mat) {
                        *o += v;
                    }
                }
                send(*bias, Tensor::new(vec![p, q], db)?, grads);
            }
            Op::Bmm(a, b) => {
                let (bt, p, q) = self.value(*a).dims3()?;
                let (_, _, r) = self.value(*b).dims3()?;
                let (ad, bd, gd) = (self.value(*a).data(), self.value(*b).data(), g.data());
                let mut da = vec![0.0; bt * p * q];
                let mut db = vec![0.0; bt * q * r];
                for k in 0..bt {
                    let am = &ad[k * p * q..(k + 1) * p * q];
                    let bm = &bd[k * q * r..(k + 1) * q * r];
                    let gm = &gd[k * p * r..(k + 1) * p * r];
                    let dam = &mut da[k * p * q..(k + 1) * p * q];
                    let dbm = &mut db[k * q * r..(k + 1) * q * r];
                    for i in 0..p {
                        for kk in 0..q {
                            // dA[i,kk] = <g[i,:], B[kk,:]>
                            let mut acc = 0.0;
                            let grow = &gm[i * r..(i + 1) * r];
                            let brow = &bm[kk * r..(kk + 1) * r];
                            for (x, y) in grow.iter().zip(brow) {
                                acc += x * y;
                            }
                            dam[i * q + kk] = acc;
                            // dB[kk,:] += A[i,kk] * g[i,:]
                            let aik = am[i * q + kk];
                            if aik != 0.0 {
                                let drow = &mut dbm[kk * r..(kk + 1) * r];
                                for (o, &gv) in drow.iter_mut().zip(grow) {
                                    *o += aik * gv;
                                }
                            }
                        }
                    }
                }
                send(*a, Tensor::new(vec![bt, p, q], da)?, grads);
                send(*b, Tensor::new(vec![bt, q, r], db)?, grads);
            }
            Op::StreamScores(x, theta) => {
                let (b, n, d) = self.value(*x).dims3()?;
                let (m, _) = self.value(*theta).dims2()?;
                let (xd, td, gd) = (self.value(*x).data(), self.value(*theta).data(), g.data());
                let mut dx = vec![0.0; b * n * d];
                let mut dt = vec![0.0; m * d];
                for k in 0..b {
                    for a in 0..m {
                        let trow = &td[a * d..(a + 1) * d];
                        let dtrow_base = a * d;
                        for c in 0..n {
                            let gv = gd[k * m * n + a * n + c];
                            if gv == 0.0 {
                                continue;
                            }
                            let xrow = &xd[k * n * d + c * d..k * n * d + (c + 1) * d];
                            let dxrow = &mut dx[k * n * d + c * d..k * n * d + (c + 1) * d];
                            for j in 0..d {
                                dxrow[j] += gv * trow[j];
                                dt[dtrow_base + j] += gv * xrow[j];
                            }
                        }
                    }
                }
                send(*x, Tensor::new(vec![b, n, d], dx)?, grads);
                send(*theta, Tensor::new(vec![m, d], dt)?, grads);
            }
            Op::WeightStreams(w, x) => {
                let (b, n, d) = self.value(*x).dims3()?;
                let (wd, xd, gd) = (self.value(*w).data(), self.value(*x).data(), g.data());
                let mut dw = vec![0.0; b * n];
                let mut dx = vec![0.0; b * n * d];
                for k in 0..b {
                    let grow = &gd[k * d..(k + 1) * d];
                    for s in 0..n {
                        let xrow = &xd[k * n * d + s * d..k * n * d + (s + 1) * d];
                        let mut acc = 0.0;
                        for (gv, xv) in grow.iter().zip(xrow) {
                            acc += gv * xv;
                        }
                        dw[k * n + s] = acc;
                        let ws = wd[k * n + s];
                        if ws != 0.0 {
                            let dxrow = &mut dx[k * n * d + s * d..k * n * d + (s + 1) * d];
                            for (o, &gv) in dxrow.iter_mut().zip(grow) {
                                *o += ws * gv;
                            }
                        }
                    }
                }
                send(*w, Tensor::new(vec![b, n], dw)?, grads);
                send(*x, Tensor::new(vec![b, n, d], dx)?, grads);
            }
            Op::OuterStreams(w, f) => {
                let (b, n) = self.value(*w).dims2()?;
                let (_, d) = self.value(*f).dims2()?;
                let (wd, fd, gd) = (self.value(*w).data(), self.value(*f).data(), g.data());
                let mut dw = vec![0.0; b * n];
                let mut df = vec![0.0; b * d];
                for k in 0..b {
                    let frow = &fd[k * d..(k + 1) * d];
                    let dfrow = &mut df[k * d..(k + 1) * d];
                    for s in 0..n {
                        let grow = &gd[k * n * d + s * d..k * n * d + (s + 1) * d];
                        let mut acc = 0.0;
                        let ws = wd[k * n + s];
                        for (j, (&gv, &fv)) in grow.iter().zip(frow.iter()).enumerate() {
                            acc += gv * fv;
                            dfrow[j] += ws * gv;
                        }
                        dw[k * n + s] = acc;
                    }
                }
                send(*w, Tensor::new(vec![b, n], dw)?, grads);
                send(*f, Tensor::new(vec![b, d], df)?, grads);
            }
            Op::HeadScores(z, a) => {
                let (n, h, d) = self.value(*z).dims3()?;
                let (zd, ad, gd) = (self.value(*z).data(), self.value(*a).data(), g.data());
                let mut dz = vec![0.0; n * h * d];
                let mut da = vec![0.0; h * d];
                for i in 0..n {
                    for hh in 0..h {
                        let gv = gd[i * h + hh];
                        if gv == 0.0 {
                            continue;
                        }
                        let zrow = &zd[i * h * d + hh * d..i * h * d + (hh + 1) * d];
                        let arow = &ad[hh * d..(hh + 1) * d];
                        let dzrow = &mut dz[i * h * d + hh * d..i * h * d + (hh + 1) * d];
                        for j in 0..d {
                            dzrow[j] += gv * arow[j];
                            da[hh * d + j] += gv * zrow[j];
                        }
                    }
                }
                send(*z, Tensor::new(vec![n, h, d], dz)?, grads);
                send(*a, Tensor::new(vec![h, d], da)?, grads);
            }
            Op::Replicate(x, n) => {
                let (b, d) = self.value(*x).dims2()?;
                let gd = g.data();
                let mut dx = vec![0.0; b * d];
                for k in 0..b {
                    let drow = &mut dx[k * d..(k + 1) * d];
                    for s in 0..*n {
                        let grow = &gd[k * n * d + s * d..k * n * d + (s + 1) * d];
                        for (o, &gv) in drow.iter_mut().zip(grow) {
                            *o += gv;
                        }
                    }
                }
                send(*x, Tensor::new(vec![b, d], dx)?, grads);
            }
            Op::MeanStreams(x) => {
                let (b, n, d) = self.value(*x).dims3()?;
                let gd = g.data();
                let inv = 1.0 / n as f64;
                let mut dx = vec![0.0; b * n * d];
                for k in 0..b {
                    let grow = &gd[k * d..(k + 1) * d];
                    for s in 0..n {
                        let drow = &mut dx[k * n * d + s * d..k * n * d + (s + 1) * d];
                        for (o, &gv) in drow.iter_mut().zip(grow) {
                            *o += gv * inv;
                        }
                    }
                }
                send(*x, Tensor::new(vec![b, n, d], dx)?, grads);
            }
            Op::Reshape(x) => {
                send(*x, g.reshape(self.value(*x).shape().to_vec())?, grads);
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[id].value;
                let data: Vec<f64> =
                    g.data().iter().zip(y.data()).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                send(*x, Tensor::new(y.shape().to_vec(), data)?, grads);
            }
            Op::Relu(x) => {
                let xin = self.value(*x);
                let data: Vec<f64> =
                    g.data().iter().zip(xin.data()).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                send(*x, Tensor::new(xin.shape().to_vec(), data)?, grads);
            }
            Op::LeakyRelu(x, slope) => {
                let xin = self.value(*x);
                let data: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(xin.data())
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { gv * slope })
                    .collect();
                send(*x, Tensor::new(xin.shape().to_vec(), data)?, grads);
            }
            Op::Elu(x, alpha) => {
                let xin = self.value(*x);
                let y = &self.nodes[id].value;
                let data: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(xin.data().iter().zip(y.data()))
                    .map(|(gv, (&xv, &yv))| if xv > 0.0 { *gv } else { gv * (yv + alpha) })
                    .collect();
                send(*x, Tensor::new(xin.shape().to_vec(), data)?, grads);
            }
            Op::Exp(x) => {
                let y = &self.nodes[id].value;
                let data: Vec<f64> = g.data().iter().zip(y.data()).map(|(gv, yv)| gv * yv).collect();
                send(*x, Tensor::new(y.shape().to_vec(), data)?, grads);
            }
            Op::Clamp(x, lo, hi) => {
                let xin = self.value(*x);
                let data: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(xin.data())
                    .map(|(gv, &xv)| if xv > *lo && xv < *hi { *gv } else { 0.0 })
                    .collect();
                send(*x, Tensor::new(xin.shape().to_vec(), data)?, grads);
            }
            Op::RmsNormRows(x, eps) => {
                let xin = self.value(*x);
                let d = *xin.shape().last().unwrap();
                let mut dx = vec![0.0; xin.len()];
                for (row_i, (xrow, grow)) in xin.data().chunks(d).zip(g.data().chunks(d)).enumerate() {
                    let ms = xrow.iter().map(|v| v * v).sum::<f64>() / d as f64;
                    let r2 = ms + eps;
                    let r = r2.sqrt();
                    let gx: f64 = grow.iter().zip(xrow).map(|(gv, xv)| gv * xv).sum();
                    let coeff = gx / (d as f64 * r2 * r);
                    let drow = &mut dx[row_i * d..(row_i + 1) * d];
                    for j in 0..d {
                        drow[j] = grow[j] / r - coeff * xrow[j];
                    }
                }
                send(*x, Tensor::new(xin.shape().to_vec(), dx)?, grads);
            }
            Op::RowNormalize(x) => {
                let xin = self.value(*x);
                let y = &self.nodes[id].value;
                let d = *xin.shape().last().unwrap();
                let mut dx = vec![0.0; xin.len()];
                for (row_i, ((xrow, yrow), grow)) in
                    xin.data().chunks(d).zip(y.data().chunks(d)).zip(g.data().chunks(d)).enumerate()
                {
                    let s: f64 = xrow.iter().sum();
                    let drow = &mut dx[row_i * d..(row_i + 1) * d];
                    if s > 0.0 {
                        let gy: f64 = grow.iter().zip(yrow).map(|(gv, yv)| gv * yv).sum();
                        for j in 0..d {
                            drow[j] = (grow[j] - gy) / s;
                        }
                    } else {
                        drow.copy_from_slice(grow);
                    }
                }
                send(*x, Tensor::new(xin.shape().to_vec(), dx)?, grads);
            }
            Op::ColNormalize(x) => {
                let xin = self.value(*x);
                let y = &self.nodes[id].value;
                let (b, n, m) = xin.dims3()?;
                let mut dx = vec![0.0; xin.len()];
                for k in 0..b {
                    let base = k * n * m;
                    for c in 0..m {
                        let mut s = 0.0;
                        for r in 0..n {
                            s += xin.data()[base + r * m + c];
                        }
                        if s > 0.0 {
                            let mut gy = 0.0;
                            for r in 0..n {
                                gy += g.data()[base + r * m + c] * y.data()[base + r * m + c];
                            }
                            for r in 0..n {
                                dx[base + r * m + c] = (g.data()[base + r * m + c] - gy) / s;
                            }
                        } else {
                            for r in 0..n {
                                dx[base + r * m + c] = g.data()[base + r * m + c];
                            }
                        }
                    }
                }
                send(*x, Tensor::new(xin.shape().to_vec(), dx)?, grads);
            }
            Op::SoftmaxRows(x) => {
                let y = &self.nodes[id].value;
                let d = *y.shape().last().unwrap();
                let mut dx = vec![0.0; y.len()];
                for (row_i, (yrow, grow)) in y.data().chunks(d).zip(g.data().chunks(d)).enumerate() {
                    let gy: f64 = grow.iter().zip(yrow).map(|(gv, yv)| gv * yv).sum();
                    let drow = &mut dx[row_i * d..(row_i + 1) * d];
                    for j in 0..d {
                        drow[j] = yrow[j] * (grow[j] - gy);
                    }
                }
                send(*x, Tensor::new(y.shape().to_vec(), dx)?, grads);
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = self.value(*a).dims2()?;
                let (_, cb) = self.value(*b).dims2()?;
                let gd = g.data();
                let mut da = vec![0.0; r * ca];
                let mut db = vec![0.0; r * cb];
                for i in 0..r {
                    da[i * ca..(i + 1) * ca].copy_from_slice(&gd[i * (ca + cb)..i * (ca + cb) + ca]);
                    db[i * cb..(i + 1) * cb].copy_from_slice(&gd[i * (ca + cb) + ca..(i + 1) * (ca + cb)]);
                }
                send(*a, Tensor::new(vec![r, ca], da)?, grads);
                send(*b, Tensor::new(vec![r, cb], db)?, grads);
            }
            Op::Dropout(x, mask) => {
                let data: Vec<f64> = g.data().iter().zip(mask.iter()).map(|(gv, m)| gv * m).collect();
                send(*x, Tensor::new(g.shape().to_vec(), data)?, grads);
            }
            Op::Spmm(kind, support, x) => {
                send(*x, spmm_backward(*kind, support, g)?, grads);
            }
            Op::GatAggregate { support, s_src, s_dst, z, slope, alphas } => {
                let (n, h, d) = self.value(*z).dims3()?;
                let (src, dst, zd, gd) =
                    (self.value(*s_src).data(), self.value(*s_dst).data(), self.value(*z).data(), g.data());
                let mut dz = vec![0.0; n * h * d];
                let mut dsrc = vec![0.0; n * h];
                let mut ddst = vec![0.0; n * h];
                let mut cursor = 0usize;
                for i in 0..n {
                    let incident = incident_with_self(&support.csr, i);
                    for hh in 0..h {
                        let grow = &gd[i * h * d + hh * d..i * h * d + (hh + 1) * d];
                        let aslice = &alphas[cursor..cursor + incident.len()];
                        // d_alpha_j = <g, z_j>, then softmax backward to scores
                        let mut dalpha = vec![0.0; incident.len()];
                        let mut adot = 0.0;
                        for (slot, &j) in incident.iter().enumerate() {
                            let zrow = &zd[j * h * d + hh * d..j * h * d + (hh + 1) * d];
                            let mut acc = 0.0;
                            for (gv, zv) in grow.iter().zip(zrow) {
                                acc += gv * zv;
                            }
                            dalpha[slot] = acc;
                            adot += aslice[slot] * acc;
                            // dz_j += alpha_j * g
                            let dzrow = &mut dz[j * h * d + hh * d..j * h * d + (hh + 1) * d];
                            for (o, &gv) in dzrow.iter_mut().zip(grow) {
                                *o += aslice[slot] * gv;
                            }
                        }
                        for (slot, &j) in incident.iter().enumerate() {
                            let de = aslice[slot] * (dalpha[slot] - adot);
                            let pre = src[j * h + hh] + dst[i * h + hh];
                            let factor = if pre > 0.0 { 1.0 } else { *slope };
                            dsrc[j * h + hh] += de * factor;
                            ddst[i * h + hh] += de * factor;
                        }
                        cursor += incident.len();
                    }
                }
                send(*z, Tensor::new(vec![n, h, d], dz)?, grads);
                send(*s_src, Tensor::new(vec![n, h], dsrc)?, grads);
                send(*s_dst, Tensor::new(vec![n, h], ddst)?, grads);
            }
            Op::CrossEntropy { logits, labels, mask, probs } => {
                let (n, c) = self.value(*logits).dims2()?;
                let m = mask.iter().filter(|&&b| b).count() as f64;
                let coeff = g.data()[0] / m;
                let mut dl = vec![0.0; n * c];
                for i in 0..n {
                    if !mask[i] {
                        continue;
                    }
                    let prow = &probs.data()[i * c..(i + 1) * c];
                    let drow = &mut dl[i * c..(i + 1) * c];
                    for j in 0..c {
                        drow[j] = coeff * (prow[j] - if j == labels[i] { 1.0 } else { 0.0 });
                    }
                }
                send(*logits, Tensor::new(vec![n, c], dl)?, grads);
            }
            Op::SumAll(x) => {
                let xin = self.value(*x);
                send(*x, Tensor::full(xin.shape(), g.data()[0]), grads);
            }
            Op::StopGrad(_) => {}
        }
        Ok(())
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Sorted neighbors of i followed by i itself; the attention support set.
fn incident_with_self(csr: &Csr, i: usize) -> Vec<usize> {
    let mut v: Vec<usize> = csr.neighbors(i).iter().map(|&j| j as usize).collect();
    v.push(i);
    v
}

fn spmm_forward(kind: SpmmKind, support: &GraphSupport, x: &Tensor) -> Result<Tensor> {
    let (n, d) = x.dims2()?;
    if n != support.num_nodes() {
        return Err(MhcError::shape("spmm", format!("{} nodes vs {} rows", support.num_nodes(), n)));
    }
    match kind {
        SpmmKind::SymNorm => support.adj.apply_rows(x),
        SpmmKind::SumNeighbor => {
            let mut out = vec![0.0; n * d];
            for i in 0..n {
                let orow = &mut out[i * d..(i + 1) * d];
                for &j in support.csr.neighbors(i) {
                    let xrow = &x.data()[j as usize * d..(j as usize + 1) * d];
                    for (o, &v) in orow.iter_mut().zip(xrow) {
                        *o += v;
                    }
                }
            }
            Tensor::new(vec![n, d], out)
        }
        SpmmKind::MeanNeighbor => {
            let mut out = vec![0.0; n * d];
            for i in 0..n {
                let deg = support.degrees[i];
                if deg == 0.0 {
                    continue;
                }
                let inv = 1.0 / deg;
                let orow = &mut out[i * d..(i + 1) * d];
                for &j in support.csr.neighbors(i) {
                    let xrow = &x.data()[j as usize * d..(j as usize + 1) * d];
                    for (o, &v) in orow.iter_mut().zip(xrow) {
                        *o += inv * v;
                    }
                }
            }
            Tensor::new(vec![n, d], out)
        }
    }
}

fn spmm_backward(kind: SpmmKind, support: &GraphSupport, g: &Tensor) -> Result<Tensor> {
    match kind {
        // symmetric operators are their own transpose
        SpmmKind::SymNorm | SpmmKind::SumNeighbor => spmm_forward(kind, support, g),
        // transpose of D^{-1} A: dx_j = sum_{i in N(j)} g_i / deg_i
        SpmmKind::MeanNeighbor => {
            let (n, d) = g.dims2()?;
            let mut out = vec![0.0; n * d];
            for i in 0..n {
                let deg = support.degrees[i];
                if deg == 0.0 {
                    continue;
                }
                let inv = 1.0 / deg;
                let grow = &g.data()[i * d..(i + 1) * d];
                for &j in support.csr.neighbors(i) {
                    let orow = &mut out[j as usize * d..(j as usize + 1) * d];
                    for (o, &v) in orow.iter_mut().zip(grow) {
                        *o += inv * v;
                    }
                }
            }
            Tensor::new(vec![n, d], out)
        }
    }
}
