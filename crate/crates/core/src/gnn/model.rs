//! Message-passing backbones, the mapping construction, and the multi-stream
//! layer stack.

use crate::autodiff::tape::{GraphSupport, SpmmKind, Tape, Var};
use crate::error::{MhcError, Result};
use crate::gnn::config::{Backbone, McMode, ModelConfig};
use crate::gnn::params::ParamStore;
use crate::graphs::graph::{normalize_adjacency, Graph};
use crate::linalg::rng::Rng;
use crate::linalg::tensor::Tensor;
use std::rc::Rc;

pub const RMS_EPS: f64 = 1e-8;
pub const GAT_SLOPE: f64 = 0.2;
/// Pre-exponential clamp in units of tau (see sinkhorn module).
pub const SINKHORN_CLAMP: f64 = crate::sinkhorn::CLAMP_IN_TAU_UNITS;

/// Graph tensors prepared once per run.
pub struct GraphBundle {
    pub support: Rc<GraphSupport>,
    pub features: Tensor,
    pub labels: Rc<Vec<usize>>,
    pub num_classes: usize,
    pub num_nodes: usize,
    pub d_in: usize,
}

pub fn prepare_bundle(g: &Graph, self_loops: bool) -> Result<GraphBundle> {
    let features = g
        .features
        .clone()
        .ok_or_else(|| MhcError::InvalidArgument("model needs node features".into()))?;
    let labels = g
        .labels
        .clone()
        .ok_or_else(|| MhcError::InvalidArgument("model needs labels".into()))?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let (n, d_in) = features.dims2()?;
    if n != g.num_nodes {
        return Err(MhcError::shape("prepare_bundle", "feature rows != num_nodes"));
    }
    let support = Rc::new(GraphSupport::new(normalize_adjacency(g, self_loops), g.adjacency_list()));
    Ok(GraphBundle {
        support,
        features,
        labels: Rc::new(labels),
        num_classes,
        num_nodes: n,
        d_in,
    })
}

/// Parameters bound onto a tape for one forward/backward pass, aligned with
/// the store's order. Frozen entries bind as constants.
pub struct TapeBinding {
    pub vars: Vec<Var>,
}

pub fn bind_params(tape: &mut Tape, store: &ParamStore) -> TapeBinding {
    let vars = store
        .iter()
        .map(|e| {
            if e.trainable {
                tape.param(Rc::clone(&e.tensor))
            } else {
                tape.constant((*e.tensor).clone())
            }
        })
        .collect();
    TapeBinding { vars }
}

struct Lookup<'a> {
    store: &'a ParamStore,
    binding: &'a TapeBinding,
}

impl<'a> Lookup<'a> {
    fn var(&self, name: &str) -> Result<Var> {
        for (i, e) in self.store.iter().enumerate() {
            if e.name == name {
                return Ok(self.binding.vars[i]);
            }
        }
        Err(MhcError::InvalidArgument(format!("parameter '{name}' not bound")))
    }
}

/// Per-layer mixing maps on the tape plus the raw (pre-projection) residual
/// scores for diagnostics.
pub struct LayerMaps {
    pub pre: Var,
    pub post: Var,
    pub res: Var,
}

/// Outputs of a full forward pass.
pub struct ForwardOutput {
    pub logits: Var,
    /// h_res per layer, [N,n,n]; empty in baseline mode.
    pub hres_per_layer: Vec<Var>,
}

/// Sinkhorn projection unrolled on the tape: exp(clamp(h)/tau), then T rounds
/// of row then column normalization.
pub fn sinkhorn_on_tape(tape: &mut Tape, h_hat: Var, iterations: usize, tau: f64) -> Result<Var> {
    let bound = SINKHORN_CLAMP * tau;
    let c = tape.clamp(h_hat, -bound, bound);
    let s = tape.scale(c, 1.0 / tau);
    let mut m = tape.exp(s);
    for _ in 0..iterations {
        m = tape.row_normalize(m);
        m = tape.col_normalize(m)?;
    }
    Ok(m)
}

/// The Eqs.-style mapping construction for one layer: RMS-normalize streams,
/// then sigmoid heads for pre/post and a Sinkhorn-projected residual mixer.
/// Ablation modes drop the static or dynamic terms or skip the projection.
fn compute_mappings(
    tape: &mut Tape,
    lk: &Lookup,
    x: Var,
    layer: usize,
    cfg: &ModelConfig,
) -> Result<LayerMaps> {
    let (nn, n, _d) = tape.value(x).dims3()?;
    let p = |s: &str| format!("layer{layer}.map.{s}");
    let xt = tape.rms_norm(x, RMS_EPS);

    let dyn_scores = |tape: &mut Tape, theta: Var, alpha: Var| -> Result<Var> {
        let scores = tape.stream_scores(xt, theta)?; // [N, m, n]
        tape.scale_by_param(scores, alpha)
    };

    // h_pre and h_post: [N, n] after reshaping the [N,1,n] head output
    let head = |tape: &mut Tape, which: &str| -> Result<Var> {
        let theta = lk.var(&p(&format!("theta_{which}")))?;
        let alpha = lk.var(&p(&format!("alpha_{which}")))?;
        let bias = lk.var(&p(&format!("b_{which}")))?;
        let z = match cfg.mode {
            McMode::StaticOnly => {
                let zeros = tape.constant(Tensor::zeros(&[nn, n]));
                tape.add_row_bias(zeros, bias)?
            }
            McMode::DynamicOnly => {
                let s = dyn_scores(tape, theta, alpha)?;
                tape.reshape(s, vec![nn, n])?
            }
            _ => {
                let s = dyn_scores(tape, theta, alpha)?;
                let s = tape.reshape(s, vec![nn, n])?;
                tape.add_row_bias(s, bias)?
            }
        };
        Ok(z)
    };

    let z_pre = head(tape, "pre")?;
    let pre = tape.sigmoid(z_pre);
    let z_post = head(tape, "post")?;
    let sig_post = tape.sigmoid(z_post);
    let post = tape.scale(sig_post, 2.0);

    // residual scores: alpha * (Theta x~^T) + B, then the projection
    let theta_res = lk.var(&p("theta_res"))?;
    let alpha_res = lk.var(&p("alpha_res"))?;
    let b_res = lk.var(&p("b_res"))?;
    let raw = match cfg.mode {
        McMode::StaticOnly => {
            let zeros = tape.constant(Tensor::zeros(&[nn, n, n]));
            tape.add_shared_batch(zeros, b_res)?
        }
        McMode::DynamicOnly => dyn_scores(tape, theta_res, alpha_res)?,
        _ => {
            let s = dyn_scores(tape, theta_res, alpha_res)?;
            tape.add_shared_batch(s, b_res)?
        }
    };
    let res = if cfg.mode == McMode::NoSinkhorn {
        raw
    } else {
        let projected = sinkhorn_on_tape(tape, raw, cfg.sinkhorn.iterations, cfg.sinkhorn.temperature)?;
        if cfg.sinkhorn_stopgrad {
            tape.stop_grad(projected)
        } else {
            projected
        }
    };
    Ok(LayerMaps { pre, post, res })
}

/// One backbone evaluation on single-stream input [N, d].
pub fn backbone_forward(
    tape: &mut Tape,
    lk: &Lookup,
    support: &Rc<GraphSupport>,
    u: Var,
    layer: usize,
    cfg: &ModelConfig,
) -> Result<Var> {
    let p = |s: &str| format!("layer{layer}.{s}");
    match cfg.backbone {
        Backbone::Gcn => {
            let ag = tape.spmm(SpmmKind::SymNorm, support, u)?;
            let z = tape.matmul(ag, lk.var(&p("gcn.w"))?)?;
            let z = tape.add_row_bias(z, lk.var(&p("gcn.b"))?)?;
            Ok(tape.relu(z))
        }
        Backbone::Sage => {
            let m = tape.spmm(SpmmKind::MeanNeighbor, support, u)?;
            let c = tape.concat_cols(u, m)?;
            let z = tape.matmul(c, lk.var(&p("sage.w"))?)?;
            let z = tape.add_row_bias(z, lk.var(&p("sage.b"))?)?;
            Ok(tape.relu(z))
        }
        Backbone::Gat => {
            let h = cfg.gat_heads;
            let d = cfg.hidden;
            let dh = d / h;
            let nn = tape.value(u).dims2()?.0;
            let z = tape.matmul(u, lk.var(&p("gat.w"))?)?;
            let z3 = tape.reshape(z, vec![nn, h, dh])?;
            let s_src = tape.head_scores(z3, lk.var(&p("gat.a_src"))?)?;
            let s_dst = tape.head_scores(z3, lk.var(&p("gat.a_dst"))?)?;
            let att = tape.gat_aggregate(support, s_src, s_dst, z3, GAT_SLOPE)?;
            let flat = tape.reshape(att, vec![nn, d])?;
            let flat = tape.add_row_bias(flat, lk.var(&p("gat.b"))?)?;
            Ok(tape.elu(flat, 1.0))
        }
        Backbone::Gin => {
            let s = tape.spmm(SpmmKind::SumNeighbor, support, u)?;
            let eps = lk.var(&p("gin.eps"))?;
            let one_plus = tape.add_const(eps, 1.0);
            let su = tape.scale_by_param(u, one_plus)?;
            let t0 = tape.add(su, s)?;
            let h1 = tape.matmul(t0, lk.var(&p("gin.w1"))?)?;
            let h1 = tape.add_row_bias(h1, lk.var(&p("gin.b1"))?)?;
            let h1 = tape.relu(h1);
            let h2 = tape.matmul(h1, lk.var(&p("gin.w2"))?)?;
            tape.add_row_bias(h2, lk.var(&p("gin.b2"))?)
        }
    }
}

/// One multi-stream layer: aggregate streams with h_pre, run the backbone on
/// the single-stream view, expand its output with h_post, add the stream
/// state, and mix everything with the doubly stochastic h_res:
/// x' = H_res (x + h_post^T F(h_pre x)). Dropout acts on the branch input.
fn mhc_layer(
    tape: &mut Tape,
    lk: &Lookup,
    support: &Rc<GraphSupport>,
    x: Var,
    layer: usize,
    cfg: &ModelConfig,
    train: bool,
    rng: &mut Rng,
) -> Result<(Var, Var)> {
    let maps = compute_mappings(tape, lk, x, layer, cfg)?;
    let mut u = tape.weight_streams(maps.pre, x)?;
    if train && cfg.dropout > 0.0 {
        let mut stream = rng.derive(layer as u64);
        u = tape.dropout(u, cfg.dropout, &mut stream)?;
    }
    let f = backbone_forward(tape, lk, support, u, layer, cfg)?;
    let expanded = tape.outer_streams(maps.post, f)?;
    let summed = tape.add(x, expanded)?;
    let mixed = tape.bmm(maps.res, summed)?;
    Ok((mixed, maps.res))
}

/// Residual-connected single-stream layer (the Eq.-2 baseline): dropout on
/// the state, then h' = h + F(h).
fn baseline_layer(
    tape: &mut Tape,
    lk: &Lookup,
    support: &Rc<GraphSupport>,
    h: Var,
    layer: usize,
    cfg: &ModelConfig,
    train: bool,
    rng: &mut Rng,
) -> Result<Var> {
    let mut state = h;
    if train && cfg.dropout > 0.0 {
        let mut stream = rng.derive(layer as u64);
        state = tape.dropout(state, cfg.dropout, &mut stream)?;
    }
    let f = backbone_forward(tape, lk, support, state, layer, cfg)?;
    tape.add(state, f)
}

/// Full model: input projection, stream replication, L layers, stream-mean
/// readout, linear classifier.
pub fn model_forward(
    tape: &mut Tape,
    bundle: &GraphBundle,
    store: &ParamStore,
    binding: &TapeBinding,
    cfg: &ModelConfig,
    train: bool,
    dropout_rng: &mut Rng,
) -> Result<ForwardOutput> {
    cfg.validate()?;
    let lk = Lookup { store, binding };
    let x_in = tape.constant(bundle.features.clone());
    let proj = tape.matmul(x_in, lk.var("proj.w")?)?;
    let h0 = tape.add_row_bias(proj, lk.var("proj.b")?)?;

    let mut hres_per_layer = Vec::new();
    let readout = if cfg.mode == McMode::Baseline {
        let mut h = h0;
        for l in 0..cfg.layers {
            h = baseline_layer(tape, &lk, &bundle.support, h, l, cfg, train, dropout_rng)?;
        }
        h
    } else {
        let mut x = tape.replicate_streams(h0, cfg.streams)?;
        for l in 0..cfg.layers {
            let (next, res) = mhc_layer(tape, &lk, &bundle.support, x, l, cfg, train, dropout_rng)?;
            x = next;
            hres_per_layer.push(res);
        }
        tape.mean_streams(x)?
    };

    let z = tape.matmul(readout, lk.var("cls.w")?)?;
    let logits = tape.add_row_bias(z, lk.var("cls.b")?)?;
    Ok(ForwardOutput { logits, hres_per_layer })
}

/// Ordered product of per-layer residual mixers for one node, with its
/// deviation from doubly stochastic (closure check at model scale).
pub fn residual_product(maps: &[Tensor]) -> Result<(Tensor, f64)> {
    let first = maps
        .first()
        .ok_or_else(|| MhcError::InvalidArgument("residual_product needs >= 1 map".into()))?;
    let (n, m) = first.dims2()?;
    if n != m {
        return Err(MhcError::shape("residual_product", "maps must be square"));
    }
    let mut prod = first.clone();
    for h in &maps[1..] {
        prod = crate::linalg::tensor::matmul(h, &prod)?;
    }
    let dev = crate::sinkhorn::marginal_deviation(&prod.reshape(vec![1, n, n])?)?;
    Ok((prod, dev))
}
