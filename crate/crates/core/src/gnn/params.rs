//! Named parameter store and deterministic initialization.

use crate::error::{MhcError, Result};
use crate::gnn::config::{Backbone, McMode, ModelConfig};
use crate::linalg::rng::Rng;
use crate::linalg::tensor::Tensor;
use std::collections::BTreeMap;
use std::rc::Rc;

/// Static post-mixing bias init: 2*sigmoid(-3) gives the message branch a
/// small initial gain, which keeps deep stacks from blowing up state norms
/// while training opens the gain where it helps.
pub const B_POST_INIT: f64 = -3.0;

/// Dynamic mapping heads start near zero; alphas start at exactly zero.
pub const THETA_INIT_STD: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Rc<Tensor>,
    pub trainable: bool,
}

/// Ordered, named parameter set. Order is insertion order and every consumer
/// (Adam, checkpoints, tape binding) follows it, so runs are reproducible.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, tensor: Rc::new(tensor), trainable });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn entry(&self, i: usize) -> &ParamEntry {
        &self.entries[i]
    }

    pub fn get(&self, name: &str) -> Result<&Rc<Tensor>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].tensor)
            .ok_or_else(|| MhcError::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| MhcError::InvalidArgument(format!("unknown parameter '{name}'")))?;
        if tensor.shape() != self.entries[i].tensor.shape() {
            return Err(MhcError::shape("ParamStore::set", format!("{name} shape mismatch")));
        }
        self.entries[i].tensor = Rc::new(tensor);
        Ok(())
    }

    pub fn set_by_index(&mut self, i: usize, tensor: Tensor) {
        self.entries[i].tensor = Rc::new(tensor);
    }

    pub fn freeze(&mut self, name: &str) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| MhcError::InvalidArgument(format!("unknown parameter '{name}'")))?;
        self.entries[i].trainable = false;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }
}

fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize, shape: &[usize]) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-a, a)).collect()).expect("glorot shape")
}

fn gaussian(rng: &mut Rng, std: f64, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal() * std).collect()).expect("gaussian shape")
}

/// Initialize all parameters for a model. Every tensor draws from an
/// independent stream keyed by its name, so adding or removing parameters in
/// one configuration never shifts the initialization of shared ones.
pub fn init_params(cfg: &ModelConfig, d_in: usize, num_classes: usize, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let root = Rng::new(seed);
    let d = cfg.hidden;
    let n = cfg.streams;
    let mut store = ParamStore::new();
    let put = |store: &mut ParamStore, name: String, t: Tensor| store.insert(name, t, true);

    let r = |name: &str| root.derive_named(&format!("init/{name}"));

    put(&mut store, "proj.w".into(), glorot(&mut r("proj.w"), d_in, d, &[d_in, d]));
    put(&mut store, "proj.b".into(), Tensor::zeros(&[1, d]));

    for l in 0..cfg.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        match cfg.backbone {
            Backbone::Gcn => {
                put(&mut store, p("gcn.w"), glorot(&mut r(&p("gcn.w")), d, d, &[d, d]));
                put(&mut store, p("gcn.b"), Tensor::zeros(&[1, d]));
            }
            Backbone::Sage => {
                put(&mut store, p("sage.w"), glorot(&mut r(&p("sage.w")), 2 * d, d, &[2 * d, d]));
                put(&mut store, p("sage.b"), Tensor::zeros(&[1, d]));
            }
            Backbone::Gat => {
                let dh = d / cfg.gat_heads;
                put(&mut store, p("gat.w"), glorot(&mut r(&p("gat.w")), d, d, &[d, d]));
                put(&mut store, p("gat.b"), Tensor::zeros(&[1, d]));
                put(&mut store, p("gat.a_src"), glorot(&mut r(&p("gat.a_src")), dh, 1, &[cfg.gat_heads, dh]));
                put(&mut store, p("gat.a_dst"), glorot(&mut r(&p("gat.a_dst")), dh, 1, &[cfg.gat_heads, dh]));
            }
            Backbone::Gin => {
                put(&mut store, p("gin.w1"), glorot(&mut r(&p("gin.w1")), d, d, &[d, d]));
                put(&mut store, p("gin.b1"), Tensor::zeros(&[1, d]));
                put(&mut store, p("gin.w2"), glorot(&mut r(&p("gin.w2")), d, d, &[d, d]));
                put(&mut store, p("gin.b2"), Tensor::zeros(&[1, d]));
                put(&mut store, p("gin.eps"), Tensor::scalar(0.0));
            }
        }
        if cfg.mode != McMode::Baseline {
            put(&mut store, p("map.theta_pre"), gaussian(&mut r(&p("map.theta_pre")), THETA_INIT_STD, &[1, d]));
            put(&mut store, p("map.theta_post"), gaussian(&mut r(&p("map.theta_post")), THETA_INIT_STD, &[1, d]));
            put(&mut store, p("map.theta_res"), gaussian(&mut r(&p("map.theta_res")), THETA_INIT_STD, &[n, d]));
            put(&mut store, p("map.b_pre"), Tensor::zeros(&[1, n]));
            put(&mut store, p("map.b_post"), Tensor::full(&[1, n], B_POST_INIT));
            put(&mut store, p("map.b_res"), Tensor::zeros(&[n, n]));
            put(&mut store, p("map.alpha_pre"), Tensor::scalar(0.0));
            put(&mut store, p("map.alpha_post"), Tensor::scalar(0.0));
            put(&mut store, p("map.alpha_res"), Tensor::scalar(0.0));
        }
    }

    put(&mut store, "cls.w".into(), glorot(&mut r("cls.w"), d, num_classes, &[d, num_classes]));
    put(&mut store, "cls.b".into(), Tensor::zeros(&[1, num_classes]));
    Ok(store)
}

/// Pin the mapping parameters of a single-stream model to the values that make
/// every mixing map the identity (h_pre = h_post = h_res = [1]) and freeze
/// them, so training leaves the reduction exact. 2*sigmoid(0) = 1 handles the
/// post map; sigmoid(37) rounds to exactly 1.0 in f64 for the pre map.
pub fn neutralize_mappings(store: &mut ParamStore, cfg: &ModelConfig) -> Result<()> {
    if cfg.streams != 1 {
        return Err(MhcError::InvalidArgument("neutralize_mappings needs streams = 1".into()));
    }
    for l in 0..cfg.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        for (name, value) in [
            (p("map.b_pre"), 37.0),
            (p("map.b_post"), 0.0),
            (p("map.b_res"), 0.0),
            (p("map.alpha_pre"), 0.0),
            (p("map.alpha_post"), 0.0),
            (p("map.alpha_res"), 0.0),
        ] {
            let shape = store.get(&name)?.shape().to_vec();
            store.set(&name, Tensor::full(&shape, value))?;
            store.freeze(&name)?;
        }
        for name in [p("map.theta_pre"), p("map.theta_post"), p("map.theta_res")] {
            let shape = store.get(&name)?.shape().to_vec();
            store.set(&name, Tensor::zeros(&shape))?;
            store.freeze(&name)?;
        }
    }
    Ok(())
}
