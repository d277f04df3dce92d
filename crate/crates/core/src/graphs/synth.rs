//! Synthetic graph constructions: cycles, complete graphs, the SRG(16,6,2,2)
//! pair, stochastic block models, and a citation-style benchmark generator.

use crate::error::{MhcError, Result};
use crate::graphs::graph::{Graph, Masks};
use crate::linalg::rng::Rng;
use crate::linalg::tensor::Tensor;

pub fn make_cycle(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(MhcError::InvalidArgument(format!("cycle needs n >= 3, got {n}")));
    }
    let edges = (0..n as u32).map(|i| (i, (i + 1) % n as u32));
    Ok(Graph::from_edge_list(format!("cycle{n}"), n, edges)?.0)
}

pub fn make_path(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(MhcError::InvalidArgument("path needs n >= 2".into()));
    }
    let edges = (0..n as u32 - 1).map(|i| (i, i + 1));
    Ok(Graph::from_edge_list(format!("path{n}"), n, edges)?.0)
}

pub fn make_complete(n: usize) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n as u32 {
        for j in (i + 1)..n as u32 {
            edges.push((i, j));
        }
    }
    Graph::from_edge_list(format!("k{n}"), n, edges).expect("complete graph").0
}

/// Shrikhande graph: vertices Z4 x Z4, (a,b) ~ (c,d) iff
/// (a-c, b-d) in {+-(1,0), +-(0,1), +-(1,1)} mod 4.
pub fn make_shrikhande() -> Graph {
    let id = |a: u32, b: u32| a * 4 + b;
    let mut edges = Vec::new();
    let deltas = [(1u32, 0u32), (0, 1), (1, 1)];
    for a in 0..4u32 {
        for b in 0..4u32 {
            for &(da, db) in &deltas {
                edges.push((id(a, b), id((a + da) % 4, (b + db) % 4)));
            }
        }
    }
    Graph::from_edge_list("shrikhande", 16, edges).expect("shrikhande").0
}

/// 4x4 rook's graph (K4 box K4): vertices Z4 x Z4, adjacent iff same row or
/// same column.
pub fn make_rook_4x4() -> Graph {
    let id = |a: u32, b: u32| a * 4 + b;
    let mut edges = Vec::new();
    for a in 0..4u32 {
        for b in 0..4u32 {
            for c in (b + 1)..4 {
                edges.push((id(a, b), id(a, c))); // same row
                edges.push((id(b, a), id(c, a))); // same column
            }
        }
    }
    Graph::from_edge_list("rook4", 16, edges).expect("rook").0
}

/// Stochastic block model. Resamples up to 10 times looking for a connected
/// draw; the boolean flags whether the returned graph is connected.
pub fn make_sbm(sizes: &[usize], p_in: f64, p_out: f64, rng: &mut Rng) -> Result<(Graph, bool)> {
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(MhcError::InvalidArgument("SBM probabilities must lie in [0, 1]".into()));
    }
    let n: usize = sizes.iter().sum();
    if n < 2 {
        return Err(MhcError::InvalidArgument("SBM needs at least 2 nodes".into()));
    }
    let mut block = vec![0usize; n];
    {
        let mut v = 0;
        for (b, &s) in sizes.iter().enumerate() {
            for _ in 0..s {
                block[v] = b;
                v += 1;
            }
        }
    }
    let mut last: Option<Graph> = None;
    for _attempt in 0..10 {
        let mut edges = Vec::new();
        for i in 0..n as u32 {
            for j in (i + 1)..n as u32 {
                let p = if block[i as usize] == block[j as usize] { p_in } else { p_out };
                if rng.chance(p) {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::from_edge_list(format!("sbm{n}"), n, edges)?.0;
        let connected = g.is_connected();
        if connected {
            return Ok((g, true));
        }
        last = Some(g);
    }
    Ok((last.expect("at least one sample"), false))
}

/// Parameters for the citation-style synthetic benchmark. Defaults match the
/// published Cora statistics (2708 nodes, 7 classes, 1433 binary features,
/// 5429 undirected edges, homophily 0.81, Planetoid-style splits).
#[derive(Clone, Debug)]
pub struct CitationParams {
    pub name: String,
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub target_edges: usize,
    pub homophily: f64,
    pub class_weights: Vec<f64>,
    pub words_per_class: usize,
    pub base_word_rate: f64,
    pub topic_word_rate: f64,
    pub train_per_class: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for CitationParams {
    fn default() -> Self {
        CitationParams {
            name: "cora-synth".into(),
            num_nodes: 2708,
            num_classes: 7,
            feature_dim: 1433,
            target_edges: 5429,
            homophily: 0.81,
            class_weights: vec![0.13, 0.08, 0.15, 0.30, 0.16, 0.11, 0.07],
            words_per_class: 80,
            base_word_rate: 0.008,
            topic_word_rate: 0.07,
            train_per_class: 20,
            val_size: 500,
            test_size: 1000,
        }
    }
}

/// Sample a citation-style graph with class-correlated sparse binary features
/// and Planetoid-style splits. Deterministic for a fixed rng seed.
pub fn make_citation(params: &CitationParams, rng: &mut Rng) -> Result<Graph> {
    let n = params.num_nodes;
    let c = params.num_classes;
    if params.class_weights.len() != c {
        return Err(MhcError::InvalidArgument("class_weights length != num_classes".into()));
    }
    let wsum: f64 = params.class_weights.iter().sum();

    let mut labels = vec![0usize; n];
    for v in 0..n {
        let mut u = rng.next_f64() * wsum;
        for (k, w) in params.class_weights.iter().enumerate() {
            if u < *w || k == c - 1 {
                labels[v] = k;
                break;
            }
            u -= w;
        }
    }
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); c];
    for v in 0..n {
        buckets[labels[v]].push(v as u32);
    }
    for (k, b) in buckets.iter().enumerate() {
        if b.len() < params.train_per_class + 2 {
            return Err(MhcError::InvalidArgument(format!("class {k} too small: {}", b.len())));
        }
    }

    // Edges: homophilous pairs within classes, the rest across classes.
    let n_same = (params.target_edges as f64 * params.homophily).round() as usize;
    let mut set = std::collections::BTreeSet::new();
    let add = |set: &mut std::collections::BTreeSet<(u32, u32)>, a: u32, b: u32| {
        if a != b {
            set.insert(if a < b { (a, b) } else { (b, a) });
        }
    };
    while set.len() < n_same {
        let mut u = rng.next_f64() * wsum;
        let mut cls = c - 1;
        for (k, w) in params.class_weights.iter().enumerate() {
            if u < *w {
                cls = k;
                break;
            }
            u -= w;
        }
        let b = &buckets[cls];
        let i = b[rng.below(b.len() as u64) as usize];
        let j = b[rng.below(b.len() as u64) as usize];
        add(&mut set, i, j);
    }
    while set.len() < params.target_edges {
        let i = rng.below(n as u64) as u32;
        let j = rng.below(n as u64) as u32;
        if labels[i as usize] != labels[j as usize] {
            add(&mut set, i, j);
        }
    }
    // Attach isolated nodes to a same-class peer so every node sees a message.
    let mut deg = vec![0usize; n];
    for &(a, b) in &set {
        deg[a as usize] += 1;
        deg[b as usize] += 1;
    }
    for v in 0..n {
        if deg[v] == 0 {
            let b = &buckets[labels[v]];
            loop {
                let u = b[rng.below(b.len() as u64) as usize];
                if u as usize != v {
                    add(&mut set, v as u32, u);
                    deg[v] += 1;
                    deg[u as usize] += 1;
                    break;
                }
            }
        }
    }

    // Features: sparse binary with per-class topic words.
    let f = params.feature_dim;
    let mut x = vec![0.0f64; n * f];
    let mut topic_words: Vec<Vec<usize>> = Vec::with_capacity(c);
    for _ in 0..c {
        let mut idx: Vec<usize> = (0..f).collect();
        rng.shuffle(&mut idx);
        idx.truncate(params.words_per_class);
        idx.sort_unstable();
        topic_words.push(idx);
    }
    for v in 0..n {
        let row = &mut x[v * f..(v + 1) * f];
        for slot in row.iter_mut() {
            if rng.chance(params.base_word_rate) {
                *slot = 1.0;
            }
        }
        for &w in &topic_words[labels[v]] {
            if rng.chance(params.topic_word_rate) {
                row[w] = 1.0;
            }
        }
    }

    // Planetoid-style split: fixed per-class train nodes, then val and test
    // from a shuffled remainder.
    let mut train = vec![false; n];
    for b in &buckets {
        let mut idx = b.clone();
        rng.shuffle(&mut idx);
        for &v in idx.iter().take(params.train_per_class) {
            train[v as usize] = true;
        }
    }
    let mut rest: Vec<usize> = (0..n).filter(|&v| !train[v]).collect();
    rng.shuffle(&mut rest);
    if rest.len() < params.val_size + params.test_size {
        return Err(MhcError::InvalidArgument("not enough nodes for val/test split".into()));
    }
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for &v in rest.iter().take(params.val_size) {
        val[v] = true;
    }
    for &v in rest.iter().skip(params.val_size).take(params.test_size) {
        test[v] = true;
    }

    let (mut g, _) = Graph::from_edge_list(params.name.clone(), n, set.into_iter())?;
    g.features = Some(Tensor::new(vec![n, f], x)?);
    g.labels = Some(labels);
    g.masks = Some(Masks { train, val, test });
    Ok(g)
}

/// Resolve a generator spec of the form used by the CLI:
/// `shrikhande`, `rook4`, `cycle:N`, `complete:N`, `path:N`,
/// `sbm:s1-s2-...:p_in:p_out[:seed]`.
pub fn graph_from_spec(spec: &str, default_seed: u64) -> Result<Graph> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts[0] {
        "shrikhande" => Ok(make_shrikhande()),
        "rook4" => Ok(make_rook_4x4()),
        "cycle" => {
            let n: usize = parse_field(parts.get(1), "cycle:N")?;
            make_cycle(n)
        }
        "path" => {
            let n: usize = parse_field(parts.get(1), "path:N")?;
            make_path(n)
        }
        "complete" => {
            let n: usize = parse_field(parts.get(1), "complete:N")?;
            Ok(make_complete(n))
        }
        "sbm" => {
            let sizes: Vec<usize> = parts
                .get(1)
                .ok_or_else(|| MhcError::InvalidArgument("sbm:s1-s2:p_in:p_out".into()))?
                .split('-')
                .map(|s| s.parse::<usize>().map_err(|_| MhcError::InvalidArgument(format!("bad size {s}"))))
                .collect::<Result<_>>()?;
            let p_in: f64 = parse_field(parts.get(2), "sbm p_in")?;
            let p_out: f64 = parse_field(parts.get(3), "sbm p_out")?;
            let seed: u64 = match parts.get(4) {
                Some(s) => s.parse().map_err(|_| MhcError::InvalidArgument(format!("bad seed {s}")))?,
                None => default_seed,
            };
            let (g, connected) = make_sbm(&sizes, p_in, p_out, &mut Rng::new(seed))?;
            if !connected {
                return Err(MhcError::InvalidArgument(format!("SBM draw disconnected after retries: {spec}")));
            }
            Ok(g)
        }
        other => Err(MhcError::InvalidArgument(format!("unknown graph spec '{other}'"))),
    }
}

fn parse_field<T: std::str::FromStr>(field: Option<&&str>, what: &str) -> Result<T> {
    field
        .ok_or_else(|| MhcError::InvalidArgument(format!("missing field in {what}")))?
        .parse::<T>()
        .map_err(|_| MhcError::InvalidArgument(format!("bad value in {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle4_is_two_regular() {
        let g = make_cycle(4).unwrap();
        assert_eq!(g.num_edges(), 4);
        assert!(g.degrees().iter().all(|&d| d == 2));
    }

    #[test]
    fn srg_pair_is_16_node_6_regular_48_edges() {
        for g in [make_shrikhande(), make_rook_4x4()] {
            assert_eq!(g.num_nodes, 16);
            assert_eq!(g.num_edges(), 48);
            assert!(g.degrees().iter().all(|&d| d == 6), "{} degrees {:?}", g.name, g.degrees());
        }
    }

    #[test]
    fn sbm_extreme_probabilities() {
        let mut rng = Rng::new(1);
        let (g, connected) = make_sbm(&[5, 5], 1.0, 0.0, &mut rng).unwrap();
        assert!(!connected);
        assert_eq!(g.num_edges(), 2 * 10); // two disjoint K5
    }

    #[test]
    fn sbm_fixed_seed_reproduces() {
        let (g1, c1) = make_sbm(&[10, 10], 0.8, 0.2, &mut Rng::new(42)).unwrap();
        let (g2, c2) = make_sbm(&[10, 10], 0.8, 0.2, &mut Rng::new(42)).unwrap();
        assert!(c1 && c2);
        assert_eq!(g1.edges, g2.edges);
        // frozen regression value captured at first run
        assert_eq!(g1.num_edges(), 87);
    }

    #[test]
    fn citation_fixture_matches_targets() {
        let params = CitationParams {
            num_nodes: 400,
            target_edges: 800,
            val_size: 100,
            test_size: 150,
            ..CitationParams::default()
        };
        let g = make_citation(&params, &mut Rng::new(7)).unwrap();
        assert_eq!(g.num_nodes, 400);
        assert!(g.num_edges() >= 800);
        let h = g.homophily().unwrap();
        assert!((h - 0.81).abs() < 0.03, "homophily {h}");
        let m = g.masks.as_ref().unwrap();
        m.validate(400).unwrap();
        assert_eq!(Masks::count(&m.train), 7 * 20);
        assert_eq!(Masks::count(&m.val), 100);
        assert_eq!(Masks::count(&m.test), 150);
    }

    #[test]
    fn spec_strings_resolve() {
        assert_eq!(graph_from_spec("cycle:8", 0).unwrap().num_nodes, 8);
        assert_eq!(graph_from_spec("shrikhande", 0).unwrap().num_nodes, 16);
        assert!(graph_from_spec("nope", 0).is_err());
        let g = graph_from_spec("sbm:10-10:0.8:0.2:42", 0).unwrap();
        assert_eq!(g.num_nodes, 20);
    }
}
