//! Dataset directory ingestion and writing.
//!
//! Layout: `meta.json` ({"name", "num_nodes"}), `edges.tsv` (two integer
//! columns), `features.csv` (N rows x d), `labels.csv` (N integers), optional
//! `splits.json` ({"train": [...], "val": [...], "test": [...]}).

use crate::error::{MhcError, Result};
use crate::graphs::graph::{Graph, IngestStats, Masks};
use crate::linalg::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Deserialize, Serialize)]
struct Meta {
    name: String,
    num_nodes: usize,
}

#[derive(Debug, Default, Deserialize, Serialize)]
struct SplitLists {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Loader report: the graph plus ingestion bookkeeping, including both edge
/// count conventions (some published tables count each undirected edge once,
/// others count both directions).
#[derive(Debug)]
pub struct LoadedDataset {
    pub graph: Graph,
    pub stats: IngestStats,
    pub undirected_edges: usize,
    pub directed_edges: usize,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| MhcError::Dataset(format!("missing or unreadable {}: {e}", path.display())))
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let meta: Meta = serde_json::from_str(&read_to_string(&dir.join("meta.json"))?)
        .map_err(|e| MhcError::Dataset(format!("meta.json: {e}")))?;
    let n = meta.num_nodes;

    let mut raw_edges: Vec<(u32, u32)> = Vec::new();
    for (lineno, line) in read_to_string(&dir.join("edges.tsv"))?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<u32> {
            tok.ok_or_else(|| MhcError::Dataset(format!("edges.tsv line {}: expected two columns", lineno + 1)))?
                .parse::<u32>()
                .map_err(|_| MhcError::Dataset(format!("edges.tsv line {}: bad integer", lineno + 1)))
        };
        let a = parse(it.next())?;
        let b = parse(it.next())?;
        raw_edges.push((a, b));
    }

    let (mut graph, stats) = Graph::from_edge_list(meta.name, n, raw_edges)?;

    // features.csv
    let ftext = read_to_string(&dir.join("features.csv"))?;
    let mut rows = 0usize;
    let mut dim = None;
    let mut data: Vec<f64> = Vec::new();
    for (lineno, line) in ftext.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for tok in line.split(',') {
            let v: f64 = tok.trim().parse().map_err(|_| {
                MhcError::Dataset(format!("features.csv line {}: bad number '{tok}'", lineno + 1))
            })?;
            data.push(v);
            count += 1;
        }
        match dim {
            None => dim = Some(count),
            Some(d) if d != count => {
                return Err(MhcError::Dataset(format!(
                    "features.csv line {}: {count} columns, expected {d}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    if rows != n {
        return Err(MhcError::Dataset(format!("features.csv has {rows} rows for {n} nodes")));
    }
    let d = dim.unwrap_or(1);
    graph.features = Some(
        Tensor::new(vec![n, d], data)
            .map_err(|_| MhcError::Dataset("features.csv produced an inconsistent matrix".into()))?,
    );

    // labels.csv
    let ltext = read_to_string(&dir.join("labels.csv"))?;
    let mut labels = Vec::with_capacity(n);
    for (lineno, line) in ltext.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: usize = line
            .parse()
            .map_err(|_| MhcError::Dataset(format!("labels.csv line {}: bad label", lineno + 1)))?;
        labels.push(v);
    }
    if labels.len() != n {
        return Err(MhcError::Dataset(format!("labels.csv has {} rows for {n} nodes", labels.len())));
    }
    graph.labels = Some(labels);

    // splits.json (optional)
    let splits_path = dir.join("splits.json");
    if splits_path.exists() {
        let lists: SplitLists = serde_json::from_str(&read_to_string(&splits_path)?)
            .map_err(|e| MhcError::Dataset(format!("splits.json: {e}")))?;
        let mut masks = Masks { train: vec![false; n], val: vec![false; n], test: vec![false; n] };
        for (ids, mask) in [(&lists.train, &mut masks.train), (&lists.val, &mut masks.val), (&lists.test, &mut masks.test)] {
            for &i in ids {
                if i >= n {
                    return Err(MhcError::Dataset(format!("splits.json index {i} out of range")));
                }
                mask[i] = true;
            }
        }
        masks.validate(n)?;
        graph.masks = Some(masks);
    }

    let undirected = graph.num_edges();
    Ok(LoadedDataset { graph, stats, undirected_edges: undirected, directed_edges: 2 * undirected })
}

/// Write a graph back out in the loader's directory layout.
pub fn save_dataset(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = Meta { name: g.name.clone(), num_nodes: g.num_nodes };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;

    let mut edges = String::new();
    for &(a, b) in &g.edges {
        edges.push_str(&format!("{a}\t{b}\n"));
    }
    fs::write(dir.join("edges.tsv"), edges)?;

    let f = g
        .features
        .as_ref()
        .ok_or_else(|| MhcError::InvalidArgument("save_dataset needs features".into()))?;
    let (n, d) = f.dims2()?;
    let mut out = std::io::BufWriter::new(fs::File::create(dir.join("features.csv"))?);
    for i in 0..n {
        let row = f.row(i);
        for j in 0..d {
            if j > 0 {
                out.write_all(b",")?;
            }
            // features are typically 0/1; write compactly but losslessly
            if row[j] == row[j].trunc() && row[j].abs() < 1e15 {
                write!(out, "{}", row[j] as i64)?;
            } else {
                write!(out, "{}", row[j])?;
            }
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let labels = g
        .labels
        .as_ref()
        .ok_or_else(|| MhcError::InvalidArgument("save_dataset needs labels".into()))?;
    let mut ltext = String::new();
    for l in labels {
        ltext.push_str(&format!("{l}\n"));
    }
    fs::write(dir.join("labels.csv"), ltext)?;

    if let Some(m) = &g.masks {
        let to_ids = |mask: &[bool]| -> Vec<usize> {
            mask.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
        };
        let lists = SplitLists { train: to_ids(&m.train), val: to_ids(&m.val), test: to_ids(&m.test) };
        fs::write(dir.join("splits.json"), serde_json::to_string(&lists)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::synth::{make_citation, CitationParams};
    use crate::linalg::Rng;

    fn tiny_dir(dir: &Path) {
        fs::write(dir.join("meta.json"), r#"{"name":"tiny","num_nodes":3}"#).unwrap();
        fs::write(dir.join("edges.tsv"), "0\t1\n1\t2\n1 0\n").unwrap();
        fs::write(dir.join("features.csv"), "1,0\n0,1\n1,1\n").unwrap();
        fs::write(dir.join("labels.csv"), "0\n1\n0\n").unwrap();
    }

    #[test]
    fn loads_and_merges_reversed_edges() {
        let tmp = tempfile::tempdir().unwrap();
        tiny_dir(tmp.path());
        let loaded = load_dataset(tmp.path()).unwrap();
        assert_eq!(loaded.graph.num_nodes, 3);
        assert_eq!(loaded.undirected_edges, 2);
        assert_eq!(loaded.directed_edges, 4);
        assert_eq!(loaded.stats.duplicates_merged, 1);
    }

    #[test]
    fn empty_edge_file_loads() {
        let tmp = tempfile::tempdir().unwrap();
        tiny_dir(tmp.path());
        fs::write(tmp.path().join("edges.tsv"), "").unwrap();
        let loaded = load_dataset(tmp.path()).unwrap();
        assert_eq!(loaded.graph.num_edges(), 0);
    }

    #[test]
    fn row_count_mismatch_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        tiny_dir(tmp.path());
        fs::write(tmp.path().join("labels.csv"), "0\n1\n").unwrap();
        assert!(load_dataset(tmp.path()).is_err());
    }

    #[test]
    fn out_of_range_edge_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        tiny_dir(tmp.path());
        fs::write(tmp.path().join("edges.tsv"), "0\t7\n").unwrap();
        assert!(load_dataset(tmp.path()).is_err());
    }

    #[test]
    fn missing_file_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        tiny_dir(tmp.path());
        fs::remove_file(tmp.path().join("features.csv")).unwrap();
        assert!(load_dataset(tmp.path()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let params = CitationParams {
            num_nodes: 120,
            target_edges: 260,
            feature_dim: 40,
            train_per_class: 4,
            val_size: 30,
            test_size: 40,
            ..CitationParams::default()
        };
        let g = make_citation(&params, &mut Rng::new(3)).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        save_dataset(&g, tmp.path()).unwrap();
        let loaded = load_dataset(tmp.path()).unwrap().graph;
        assert_eq!(loaded.num_nodes, g.num_nodes);
        assert_eq!(loaded.edges, g.edges);
        assert_eq!(loaded.labels, g.labels);
        assert!(loaded.features.as_ref().unwrap().approx_eq(g.features.as_ref().unwrap(), 0.0));
        let (m1, m2) = (loaded.masks.unwrap(), g.masks.unwrap());
        assert_eq!(m1.train, m2.train);
        assert_eq!(m1.val, m2.val);
        assert_eq!(m1.test, m2.test);
    }
}
