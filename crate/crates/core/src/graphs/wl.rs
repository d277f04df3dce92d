//! 1-WL color refinement and the 4-cycle signature.

use crate::graphs::graph::{Csr, Graph};
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct WlColoring {
    pub colors: Vec<u32>,
    pub rounds: usize,
    pub stable: bool,
}

fn class_count(colors: &[u32]) -> usize {
    let mut seen = colors.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// One refinement round with canonical relabeling: the key of a node is
/// (own color, sorted multiset of neighbor colors); keys get fresh dense ids
/// assigned in sorted key order, which keeps colors comparable across graphs
/// refined together.
fn refine_round(csr: &Csr, colors: &[u32]) -> Vec<u32> {
    let n = csr.num_nodes();
    let mut keys: Vec<(u32, Vec<u32>)> = Vec::with_capacity(n);
    for v in 0..n {
        let mut nb: Vec<u32> = csr.neighbors(v).iter().map(|&u| colors[u as usize]).collect();
        nb.sort_unstable();
        keys.push((colors[v], nb));
    }
    let mut table: BTreeMap<&(u32, Vec<u32>), u32> = BTreeMap::new();
    for k in &keys {
        let next = table.len() as u32;
        table.entry(k).or_insert(next);
    }
    // reassign ids in sorted key order so the labeling is canonical
    let mut canon: BTreeMap<&(u32, Vec<u32>), u32> = BTreeMap::new();
    for (i, (k, _)) in table.iter().enumerate() {
        canon.insert(*k, i as u32);
    }
    keys.iter().map(|k| canon[k]).collect()
}

fn refine_csr(csr: &Csr, initial: Option<&[u32]>) -> WlColoring {
    let n = csr.num_nodes();
    let mut colors: Vec<u32> = match initial {
        Some(c) => c.to_vec(),
        None => vec![0; n],
    };
    let mut classes = class_count(&colors);
    let mut rounds = 0;
    let mut stable = false;
    // a strictly refining partition stabilizes within n rounds
    for _ in 0..n.max(1) {
        let next = refine_round(csr, &colors);
        rounds += 1;
        let next_classes = class_count(&next);
        debug_assert!(next_classes >= classes);
        let done = next_classes == classes;
        colors = next;
        classes = next_classes;
        if done {
            stable = true;
            break;
        }
    }
    WlColoring { colors, rounds, stable }
}

/// Iterate 1-WL refinement until the partition stabilizes. Without an initial
/// coloring all nodes start in one class.
pub fn wl_refine(g: &Graph, initial: Option<&[u32]>) -> WlColoring {
    refine_csr(&g.adjacency_list(), initial)
}

/// Initial colors hashed from node feature rows (nodes with identical feature
/// rows share a color).
pub fn feature_hash_colors(g: &Graph) -> Option<Vec<u32>> {
    let f = g.features.as_ref()?;
    let (n, d) = f.dims2().ok()?;
    let mut table: BTreeMap<Vec<u64>, u32> = BTreeMap::new();
    let mut colors = Vec::with_capacity(n);
    for i in 0..n {
        let key: Vec<u64> = f.data()[i * d..(i + 1) * d].iter().map(|x| x.to_bits()).collect();
        let next = table.len() as u32;
        let id = *table.entry(key).or_insert(next);
        colors.push(id);
    }
    Some(colors)
}

/// Color histogram of a stable coloring, sorted for comparison.
fn histogram(colors: &[u32]) -> Vec<(u32, usize)> {
    let mut map: BTreeMap<u32, usize> = BTreeMap::new();
    for &c in colors {
        *map.entry(c).or_insert(0) += 1;
    }
    map.into_iter().collect()
}

/// True iff 1-WL separates the two graphs: refinement runs on the disjoint
/// union so colors are directly comparable, then the stable color histograms
/// are compared.
pub fn wl_distinguishes(g1: &Graph, g2: &Graph) -> bool {
    if g1.num_nodes != g2.num_nodes || g1.num_edges() != g2.num_edges() {
        return true;
    }
    let union = g1.disjoint_union(g2);
    let coloring = refine_csr(&union.adjacency_list(), None);
    let h1 = histogram(&coloring.colors[..g1.num_nodes]);
    let h2 = histogram(&coloring.colors[g1.num_nodes..]);
    h1 != h2
}

/// Cycle4 signature: for each node v, sum over neighbors u of
/// |N(v) intersect N(u)| (counts 4-cycles through v, each twice, on top of
/// shared-triangle contributions).
pub fn cycle4_signature(g: &Graph) -> Vec<u64> {
    let csr = g.adjacency_list();
    let n = g.num_nodes;
    let mut sig = vec![0u64; n];
    for v in 0..n {
        let nv = csr.neighbors(v);
        let mut total = 0u64;
        for &u in nv {
            total += sorted_intersection_size(nv, csr.neighbors(u as usize));
        }
        sig[v] = total;
    }
    sig
}

fn sorted_intersection_size(a: &[u32], b: &[u32]) -> u64 {
    let (mut i, mut j, mut count) = (0usize, 0usize, 0u64);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::synth::*;
    use crate::linalg::Rng;

    #[test]
    fn regular_graph_stays_single_class() {
        let g = make_cycle(6).unwrap();
        let c = wl_refine(&g, None);
        assert!(c.stable);
        assert_eq!(c.rounds, 1);
        assert_eq!(class_count(&c.colors), 1);
    }

    #[test]
    fn path3_splits_endpoints_from_center() {
        let g = make_path(3).unwrap();
        let c = wl_refine(&g, None);
        assert!(c.stable);
        assert_eq!(c.colors[0], c.colors[2]);
        assert_ne!(c.colors[0], c.colors[1]);
    }

    #[test]
    fn shrikhande_rook_are_wl_equivalent() {
        assert!(!wl_distinguishes(&make_shrikhande(), &make_rook_4x4()));
    }

    #[test]
    fn c6_vs_two_triangles_classic_wl_failure() {
        let c6 = make_cycle(6).unwrap();
        let two_c3 = make_cycle(3).unwrap().disjoint_union(&make_cycle(3).unwrap());
        assert!(!wl_distinguishes(&c6, &two_c3));
    }

    #[test]
    fn p3_vs_k3_distinguished() {
        assert!(wl_distinguishes(&make_path(3).unwrap(), &make_complete(3)));
    }

    #[test]
    fn refinement_property_on_random_graphs() {
        // the partition at round t+1 always refines round t
        let mut rng = Rng::new(17);
        for _ in 0..100 {
            let n = 4 + rng.below(27) as usize;
            let (g, _) = make_sbm(&[n / 2, n - n / 2], 0.4, 0.2, &mut rng).unwrap();
            let csr = g.adjacency_list();
            let mut colors = vec![0u32; n];
            for _ in 0..n {
                let next = refine_round(&csr, &colors);
                // refinement: same next-color implies same previous color
                let mut rep: BTreeMap<u32, u32> = BTreeMap::new();
                for v in 0..n {
                    let prev = *rep.entry(next[v]).or_insert(colors[v]);
                    assert_eq!(prev, colors[v], "partition not refined");
                }
                if class_count(&next) == class_count(&colors) {
                    break;
                }
                colors = next;
            }
        }
    }

    #[test]
    fn wl_invariant_under_relabeling_and_symmetric() {
        let mut rng = Rng::new(23);
        for _ in 0..20 {
            let n = 6 + rng.below(20) as usize;
            let (g, _) = make_sbm(&[n / 2, n - n / 2], 0.5, 0.25, &mut rng).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let gp = g.permuted(&perm).unwrap();
            assert!(!wl_distinguishes(&g, &gp));
            assert_eq!(wl_distinguishes(&g, &gp), wl_distinguishes(&gp, &g));
        }
    }

    #[test]
    fn cycle4_hand_cases() {
        // C4: neighborhoods of adjacent nodes are disjoint
        assert_eq!(cycle4_signature(&make_cycle(4).unwrap()), vec![0, 0, 0, 0]);
        // K3: each node has 2 neighbors sharing exactly 1 common neighbor with v
        assert_eq!(cycle4_signature(&make_complete(3)), vec![2, 2, 2]);
    }

    #[test]
    fn cycle4_constant_12_on_both_srgs() {
        // lambda = 2 common neighbors per adjacent pair, degree 6: 6 * 2 = 12
        for g in [make_shrikhande(), make_rook_4x4()] {
            let sig = cycle4_signature(&g);
            assert!(sig.iter().all(|&s| s == 12), "{}: {:?}", g.name, sig);
        }
    }
}
