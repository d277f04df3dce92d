//! Brute-force isomorphism search and strongly-regular-graph checks.
//!
//! Exhaustive backtracking over vertex maps with adjacency-consistency
//! pruning; bitmask adjacency keeps the inner checks O(1) for N <= 64, which
//! covers every certification this crate performs.

use crate::error::{MhcError, Result};
use crate::graphs::graph::Graph;

fn bitmask_adjacency(g: &Graph) -> Vec<u64> {
    let mut adj = vec![0u64; g.num_nodes];
    for &(a, b) in &g.edges {
        adj[a as usize] |= 1 << b;
        adj[b as usize] |= 1 << a;
    }
    adj
}

/// Exhaustive isomorphism decision for graphs with at most 64 nodes.
pub fn are_isomorphic(g1: &Graph, g2: &Graph) -> Result<bool> {
    if g1.num_nodes != g2.num_nodes {
        return Ok(false);
    }
    let n = g1.num_nodes;
    if n > 64 {
        return Err(MhcError::InvalidArgument(format!(
            "brute-force isomorphism supports up to 64 nodes, got {n}"
        )));
    }
    if g1.num_edges() != g2.num_edges() {
        return Ok(false);
    }
    let mut d1 = g1.degrees();
    let mut d2 = g2.degrees();
    let order = map_order(g1);
    d1.sort_unstable();
    d2.sort_unstable();
    if d1 != d2 {
        return Ok(false);
    }
    let adj1 = bitmask_adjacency(g1);
    let adj2 = bitmask_adjacency(g2);
    let deg1 = g1.degrees();
    let deg2 = g2.degrees();

    let mut phi = vec![usize::MAX; n];
    let mut used: u64 = 0;
    Ok(extend(&order, 0, &adj1, &adj2, &deg1, &deg2, &mut phi, &mut used))
}

/// Vertex order for the search: highest degree first, then greedily the vertex
/// with the most already-ordered neighbors, so adjacency constraints bind as
/// early as possible.
fn map_order(g: &Graph) -> Vec<usize> {
    let n = g.num_nodes;
    let deg = g.degrees();
    let adj = bitmask_adjacency(g);
    let mut order = Vec::with_capacity(n);
    let mut placed: u64 = 0;
    for _ in 0..n {
        let mut best = usize::MAX;
        let mut best_key = (0usize, 0usize);
        for v in 0..n {
            if placed & (1 << v) != 0 {
                continue;
            }
            let anchored = (adj[v] & placed).count_ones() as usize;
            let key = (anchored, deg[v]);
            if best == usize::MAX || key > best_key {
                best = v;
                best_key = key;
            }
        }
        order.push(best);
        placed |= 1 << best;
    }
    order
}

fn extend(
    order: &[usize],
    depth: usize,
    adj1: &[u64],
    adj2: &[u64],
    deg1: &[usize],
    deg2: &[usize],
    phi: &mut [usize],
    used: &mut u64,
) -> bool {
    if depth == order.len() {
        return true;
    }
    let v = order[depth];
    // image of v's already-mapped neighbors
    let mut required: u64 = 0;
    let mut mapped_mask: u64 = 0;
    for u in 0..adj1.len() {
        if phi[u] != usize::MAX {
            mapped_mask |= 1 << phi[u];
            if adj1[v] & (1 << u) != 0 {
                required |= 1 << phi[u];
            }
        }
    }
    for cand in 0..adj2.len() {
        if *used & (1 << cand) != 0 || deg2[cand] != deg1[v] {
            continue;
        }
        if adj2[cand] & mapped_mask != required {
            continue;
        }
        phi[v] = cand;
        *used |= 1 << cand;
        if extend(order, depth + 1, adj1, adj2, deg1, deg2, phi, used) {
            return true;
        }
        phi[v] = usize::MAX;
        *used &= !(1 << cand);
    }
    false
}

/// Check the SRG axioms by brute force: k-regular, every adjacent pair has
/// exactly `lambda` common neighbors, every non-adjacent pair exactly `mu`.
/// Returns (v, k, lambda, mu) when the graph is strongly regular.
pub fn srg_parameters(g: &Graph) -> Option<(usize, usize, usize, usize)> {
    let n = g.num_nodes;
    if n < 3 || n > 64 {
        return None;
    }
    let adj = bitmask_adjacency(g);
    let deg = g.degrees();
    let k = deg[0];
    if deg.iter().any(|&d| d != k) {
        return None;
    }
    let mut lambda: Option<usize> = None;
    let mut mu: Option<usize> = None;
    for i in 0..n {
        for j in (i + 1)..n {
            let common = (adj[i] & adj[j]).count_ones() as usize;
            if adj[i] & (1 << j) != 0 {
                match lambda {
                    None => lambda = Some(common),
                    Some(l) if l != common => return None,
                    _ => {}
                }
            } else {
                match mu {
                    None => mu = Some(common),
                    Some(m) if m != common => return None,
                    _ => {}
                }
            }
        }
    }
    Some((n, k, lambda?, mu?))
}

/// Number of triangles through each vertex.
pub fn triangles_per_vertex(g: &Graph) -> Vec<usize> {
    let adj = bitmask_adjacency(g);
    let n = g.num_nodes;
    let mut out = vec![0usize; n];
    for v in 0..n {
        let mut count = 0;
        for u in 0..n {
            if adj[v] & (1 << u) != 0 {
                count += (adj[v] & adj[u]).count_ones() as usize;
            }
        }
        out[v] = count / 2;
    }
    out
}

/// Number of triangles inside the subgraph induced by N(v). Distinguishes the
/// rook graph (two disjoint triangles per neighborhood) from the Shrikhande
/// graph (neighborhoods induce a 6-cycle, no triangles).
pub fn neighborhood_triangles(g: &Graph, v: usize) -> usize {
    let adj = bitmask_adjacency(g);
    let nv = adj[v];
    let n = g.num_nodes;
    let mut count = 0;
    for a in 0..n {
        if nv & (1 << a) == 0 {
            continue;
        }
        for b in (a + 1)..n {
            if nv & (1 << b) == 0 || adj[a] & (1 << b) == 0 {
                continue;
            }
            count += (adj[a] & adj[b] & nv).count_ones() as usize;
        }
    }
    // each triangle visited once per its 3 edges
    count / 3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::synth::*;
    use crate::linalg::Rng;

    #[test]
    fn both_srg_16_6_2_2() {
        assert_eq!(srg_parameters(&make_shrikhande()), Some((16, 6, 2, 2)));
        assert_eq!(srg_parameters(&make_rook_4x4()), Some((16, 6, 2, 2)));
    }

    #[test]
    fn six_triangles_through_every_vertex() {
        // k * lambda / 2 = 6 * 2 / 2 = 6
        for g in [make_shrikhande(), make_rook_4x4()] {
            assert!(triangles_per_vertex(&g).iter().all(|&t| t == 6));
        }
    }

    #[test]
    fn srg_pair_not_isomorphic() {
        assert!(!are_isomorphic(&make_shrikhande(), &make_rook_4x4()).unwrap());
    }

    #[test]
    fn neighborhood_structure_separates_the_pair() {
        let shr = make_shrikhande();
        let rook = make_rook_4x4();
        assert!((0..16).all(|v| neighborhood_triangles(&shr, v) == 0));
        assert!((0..16).all(|v| neighborhood_triangles(&rook, v) == 2));
    }

    #[test]
    fn isomorphic_relabelings_are_detected() {
        let mut rng = Rng::new(31);
        for _ in 0..10 {
            let n = 5 + rng.below(10) as usize;
            let (g, _) = make_sbm(&[n / 2, n - n / 2], 0.5, 0.3, &mut rng).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            assert!(are_isomorphic(&g, &g.permuted(&perm).unwrap()).unwrap());
        }
    }

    #[test]
    fn cycle_vs_path_not_isomorphic() {
        assert!(!are_isomorphic(&make_cycle(5).unwrap(), &make_path(5).unwrap()).unwrap());
    }
}
