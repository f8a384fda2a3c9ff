//! Synthetic community-structured dynamic graphs for benchmarks and the
//! acceptance suite.
//!
//! Nodes split into equal communities. Every snapshot contains a persistent
//! within-community backbone plus fresh within-community edges that close
//! two-hop wedges over the backbone (new links form next to existing
//! structure). No cross-community edge is ever emitted, so a
//! cross-community pair is a clean planted anomaly: unlike normal fresh
//! edges it has neither a short prior distance nor common neighbors.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{
    canonical_pair, partition_snapshots, parse_edge_stream, DynamicGraph, GraphError, NodeId,
    Snapshot,
};
use crate::seed::derived_rng;

#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub nodes: usize,
    pub communities: usize,
    pub snapshots: usize,
    /// Persistent edges per community, present in every snapshot.
    pub backbone_edges: usize,
    /// Fresh wedge-closing edges per community per snapshot.
    pub fresh_edges: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            nodes: 200,
            communities: 2,
            snapshots: 8,
            backbone_edges: 60,
            fresh_edges: 30,
        }
    }
}

impl SyntheticConfig {
    pub fn edges_per_snapshot(&self) -> usize {
        self.communities * (self.backbone_edges + self.fresh_edges)
    }
}

/// The generated graph with its snapshot partition and community lookup.
pub struct SyntheticGraph {
    pub graph: DynamicGraph,
    pub snapshots: Vec<Snapshot>,
    /// Community of each dense node id.
    pub community_of: Vec<usize>,
    /// Dense node ids per community.
    pub members: Vec<Vec<NodeId>>,
}

impl SyntheticGraph {
    /// A uniformly drawn pair of nodes from two distinct communities. Such
    /// pairs never occur as edges in the generated graph.
    pub fn cross_community_pair(&self, rng: &mut ChaCha8Rng) -> (NodeId, NodeId) {
        let n_comm = self.members.len();
        let ca = rng.gen_range(0..n_comm);
        let mut cb = rng.gen_range(0..n_comm - 1);
        if cb >= ca {
            cb += 1;
        }
        let a = self.members[ca][rng.gen_range(0..self.members[ca].len())];
        let b = self.members[cb][rng.gen_range(0..self.members[cb].len())];
        canonical_pair(a, b)
    }
}

fn draw_pair(base: usize, size: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let a = base + rng.gen_range(0..size);
    let mut b = base + rng.gen_range(0..size - 1);
    if b >= a {
        b += 1;
    }
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Generate the graph deterministically from `seed`.
pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticGraph, GraphError> {
    assert!(cfg.communities >= 2, "need at least two communities");
    assert_eq!(
        cfg.nodes % cfg.communities,
        0,
        "nodes must divide evenly into communities"
    );
    let comm_size = cfg.nodes / cfg.communities;
    let max_pairs = comm_size * (comm_size - 1) / 2;
    assert!(
        cfg.backbone_edges + cfg.fresh_edges <= max_pairs,
        "community too small for requested edge counts"
    );

    // persistent backbones
    let mut backbones: Vec<Vec<(usize, usize)>> = Vec::with_capacity(cfg.communities);
    for comm in 0..cfg.communities {
        let base = comm * comm_size;
        let mut rng = derived_rng(seed, "backbone", &[comm as u64]);
        let mut chosen = HashSet::new();
        let mut edges = Vec::with_capacity(cfg.backbone_edges);
        while edges.len() < cfg.backbone_edges {
            let pair = draw_pair(base, comm_size, &mut rng);
            if chosen.insert(pair) {
                edges.push(pair);
            }
        }
        backbones.push(edges);
    }

    // Backbone adjacency, used to draw fresh edges as wedge closures.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); cfg.nodes];
    for backbone in &backbones {
        for &(a, b) in backbone {
            adj[a].push(b);
            adj[b].push(a);
        }
    }

    let mut text = String::new();
    for t in 0..cfg.snapshots {
        for comm in 0..cfg.communities {
            let base = comm * comm_size;
            let backbone = &backbones[comm];
            let taken: HashSet<(usize, usize)> = backbone.iter().copied().collect();
            for &(a, b) in backbone {
                text.push_str(&format!("{a} {b} {t}\n"));
            }
            let mut rng = derived_rng(seed, "fresh", &[comm as u64, t as u64]);
            let mut fresh = HashSet::new();
            let mut attempts = 0usize;
            while fresh.len() < cfg.fresh_edges {
                attempts += 1;
                let pair = if attempts <= 40 * cfg.fresh_edges {
                    // Close a wedge: connect two distinct backbone
                    // neighbors of a random hub node.
                    let (a, b) = backbone[rng.gen_range(0..backbone.len())];
                    let hub = if rng.gen_bool(0.5) { a } else { b };
                    let nbrs = &adj[hub];
                    if nbrs.len() < 2 {
                        continue;
                    }
                    let i = rng.gen_range(0..nbrs.len());
                    let mut j = rng.gen_range(0..nbrs.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    let (u, v) = (nbrs[i], nbrs[j]);
                    if u < v {
                        (u, v)
                    } else {
                        (v, u)
                    }
                } else {
                    // Degenerate backbones (tiny configs) may not offer
                    // enough distinct wedges; fall back to uniform pairs.
                    draw_pair(base, comm_size, &mut rng)
                };
                if !taken.contains(&pair) && fresh.insert(pair) {
                    text.push_str(&format!("{} {} {t}\n", pair.0, pair.1));
                }
            }
        }
    }

    let graph = parse_edge_stream(text.as_bytes())?;
    let snapshots = partition_snapshots(&graph, cfg.edges_per_snapshot())?;

    let community_of: Vec<usize> = graph
        .labels()
        .iter()
        .map(|l| l.parse::<usize>().expect("numeric label") / comm_size)
        .collect();
    let mut members = vec![Vec::new(); cfg.communities];
    for (v, &c) in community_of.iter().enumerate() {
        members[c].push(v as NodeId);
    }

    Ok(SyntheticGraph {
        graph,
        snapshots,
        community_of,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let cfg = SyntheticConfig::default();
        let syn = generate(&cfg, 7).unwrap();
        assert_eq!(syn.snapshots.len(), 8);
        for s in &syn.snapshots {
            assert_eq!(s.instances.len(), 180);
        }
    }

    #[test]
    fn fresh_edges_close_backbone_wedges() {
        let cfg = SyntheticConfig::default();
        let syn = generate(&cfg, 19).unwrap();
        // Backbone pairs are exactly those present in every snapshot.
        let backbone: HashSet<(NodeId, NodeId)> = syn.snapshots[0]
            .pairs()
            .filter(|&(a, b)| syn.snapshots.iter().all(|s| s.contains_pair(a, b)))
            .collect();
        let mut adj: Vec<HashSet<NodeId>> = vec![HashSet::new(); cfg.nodes];
        for &(a, b) in &backbone {
            adj[a as usize].insert(b);
            adj[b as usize].insert(a);
        }
        for s in &syn.snapshots {
            for (a, b) in s.pairs() {
                if backbone.contains(&(a, b)) {
                    continue;
                }
                assert!(
                    !adj[a as usize].is_disjoint(&adj[b as usize]),
                    "fresh edge ({a}, {b}) has no common backbone neighbor"
                );
            }
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg, 42).unwrap();
        let b = generate(&cfg, 42).unwrap();
        assert_eq!(a.graph.edges(), b.graph.edges());
        let c = generate(&cfg, 43).unwrap();
        assert_ne!(a.graph.edges(), c.graph.edges());
    }

    #[test]
    fn no_cross_community_edges() {
        let cfg = SyntheticConfig::default();
        let syn = generate(&cfg, 11).unwrap();
        for e in syn.graph.edges() {
            assert_eq!(
                syn.community_of[e.source as usize],
                syn.community_of[e.target as usize]
            );
        }
    }

    #[test]
    fn backbone_persists_across_snapshots() {
        let cfg = SyntheticConfig::default();
        let syn = generate(&cfg, 13).unwrap();
        let first = &syn.snapshots[0];
        let last = &syn.snapshots[cfg.snapshots - 1];
        let shared = first
            .pairs()
            .filter(|&(a, b)| last.contains_pair(a, b))
            .count();
        assert!(shared >= cfg.communities * cfg.backbone_edges);
    }

    #[test]
    fn cross_pairs_are_absent_everywhere() {
        let cfg = SyntheticConfig::default();
        let syn = generate(&cfg, 17).unwrap();
        let mut rng = derived_rng(1, "test", &[]);
        for _ in 0..500 {
            let (a, b) = syn.cross_community_pair(&mut rng);
            assert!(a < b);
            assert_ne!(
                syn.community_of[a as usize],
                syn.community_of[b as usize]
            );
            assert!(!syn.graph.pair_exists(a, b));
        }
    }
}
