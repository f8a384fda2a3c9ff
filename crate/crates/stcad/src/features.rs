//! Two-level node features.
//!
//! Level 1 (independent): PageRank score in the current snapshot, capped hop
//! distance to the nearer endpoint of the central edge, and the central
//! edge's lifetime in snapshots. Level 2 (coupling): change of endpoint
//! distance, of endpoint degree sum, and of common-neighbor count between the
//! current snapshot and the one `delta_t` earlier. Coupling features depend
//! only on the central edge, so they are identical for every node of a sample
//! at the same window position.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use crate::graph::{first_occurrence_snapshot, NodeId, Snapshot};
use crate::sampler::EdgeSample;

/// Tunables for feature extraction. PageRank parameters and the BFS distance
/// cap; `delta_t` is the snapshot lag of the coupling features.
#[derive(Debug, Clone, Copy)]
pub struct FeatureConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub dist_cap: usize,
    pub delta_t: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            damping: 0.85,
            tol: 1e-8,
            max_iter: 100,
            dist_cap: 5,
            delta_t: 1,
        }
    }
}

/// The six per-node scalars fed to the model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector {
    pub f_glo: f64,
    pub f_loc: f64,
    pub f_tmp: f64,
    pub f_dc: f64,
    pub f_ic: f64,
    pub f_nc: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.f_glo, self.f_loc, self.f_tmp, self.f_dc, self.f_ic, self.f_nc,
        ]
    }
}

/// PageRank by power iteration on index-based adjacency. Dangling mass is
/// redistributed uniformly; scores sum to 1.
pub fn pagerank_adjacency(
    adj: &[Vec<usize>],
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let n = adj.len();
    if n == 0 {
        return Vec::new();
    }
    let uniform = 1.0 / n as f64;
    let mut rank = vec![uniform; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iter {
        let dangling: f64 = (0..n).filter(|&v| adj[v].is_empty()).map(|v| rank[v]).sum();
        let base = (1.0 - damping) * uniform + damping * dangling * uniform;
        next.iter_mut().for_each(|x| *x = base);
        for v in 0..n {
            let deg = adj[v].len();
            if deg > 0 {
                let share = damping * rank[v] / deg as f64;
                for &u in &adj[v] {
                    next[u] += share;
                }
            }
        }
        let delta: f64 = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if delta < tol {
            break;
        }
    }
    rank
}

/// PageRank over a snapshot's nodes, keyed by node id.
pub fn pagerank(
    s: &Snapshot,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> HashMap<NodeId, f64> {
    let nodes = s.nodes();
    let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let adj: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&v| s.neighbors(v).iter().map(|u| index[u]).collect())
        .collect();
    let rank = pagerank_adjacency(&adj, damping, tol, max_iter);
    nodes.iter().copied().zip(rank).collect()
}

/// Hop distance between `a` and `b` in the snapshot, truncated at `cap`.
/// Returns `cap` when unreachable or when either endpoint is absent;
/// `a == b` is distance 0 regardless.
pub fn shortest_distance(s: &Snapshot, a: NodeId, b: NodeId, cap: usize) -> usize {
    if a == b {
        return 0;
    }
    if !s.contains_node(a) || !s.contains_node(b) {
        return cap;
    }
    let mut seen: HashMap<NodeId, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    seen.insert(a, 0);
    queue.push_back(a);
    while let Some(v) = queue.pop_front() {
        let d = seen[&v];
        if d >= cap {
            break;
        }
        for &u in s.neighbors(v) {
            if u == b {
                return d + 1;
            }
            if !seen.contains_key(&u) {
                seen.insert(u, d + 1);
                queue.push_back(u);
            }
        }
    }
    cap
}

/// Per-snapshot PageRank scores, computed once and shared across samples.
pub struct PageRankCache {
    per_snapshot: Vec<HashMap<NodeId, f64>>,
}

impl PageRankCache {
    pub fn build(snapshots: &[Snapshot], cfg: &FeatureConfig) -> Self {
        use rayon::prelude::*;
        let per_snapshot = snapshots
            .par_iter()
            .map(|s| pagerank(s, cfg.damping, cfg.tol, cfg.max_iter))
            .collect();
        PageRankCache { per_snapshot }
    }

    /// Score of `v` in snapshot `t`; 0 when `v` is absent.
    pub fn score(&self, t: usize, v: NodeId) -> f64 {
        self.per_snapshot[t].get(&v).copied().unwrap_or(0.0)
    }

    pub fn scores(&self, t: usize) -> &HashMap<NodeId, f64> {
        &self.per_snapshot[t]
    }
}

/// Feature extraction over an immutable snapshot list.
pub struct FeatureExtractor<'a> {
    snapshots: &'a [Snapshot],
    cache: &'a PageRankCache,
    cfg: FeatureConfig,
}

/// Features and positional data for every position of one sample,
/// row-ordered exactly as the sample's window sequence.
#[derive(Debug, Clone)]
pub struct SampleFeatures {
    pub rows: Vec<FeatureVector>,
    /// 0 = on the central edge, 1 = common neighbor of both endpoints,
    /// 2 = everything else.
    pub rel_class: Vec<u8>,
    /// Local window position 0..T-1, oldest snapshot first.
    pub window_pos: Vec<usize>,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(snapshots: &'a [Snapshot], cache: &'a PageRankCache, cfg: FeatureConfig) -> Self {
        FeatureExtractor {
            snapshots,
            cache,
            cfg,
        }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// (f_glo, f_loc, f_tmp) for node `v` at global snapshot `t`.
    /// `t_start` is the first snapshot containing the central pair, if any.
    pub fn level1(
        &self,
        central: (NodeId, NodeId),
        t_start: Option<usize>,
        t: usize,
        v: NodeId,
    ) -> (f64, f64, f64) {
        let s = &self.snapshots[t];
        let cap = self.cfg.dist_cap;
        let f_glo = self.cache.score(t, v);
        let f_loc = shortest_distance(s, v, central.0, cap)
            .min(shortest_distance(s, v, central.1, cap)) as f64;
        let f_tmp = match t_start {
            Some(start) if start <= t => (t - start) as f64,
            _ => 0.0,
        };
        (f_glo, f_loc, f_tmp)
    }

    /// (f_dc, f_ic, f_nc) for the central pair at global snapshot `t`.
    /// All three are zero when no snapshot exists `delta_t` steps earlier.
    pub fn coupling(&self, central: (NodeId, NodeId), t: usize) -> (f64, f64, f64) {
        let dt = self.cfg.delta_t;
        if t < dt {
            return (0.0, 0.0, 0.0);
        }
        let (i, j) = central;
        let cur = &self.snapshots[t];
        let prev = &self.snapshots[t - dt];
        let prev_dist = shortest_distance(prev, i, j, self.cfg.dist_cap);
        let f_dc = prev_dist.saturating_sub(1) as f64;
        let deg_cur = (cur.degree(i) + cur.degree(j)) as f64;
        let deg_prev = (prev.degree(i) + prev.degree(j)) as f64;
        let f_ic = (deg_cur - deg_prev).abs();
        let cn_cur = cur.common_neighbors(i, j).len() as f64;
        let cn_prev = prev.common_neighbors(i, j).len() as f64;
        let f_nc = (cn_cur - cn_prev).abs();
        (f_dc, f_ic, f_nc)
    }

    /// Features and positional classes for every position of `sample`.
    pub fn sample_features(&self, sample: &EdgeSample) -> SampleFeatures {
        let central = sample.central;
        let t_start = first_occurrence_snapshot(central, self.snapshots);
        let t_len = sample.window.len();
        let k = t_len * sample.window[0].len();
        let mut rows = Vec::with_capacity(k);
        let mut rel_class = Vec::with_capacity(k);
        let mut window_pos = Vec::with_capacity(k);
        let window_start = sample.window_end + 1 - t_len;
        for (pos, nodes) in sample.window.iter().enumerate() {
            let t = window_start + pos;
            let s = &self.snapshots[t];
            let (f_dc, f_ic, f_nc) = self.coupling(central, t);
            let common = s.common_neighbors(central.0, central.1);
            for &v in nodes {
                let (f_glo, f_loc, f_tmp) = self.level1(central, t_start, t, v);
                rows.push(FeatureVector {
                    f_glo,
                    f_loc,
                    f_tmp,
                    f_dc,
                    f_ic,
                    f_nc,
                });
                let class = if v == central.0 || v == central.1 {
                    0
                } else if common.binary_search(&v).is_ok() {
                    1
                } else {
                    2
                };
                rel_class.push(class);
                window_pos.push(pos);
            }
        }
        SampleFeatures {
            rows,
            rel_class,
            window_pos,
        }
    }
}

/// Debug dump: one CSV row per sample position.
pub fn write_features_csv<W: Write>(
    w: &mut W,
    entries: &[(usize, &EdgeSample, &SampleFeatures)],
) -> std::io::Result<()> {
    writeln!(w, "sample_id,t,node,f_glo,f_loc,f_tmp,f_dc,f_ic,f_nc")?;
    for (sample_id, sample, feats) in entries {
        let width = sample.window[0].len();
        for (k, f) in feats.rows.iter().enumerate() {
            let node = sample.window[feats.window_pos[k]][k % width];
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                sample_id,
                feats.window_pos[k],
                node,
                f.f_glo,
                f.f_loc,
                f.f_tmp,
                f.f_dc,
                f.f_ic,
                f.f_nc
            )?;
        }
    }
    Ok(())
}
