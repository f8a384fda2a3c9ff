//! Labeled edge samples with per-timestamp one-hop context windows.
//!
//! Positive samples are existing edge instances; negative (anomalous)
//! samples are node pairs that never occur in any snapshot. Every sample
//! carries a window of `T` snapshots, each contributing the two endpoints
//! followed by `C` context nodes drawn from the endpoints' one-hop
//! neighborhoods of that snapshot.
//!
//! All randomness derives per sample from the run seed, the window end, and
//! the central pair, so sample sets are byte-identical across runs and
//! independent of construction order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{DynamicGraph, NodeId, Snapshot};
use crate::seed::derived_rng;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("insufficient history: window end {window_end} needs {needed} snapshots")]
    InsufficientHistory { window_end: usize, needed: usize },
    #[error("no eligible snapshot in span")]
    NoEligibleSnapshot,
    #[error("negative sampling exhausted {0} tries")]
    MaxTriesExhausted(usize),
    #[error("graph has too few nodes for negative sampling")]
    TooFewNodes,
    #[error("injection rate must be in (0, 1), got {0}")]
    BadRate(f64),
    #[error("split fraction must be in (0, 1], got {0}")]
    BadSplit(f64),
}

/// A labeled candidate edge plus its context window.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct EdgeSample {
    /// Central node pair (i, j).
    pub central: (NodeId, NodeId),
    /// 0 = normal (existing), 1 = anomalous (injected).
    pub label: u8,
    /// T per-timestamp sequences, each `[i, j, c_1..c_C]`.
    pub window: Vec<Vec<NodeId>>,
    /// Snapshot index of the newest window position.
    pub window_end: usize,
}

/// Draw `c` context nodes for `central` from snapshot `s`: the merged one-hop
/// neighborhoods of both endpoints, minus the endpoints themselves. Short
/// pools are padded by alternating i, j, i, j, ...
pub fn sample_context(
    s: &Snapshot,
    central: (NodeId, NodeId),
    c: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<NodeId> {
    let (i, j) = central;
    let mut pool: Vec<NodeId> = s
        .neighbors(i)
        .iter()
        .chain(s.neighbors(j))
        .copied()
        .filter(|&v| v != i && v != j)
        .collect();
    pool.sort_unstable();
    pool.dedup();

    let mut out = Vec::with_capacity(c);
    if pool.len() >= c {
        for idx in rand::seq::index::sample(rng, pool.len(), c) {
            out.push(pool[idx]);
        }
    } else {
        out.extend(&pool);
        let mut flip = false;
        while out.len() < c {
            out.push(if flip { j } else { i });
            flip = !flip;
        }
    }
    out
}

/// Assemble one sample over the window ending at snapshot `window_end`.
pub fn build_sample(
    snapshots: &[Snapshot],
    window_end: usize,
    central: (NodeId, NodeId),
    label: u8,
    c: usize,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EdgeSample, SampleError> {
    if window_end + 1 < t {
        return Err(SampleError::InsufficientHistory {
            window_end,
            needed: t,
        });
    }
    let start = window_end + 1 - t;
    let window = (start..=window_end)
        .map(|snap| {
            let mut seq = Vec::with_capacity(c + 2);
            seq.push(central.0);
            seq.push(central.1);
            seq.extend(sample_context(&snapshots[snap], central, c, rng));
            seq
        })
        .collect();
    Ok(EdgeSample {
        central,
        label,
        window,
        window_end,
    })
}

/// Uniformly draw a node pair that never occurs at any timestamp.
pub fn sample_negative_edge(
    graph: &DynamicGraph,
    rng: &mut ChaCha8Rng,
    max_tries: usize,
) -> Result<(NodeId, NodeId), SampleError> {
    let n = graph.num_nodes() as u32;
    if n < 2 {
        return Err(SampleError::TooFewNodes);
    }
    for _ in 0..max_tries {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v && !graph.pair_exists(u, v) {
            return Ok(if u < v { (u, v) } else { (v, u) });
        }
    }
    Err(SampleError::MaxTriesExhausted(max_tries))
}

const NEG_MAX_TRIES: usize = 10_000;

/// Window-end indices eligible for the training span:
/// `T-1 ..= floor(split * n) - 1`.
pub fn training_window_ends(
    n_snapshots: usize,
    split_fraction: f64,
    t: usize,
) -> Result<Vec<usize>, SampleError> {
    if !(split_fraction > 0.0 && split_fraction <= 1.0) {
        return Err(SampleError::BadSplit(split_fraction));
    }
    let end = (split_fraction * n_snapshots as f64).floor() as usize;
    if end < t {
        return Err(SampleError::NoEligibleSnapshot);
    }
    Ok(((t - 1)..end).collect())
}

/// Window-end indices of the test span: `max(T-1, floor(split * n)) ..= n-1`.
pub fn test_window_ends(
    n_snapshots: usize,
    split_fraction: f64,
    t: usize,
) -> Result<Vec<usize>, SampleError> {
    if !(split_fraction > 0.0 && split_fraction <= 1.0) {
        return Err(SampleError::BadSplit(split_fraction));
    }
    let start = ((split_fraction * n_snapshots as f64).floor() as usize).max(t - 1);
    if start >= n_snapshots {
        return Err(SampleError::NoEligibleSnapshot);
    }
    Ok((start..n_snapshots).collect())
}

/// Class-balanced training set: every edge instance of every training-span
/// snapshot as a label-0 sample, and an equal count of never-occurring pairs
/// as label-1 samples.
pub fn build_training_set(
    graph: &DynamicGraph,
    snapshots: &[Snapshot],
    split_fraction: f64,
    c: usize,
    t: usize,
    seed: u64,
) -> Result<Vec<EdgeSample>, SampleError> {
    let ends = training_window_ends(snapshots.len(), split_fraction, t)?;
    let mut samples = Vec::new();
    for &end in &ends {
        let snap = &snapshots[end];
        for (k, e) in snap.instances.iter().enumerate() {
            let central = (e.source, e.target);
            let mut rng = derived_rng(
                seed,
                "pos-ctx",
                &[end as u64, central.0 as u64, central.1 as u64, k as u64],
            );
            samples.push(build_sample(snapshots, end, central, 0, c, t, &mut rng)?);
        }
        for k in 0..snap.instances.len() {
            let mut neg_rng = derived_rng(seed, "neg", &[end as u64, k as u64]);
            let central = sample_negative_edge(graph, &mut neg_rng, NEG_MAX_TRIES)?;
            let mut rng = derived_rng(
                seed,
                "neg-ctx",
                &[end as u64, central.0 as u64, central.1 as u64, k as u64],
            );
            samples.push(build_sample(snapshots, end, central, 1, c, t, &mut rng)?);
        }
    }
    Ok(samples)
}

/// Test set with a caller-supplied negative pair source. `draw_negative`
/// receives the window end and the injection ordinal and must return a pair
/// absent from every snapshot.
pub fn build_test_set_with<F>(
    snapshots: &[Snapshot],
    split_fraction: f64,
    inject_rate: f64,
    c: usize,
    t: usize,
    seed: u64,
    mut draw_negative: F,
) -> Result<Vec<EdgeSample>, SampleError>
where
    F: FnMut(usize, usize) -> Result<(NodeId, NodeId), SampleError>,
{
    if !(inject_rate > 0.0 && inject_rate < 1.0) {
        return Err(SampleError::BadRate(inject_rate));
    }
    let ends = test_window_ends(snapshots.len(), split_fraction, t)?;
    let mut samples = Vec::new();
    for &end in &ends {
        let snap = &snapshots[end];
        for (k, e) in snap.instances.iter().enumerate() {
            let central = (e.source, e.target);
            let mut rng = derived_rng(
                seed,
                "test-pos-ctx",
                &[end as u64, central.0 as u64, central.1 as u64, k as u64],
            );
            samples.push(build_sample(snapshots, end, central, 0, c, t, &mut rng)?);
        }
        let n_inject = (inject_rate * snap.instances.len() as f64).ceil() as usize;
        for k in 0..n_inject {
            let central = draw_negative(end, k)?;
            let mut rng = derived_rng(
                seed,
                "test-neg-ctx",
                &[end as u64, central.0 as u64, central.1 as u64, k as u64],
            );
            samples.push(build_sample(snapshots, end, central, 1, c, t, &mut rng)?);
        }
    }
    Ok(samples)
}

/// Test set with uniform anomaly injection at `inject_rate` per snapshot
/// (count rounded up, so at least one anomaly per test snapshot).
pub fn build_test_set(
    graph: &DynamicGraph,
    snapshots: &[Snapshot],
    split_fraction: f64,
    inject_rate: f64,
    c: usize,
    t: usize,
    seed: u64,
) -> Result<Vec<EdgeSample>, SampleError> {
    build_test_set_with(snapshots, split_fraction, inject_rate, c, t, seed, |end, k| {
        let mut rng = derived_rng(seed, "test-neg", &[end as u64, k as u64]);
        sample_negative_edge(graph, &mut rng, NEG_MAX_TRIES)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{parse_edge_stream, partition_snapshots};
    use std::io::Cursor;

    fn fixture(text: &str, size: usize) -> (DynamicGraph, Vec<Snapshot>) {
        let g = parse_edge_stream(Cursor::new(text)).unwrap();
        let s = partition_snapshots(&g, size).unwrap();
        (g, s)
    }

    fn rng() -> ChaCha8Rng {
        derived_rng(0, "test", &[])
    }

    #[test]
    fn context_from_large_pool_is_distinct_pool_members() {
        // star around 0 and 1 with 7 shared leaves
        let text: String = (2..9).map(|v| format!("0 {v} 1\n1 {v} 1\n")).collect();
        let mut full = text;
        full.push_str("0 1 1\n");
        let (_, s) = fixture(&full, 100);
        let ctx = sample_context(&s[0], (0, 1), 5, &mut rng());
        assert_eq!(ctx.len(), 5);
        let mut sorted = ctx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
        for v in ctx {
            assert!(v >= 2 && v <= 8);
        }
    }

    #[test]
    fn short_pool_pads_with_endpoints() {
        // dense ids after remap: edges (0,1), (2,3), (0,2); central (0,2)
        // has pool {1, 3}, then alternating i, j padding
        let (_, s) = fixture("0 2 1\n1 3 1\n0 1 1", 100);
        let ctx = sample_context(&s[0], (0, 2), 5, &mut rng());
        assert_eq!(ctx, vec![1, 3, 0, 2, 0]);
    }

    #[test]
    fn absent_endpoints_pad_fully() {
        let (_, s) = fixture("5 6 1", 100);
        let ctx = sample_context(&s[0], (2, 3), 5, &mut rng());
        assert_eq!(ctx, vec![2, 3, 2, 3, 2]);
    }

    #[test]
    fn context_stays_in_one_hop_closure() {
        let text = "0 2 1\n2 4 1\n1 3 1\n3 5 1\n0 1 1";
        let (_, s) = fixture(text, 100);
        for trial in 0..50u64 {
            let mut r = derived_rng(trial, "ctx", &[]);
            let ctx = sample_context(&s[0], (0, 1), 3, &mut r);
            for v in ctx {
                let allowed = v == 0
                    || v == 1
                    || s[0].neighbors(0).contains(&v)
                    || s[0].neighbors(1).contains(&v);
                assert!(allowed, "{v} outside one-hop closure");
            }
        }
    }

    #[test]
    fn build_sample_shape() {
        let text: String = (0..20).map(|i| format!("{} {} {}\n", i % 5, i % 7 + 5, i)).collect();
        let (_, s) = fixture(&text, 5);
        let sample = build_sample(&s, 3, (0, 5), 0, 5, 4, &mut rng()).unwrap();
        assert_eq!(sample.window.len(), 4);
        let total: usize = sample.window.iter().map(Vec::len).sum();
        assert_eq!(total, 28); // K = (C+2) * T
        for seq in &sample.window {
            assert_eq!(seq.len(), 7);
            assert_eq!(seq[0], 0);
            assert_eq!(seq[1], 5);
        }
    }

    #[test]
    fn single_timestamp_window() {
        let (_, s) = fixture("0 1 1\n1 2 2", 1);
        let sample = build_sample(&s, 0, (0, 1), 0, 2, 1, &mut rng()).unwrap();
        assert_eq!(sample.window.len(), 1);
    }

    #[test]
    fn insufficient_history_is_error() {
        let (_, s) = fixture("0 1 1\n1 2 2\n2 3 3", 1);
        assert!(matches!(
            build_sample(&s, 1, (0, 1), 0, 2, 4, &mut rng()),
            Err(SampleError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn negative_edges_avoid_existing_pairs() {
        let (g, _) = fixture("0 1 1\n2 9 1\n3 9 2", 10);
        let mut r = rng();
        for _ in 0..10_000 {
            let (u, v) = sample_negative_edge(&g, &mut r, 1000).unwrap();
            assert!(u < v);
            assert!(!g.pair_exists(u, v));
        }
    }

    #[test]
    fn negative_edge_from_small_complement() {
        let (g, _) = fixture("0 1 1\n2 3 5", 10);
        // nodes {0,1,2,3}; existing pairs {(0,1),(2,3)}
        let mut r = rng();
        for _ in 0..200 {
            let pair = sample_negative_edge(&g, &mut r, 1000).unwrap();
            assert!([(0, 2), (0, 3), (1, 2), (1, 3)].contains(&pair));
        }
    }

    #[test]
    fn complete_graph_negative_sampling_fails() {
        let (g, _) = fixture("0 1 1\n0 2 2\n1 2 3", 10);
        assert!(matches!(
            sample_negative_edge(&g, &mut rng(), 500),
            Err(SampleError::MaxTriesExhausted(500))
        ));
    }

    #[test]
    fn training_set_is_class_balanced_per_snapshot() {
        let text: String = (0..60)
            .map(|i| format!("{} {} {}\n", i % 6, i % 5 + 6, i))
            .collect();
        let (g, s) = fixture(&text, 10);
        let samples = build_training_set(&g, &s, 1.0, 3, 2, 7).unwrap();
        for end in 1..s.len() {
            let pos = samples
                .iter()
                .filter(|x| x.window_end == end && x.label == 0)
                .count();
            let neg = samples
                .iter()
                .filter(|x| x.window_end == end && x.label == 1)
                .count();
            assert_eq!(pos, s[end].instances.len());
            assert_eq!(pos, neg);
        }
    }

    #[test]
    fn training_span_arithmetic() {
        // 15 snapshots, T = 4, split 0.5 -> eligible ends {3,4,5,6}
        assert_eq!(training_window_ends(15, 0.5, 4).unwrap(), vec![3, 4, 5, 6]);
        // smaller ratios shrink the span
        assert_eq!(training_window_ends(15, 0.4, 4).unwrap(), vec![3, 4, 5]);
        // floor(0.2 * 15) = 3 leaves no room for a T = 4 window
        assert!(matches!(
            training_window_ends(15, 0.2, 4),
            Err(SampleError::NoEligibleSnapshot)
        ));
        assert!(matches!(
            training_window_ends(6, 0.5, 4),
            Err(SampleError::NoEligibleSnapshot)
        ));
    }

    #[test]
    fn test_injection_counts_use_ceiling() {
        let text: String = (0..50)
            .map(|i| format!("{} {} {}\n", i % 7, i % 6 + 7, i))
            .collect();
        let (g, s) = fixture(&text, 25);
        // 2 snapshots of 25 instances; test span = snapshot 1
        let samples = build_test_set(&g, &s, 0.5, 0.01, 3, 2, 7).unwrap();
        let neg = samples.iter().filter(|x| x.label == 1).count();
        assert_eq!(neg, 1); // ceil(0.01 * 25)
        let samples = build_test_set(&g, &s, 0.5, 0.10, 3, 2, 7).unwrap();
        let neg = samples.iter().filter(|x| x.label == 1).count();
        assert_eq!(neg, 3); // ceil(0.10 * 25)
    }

    #[test]
    fn injected_pairs_absent_from_every_snapshot() {
        let text: String = (0..80)
            .map(|i| format!("{} {} {}\n", i % 9, i % 8 + 9, i))
            .collect();
        let (g, s) = fixture(&text, 20);
        let samples = build_test_set(&g, &s, 0.5, 0.10, 3, 2, 7).unwrap();
        for sample in samples.iter().filter(|x| x.label == 1) {
            for snap in &s {
                assert!(!snap.contains_pair(sample.central.0, sample.central.1));
            }
            assert!(!g.pair_exists(sample.central.0, sample.central.1));
        }
    }

    #[test]
    fn sample_sets_are_deterministic() {
        let text: String = (0..80)
            .map(|i| format!("{} {} {}\n", i % 9, i % 8 + 9, i))
            .collect();
        let (g, s) = fixture(&text, 20);
        let a = build_training_set(&g, &s, 0.5, 5, 2, 42).unwrap();
        let b = build_training_set(&g, &s, 0.5, 5, 2, 42).unwrap();
        assert_eq!(a, b);
        let c = build_training_set(&g, &s, 0.5, 5, 2, 43).unwrap();
        assert_ne!(a, c);
        let ta = build_test_set(&g, &s, 0.5, 0.1, 5, 2, 42).unwrap();
        let tb = build_test_set(&g, &s, 0.5, 0.1, 5, 2, 42).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn bad_rates_rejected() {
        let (g, s) = fixture("0 1 1\n1 2 2\n2 3 3\n3 4 4", 2);
        assert!(matches!(
            build_test_set(&g, &s, 0.5, 0.0, 2, 1, 7),
            Err(SampleError::BadRate(_))
        ));
        assert!(matches!(
            build_test_set(&g, &s, 0.5, 1.0, 2, 1, 7),
            Err(SampleError::BadRate(_))
        ));
    }
}
