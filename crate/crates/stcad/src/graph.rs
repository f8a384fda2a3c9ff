//! Dynamic graph storage: timestamped edge streams, snapshot partitioning,
//! and structural queries.
//!
//! Graphs are undirected and unweighted. Node ids from the input are remapped
//! to dense integers `0..n`; the original labels are kept in a side table.
//! The same node pair at different timestamps counts as distinct edge
//! instances, while adjacency within a snapshot collapses duplicates.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Read, Write};

use thiserror::Error;

/// Dense node identifier, assigned at parse time.
pub type NodeId = u32;

/// Unordered node pair in canonical (min, max) form.
pub fn canonical_pair(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("no edges")]
    Empty,
    #[error("snapshot size must be at least 1")]
    ZeroSnapshotSize,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad graph file: {0}")]
    BadFormat(String),
}

/// One timestamped occurrence of an undirected edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeInstance {
    pub source: NodeId,
    pub target: NodeId,
    pub timestamp: f64,
}

/// A timestamped edge multiset with dense node ids.
#[derive(Debug, Clone)]
pub struct DynamicGraph {
    /// Original input labels, indexed by dense id.
    labels: Vec<String>,
    /// Edge instances in nondecreasing timestamp order.
    edges: Vec<EdgeInstance>,
    /// Canonical pair -> index of its earliest instance in `edges`.
    first_seen: HashMap<(NodeId, NodeId), usize>,
    /// Self-loops discarded during parsing.
    pub self_loops_dropped: usize,
}

impl DynamicGraph {
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn edges(&self) -> &[EdgeInstance] {
        &self.edges
    }

    pub fn label(&self, v: NodeId) -> &str {
        &self.labels[v as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Index in the edge list of the earliest instance of `pair`, if any.
    pub fn first_seen(&self, pair: (NodeId, NodeId)) -> Option<usize> {
        self.first_seen.get(&canonical_pair(pair.0, pair.1)).copied()
    }

    /// True if the pair occurs at any timestamp.
    pub fn pair_exists(&self, a: NodeId, b: NodeId) -> bool {
        self.first_seen.contains_key(&canonical_pair(a, b))
    }

    fn from_parts(labels: Vec<String>, mut edges: Vec<EdgeInstance>, dropped: usize) -> Self {
        edges.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let mut first_seen = HashMap::new();
        for (idx, e) in edges.iter().enumerate() {
            first_seen
                .entry(canonical_pair(e.source, e.target))
                .or_insert(idx);
        }
        DynamicGraph {
            labels,
            edges,
            first_seen,
            self_loops_dropped: dropped,
        }
    }
}

/// Parse a line-oriented edge stream: `source target timestamp` per line,
/// whitespace- or comma-separated. Node ids are remapped densely in order of
/// first appearance; edges are stably sorted by timestamp; self-loops are
/// dropped and counted.
pub fn parse_edge_stream<R: BufRead>(reader: R) -> Result<DynamicGraph, GraphError> {
    let mut labels: Vec<String> = Vec::new();
    let mut id_of: HashMap<String, NodeId> = HashMap::new();
    let mut edges: Vec<EdgeInstance> = Vec::new();
    let mut dropped = 0usize;

    let mut intern = |tok: &str, labels: &mut Vec<String>| -> NodeId {
        if let Some(&id) = id_of.get(tok) {
            return id;
        }
        let id = labels.len() as NodeId;
        id_of.insert(tok.to_string(), id);
        labels.push(tok.to_string());
        id
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_num = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 3 {
            return Err(GraphError::Parse {
                line: line_num,
                reason: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let ts: f64 = fields[2].parse().map_err(|_| GraphError::Parse {
            line: line_num,
            reason: format!("bad timestamp {:?}", fields[2]),
        })?;
        if !ts.is_finite() {
            return Err(GraphError::Parse {
                line: line_num,
                reason: "non-finite timestamp".into(),
            });
        }
        let src = intern(fields[0], &mut labels);
        let dst = intern(fields[1], &mut labels);
        if src == dst {
            dropped += 1;
            continue;
        }
        let (a, b) = canonical_pair(src, dst);
        edges.push(EdgeInstance {
            source: a,
            target: b,
            timestamp: ts,
        });
    }

    if edges.is_empty() {
        return Err(GraphError::Empty);
    }
    Ok(DynamicGraph::from_parts(labels, edges, dropped))
}

/// The subgraph induced by one fixed-size block of the edge stream.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub index: usize,
    /// Edge instances of this block, in stream order.
    pub instances: Vec<EdgeInstance>,
    /// Unordered pairs present in this block.
    edge_set: HashSet<(NodeId, NodeId)>,
    /// node -> sorted, deduplicated neighbor list.
    adjacency: HashMap<NodeId, Vec<NodeId>>,
    /// Sorted nodes incident to any edge of the block.
    node_set: Vec<NodeId>,
}

impl Snapshot {
    fn build(index: usize, instances: Vec<EdgeInstance>) -> Self {
        let mut adjacency: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        let mut edge_set = HashSet::new();
        for e in &instances {
            let pair = canonical_pair(e.source, e.target);
            if edge_set.insert(pair) {
                adjacency.entry(pair.0).or_default().push(pair.1);
                adjacency.entry(pair.1).or_default().push(pair.0);
            }
        }
        let mut node_set: Vec<NodeId> = adjacency.keys().copied().collect();
        node_set.sort_unstable();
        for nbrs in adjacency.values_mut() {
            nbrs.sort_unstable();
        }
        Snapshot {
            index,
            instances,
            edge_set,
            adjacency,
            node_set,
        }
    }

    /// Sorted neighbor list of `v`; empty if `v` is absent from the snapshot.
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        self.adjacency.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.neighbors(v).len()
    }

    pub fn contains_node(&self, v: NodeId) -> bool {
        self.adjacency.contains_key(&v)
    }

    pub fn contains_pair(&self, a: NodeId, b: NodeId) -> bool {
        self.edge_set.contains(&canonical_pair(a, b))
    }

    /// Sorted nodes incident to at least one edge of the snapshot.
    pub fn nodes(&self) -> &[NodeId] {
        &self.node_set
    }

    pub fn num_pairs(&self) -> usize {
        self.edge_set.len()
    }

    /// Iterator over the canonical pairs of the snapshot (arbitrary order).
    pub fn pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edge_set.iter().copied()
    }

    /// Sorted common neighbors of `a` and `b`.
    pub fn common_neighbors(&self, a: NodeId, b: NodeId) -> Vec<NodeId> {
        let (na, nb) = (self.neighbors(a), self.neighbors(b));
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < na.len() && j < nb.len() {
            match na[i].cmp(&nb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(na[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out
    }
}

/// Split the edge stream into consecutive blocks of `snapshot_size` instances.
/// The last block may be smaller.
pub fn partition_snapshots(
    graph: &DynamicGraph,
    snapshot_size: usize,
) -> Result<Vec<Snapshot>, GraphError> {
    if snapshot_size == 0 {
        return Err(GraphError::ZeroSnapshotSize);
    }
    Ok(graph
        .edges()
        .chunks(snapshot_size)
        .enumerate()
        .map(|(index, block)| Snapshot::build(index, block.to_vec()))
        .collect())
}

/// Smallest snapshot index whose edge set contains `pair`, if any.
pub fn first_occurrence_snapshot(
    pair: (NodeId, NodeId),
    snapshots: &[Snapshot],
) -> Option<usize> {
    snapshots
        .iter()
        .position(|s| s.contains_pair(pair.0, pair.1))
}

// ---------------------------------------------------------------------------
// STCG on-disk format
//
// Little-endian binary layout:
//   magic   4 bytes  "STCG"
//   version u32      currently 1
//   dropped u64      self-loop count from parsing
//   n_nodes u64
//   labels  n_nodes * (u32 length + utf-8 bytes)
//   n_edges u64
//   edges   n_edges * (u32 source, u32 target, f64 timestamp)
// ---------------------------------------------------------------------------

const STCG_MAGIC: &[u8; 4] = b"STCG";
const STCG_VERSION: u32 = 1;

pub fn write_graph<W: Write>(graph: &DynamicGraph, w: &mut W) -> Result<(), GraphError> {
    w.write_all(STCG_MAGIC)?;
    w.write_all(&STCG_VERSION.to_le_bytes())?;
    w.write_all(&(graph.self_loops_dropped as u64).to_le_bytes())?;
    w.write_all(&(graph.labels.len() as u64).to_le_bytes())?;
    for label in &graph.labels {
        w.write_all(&(label.len() as u32).to_le_bytes())?;
        w.write_all(label.as_bytes())?;
    }
    w.write_all(&(graph.edges.len() as u64).to_le_bytes())?;
    for e in &graph.edges {
        w.write_all(&e.source.to_le_bytes())?;
        w.write_all(&e.target.to_le_bytes())?;
        w.write_all(&e.timestamp.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_graph<R: Read>(r: &mut R) -> Result<DynamicGraph, GraphError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != STCG_MAGIC {
        return Err(GraphError::BadFormat("missing STCG magic".into()));
    }
    let version = read_u32(r)?;
    if version != STCG_VERSION {
        return Err(GraphError::BadFormat(format!(
            "unsupported version {version}"
        )));
    }
    let dropped = read_u64(r)? as usize;
    let n_nodes = read_u64(r)? as usize;
    let mut labels = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let len = read_u32(r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        labels.push(
            String::from_utf8(buf).map_err(|_| GraphError::BadFormat("bad label utf-8".into()))?,
        );
    }
    let n_edges = read_u64(r)? as usize;
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let source = read_u32(r)?;
        let target = read_u32(r)?;
        let mut ts = [0u8; 8];
        r.read_exact(&mut ts)?;
        if source as usize >= n_nodes || target as usize >= n_nodes {
            return Err(GraphError::BadFormat("edge references unknown node".into()));
        }
        edges.push(EdgeInstance {
            source,
            target,
            timestamp: f64::from_le_bytes(ts),
        });
    }
    if edges.is_empty() {
        return Err(GraphError::Empty);
    }
    Ok(DynamicGraph::from_parts(labels, edges, dropped))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, GraphError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, GraphError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
