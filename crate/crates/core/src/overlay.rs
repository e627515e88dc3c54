//! Erdős–Rényi neighbor graph over the source (node 0) and peers `1..=n`.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{self, BufRead};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::EdgeProbability;
use crate::rng;

pub type NodeId = u32;

/// Node id of the stream source.
pub const SOURCE: NodeId = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OverlayWarning {
    Isolated { nodes: Vec<NodeId> },
    Disconnected { components: usize },
}

impl std::fmt::Display for OverlayWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OverlayWarning::Isolated { nodes } => write!(f, "{} isolated node(s)", nodes.len()),
            OverlayWarning::Disconnected { components } => {
                write!(f, "overlay is disconnected ({components} components)")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Undirected, loop-free graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Overlay {
    adjacency: Vec<Vec<NodeId>>,
}

impl Overlay {
    /// Builds an overlay from an edge list, dropping self-loops and duplicates.
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Self {
        let mut adjacency = vec![Vec::new(); node_count];
        for (u, v) in edges {
            if u == v {
                continue;
            }
            adjacency[u as usize].push(v);
            adjacency[v as usize].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Overlay { adjacency }
    }

    pub fn complete(node_count: usize) -> Self {
        let adjacency = (0..node_count)
            .map(|u| (0..node_count as NodeId).filter(|&v| v as usize != u).collect())
            .collect();
        Overlay { adjacency }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node as usize]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency[node as usize].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edge_count() as f64 / self.node_count() as f64
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adjacency[u as usize].binary_search(&v).is_ok()
    }

    /// Edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| v as usize > u).map(move |&v| (u as NodeId, v)))
    }

    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.node_count()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.node_count() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adjacency[u] {
                    if !seen[v as usize] {
                        seen[v as usize] = true;
                        queue.push_back(v as usize);
                    }
                }
            }
        }
        count
    }

    pub fn warnings(&self) -> Vec<OverlayWarning> {
        let mut out = Vec::new();
        let isolated: Vec<NodeId> =
            (0..self.node_count()).filter(|&u| self.adjacency[u].is_empty()).map(|u| u as NodeId).collect();
        if !isolated.is_empty() {
            out.push(OverlayWarning::Isolated { nodes: isolated });
        }
        let components = self.components();
        if components > 1 {
            out.push(OverlayWarning::Disconnected { components });
        }
        out
    }

    /// One `u v` pair per line, `u < v`.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (u, v) in self.edges() {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }

    pub fn read_edge_list(node_count: usize, reader: impl BufRead) -> Result<Self, OverlayError> {
        let mut edges = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let parse_err = |message: &str| OverlayError::Parse { line: idx + 1, message: message.to_string() };
            let mut parts = trimmed.split_whitespace();
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(parse_err("expected two node ids"));
            };
            let u: NodeId = a.parse().map_err(|_| parse_err("invalid node id"))?;
            let v: NodeId = b.parse().map_err(|_| parse_err("invalid node id"))?;
            if u as usize >= node_count || v as usize >= node_count {
                return Err(parse_err("node id out of range"));
            }
            edges.push((u, v));
        }
        Ok(Overlay::from_edges(node_count, edges))
    }
}

/// Samples `G(n+1, p_e)`: every unordered pair is an edge independently with
/// probability `p_e`. Pairs are visited in lexicographic order, one uniform
/// draw per pair, from the overlay stream of `seed`.
pub fn generate_overlay(n: usize, edge_probability: EdgeProbability, seed: u64) -> Overlay {
    let node_count = n + 1;
    match edge_probability {
        EdgeProbability::Complete => Overlay::complete(node_count),
        EdgeProbability::Probability(p) => {
            assert!((0.0..=1.0).contains(&p), "edge probability {p} outside [0, 1]");
            let mut rng: ChaCha8Rng = rng::overlay_stream(seed);
            let mut edges = Vec::new();
            for u in 0..node_count as NodeId {
                for v in (u + 1)..node_count as NodeId {
                    if rng.gen::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
            Overlay::from_edges(node_count, edges)
        }
    }
}
