//! Graph and hypergraph structure: the explicit sensor graph, learned
//! hypergraph incidence, the dual hypergraph transformation, and subgraph
//! patch extraction.

use std::collections::VecDeque;
use std::path::Path;

use crate::array::{Array, BoolArray};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Undirected explicit graph over the time-series variables.
#[derive(Debug, Clone)]
pub struct ExplicitGraph {
    pub n_nodes: usize,
    /// Deduplicated undirected edges, each stored as (u, v) with u < v,
    /// sorted lexicographically.
    pub edges: Vec<(usize, usize)>,
}

impl ExplicitGraph {
    pub fn new(n_nodes: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(Error::Structure(format!("self-loop at node {}", e.0)));
            }
            if e.0 >= n_nodes || e.1 >= n_nodes {
                return Err(Error::Structure(format!(
                    "edge ({}, {}) out of range for {n_nodes} nodes",
                    e.0, e.1
                )));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(ExplicitGraph { n_nodes, edges })
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Symmetric boolean adjacency with zero diagonal.
    pub fn adjacency(&self) -> BoolArray {
        let n = self.n_nodes;
        let mut a = BoolArray::filled(vec![n, n], false);
        for &(u, v) in &self.edges {
            a.set2(u, v, true);
            a.set2(v, u, true);
        }
        a
    }

    /// Node-by-edge incidence; column j holds exactly the two endpoints of
    /// edge j.
    pub fn incidence(&self) -> BoolArray {
        let mut inc = BoolArray::filled(vec![self.n_nodes, self.edges.len().max(1)], false);
        for (j, &(u, v)) in self.edges.iter().enumerate() {
            inc.set2(u, j, true);
            inc.set2(v, j, true);
        }
        inc
    }

    pub fn neighbors(&self, u: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &(a, b) in &self.edges {
            if a == u {
                out.push(b);
            } else if b == u {
                out.push(a);
            }
        }
        out
    }

    pub fn degree(&self, u: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == u || b == u).count()
    }
}

/// Hypergraph described by an n x m incidence matrix; entries are soft
/// memberships in [0, 1] or hard {0, 1}.
#[derive(Debug, Clone)]
pub struct Hypergraph<F> {
    pub n_hypernodes: usize,
    pub m_hyperedges: usize,
    pub incidence: Array<F>,
}

impl<F: Scalar> Hypergraph<F> {
    pub fn new(incidence: Array<F>) -> Result<Self> {
        if !incidence.is_matrix() {
            return Err(Error::Structure("hypergraph incidence must be a matrix".into()));
        }
        Ok(Hypergraph {
            n_hypernodes: incidence.rows(),
            m_hyperedges: incidence.cols(),
            incidence,
        })
    }

    pub fn is_hard(&self) -> bool {
        self.incidence
            .data()
            .iter()
            .all(|&v| v == F::zero() || v == F::one())
    }
}

/// One subgraph patch: a core block of nodes, its p-hop expansion, and the
/// induced edges.
#[derive(Debug, Clone)]
pub struct SubgraphPatch {
    pub core_nodes: Vec<usize>,
    /// Sorted core union p-hop neighborhood.
    pub expanded_nodes: Vec<usize>,
    /// Induced edges in original node ids.
    pub edge_list: Vec<(usize, usize)>,
}

impl SubgraphPatch {
    /// Original node id -> position in `expanded_nodes`.
    pub fn local_index(&self, node: usize) -> Option<usize> {
        self.expanded_nodes.binary_search(&node).ok()
    }

    pub fn len(&self) -> usize {
        self.expanded_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expanded_nodes.is_empty()
    }
}

/// Dual hypergraph: source-graph edges become hypernodes, source nodes
/// become hyperedges, incidence is the transpose of the source incidence.
#[derive(Debug, Clone)]
pub struct DualHypergraph<F> {
    /// |E| x |V| boolean incidence (transpose of the source graph's).
    pub incidence: BoolArray,
    /// One feature row per source edge: mean of its endpoint features.
    pub hypernode_features: Array<F>,
    /// One feature row per source node: the unchanged node features.
    pub hyperedge_features: Array<F>,
}

/// Parse an edge-list file: one `u,v` or `u,v,w` line per edge, 0-based
/// ids. Weights mark presence only. Duplicates collapse; self-loops and
/// out-of-range ids are rejected.
pub fn load_edge_list(path: &Path, n_nodes: usize) -> Result<ExplicitGraph> {
    let text = std::fs::read_to_string(path)?;
    parse_edge_list(&text, n_nodes)
}

pub fn parse_edge_list(text: &str, n_nodes: usize) -> Result<ExplicitGraph> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse(format!(
                "edge list line {}: expected 'u,v' or 'u,v,w', got {line:?}",
                lineno + 1
            )));
        }
        let u: usize = fields[0].trim().parse().map_err(|_| {
            Error::Parse(format!("edge list line {}: bad node id {:?}", lineno + 1, fields[0]))
        })?;
        let v: usize = fields[1].trim().parse().map_err(|_| {
            Error::Parse(format!("edge list line {}: bad node id {:?}", lineno + 1, fields[1]))
        })?;
        edges.push((u, v));
    }
    ExplicitGraph::new(n_nodes, edges)
}

/// Dual hypergraph transformation: transpose the incidence and swap the
/// roles of node and edge features. Edge features start as the mean of the
/// two endpoint feature rows.
pub fn dht_transform<F: Scalar>(
    g: &ExplicitGraph,
    node_features: &Array<F>,
) -> Result<DualHypergraph<F>> {
    if g.n_edges() == 0 {
        return Err(Error::Structure("dual transform of an edgeless graph".into()));
    }
    if node_features.rows() != g.n_nodes {
        return Err(Error::Shape {
            op: "dht_transform",
            detail: format!(
                "{} feature rows for {} nodes",
                node_features.rows(),
                g.n_nodes
            ),
        });
    }
    let d = node_features.cols();
    let half = lit::<F>(0.5);
    let mut edge_feats = Array::zeros(vec![g.n_edges(), d]);
    for (j, &(u, v)) in g.edges.iter().enumerate() {
        for k in 0..d {
            edge_feats.set2(j, k, (node_features.at2(u, k) + node_features.at2(v, k)) * half);
        }
    }
    Ok(DualHypergraph {
        incidence: g.incidence().transpose(),
        hypernode_features: edge_feats,
        hyperedge_features: node_features.clone(),
    })
}

/// Nodes within distance <= p of `node_set` (breadth-first).
pub fn p_hop_neighborhood(g: &ExplicitGraph, node_set: &[usize], p: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.n_nodes];
    let mut queue = VecDeque::new();
    for &u in node_set {
        dist[u] = 0;
        queue.push_back(u);
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); g.n_nodes];
    for &(u, v) in &g.edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] == p {
            continue;
        }
        for &w in &adj[u] {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    (0..g.n_nodes).filter(|&u| dist[u] != usize::MAX).collect()
}

/// Partition nodes into k consecutive id blocks (the last absorbs any
/// remainder), expand each block by its p-hop neighborhood, and induce
/// edges on the expanded sets.
pub fn extract_patches(g: &ExplicitGraph, k: usize, p: usize) -> Result<Vec<SubgraphPatch>> {
    if k == 0 || k > g.n_nodes {
        return Err(Error::Config(format!(
            "patch count k={k} must be in 1..={}",
            g.n_nodes
        )));
    }
    let block = g.n_nodes / k;
    let mut patches = Vec::with_capacity(k);
    for i in 0..k {
        let start = i * block;
        let end = if i + 1 == k { g.n_nodes } else { start + block };
        let core: Vec<usize> = (start..end).collect();
        let expanded = p_hop_neighborhood(g, &core, p);
        let in_patch = |u: usize| expanded.binary_search(&u).is_ok();
        let edge_list: Vec<(usize, usize)> = g
            .edges
            .iter()
            .copied()
            .filter(|&(u, v)| in_patch(u) && in_patch(v))
            .collect();
        patches.push(SubgraphPatch { core_nodes: core, expanded_nodes: expanded, edge_list });
    }
    Ok(patches)
}

/// Symmetric-normalized adjacency with self-loops:
/// D^{-1/2} (A + I) D^{-1/2}.
pub fn normalized_adjacency<F: Scalar>(n: usize, edges: &[(usize, usize)]) -> Array<F> {
    let mut a = Array::<F>::eye(n);
    for &(u, v) in edges {
        a.set2(u, v, F::one());
        a.set2(v, u, F::one());
    }
    let mut inv_sqrt_deg = vec![F::zero(); n];
    for (i, s) in inv_sqrt_deg.iter_mut().enumerate() {
        let mut deg = F::zero();
        for j in 0..n {
            deg += a.at2(i, j);
        }
        *s = F::one() / deg.sqrt();
    }
    for i in 0..n {
        for j in 0..n {
            let v = a.at2(i, j) * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            a.set2(i, j, v);
        }
    }
    a
}

/// Normalized adjacency of a patch, in local node order.
pub fn patch_normalized_adjacency<F: Scalar>(patch: &SubgraphPatch) -> Array<F> {
    let local_edges: Vec<(usize, usize)> = patch
        .edge_list
        .iter()
        .map(|&(u, v)| {
            (
                patch.local_index(u).expect("edge endpoint in patch"),
                patch.local_index(v).expect("edge endpoint in patch"),
            )
        })
        .collect();
    normalized_adjacency(patch.len(), &local_edges)
}
