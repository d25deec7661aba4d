//! Directed base→wrist→tip part graph, GCN message passing and channel
//! attention fusion.

use rand::Rng;

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};

pub const NODES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PartGraph {
    /// Directed edges `(source, destination)`.
    edges: Vec<(usize, usize)>,
    /// `norm[i][j] = 1 / c_ij` for every edge `j → i`, zero elsewhere.
    norm: [[f64; NODES]; NODES],
}

impl PartGraph {
    /// base→wrist, wrist→tip, and a self-loop on every node.
    pub fn build() -> Self {
        Self::with_edges(&[(0, 0), (1, 1), (2, 2), (0, 1), (1, 2)]).expect("fixed edge set")
    }

    /// Custom edge sets, used to probe message flow in tests. Duplicate
    /// edges are ignored.
    pub fn with_edges(edges: &[(usize, usize)]) -> Result<Self> {
        let mut uniq: Vec<(usize, usize)> = Vec::new();
        for &(s, d) in edges {
            if s >= NODES || d >= NODES {
                return Err(Error::Config(vec![format!(
                    "edge {s}->{d} outside the 3-node graph"
                )]));
            }
            if !uniq.contains(&(s, d)) {
                uniq.push((s, d));
            }
        }
        // a node without incoming edges counts as degree 1
        let indeg = |n: usize| (uniq.iter().filter(|e| e.1 == n).count() as f64).max(1.0);
        let mut norm = [[0.0; NODES]; NODES];
        for &(s, d) in &uniq {
            norm[d][s] = 1.0 / (indeg(d).sqrt() * indeg(s).sqrt());
        }
        Ok(PartGraph { edges: uniq, norm })
    }

    pub fn node_count(&self) -> usize {
        NODES
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sources of edges arriving at `node`, ascending.
    pub fn in_neighbors(&self, node: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .edges
            .iter()
            .filter(|e| e.1 == node)
            .map(|e| e.0)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.1 == node).count()
    }

    /// `c_ij` for the edge `j → i`, if present.
    pub fn normalization(&self, i: usize, j: usize) -> Option<f64> {
        self.edges.contains(&(j, i)).then(|| {
            (self.in_degree(i).max(1) as f64).sqrt() * (self.in_degree(j).max(1) as f64).sqrt()
        })
    }

    /// The normalized adjacency with `Â[i][j] = 1/c_ij`.
    pub fn adjacency(&self) -> [[f64; NODES]; NODES] {
        self.norm
    }

    fn adjacency_tensor(&self) -> Tensor {
        Tensor::from_fn(&[NODES, NODES], |k| self.norm[k / NODES][k % NODES])
    }
}

#[derive(Debug, Clone)]
pub struct Gcn {
    layers: Vec<ParamId>,
    dim: usize,
}

impl Gcn {
    pub fn new(
        prefix: &str,
        dim: usize,
        layers: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| store.add_uniform(format!("{prefix}.{l}.w"), &[dim, dim], dim, rng))
            .collect();
        Gcn { layers, dim }
    }

    pub fn layer_ids(&self) -> &[ParamId] {
        &self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, graph: &PartGraph, h0: Var) -> Result<Var> {
        let w: Vec<Var> = self.layers.iter().map(|&id| p[id]).collect();
        gcn_forward(tape, graph, h0, &w)
    }
}

/// `h_i^{l+1} = σ(Σ_{j→i} h_j^l W^l / c_ij)` for every layer, with ReLU on all
/// but the last layer.
pub fn gcn_forward(tape: &mut Tape, graph: &PartGraph, h0: Var, weights: &[Var]) -> Result<Var> {
    if tape.shape(h0).len() != 2 || tape.shape(h0)[0] != NODES {
        return Err(Error::shape("gcn_forward", tape.shape(h0), &[NODES, 0]));
    }
    let a = tape.constant(graph.adjacency_tensor());
    let mut h = h0;
    for (l, &w) in weights.iter().enumerate() {
        let msg = tape.matmul(a, h)?;
        h = tape.matmul(msg, w)?;
        if l + 1 < weights.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Scales channel `c` of `F` by `sigmoid(a_c)` where `a` stacks the node
/// states in base, wrist, tip order.
pub fn fuse_attention(tape: &mut Tape, f: Var, nodes: Var) -> Result<Var> {
    let c = tape.shape(f)[0];
    if tape.value(nodes).len() != c {
        return Err(Error::shape(
            "fuse_attention",
            tape.shape(f),
            tape.shape(nodes),
        ));
    }
    let a = tape.reshape(nodes, &[c])?;
    let s = tape.sigmoid(a);
    tape.scale_channels(f, s)
}
