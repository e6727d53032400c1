//! Undirected weighted communication graphs and their Laplacians.
//!
//! Every edge carries two positive weights: `a` (the proportional coupling,
//! Laplacian `L_P`) and `b` (the integral coupling, Laplacian `L_I`). Weights
//! are stored once per unordered edge, so symmetry holds by construction.
//! Agent ids are 0-based here; scenario files use 1-based ids.

use std::fmt;

use nalgebra::DMatrix;

/// Which weight family a Laplacian is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaplacianKind {
    /// Proportional coupling, weights `a_ij`.
    P,
    /// Integral coupling, weights `b_ij`.
    I,
}

/// An undirected edge with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub a: f64,
    pub b: f64,
}

impl Edge {
    pub fn weight(&self, kind: LaplacianKind) -> f64 {
        match kind {
            LaplacianKind::P => self.a,
            LaplacianKind::I => self.b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphError {
    EmptyGraph,
    NodeOutOfRange { node: usize, n: usize },
    SelfLoop { node: usize },
    DuplicateEdge { i: usize, j: usize },
    NonpositiveWeight { i: usize, j: usize, a: f64, b: f64 },
    DisconnectedGraph { components: usize },
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::EmptyGraph => write!(f, "graph must have at least one agent"),
            GraphError::NodeOutOfRange { node, n } => {
                write!(f, "node {node} out of range for {n} agents")
            }
            GraphError::SelfLoop { node } => write!(f, "self-loop at node {node}"),
            GraphError::DuplicateEdge { i, j } => write!(f, "duplicate edge ({i}, {j})"),
            GraphError::NonpositiveWeight { i, j, a, b } => {
                write!(f, "edge ({i}, {j}) has nonpositive weight (a = {a}, b = {b})")
            }
            GraphError::DisconnectedGraph { components } => {
                write!(f, "graph is disconnected ({components} components)")
            }
        }
    }
}

impl std::error::Error for GraphError {}

/// A connected, undirected graph with two positive weight families.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    n: usize,
    edges: Vec<Edge>,
    // per node: (neighbor, edge index)
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl NetworkGraph {
    /// Builds and validates a graph from `(i, j, a_ij, b_ij)` tuples with 0-based ids.
    pub fn new(n: usize, edges: &[(usize, usize, f64, f64)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut stored: Vec<Edge> = Vec::with_capacity(edges.len());
        let mut adjacency = vec![Vec::new(); n];
        let mut uf = UnionFind::new(n);
        for &(i, j, a, b) in edges {
            for node in [i, j] {
                if node >= n {
                    return Err(GraphError::NodeOutOfRange { node, n });
                }
            }
            if i == j {
                return Err(GraphError::SelfLoop { node: i });
            }
            if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(GraphError::NonpositiveWeight { i, j, a, b });
            }
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            if stored.iter().any(|e| e.i == lo && e.j == hi) {
                return Err(GraphError::DuplicateEdge { i: lo, j: hi });
            }
            let idx = stored.len();
            stored.push(Edge { i: lo, j: hi, a, b });
            adjacency[lo].push((hi, idx));
            adjacency[hi].push((lo, idx));
            uf.union(lo, hi);
        }
        let components = uf.components();
        if components != 1 {
            return Err(GraphError::DisconnectedGraph { components });
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Ok(NetworkGraph {
            n,
            edges: stored,
            adjacency,
        })
    }

    /// Cycle `0 - 1 - ... - (n-1) - 0` with uniform weights. For `n = 2` this is a single edge.
    pub fn ring(n: usize, a: f64, b: f64) -> Result<Self, GraphError> {
        let edges: Vec<_> = match n {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1, a, b)],
            _ => (0..n).map(|i| (i, (i + 1) % n, a, b)).collect(),
        };
        Self::new(n, &edges)
    }

    pub fn path(n: usize, a: f64, b: f64) -> Result<Self, GraphError> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, a, b)).collect();
        Self::new(n, &edges)
    }

    pub fn complete(n: usize, a: f64, b: f64) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j, a, b));
            }
        }
        Self::new(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbors of `i` as `(j, edge index)`, sorted by `j`.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Dense Laplacian `L[i][i] = Σ_j w_ij`, `L[i][j] = −w_ij`.
    pub fn laplacian(&self, kind: LaplacianKind) -> LaplacianMatrix {
        let mut m = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            let w = e.weight(kind);
            m[(e.i, e.i)] += w;
            m[(e.j, e.j)] += w;
            m[(e.i, e.j)] -= w;
            m[(e.j, e.i)] -= w;
        }
        LaplacianMatrix { entries: m, kind }
    }

    /// Applies `(L ⊗ I_dim)` to a stacked vector without forming the matrix,
    /// accumulating `scale · (L̄ v)` into `out`.
    pub fn laplacian_apply_add(
        &self,
        kind: LaplacianKind,
        dim: usize,
        v: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        debug_assert_eq!(v.len(), self.n * dim);
        debug_assert_eq!(out.len(), self.n * dim);
        for e in &self.edges {
            let w = scale * e.weight(kind);
            for k in 0..dim {
                let d = v[e.i * dim + k] - v[e.j * dim + k];
                out[e.i * dim + k] += w * d;
                out[e.j * dim + k] -= w * d;
            }
        }
    }

    /// `(L ⊗ I_dim) v`.
    pub fn laplacian_apply(&self, kind: LaplacianKind, dim: usize, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.laplacian_apply_add(kind, dim, v, 1.0, &mut out);
        out
    }

    /// Rebuilds the graph with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, GraphError> {
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| (e.i, e.j, e.a * factor, e.b * factor))
            .collect();
        Self::new(self.n, &edges)
    }
}

/// A symmetric, row-sum-zero, positive semidefinite matrix built from one weight family.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    pub entries: DMatrix<f64>,
    pub kind: LaplacianKind,
}

impl LaplacianMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .entries
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Second-smallest eigenvalue; positive iff the graph is connected.
    pub fn algebraic_connectivity(&self) -> f64 {
        let ev = self.eigenvalues();
        ev.get(1).copied().unwrap_or(0.0)
    }
}

/// `L ⊗ I_dim`: the block matrix with `L[i][j]·I_dim` blocks.
pub fn kron_lift(l: &LaplacianMatrix, dim: usize) -> DMatrix<f64> {
    assert!(dim >= 1, "lift dimension must be positive");
    l.entries.kronecker(&DMatrix::identity(dim, dim))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }

    fn components(&mut self) -> usize {
        (0..self.parent.len())
            .filter(|&x| self.find(x) == x)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_connected_graph() {
        let g = NetworkGraph::new(2, &[(0, 1, 1.0, 1.0)]).unwrap();
        assert_eq!(g.edges().len(), 1);
        let l = g.laplacian(LaplacianKind::P);
        assert_eq!(
            l.entries,
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
    }

    #[test]
    fn isolated_node_is_disconnected() {
        let err = NetworkGraph::new(3, &[(0, 1, 1.0, 1.0)]).unwrap_err();
        assert_eq!(err, GraphError::DisconnectedGraph { components: 2 });
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            NetworkGraph::new(2, &[(1, 1, 1.0, 1.0)]).unwrap_err(),
            GraphError::SelfLoop { node: 1 }
        );
        assert_eq!(
            NetworkGraph::new(2, &[(0, 1, 1.0, 1.0), (1, 0, 2.0, 2.0)]).unwrap_err(),
            GraphError::DuplicateEdge { i: 0, j: 1 }
        );
        assert!(matches!(
            NetworkGraph::new(2, &[(0, 1, 0.0, 1.0)]).unwrap_err(),
            GraphError::NonpositiveWeight { .. }
        ));
        assert!(matches!(
            NetworkGraph::new(2, &[(0, 2, 1.0, 1.0)]).unwrap_err(),
            GraphError::NodeOutOfRange { node: 2, n: 2 }
        ));
        assert_eq!(NetworkGraph::new(0, &[]).unwrap_err(), GraphError::EmptyGraph);
    }

    #[test]
    fn experiment_ring_integral_laplacian() {
        let g = NetworkGraph::ring(5, 1.0, 3.0).unwrap();
        let l = g.laplacian(LaplacianKind::I);
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j {
                    6.0
                } else if (i + 1) % 5 == j || (j + 1) % 5 == i {
                    -3.0
                } else {
                    0.0
                };
                assert_eq!(l.entries[(i, j)], expected);
            }
        }
        let lp = g.laplacian(LaplacianKind::P);
        assert_eq!(lp.entries[(0, 0)], 2.0);
    }

    #[test]
    fn identity_lift_and_block_lift() {
        let g = NetworkGraph::path(2, 1.0, 1.0).unwrap();
        let l = g.laplacian(LaplacianKind::P);
        assert_eq!(kron_lift(&l, 1), l.entries);
        let lifted = kron_lift(&l, 2);
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, -1.0, 0.0,
            0.0, 1.0, 0.0, -1.0,
            -1.0, 0.0, 1.0, 0.0,
            0.0, -1.0, 0.0, 1.0,
        ]);
        assert_eq!(lifted, expected);
    }

    #[test]
    fn matrix_free_apply_matches_lift() {
        let g = NetworkGraph::new(4, &[(0, 1, 1.0, 2.0), (1, 2, 0.5, 1.5), (0, 3, 2.0, 0.25)])
            .unwrap();
        let v: Vec<f64> = (0..8).map(|k| (k as f64 * 0.7).sin()).collect();
        for kind in [LaplacianKind::P, LaplacianKind::I] {
            let dense = kron_lift(&g.laplacian(kind), 2) * nalgebra::DVector::from_vec(v.clone());
            let free = g.laplacian_apply(kind, 2, &v);
            for k in 0..8 {
                assert!((dense[k] - free[k]).abs() < 1e-14);
            }
        }
    }
}
