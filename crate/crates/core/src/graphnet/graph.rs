use std::sync::Arc;

use crate::autodiff::{Segments, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Directed edge list with its destination segmentation.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub by_dst: Arc<Segments>,
}

impl EdgeIndex {
    fn new(edges: &[(usize, usize)], n: usize) -> Result<Self> {
        let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
        for (position, &s) in src.iter().enumerate() {
            if s >= n {
                return Err(Error::Index {
                    op: "graph edge source",
                    position,
                    index: s,
                    bound: n,
                });
            }
        }
        let by_dst = Arc::new(Segments::new(dst.clone(), n)?);
        Ok(EdgeIndex {
            src: src.into(),
            dst: dst.into(),
            by_dst,
        })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// A graph with `n` nodes and directed edges `(src, dst)`; messages flow
/// from `src` to `dst`. Undirected data stores both directions.
#[derive(Clone, Debug)]
pub struct Graph<T> {
    n: usize,
    edges: Vec<(usize, usize)>,
    index: EdgeIndex,
    /// Same as `index` without `(i, i)` edges.
    neighbors: EdgeIndex,
    node_features: Tensor<T>,
    edge_features: Option<Tensor<T>>,
    degrees: Vec<usize>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        node_features: Tensor<T>,
        edge_features: Option<Tensor<T>>,
    ) -> Result<Self> {
        if node_features.rank() != 2 || node_features.rows() != n {
            return Err(Error::dim("graph node features", node_features.shape(), &[n]));
        }
        if let Some(ef) = &edge_features {
            if ef.rank() != 2 || ef.rows() != edges.len() {
                return Err(Error::dim("graph edge features", ef.shape(), &[edges.len()]));
            }
        }
        let index = EdgeIndex::new(&edges, n)?;
        let non_loop: Vec<(usize, usize)> = edges.iter().copied().filter(|e| e.0 != e.1).collect();
        let neighbors = EdgeIndex::new(&non_loop, n)?;
        let degrees = index.by_dst.counts().to_vec();
        Ok(Graph {
            n,
            edges,
            index,
            neighbors,
            node_features,
            edge_features,
            degrees,
        })
    }

    /// Builds a graph from undirected pairs, storing each pair in both
    /// directions (a pair `(i, i)` is stored once).
    pub fn undirected(n: usize, pairs: &[(usize, usize)], node_features: Tensor<T>) -> Result<Self> {
        let mut edges = Vec::with_capacity(2 * pairs.len());
        for &(a, b) in pairs {
            edges.push((a, b));
            if a != b {
                edges.push((b, a));
            }
        }
        Self::new(n, edges, node_features, None)
    }

    /// Graph with `n` nodes, the given undirected pairs and a single
    /// constant feature per node.
    pub fn structure(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::undirected(n, pairs, Tensor::ones(&[n, 1]))
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// All edges, including self-loops.
    pub fn edge_index(&self) -> &EdgeIndex {
        &self.index
    }

    /// Edges excluding self-loops.
    pub fn neighbor_index(&self) -> &EdgeIndex {
        &self.neighbors
    }

    pub fn node_features(&self) -> &Tensor<T> {
        &self.node_features
    }

    pub fn edge_features(&self) -> Option<&Tensor<T>> {
        self.edge_features.as_ref()
    }

    /// In-degree per node, counting self-loops.
    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn with_node_features(&self, x: Tensor<T>) -> Result<Self> {
        Self::new(self.n, self.edges.clone(), x, self.edge_features.clone())
    }

    pub fn has_self_loop(&self, i: usize) -> bool {
        self.edges.iter().any(|&(s, d)| s == i && d == i)
    }

    /// Adds an `(i, i)` edge to every node lacking one. Idempotent. New
    /// loops get zero edge features.
    pub fn add_self_loops(&self) -> Self {
        let mut looped = vec![false; self.n];
        for &(s, d) in &self.edges {
            if s == d {
                looped[s] = true;
            }
        }
        let missing: Vec<usize> = (0..self.n).filter(|&i| !looped[i]).collect();
        if missing.is_empty() {
            return self.clone();
        }
        let mut edges = self.edges.clone();
        edges.extend(missing.iter().map(|&i| (i, i)));
        let edge_features = self.edge_features.as_ref().map(|ef| {
            let d = ef.cols();
            let mut data = ef.data().to_vec();
            data.resize(edges.len() * d, T::zero());
            Tensor::matrix(edges.len(), d, data).expect("edge feature shape")
        });
        Self::new(self.n, edges, self.node_features.clone(), edge_features)
            .expect("self-loops keep indices in range")
    }

    /// Dense `D̃^{-1/2} Ã D̃^{-1/2}` built from the stored edges, where `D̃`
    /// is the in-degree including loops.
    pub fn normalized_adjacency(&self) -> Result<Tensor<T>> {
        if let Some(i) = self.degrees.iter().position(|&d| d == 0) {
            return Err(Error::Degenerate(format!(
                "node {i} has degree zero; add self-loops first"
            )));
        }
        let mut m = Tensor::zeros(&[self.n, self.n]);
        for &(s, d) in &self.edges {
            let w = T::one() / T::lit((self.degrees[s] * self.degrees[d]) as f64).sqrt();
            let v = m.get(d, s) + w;
            m.set(d, s, v);
        }
        Ok(m)
    }

    /// Connected components of the underlying undirected graph, each as a
    /// sorted list of nodes, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        components(self.n, &self.edges)
    }

    /// Disjoint union; also returns the owning graph of every node.
    pub fn disjoint_union(graphs: &[&Graph<T>]) -> Result<(Graph<T>, Vec<usize>)> {
        let Some(first) = graphs.first() else {
            return Err(Error::Contract("union of zero graphs".into()));
        };
        let c = first.node_features.cols();
        let has_ef = first.edge_features.is_some();
        let mut n = 0;
        let mut edges = Vec::new();
        let mut x = Vec::new();
        let mut ef = Vec::new();
        let mut ef_cols = 0;
        let mut owner = Vec::new();
        for (k, g) in graphs.iter().enumerate() {
            if g.node_features.cols() != c || g.edge_features.is_some() != has_ef {
                return Err(Error::dim("disjoint_union", first.node_features.shape(), g.node_features.shape()));
            }
            edges.extend(g.edges.iter().map(|&(s, d)| (s + n, d + n)));
            x.extend_from_slice(g.node_features.data());
            if let Some(e) = &g.edge_features {
                ef_cols = e.cols();
                ef.extend_from_slice(e.data());
            }
            owner.extend(std::iter::repeat_n(k, g.n));
            n += g.n;
        }
        let edge_features = if has_ef {
            Some(Tensor::matrix(edges.len(), ef_cols, ef)?)
        } else {
            None
        };
        let g = Graph::new(n, edges, Tensor::matrix(n, c, x)?, edge_features)?;
        Ok((g, owner))
    }

    /// Relabels node `i` as `perm[i]`, permuting features accordingly.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::dim("permuted", &[perm.len()], &[self.n]));
        }
        let c = self.node_features.cols();
        let mut x = Tensor::zeros(&[self.n, c]);
        for i in 0..self.n {
            x.row_mut(perm[i]).copy_from_slice(self.node_features.row(i));
        }
        let edges = self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        Self::new(self.n, edges, x, self.edge_features.clone())
    }
}

/// Union–find connected components over undirected `edges`.
pub fn components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}
