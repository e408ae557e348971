//! Sparse undirected graphs, node partitions and attribute matrices.

use std::collections::{HashMap, VecDeque};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simple undirected graph stored as sorted adjacency lists (CSR layout).
///
/// Self-loops and duplicate edges are dropped on construction; the number of
/// dropped entries is kept for reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    m: usize,
    dropped_self_loops: usize,
    dropped_duplicates: usize,
}

impl Graph {
    /// Builds a graph on `n` nodes from an edge list.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut pairs = Vec::new();
        let mut self_loops = 0;
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Precondition(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                self_loops += 1;
                continue;
            }
            pairs.push((u.min(v), u.max(v)));
        }
        let raw = pairs.len();
        pairs.sort_unstable();
        pairs.dedup();
        let duplicates = raw - pairs.len();
        if self_loops + duplicates > 0 {
            log::warn!("dropped {self_loops} self-loops and {duplicates} duplicate edges");
        }

        let mut degree = vec![0usize; n];
        for &(u, v) in &pairs {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut targets = vec![0usize; 2 * pairs.len()];
        for &(u, v) in &pairs {
            targets[cursor[u]] = v;
            cursor[u] += 1;
            targets[cursor[v]] = u;
            cursor[v] += 1;
        }
        for i in 0..n {
            targets[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        let g = Graph {
            offsets,
            targets,
            m: pairs.len(),
            dropped_self_loops: self_loops,
            dropped_duplicates: duplicates,
        };
        debug_assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.m);
        Ok(g)
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Graph {
            offsets: vec![0; n + 1],
            targets: Vec::new(),
            m: 0,
            dropped_self_loops: 0,
            dropped_duplicates: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n()).map(|i| self.degree(i)).collect()
    }

    /// Sorted neighbours of `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    pub fn dropped_self_loops(&self) -> usize {
        self.dropped_self_loops
    }

    pub fn dropped_duplicates(&self) -> usize {
        self.dropped_duplicates
    }

    /// Connected components of the sub-graph induced by `nodes` (all nodes
    /// when `None`). The returned partition is indexed by position in `nodes`.
    pub fn connected_components(&self, nodes: Option<&[usize]>) -> Partition {
        match nodes {
            None => {
                let all: Vec<usize> = (0..self.n()).collect();
                self.components_of(&all)
            }
            Some(subset) => self.components_of(subset),
        }
    }

    fn components_of(&self, subset: &[usize]) -> Partition {
        let position: HashMap<usize, usize> =
            subset.iter().enumerate().map(|(p, &v)| (v, p)).collect();
        let mut comp = vec![usize::MAX; subset.len()];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for start in 0..subset.len() {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                for &w in self.neighbors(subset[p]) {
                    if let Some(&q) = position.get(&w) {
                        if comp[q] == usize::MAX {
                            comp[q] = next;
                            queue.push_back(q);
                        }
                    }
                }
            }
            next += 1;
        }
        Partition::new(comp)
    }

    /// Sub-graph induced by `nodes` together with the index map between the
    /// two numberings.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<(Graph, NodeMap)> {
        let mut to_new = HashMap::with_capacity(nodes.len());
        for (p, &v) in nodes.iter().enumerate() {
            if v >= self.n() {
                return Err(Error::Precondition(format!("node {v} out of range")));
            }
            if to_new.insert(v, p).is_some() {
                return Err(Error::Precondition(format!("node {v} listed twice")));
            }
        }
        let edges = nodes.iter().enumerate().flat_map(|(p, &v)| {
            let to_new = &to_new;
            self.neighbors(v)
                .iter()
                .filter_map(move |w| to_new.get(w).copied())
                .filter(move |&q| q > p)
                .map(move |q| (p, q))
        });
        let sub = Graph::from_edges(nodes.len(), edges.collect::<Vec<_>>())?;
        Ok((
            sub,
            NodeMap {
                to_old: nodes.to_vec(),
                to_new,
            },
        ))
    }

    /// Splits every community of `cs` into its connected components.
    pub fn split_disconnected(&self, cs: &Partition) -> Partition {
        let mut comp = vec![usize::MAX; self.n()];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.n() {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &w in self.neighbors(u) {
                    if comp[w] == usize::MAX && cs.community_of(w) == cs.community_of(u) {
                        comp[w] = next;
                        queue.push_back(w);
                    }
                }
            }
            next += 1;
        }
        Partition::new(comp)
    }
}

/// Bijection between the nodes of an induced sub-graph and the parent graph.
#[derive(Debug, Clone)]
pub struct NodeMap {
    to_old: Vec<usize>,
    to_new: HashMap<usize, usize>,
}

impl NodeMap {
    pub fn to_old(&self, new: usize) -> usize {
        self.to_old[new]
    }

    pub fn to_new(&self, old: usize) -> Option<usize> {
        self.to_new.get(&old).copied()
    }

    pub fn len(&self) -> usize {
        self.to_old.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_old.is_empty()
    }
}

/// Non-overlapping assignment of nodes to communities.
///
/// Community ids are always canonical: numbered `0..k` in order of first
/// appearance. Two partitions therefore compare equal exactly when they
/// group the nodes identically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct Partition {
    assignment: Vec<usize>,
    k: usize,
}

impl Partition {
    /// Canonicalizes arbitrary integer labels.
    pub fn new(labels: Vec<usize>) -> Self {
        let mut map = HashMap::new();
        let mut assignment = labels;
        for c in assignment.iter_mut() {
            let next = map.len();
            *c = *map.entry(*c).or_insert(next);
        }
        let k = map.len();
        Partition { assignment, k }
    }

    /// Canonicalizes arbitrary hashable labels.
    pub fn from_labels<T: std::hash::Hash + Eq>(labels: &[T]) -> Self {
        let mut map = HashMap::new();
        let assignment = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        let k = map.len();
        Partition { assignment, k }
    }

    pub fn singletons(n: usize) -> Self {
        Partition {
            assignment: (0..n).collect(),
            k: n,
        }
    }

    pub fn single(n: usize) -> Self {
        Partition {
            assignment: vec![0; n],
            k: usize::from(n > 0),
        }
    }

    /// Number of nodes covered.
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Number of non-empty communities.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn community_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    /// Member lists, each in ascending node order.
    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (v, &c) in self.assignment.iter().enumerate() {
            out[c].push(v);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k];
        for &c in &self.assignment {
            out[c] += 1;
        }
        out
    }

    /// True when every community of `self` lies inside one community of `coarse`.
    pub fn refines(&self, coarse: &Partition) -> bool {
        if self.len() != coarse.len() {
            return false;
        }
        let mut owner = vec![usize::MAX; self.k];
        for (v, &c) in self.assignment.iter().enumerate() {
            let o = coarse.community_of(v);
            if owner[c] == usize::MAX {
                owner[c] = o;
            } else if owner[c] != o {
                return false;
            }
        }
        true
    }
}

impl From<Vec<usize>> for Partition {
    fn from(labels: Vec<usize>) -> Self {
        Partition::new(labels)
    }
}

impl From<Partition> for Vec<usize> {
    fn from(p: Partition) -> Self {
        p.assignment
    }
}

/// Combines per-subset partitions into one partition of `0..n`.
///
/// `parts[i] = (members, inner)` where `inner` is indexed by position in
/// `members`. Global ids follow subset order, then inner id order.
pub fn merge_partitions(n: usize, parts: &[(Vec<usize>, Partition)]) -> Result<Partition> {
    let mut labels = vec![usize::MAX; n];
    let mut offset = 0;
    for (members, inner) in parts {
        if members.len() != inner.len() {
            return Err(Error::Precondition(format!(
                "subset of {} nodes paired with a partition of {}",
                members.len(),
                inner.len()
            )));
        }
        for (p, &v) in members.iter().enumerate() {
            if v >= n {
                return Err(Error::Precondition(format!("node {v} out of range")));
            }
            if labels[v] != usize::MAX {
                return Err(Error::Precondition(format!("node {v} in two subsets")));
            }
            labels[v] = offset + inner.community_of(p);
        }
        offset += inner.k();
    }
    if let Some(v) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(Error::Precondition(format!("node {v} not covered")));
    }
    Ok(Partition::new(labels))
}

/// Dense node-attribute matrix, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatrix {
    values: Array2<f64>,
}

impl AttributeMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((i, j), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite attribute at row {i}, column {j}")));
        }
        Ok(AttributeMatrix { values })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> Graph {
        Graph::from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap()
    }

    #[test]
    fn construction_drops_loops_and_duplicates() {
        let g = Graph::from_edges(3, [(0, 1), (1, 0), (1, 1), (1, 2)]).unwrap();
        assert_eq!(g.m(), 2);
        assert_eq!(g.dropped_self_loops(), 1);
        assert_eq!(g.dropped_duplicates(), 1);
        assert_eq!(g.degrees(), vec![1, 2, 1]);
        assert!(Graph::from_edges(2, [(0, 2)]).is_err());
    }

    #[test]
    fn components_examples() {
        let path = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert_eq!(path.connected_components(None).k(), 1);
        assert_eq!(Graph::empty(3).connected_components(None).k(), 3);
        let cc = two_triangles().connected_components(None);
        assert_eq!(cc.assignment(), &[0, 0, 0, 1, 1, 1]);
        assert!(two_triangles().connected_components(Some(&[])).is_empty());
        // removing the middle of a path splits it
        assert_eq!(path.connected_components(Some(&[0, 2])).k(), 2);
    }

    #[test]
    fn induced_subgraph_examples() {
        let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let (sub, map) = tri.induced_subgraph(&[0, 1]).unwrap();
        assert_eq!((sub.n(), sub.m()), (2, 1));
        assert_eq!(map.to_old(1), 1);
        let k4 = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        let (sub, map) = k4.induced_subgraph(&[3, 1, 2]).unwrap();
        assert_eq!((sub.n(), sub.m()), (3, 3));
        assert_eq!(map.to_new(3), Some(0));
        assert_eq!(map.to_new(0), None);
        assert!(k4.induced_subgraph(&[1, 1]).is_err());
        let (empty, _) = k4.induced_subgraph(&[]).unwrap();
        assert_eq!(empty.n(), 0);
    }

    #[test]
    fn partition_is_canonical() {
        let p = Partition::new(vec![5, 5, 2, 9, 2]);
        assert_eq!(p.assignment(), &[0, 0, 1, 2, 1]);
        assert_eq!(p.k(), 3);
        assert_eq!(p, Partition::from_labels(&["a", "a", "b", "c", "b"]));
        assert_eq!(p.sizes(), vec![2, 2, 1]);
        assert!(Partition::singletons(5).refines(&p));
        assert!(!Partition::single(5).refines(&p));
    }

    #[test]
    fn merge_examples() {
        // two labels, each split in two
        let parts = vec![
            (vec![0, 1, 2, 3], Partition::new(vec![0, 0, 1, 1])),
            (vec![4, 5, 6], Partition::new(vec![0, 1, 1])),
        ];
        let merged = merge_partitions(7, &parts).unwrap();
        assert_eq!(merged.k(), 4);
        assert_eq!(merged.assignment(), &[0, 0, 1, 1, 2, 3, 3]);

        let whole = vec![(vec![0, 1, 2], Partition::single(3))];
        assert_eq!(merge_partitions(3, &whole).unwrap(), Partition::single(3));

        let overlap = vec![
            (vec![0, 1], Partition::single(2)),
            (vec![1, 2], Partition::single(2)),
        ];
        assert!(merge_partitions(3, &overlap).is_err());
        let gap = vec![(vec![0, 1], Partition::single(2))];
        assert!(merge_partitions(3, &gap).is_err());
    }

    #[test]
    fn split_disconnected_separates_components() {
        let g = two_triangles();
        let split = g.split_disconnected(&Partition::single(6));
        assert_eq!(split.k(), 2);
    }

    #[test]
    fn attributes_reject_nan() {
        let mut a = Array2::zeros((2, 2));
        a[[1, 0]] = f64::NAN;
        assert!(AttributeMatrix::new(a).is_err());
    }
}
