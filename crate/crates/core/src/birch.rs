//! BIRCH clustering: rows are inserted one by one into a CF tree and the
//! leaf subclusters become the communities.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Partition;

/// Count, linear sum and squared sum of a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringFeature {
    pub n: usize,
    pub ls: Array1<f64>,
    pub ss: f64,
}

impl ClusteringFeature {
    pub fn empty(dim: usize) -> Self {
        ClusteringFeature { n: 0, ls: Array1::zeros(dim), ss: 0.0 }
    }

    pub fn from_point(p: ArrayView1<'_, f64>) -> Self {
        ClusteringFeature { n: 1, ls: p.to_owned(), ss: p.dot(&p) }
    }

    pub fn add(&mut self, other: &ClusteringFeature) {
        self.n += other.n;
        self.ls += &other.ls;
        self.ss += other.ss;
    }

    pub fn add_point(&mut self, p: ArrayView1<'_, f64>) {
        self.n += 1;
        self.ls += &p;
        self.ss += p.dot(&p);
    }

    pub fn centroid(&self) -> Array1<f64> {
        &self.ls / self.n as f64
    }

    /// `sqrt(SS/N − ‖LS/N‖²)`, the RMS distance of members to the centroid.
    pub fn radius(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        (self.ss / n - self.ls.dot(&self.ls) / (n * n)).max(0.0).sqrt()
    }

    /// Radius after adding `p`, without modifying `self`.
    pub fn radius_with(&self, p: ArrayView1<'_, f64>) -> f64 {
        let n = (self.n + 1) as f64;
        let ss = self.ss + p.dot(&p);
        let ls_sq = self.ls.dot(&self.ls) + 2.0 * self.ls.dot(&p) + p.dot(&p);
        (ss / n - ls_sq / (n * n)).max(0.0).sqrt()
    }

    fn dist_sq_to(&self, p: ArrayView1<'_, f64>) -> f64 {
        let n = self.n as f64;
        self.ls.iter().zip(p.iter()).map(|(&l, &x)| (l / n - x).powi(2)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BirchConfig {
    pub threshold_radius: f64,
    pub branching_factor: usize,
    /// After building the tree, move every row to the subcluster with the
    /// nearest centroid instead of the one that absorbed it.
    pub reassign: bool,
}

impl Default for BirchConfig {
    fn default() -> Self {
        BirchConfig { threshold_radius: 0.5, branching_factor: 50, reassign: false }
    }
}

impl BirchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_radius.is_finite() && self.threshold_radius > 0.0) {
            return Err(Error::Config(format!(
                "BIRCH threshold must be positive, got {}",
                self.threshold_radius
            )));
        }
        if self.branching_factor < 2 {
            return Err(Error::Config(format!(
                "BIRCH branching factor must be at least 2, got {}",
                self.branching_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Entry {
    cf: ClusteringFeature,
    /// Child node for inner entries, subcluster id for leaf entries.
    target: usize,
}

#[derive(Debug, Clone)]
struct Node {
    leaf: bool,
    entries: Vec<Entry>,
}

struct CfTree {
    cfg: BirchConfig,
    dim: usize,
    nodes: Vec<Node>,
    root: usize,
    /// Members of each leaf subcluster.
    subclusters: Vec<Vec<usize>>,
}

/// Index of the feature whose centroid is closest to `p`; first on ties.
fn nearest<'a>(cfs: impl Iterator<Item = &'a ClusteringFeature>, p: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, cf) in cfs.enumerate() {
        let d = cf.dist_sq_to(p);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

impl CfTree {
    fn new(dim: usize, cfg: BirchConfig) -> Self {
        CfTree {
            cfg,
            dim,
            nodes: vec![Node { leaf: true, entries: Vec::new() }],
            root: 0,
            subclusters: Vec::new(),
        }
    }

    fn insert(&mut self, id: usize, p: ArrayView1<'_, f64>) {
        if let Some((a, b)) = self.insert_at(self.root, id, p) {
            self.nodes.push(Node { leaf: false, entries: vec![a, b] });
            self.root = self.nodes.len() - 1;
        }
    }

    /// Inserts into the subtree at `node`. On overflow the node is split and
    /// the two replacement entries are returned.
    fn insert_at(&mut self, node: usize, id: usize, p: ArrayView1<'_, f64>) -> Option<(Entry, Entry)> {
        if self.nodes[node].leaf {
            let entries = &mut self.nodes[node].entries;
            if !entries.is_empty() {
                let i = nearest(entries.iter().map(|e| &e.cf), p);
                if entries[i].cf.radius_with(p) <= self.cfg.threshold_radius {
                    entries[i].cf.add_point(p);
                    self.subclusters[entries[i].target].push(id);
                    return None;
                }
            }
            self.subclusters.push(vec![id]);
            let target = self.subclusters.len() - 1;
            self.nodes[node].entries.push(Entry { cf: ClusteringFeature::from_point(p), target });
        } else {
            let i = nearest(self.nodes[node].entries.iter().map(|e| &e.cf), p);
            let child = self.nodes[node].entries[i].target;
            match self.insert_at(child, id, p) {
                None => self.nodes[node].entries[i].cf.add_point(p),
                Some((a, b)) => {
                    self.nodes[node].entries[i] = a;
                    self.nodes[node].entries.insert(i + 1, b);
                }
            }
        }
        if self.nodes[node].entries.len() > self.cfg.branching_factor {
            Some(self.split(node))
        } else {
            None
        }
    }

    /// Splits `node` around its two farthest entries; the second half moves
    /// to a new node.
    fn split(&mut self, node: usize) -> (Entry, Entry) {
        let entries = std::mem::take(&mut self.nodes[node].entries);
        let leaf = self.nodes[node].leaf;
        let centroids: Vec<Array1<f64>> = entries.iter().map(|e| e.cf.centroid()).collect();
        let dist = |a: usize, b: usize| -> f64 {
            centroids[a].iter().zip(centroids[b].iter()).map(|(x, y)| (x - y).powi(2)).sum()
        };
        let (mut sa, mut sb, mut far) = (0, 1, -1.0);
        for a in 0..entries.len() {
            for b in a + 1..entries.len() {
                let d = dist(a, b);
                if d > far {
                    (sa, sb, far) = (a, b, d);
                }
            }
        }
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (i, e) in entries.into_iter().enumerate() {
            let to_b = i == sb || (i != sa && dist(i, sb) < dist(i, sa));
            if to_b {
                second.push(e);
            } else {
                first.push(e);
            }
        }
        let summarize = |es: &[Entry]| {
            let mut cf = ClusteringFeature::empty(self.dim);
            for e in es {
                cf.add(&e.cf);
            }
            cf
        };
        let cf_a = summarize(&first);
        let cf_b = summarize(&second);
        self.nodes[node].entries = first;
        self.nodes.push(Node { leaf, entries: second });
        let other = self.nodes.len() - 1;
        (Entry { cf: cf_a, target: node }, Entry { cf: cf_b, target: other })
    }
}

/// Clusters the rows of `x` in index order; every leaf subcluster of the
/// resulting CF tree is one community.
pub fn birch_cluster(x: ArrayView2<'_, f64>, cfg: &BirchConfig) -> Result<Partition> {
    cfg.validate()?;
    let mut tree = CfTree::new(x.ncols(), *cfg);
    for (i, row) in x.rows().into_iter().enumerate() {
        tree.insert(i, row);
    }
    let mut labels = vec![0; x.nrows()];
    for (c, members) in tree.subclusters.iter().enumerate() {
        for &v in members {
            labels[v] = c;
        }
    }
    if cfg.reassign {
        let mut leaves: Vec<&Entry> = tree
            .nodes
            .iter()
            .filter(|node| node.leaf)
            .flat_map(|node| node.entries.iter())
            .collect();
        leaves.sort_by_key(|e| e.target);
        for (i, row) in x.rows().into_iter().enumerate() {
            labels[i] = leaves[nearest(leaves.iter().map(|e| &e.cf), row)].target;
        }
    }
    Ok(Partition::new(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    #[test]
    fn identical_rows_one_cluster() {
        let x = Array2::from_elem((20, 3), 0.4);
        assert_eq!(birch_cluster(x.view(), &BirchConfig::default()).unwrap().k(), 1);
    }

    #[test]
    fn single_row() {
        let x = array![[0.3, 0.7]];
        assert_eq!(birch_cluster(x.view(), &BirchConfig::default()).unwrap(), Partition::single(1));
    }

    #[test]
    fn radius_matches_direct() {
        let pts = array![[0.1, 0.2], [0.4, 0.0], [0.3, 0.9]];
        let mut cf = ClusteringFeature::empty(2);
        for r in pts.rows() {
            cf.add_point(r);
        }
        let c = cf.centroid();
        let direct = (pts.rows().into_iter().map(|r| (&r - &c).mapv(|v| v * v).sum()).sum::<f64>() / 3.0).sqrt();
        assert_abs_diff_eq!(cf.radius(), direct, epsilon = 1e-12);

        let mut two = ClusteringFeature::from_point(pts.row(0));
        two.add_point(pts.row(1));
        assert_abs_diff_eq!(two.radius_with(pts.row(2)), cf.radius(), epsilon = 1e-12);
    }

    #[test]
    fn splits_keep_every_point() {
        let x = Array2::from_shape_fn((200, 2), |(i, j)| ((i * 37 + j * 11) % 101) as f64 / 10.0);
        let cfg = BirchConfig { threshold_radius: 0.05, branching_factor: 3, reassign: false };
        let p = birch_cluster(x.view(), &cfg).unwrap();
        assert_eq!(p.len(), 200);
        assert!(p.k() > 3);
    }

    #[test]
    fn rejects_bad_config() {
        let x = array![[0.0]];
        assert!(birch_cluster(x.view(), &BirchConfig { threshold_radius: 0.0, ..Default::default() }).is_err());
        assert!(birch_cluster(x.view(), &BirchConfig { branching_factor: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn separated_clouds_recovered() {
        let x = Array2::from_shape_fn((40, 3), |(i, j)| {
            let jitter = ((i * 7 + j * 3) % 11) as f64 * 0.005;
            let center = if (i % 2 == 0) == (j == 0) { 5.0 } else { 0.1 };
            center + jitter
        });
        let p = birch_cluster(x.view(), &BirchConfig::default()).unwrap();
        assert_eq!(p, Partition::new((0..40).map(|i| i % 2).collect()));
    }
}
