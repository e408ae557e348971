//! Refinement of human-labeled communities into connected sub-communities.
//!
//! Every label is handled on its induced sub-network: the best of several
//! Leiden runs (by sub-network modularity) splits it into connected pieces,
//! then pieces sharing edges are merged greedily, best global modularity
//! gain first, until the piece count reaches the threshold derived from the
//! label's connected components. Pieces with no edge between them are never
//! merged, so every refined community stays connected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{merge_partitions, Graph, Partition};
use crate::leiden::{best_of_runs, LeidenConfig};
use crate::metrics::modularity;
use crate::par;
use crate::seed::derive_seed;

/// Stopping rule for the merge step, in terms of the number of connected
/// components `|CC|` of a label's sub-network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// `|CC| / 2`
    #[default]
    HalfComponents,
    /// `|CC|`
    AllComponents,
}

impl ThresholdRule {
    pub fn threshold(self, components: usize) -> f64 {
        match self {
            ThresholdRule::HalfComponents => components as f64 / 2.0,
            ThresholdRule::AllComponents => components as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Leiden runs per label.
    pub leiden_runs: usize,
    pub threshold_rule: ThresholdRule,
    pub seed: u64,
    /// Leiden parameters; the seed field is ignored.
    pub leiden: LeidenConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            leiden_runs: 10,
            threshold_rule: ThresholdRule::default(),
            seed: 0,
            leiden: LeidenConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leiden_runs == 0 {
            return Err(Error::Config("refine leiden_runs must be at least 1".into()));
        }
        self.leiden.validate()
    }
}

/// Result of [`refine_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    /// Sub-communities after merging.
    pub refined: Partition,
    /// Sub-communities straight out of the per-label Leiden step.
    pub split: Partition,
}

/// Greedy merge bookkeeping for the sub-communities of one label.
///
/// Gains are measured against the whole graph: merging pieces `i` and `j`
/// changes modularity by `e_ij / m − vol_i · vol_j / (2m²)`, where `e_ij`
/// counts edges between the pieces and volumes are full-graph degree sums.
#[derive(Debug, Clone)]
pub struct MergeState {
    m: f64,
    volume: Vec<f64>,
    alive: Vec<bool>,
    live: usize,
    links: BTreeMap<(usize, usize), usize>,
    /// Piece of each member, by position.
    piece: Vec<usize>,
}

impl MergeState {
    /// `members` are node ids of `g`; `current` partitions them by position.
    pub fn new(g: &Graph, members: &[usize], current: &Partition) -> Result<Self> {
        if members.len() != current.len() {
            return Err(Error::Precondition(format!(
                "{} members but a partition of {} nodes",
                members.len(),
                current.len()
            )));
        }
        let (sub, _) = g.induced_subgraph(members)?;
        let mut volume = vec![0.0; current.k()];
        for (p, &v) in members.iter().enumerate() {
            volume[current.community_of(p)] += g.degree(v) as f64;
        }
        let mut links = BTreeMap::new();
        for (a, b) in sub.edges() {
            let (ca, cb) = (current.community_of(a), current.community_of(b));
            if ca != cb {
                *links.entry((ca.min(cb), ca.max(cb))).or_insert(0) += 1;
            }
        }
        Ok(MergeState {
            m: g.m() as f64,
            alive: vec![true; current.k()],
            live: current.k(),
            volume,
            links,
            piece: current.assignment().to_vec(),
        })
    }

    /// Number of pieces left.
    pub fn k(&self) -> usize {
        self.live
    }

    /// Ids of the pieces left, ascending.
    pub fn pieces(&self) -> Vec<usize> {
        (0..self.alive.len()).filter(|&i| self.alive[i]).collect()
    }

    /// Edges between pieces `i < j`.
    pub fn edges_between(&self, i: usize, j: usize) -> usize {
        self.links.get(&(i.min(j), i.max(j))).copied().unwrap_or(0)
    }

    /// Modularity change from merging pieces `i` and `j`.
    pub fn delta(&self, i: usize, j: usize) -> f64 {
        if self.m == 0.0 {
            return 0.0;
        }
        let e = self.edges_between(i, j) as f64;
        e / self.m - self.volume[i] * self.volume[j] / (2.0 * self.m * self.m)
    }

    /// Pair `(i, j, ΔQ)` with the largest gain, lexicographically smallest on
    /// ties. With `require_edge`, only pieces joined by an edge qualify.
    pub fn best_pair(&self, require_edge: bool) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        let mut consider = |i: usize, j: usize| {
            let d = self.delta(i, j);
            if best.is_none_or(|b| d > b.2) {
                best = Some((i, j, d));
            }
        };
        if require_edge {
            for &(i, j) in self.links.keys() {
                consider(i, j);
            }
        } else {
            let alive = self.pieces();
            for (a, &i) in alive.iter().enumerate() {
                for &j in &alive[a + 1..] {
                    consider(i, j);
                }
            }
        }
        best
    }

    /// Merges piece `j` into piece `i`.
    pub fn merge(&mut self, i: usize, j: usize) {
        assert!(i != j && self.alive[i] && self.alive[j], "merge of invalid pieces");
        let (keep, gone) = (i.min(j), i.max(j));
        self.volume[keep] += self.volume[gone];
        self.volume[gone] = 0.0;
        self.alive[gone] = false;
        self.live -= 1;
        let moved: Vec<((usize, usize), usize)> = self
            .links
            .iter()
            .filter(|(&(a, b), _)| a == gone || b == gone)
            .map(|(&k, &v)| (k, v))
            .collect();
        for ((a, b), count) in moved {
            self.links.remove(&(a, b));
            let other = if a == gone { b } else { a };
            if other != keep {
                *self
                    .links
                    .entry((keep.min(other), keep.max(other)))
                    .or_insert(0) += count;
            }
        }
        for p in self.piece.iter_mut() {
            if *p == gone {
                *p = keep;
            }
        }
    }

    /// Current pieces as a partition over member positions.
    pub fn partition(&self) -> Partition {
        Partition::new(self.piece.clone())
    }
}

/// Merges the pair of sub-communities of `current` (over `members`) whose
/// merge gives the highest modularity of the whole graph.
pub fn merge_step(g: &Graph, members: &[usize], current: &Partition) -> Result<Partition> {
    if current.k() < 2 {
        return Err(Error::Precondition("merge_step needs at least two communities".into()));
    }
    let mut state = MergeState::new(g, members, current)?;
    let (i, j, _) = state.best_pair(false).expect("two or more pieces");
    state.merge(i, j);
    Ok(state.partition())
}

fn refine_one(g: &Graph, members: &[usize], label: usize, cfg: &RefineConfig) -> Result<(Partition, Partition)> {
    let (sub, _) = g.induced_subgraph(members)?;
    let leiden_cfg = cfg.leiden.with_seed(derive_seed(cfg.seed, label as u64));
    let split = best_of_runs(&sub, cfg.leiden_runs, &leiden_cfg, |p| {
        modularity(&sub, p).expect("partition covers the sub-network")
    })?
    .partition;

    let components = sub.connected_components(None).k();
    let limit = (cfg.threshold_rule.threshold(components).ceil() as usize).max(1);
    let mut state = MergeState::new(g, members, &split)?;
    while state.k() > limit {
        match state.best_pair(true) {
            Some((i, j, _)) => state.merge(i, j),
            None => break,
        }
    }
    Ok((split, state.partition()))
}

/// Splits every community of `cs_o` into connected sub-communities.
pub fn refine_labels(g: &Graph, cs_o: &Partition, cfg: &RefineConfig) -> Result<Refinement> {
    cfg.validate()?;
    if cs_o.len() != g.n() {
        return Err(Error::Precondition(format!(
            "labels cover {} nodes, graph has {}",
            cs_o.len(),
            g.n()
        )));
    }
    let labels = cs_o.communities();
    let results = par::map_indexed(labels.len(), |c| refine_one(g, &labels[c], c, cfg));
    let mut split_parts = Vec::with_capacity(labels.len());
    let mut refined_parts = Vec::with_capacity(labels.len());
    for (members, r) in labels.into_iter().zip(results) {
        let (split, refined) = r?;
        split_parts.push((members.clone(), split));
        refined_parts.push((members, refined));
    }
    let refined = merge_partitions(g.n(), &refined_parts)?;
    let split = merge_partitions(g.n(), &split_parts)?;
    debug_assert!(refined.refines(cs_o));
    debug_assert_eq!(g.split_disconnected(&refined).k(), refined.k());
    Ok(Refinement { refined, split })
}
