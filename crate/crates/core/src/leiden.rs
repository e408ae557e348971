//! Leiden modularity optimization.
//!
//! Each iteration runs three phases on a progressively coarser graph:
//! fast local moving of nodes, refinement of every community into
//! well-connected sub-communities, and aggregation of the refined
//! sub-communities into super-nodes. The non-refined partition seeds the
//! next level. Iterations repeat from the previous result until a full
//! iteration changes nothing and no single node wants to move.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Partition};
use crate::par;
use crate::seed;

/// Minimum gain, in edge-weight units, for a node move to count.
const MOVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeidenConfig {
    pub seed: u64,
    /// Upper bound on full Leiden iterations.
    pub max_passes: usize,
    /// Randomness of the refinement merge choice. Merge candidates are
    /// weighted by `exp(gain / theta)` with the gain in edge-weight units.
    pub theta: f64,
}

impl Default for LeidenConfig {
    fn default() -> Self {
        LeidenConfig {
            seed: 0,
            max_passes: 20,
            theta: 0.01,
        }
    }
}

impl LeidenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_passes == 0 {
            return Err(Error::Config("leiden max_passes must be at least 1".into()));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("leiden theta must be > 0, got {}", self.theta)));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        LeidenConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Weighted graph used internally; aggregated levels carry edge
/// multiplicities. Self-loops are not stored: node weights already hold the
/// full degree, and internal weight does not affect move gains.
#[derive(Debug, Clone)]
struct WeightedGraph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    node_weight: Vec<f64>,
    /// Sum of node weights (2m of the original graph).
    total: f64,
}

impl WeightedGraph {
    fn from_graph(g: &Graph) -> Self {
        let n = g.n();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(2 * g.m());
        offsets.push(0);
        for u in 0..n {
            targets.extend_from_slice(g.neighbors(u));
            offsets.push(targets.len());
        }
        let node_weight: Vec<f64> = (0..n).map(|u| g.degree(u) as f64).collect();
        WeightedGraph {
            offsets,
            weights: vec![1.0; targets.len()],
            targets,
            total: node_weight.iter().sum(),
            node_weight,
        }
    }

    fn n(&self) -> usize {
        self.node_weight.len()
    }

    fn edges_of(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[u]..self.offsets[u + 1];
        self.targets[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    /// Collapses each group of `labels` (dense `0..groups`) into one node.
    fn aggregate(&self, labels: &[usize], groups: usize) -> WeightedGraph {
        let mut node_weight = vec![0.0; groups];
        for (u, &c) in labels.iter().enumerate() {
            node_weight[c] += self.node_weight[u];
        }
        let mut triples: Vec<(usize, usize, f64)> = Vec::new();
        for u in 0..self.n() {
            let cu = labels[u];
            for (v, w) in self.edges_of(u) {
                let cv = labels[v];
                if cu != cv {
                    triples.push((cu, cv, w));
                }
            }
        }
        triples.sort_by_key(|t| (t.0, t.1));
        let mut offsets = vec![0usize; groups + 1];
        let mut targets = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (a, b, w) in triples {
            if last == Some((a, b)) {
                *weights.last_mut().unwrap() += w;
            } else {
                targets.push(b);
                weights.push(w);
                offsets[a + 1] += 1;
                last = Some((a, b));
            }
        }
        for c in 0..groups {
            offsets[c + 1] += offsets[c];
        }
        WeightedGraph {
            offsets,
            targets,
            weights,
            node_weight,
            total: self.total,
        }
    }
}

/// Relabels to `0..k` in order of first appearance; returns `k`.
fn densify(labels: &mut [usize]) -> usize {
    let mut map = vec![usize::MAX; labels.len().max(1 + labels.iter().copied().max().unwrap_or(0))];
    let mut next = 0;
    for l in labels.iter_mut() {
        if map[*l] == usize::MAX {
            map[*l] = next;
            next += 1;
        }
        *l = map[*l];
    }
    next
}

/// Scratch accumulator for edge weight from one node to each community.
struct NeighborWeights {
    weight: Vec<f64>,
    touched: Vec<usize>,
}

impl NeighborWeights {
    fn new(n: usize) -> Self {
        NeighborWeights {
            weight: vec![0.0; n],
            touched: Vec::new(),
        }
    }

    /// `w` must be positive.
    fn add(&mut self, c: usize, w: f64) {
        if self.weight[c] == 0.0 {
            self.touched.push(c);
        }
        self.weight[c] += w;
    }

    fn clear(&mut self) {
        for &c in &self.touched {
            self.weight[c] = 0.0;
        }
        self.touched.clear();
    }
}

/// Fast local moving. `comm` holds community ids in `0..n`. Returns the
/// number of node moves made.
fn move_nodes(g: &WeightedGraph, comm: &mut [usize], rng: &mut ChaCha8Rng) -> usize {
    let n = g.n();
    let mut tot = vec![0.0; n];
    let mut size = vec![0usize; n];
    for u in 0..n {
        tot[comm[u]] += g.node_weight[u];
        size[comm[u]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).filter(|&c| size[c] == 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut scratch = NeighborWeights::new(n);
    let mut queue: VecDeque<usize> = order.iter().copied().collect();
    let mut queued = vec![true; n];
    let mut moves = 0;

    let mut try_move = |v: usize,
                        comm: &mut [usize],
                        tot: &mut [f64],
                        size: &mut [usize],
                        empty: &mut Vec<usize>|
     -> bool {
        let cv = comm[v];
        let kv = g.node_weight[v];
        for (w, wt) in g.edges_of(v) {
            scratch.add(comm[w], wt);
        }
        tot[cv] -= kv;
        let gain = |c: usize, k_in: f64, tot: &[f64]| k_in - kv * tot[c] / g.total;
        let mut best = cv;
        let mut best_gain = gain(cv, scratch.weight[cv], tot);
        for &c in &scratch.touched {
            let gc = gain(c, scratch.weight[c], tot);
            if gc > best_gain + MOVE_TOLERANCE {
                best = c;
                best_gain = gc;
            }
        }
        // an empty community has gain 0
        if size[cv] > 1 && 0.0 > best_gain + MOVE_TOLERANCE {
            best = *empty.last().expect("an empty community exists while a community has 2+ nodes");
        }
        scratch.clear();
        tot[best] += kv;
        if best == cv {
            return false;
        }
        if size[best] == 0 {
            empty.pop();
        }
        size[best] += 1;
        size[cv] -= 1;
        if size[cv] == 0 {
            empty.push(cv);
        }
        comm[v] = best;
        true
    };

    loop {
        while let Some(v) = queue.pop_front() {
            queued[v] = false;
            if try_move(v, comm, &mut tot, &mut size, &mut empty) {
                moves += 1;
                for (w, _) in g.edges_of(v) {
                    if !queued[w] && comm[w] != comm[v] {
                        queued[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        // community totals change under non-neighbours too; sweep once more
        let mut changed = false;
        for &v in &order {
            if try_move(v, comm, &mut tot, &mut size, &mut empty) {
                moves += 1;
                changed = true;
                for (w, _) in g.edges_of(v) {
                    if !queued[w] && comm[w] != comm[v] {
                        queued[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    moves
}

/// Refines each community of `comm` (dense ids) by merging singletons into
/// well-connected sub-communities. Returns refined labels (not dense).
fn refine_partition(
    g: &WeightedGraph,
    comm: &[usize],
    ncomm: usize,
    theta: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = g.n();
    let mut refined: Vec<usize> = (0..n).collect();
    let mut rtot = g.node_weight.clone();
    let mut rsize = vec![1usize; n];
    let mut comm_tot = vec![0.0; ncomm];
    for u in 0..n {
        comm_tot[comm[u]] += g.node_weight[u];
    }
    // weight from each refined community to the rest of its community
    let mut ext: Vec<f64> = (0..n)
        .map(|u| {
            g.edges_of(u)
                .filter(|&(w, _)| comm[w] == comm[u])
                .map(|(_, wt)| wt)
                .sum()
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut scratch = NeighborWeights::new(n);
    let mut candidates: Vec<(usize, f64)> = Vec::new();

    for &v in &order {
        if rsize[refined[v]] != 1 {
            continue;
        }
        let c = comm[v];
        let kv = g.node_weight[v];
        let ext_v = ext[refined[v]];
        if ext_v < kv * (comm_tot[c] - kv) / g.total {
            continue;
        }
        for (w, wt) in g.edges_of(v) {
            if comm[w] == c && refined[w] != refined[v] {
                scratch.add(refined[w], wt);
            }
        }
        candidates.clear();
        candidates.push((refined[v], 0.0));
        for &t in &scratch.touched {
            let well_connected = ext[t] >= rtot[t] * (comm_tot[c] - rtot[t]) / g.total;
            let gain = scratch.weight[t] - kv * rtot[t] / g.total;
            if well_connected && gain >= 0.0 {
                candidates.push((t, gain));
            }
        }
        if candidates.len() > 1 {
            let max_gain = candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = candidates
                .iter()
                .map(|&(_, gain)| ((gain - max_gain) / theta).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = candidates.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if pick < *w {
                    chosen = i;
                    break;
                }
                pick -= w;
            }
            let t = candidates[chosen].0;
            if t != refined[v] {
                let k_vt = scratch.weight[t];
                let own = refined[v];
                rsize[own] = 0;
                rtot[own] = 0.0;
                ext[own] = 0.0;
                refined[v] = t;
                rsize[t] += 1;
                rtot[t] += kv;
                ext[t] += ext_v - 2.0 * k_vt;
            }
        }
        scratch.clear();
    }
    refined
}

/// One full Leiden iteration starting from `initial` (labels in `0..n`).
/// Returns the new labels and the number of moves at the finest level.
fn iterate(base: &WeightedGraph, initial: &[usize], theta: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
    let mut graph = base.clone();
    let mut comm = initial.to_vec();
    let mut membership: Vec<usize> = (0..base.n()).collect();
    let mut level0_moves = None;
    loop {
        let moves = move_nodes(&graph, &mut comm, rng);
        level0_moves.get_or_insert(moves);
        let ncomm = densify(&mut comm);
        if ncomm == graph.n() {
            break;
        }
        let mut refined = refine_partition(&graph, &comm, ncomm, theta, rng);
        let nref = densify(&mut refined);
        if nref == graph.n() {
            // refinement made no merge; aggregating again would not progress
            break;
        }
        let mut next_comm = vec![0usize; nref];
        for u in 0..graph.n() {
            next_comm[refined[u]] = comm[u];
        }
        graph = graph.aggregate(&refined, nref);
        for m in membership.iter_mut() {
            *m = refined[*m];
        }
        comm = next_comm;
    }
    let labels = membership.iter().map(|&a| comm[a]).collect();
    (labels, level0_moves.unwrap_or(0))
}

/// Runs Leiden on `g` and returns a partition whose communities are all
/// connected and in which no single node move improves modularity.
pub fn leiden(g: &Graph, cfg: &LeidenConfig) -> Result<Partition> {
    cfg.validate()?;
    if g.n() == 0 {
        return Ok(Partition::singletons(0));
    }
    if g.m() == 0 {
        return Ok(Partition::singletons(g.n()));
    }
    let base = WeightedGraph::from_graph(g);
    let mut rng = seed::rng(cfg.seed);
    let mut current = Partition::singletons(g.n());
    for _ in 0..cfg.max_passes {
        let (labels, level0_moves) = iterate(&base, current.assignment(), cfg.theta, &mut rng);
        // splitting a disconnected community never lowers modularity
        let next = g.split_disconnected(&Partition::new(labels));
        if level0_moves == 0 && next == current {
            return Ok(current);
        }
        current = next;
    }
    log::debug!("leiden stopped after max_passes = {}", cfg.max_passes);
    Ok(current)
}

/// Outcome of [`best_of_runs`].
#[derive(Debug, Clone, PartialEq)]
pub struct BestRun {
    pub partition: Partition,
    pub score: f64,
    /// Index of the winning run.
    pub run: usize,
}

/// Seed used by run `i` of [`best_of_runs`]. Run 0 uses the configured seed.
pub fn run_seed(master: u64, i: usize) -> u64 {
    if i == 0 {
        master
    } else {
        seed::derive_seed(master, i as u64)
    }
}

/// Runs Leiden `runs` times with independent seeds and keeps the partition
/// with the highest `score`. Ties go to the lowest run index.
pub fn best_of_runs<F>(g: &Graph, runs: usize, cfg: &LeidenConfig, score: F) -> Result<BestRun>
where
    F: Fn(&Partition) -> f64 + Sync + Send,
{
    if runs == 0 {
        return Err(Error::Config("best_of_runs needs at least one run".into()));
    }
    cfg.validate()?;
    let results = par::map_indexed(runs, |i| {
        let p = leiden(g, &cfg.with_seed(run_seed(cfg.seed, i)))?;
        let s = score(&p);
        Ok((p, s))
    });
    let mut best: Option<BestRun> = None;
    for (run, r) in results.into_iter().enumerate() {
        let (partition, score) = r?;
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(BestRun {
                partition,
                score,
                run,
            });
        }
    }
    Ok(best.expect("runs >= 1"))
}
