//! Partition quality measures.
//!
//! Topology-based: modularity, conductance and the isolated sub-network
//! score. Label-based: normalized mutual information and pairwise F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Partition};

fn check_cover(g: &Graph, cs: &Partition) -> Result<()> {
    if cs.len() != g.n() {
        return Err(Error::Precondition(format!(
            "partition covers {} nodes, graph has {}",
            cs.len(),
            g.n()
        )));
    }
    Ok(())
}

fn check_same_nodes(c: &Partition, d: &Partition) -> Result<()> {
    if c.len() != d.len() {
        return Err(Error::Precondition(format!(
            "partitions over {} and {} nodes",
            c.len(),
            d.len()
        )));
    }
    Ok(())
}

/// Newman modularity, evaluated per community as
/// `Σ_c (e_c / m − (deg_c / 2m)²)`.
///
/// Returns 0 for an edgeless graph.
pub fn modularity(g: &Graph, cs: &Partition) -> Result<f64> {
    check_cover(g, cs)?;
    let m = g.m();
    if m == 0 {
        log::warn!("modularity of an edgeless graph is defined as 0");
        return Ok(0.0);
    }
    let mut intra = vec![0usize; cs.k()];
    let mut volume = vec![0usize; cs.k()];
    for u in 0..g.n() {
        let cu = cs.community_of(u);
        volume[cu] += g.degree(u);
        intra[cu] += g
            .neighbors(u)
            .iter()
            .filter(|&&v| v > u && cs.community_of(v) == cu)
            .count();
    }
    let m = m as f64;
    Ok(intra
        .iter()
        .zip(&volume)
        .map(|(&e, &d)| {
            let frac = d as f64 / (2.0 * m);
            e as f64 / m - frac * frac
        })
        .sum())
}

/// Sparse contingency table between two partitions of the same nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    cells: BTreeMap<(usize, usize), usize>,
    row_sums: Vec<usize>,
    col_sums: Vec<usize>,
    n: usize,
}

impl ConfusionMatrix {
    pub fn new(c: &Partition, d: &Partition) -> Result<Self> {
        check_same_nodes(c, d)?;
        let mut cells = BTreeMap::new();
        for (&i, &j) in c.assignment().iter().zip(d.assignment()) {
            *cells.entry((i, j)).or_insert(0) += 1;
        }
        Ok(ConfusionMatrix {
            cells,
            row_sums: c.sizes(),
            col_sums: d.sizes(),
            n: c.len(),
        })
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.cells.get(&(i, j)).copied().unwrap_or(0)
    }

    /// Non-zero cells `((i, j), P_ij)`.
    pub fn nonzero(&self) -> impl Iterator<Item = ((usize, usize), usize)> + '_ {
        self.cells.iter().map(|(&k, &v)| (k, v))
    }

    pub fn row_sums(&self) -> &[usize] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[usize] {
        &self.col_sums
    }

    pub fn total(&self) -> usize {
        self.n
    }
}

/// Sums after sorting, so the result does not depend on term order.
fn order_free_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Normalized mutual information (natural log).
///
/// `−2 Σ P_ij ln(P_ij n / P_i. P_.j) / (Σ P_i. ln(P_i./n) + Σ P_.j ln(P_.j/n))`.
/// When both partitions are a single community the ratio is 0/0; it is
/// defined as 1 for identical partitions and 0 otherwise.
pub fn nmi(c: &Partition, d: &Partition) -> Result<f64> {
    check_same_nodes(c, d)?;
    if c.is_empty() {
        return Err(Error::Precondition("nmi of empty partitions".into()));
    }
    if c == d {
        return Ok(1.0);
    }
    let p = ConfusionMatrix::new(c, d)?;
    let n = p.total() as f64;
    let mutual = order_free_sum(
        p.nonzero()
            .map(|((i, j), pij)| {
                let pij = pij as f64;
                let denom = p.row_sums[i] as f64 * p.col_sums[j] as f64;
                pij * (pij * n / denom).ln()
            })
            .collect(),
    );
    let entropy = |sums: &[usize]| {
        order_free_sum(
            sums.iter()
                .map(|&s| s as f64)
                .map(|s| s * (s / n).ln())
                .collect(),
        )
    };
    let denom = entropy(&p.row_sums) + entropy(&p.col_sums);
    if denom == 0.0 {
        // both partitions trivial; the identical case returned above
        return Ok(0.0);
    }
    Ok((-2.0 * mutual / denom).clamp(0.0, 1.0))
}

/// Per-community conductance and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conductance {
    pub per_community: Vec<f64>,
    pub mean: f64,
}

/// `φ(C) = Cut(C, C̄) / min(Vol(C), Vol(C̄))`, with φ = 0 when the smaller
/// volume is zero.
pub fn conductance(g: &Graph, cs: &Partition) -> Result<Conductance> {
    check_cover(g, cs)?;
    let k = cs.k();
    let mut cut = vec![0usize; k];
    let mut volume = vec![0usize; k];
    for u in 0..g.n() {
        let cu = cs.community_of(u);
        volume[cu] += g.degree(u);
        cut[cu] += g
            .neighbors(u)
            .iter()
            .filter(|&&v| cs.community_of(v) != cu)
            .count();
    }
    let total = 2 * g.m();
    let mut degenerate = 0;
    let per_community: Vec<f64> = cut
        .iter()
        .zip(&volume)
        .map(|(&c, &vol)| {
            let denom = vol.min(total - vol);
            if denom == 0 {
                degenerate += 1;
                0.0
            } else {
                c as f64 / denom as f64
            }
        })
        .collect();
    if degenerate > 0 {
        log::warn!("{degenerate} communities with zero volume on one side; conductance set to 0");
    }
    let mean = if k == 0 {
        0.0
    } else {
        per_community.iter().sum::<f64>() / k as f64
    };
    Ok(Conductance {
        per_community,
        mean,
    })
}

fn pairs(x: usize) -> u128 {
    let x = x as u128;
    x * x.saturating_sub(1) / 2
}

/// Pairwise F1 of `c` (predicted) against `d` (reference).
///
/// A pair of nodes is predicted positive when `c` co-assigns it and truly
/// positive when `d` does. Returns 0 when precision and recall are both 0,
/// including the case where neither partition co-assigns any pair.
pub fn f1_score(c: &Partition, d: &Partition) -> Result<f64> {
    let p = ConfusionMatrix::new(c, d)?;
    let predicted: u128 = p.row_sums.iter().map(|&s| pairs(s)).sum();
    let actual: u128 = p.col_sums.iter().map(|&s| pairs(s)).sum();
    let hits: u128 = p.nonzero().map(|(_, v)| pairs(v)).sum();
    let precision = if predicted == 0 {
        0.0
    } else {
        hits as f64 / predicted as f64
    };
    let recall = if actual == 0 {
        0.0
    } else {
        hits as f64 / actual as f64
    };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Mean number of connected components per community; 1 when every
/// community is connected.
pub fn connectivity_score(g: &Graph, cs: &Partition) -> Result<f64> {
    check_cover(g, cs)?;
    if cs.k() == 0 {
        return Ok(1.0);
    }
    let pieces = g.split_disconnected(cs).k();
    Ok(pieces as f64 / cs.k() as f64)
}

/// All metrics for one partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub modularity: f64,
    /// Against the reference labels, when present.
    pub nmi: Option<f64>,
    pub conductance: f64,
    pub f1: Option<f64>,
    pub connectivity: f64,
    pub num_communities: usize,
}

/// Evaluates `cs` on `g`, against `labels` when given.
pub fn evaluate(g: &Graph, cs: &Partition, labels: Option<&Partition>) -> Result<MetricsRecord> {
    let (nmi, f1) = match labels {
        Some(l) => (Some(nmi(cs, l)?), Some(f1_score(cs, l)?)),
        None => (None, None),
    };
    Ok(MetricsRecord {
        modularity: modularity(g, cs)?,
        nmi,
        conductance: conductance(g, cs)?.mean,
        f1,
        connectivity: connectivity_score(g, cs)?,
        num_communities: cs.k(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn triangle() -> Graph {
        Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    fn bridged_triangles() -> Graph {
        Graph::from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]).unwrap()
    }

    #[test]
    fn modularity_examples() {
        let g = triangle();
        assert_abs_diff_eq!(modularity(&g, &Partition::single(3)).unwrap(), 0.0, epsilon = 1e-15);
        let q = modularity(&g, &Partition::new(vec![0, 0, 1])).unwrap();
        assert_abs_diff_eq!(q, -2.0 / 9.0, epsilon = 1e-12);
        assert_eq!(modularity(&Graph::empty(4), &Partition::singletons(4)).unwrap(), 0.0);
        assert!(modularity(&g, &Partition::single(2)).is_err());
    }

    #[test]
    fn nmi_examples() {
        let c = Partition::new(vec![0, 0, 1, 1]);
        assert_eq!(nmi(&c, &c).unwrap(), 1.0);
        assert_eq!(nmi(&Partition::single(4), &Partition::singletons(4)).unwrap(), 0.0);
        let d = Partition::new(vec![0, 1, 0, 1]);
        assert_abs_diff_eq!(nmi(&c, &d).unwrap(), 0.0, epsilon = 1e-15);
        assert_eq!(nmi(&Partition::single(3), &Partition::single(3)).unwrap(), 1.0);
        assert!(nmi(&Partition::single(0), &Partition::single(0)).is_err());
    }

    #[test]
    fn conductance_examples() {
        let g = bridged_triangles();
        let whole = conductance(&g, &Partition::single(6)).unwrap();
        assert_eq!(whole.per_community, vec![0.0]);
        let halves = conductance(&g, &Partition::new(vec![0, 0, 0, 1, 1, 1])).unwrap();
        assert_abs_diff_eq!(halves.per_community[0], 1.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(halves.mean, 1.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn f1_examples() {
        let c = Partition::new(vec![0, 0, 0, 1]);
        assert_eq!(f1_score(&c, &c).unwrap(), 1.0);
        assert_eq!(f1_score(&Partition::singletons(4), &Partition::single(4)).unwrap(), 0.0);
        let d = Partition::new(vec![0, 0, 1, 1]);
        // precision 1/3, recall 1/2
        assert_abs_diff_eq!(f1_score(&c, &d).unwrap(), 0.4, epsilon = 1e-15);
        assert_eq!(f1_score(&Partition::singletons(3), &Partition::singletons(3)).unwrap(), 0.0);
    }

    #[test]
    fn connectivity_examples() {
        let g = bridged_triangles();
        assert_eq!(connectivity_score(&g, &Partition::single(6)).unwrap(), 1.0);
        let two = Graph::from_edges(7, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        let cs = Partition::new(vec![0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(connectivity_score(&two, &cs).unwrap(), 1.5);
        assert_eq!(connectivity_score(&Graph::empty(5), &Partition::single(5)).unwrap(), 5.0);
    }

    #[test]
    fn evaluate_identical_labels() {
        let g = bridged_triangles();
        let cs = Partition::new(vec![0, 0, 0, 1, 1, 1]);
        let r = evaluate(&g, &cs, Some(&cs)).unwrap();
        assert_eq!(r.nmi, Some(1.0));
        assert_eq!(r.f1, Some(1.0));
        assert_eq!(r.num_communities, 2);
        assert_eq!(evaluate(&g, &cs, None).unwrap().nmi, None);
    }
}
