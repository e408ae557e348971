use ndarray::{Array, Array2};
use proptest::prelude::*;

use attrcom::birch::{birch_cluster, BirchConfig, ClusteringFeature};
use attrcom::data_io::{generate_synthetic, SyntheticSpec};
use attrcom::graph::{Graph, Partition};
use attrcom::leiden::{leiden, LeidenConfig};
use attrcom::loss::{pairwise_loss, PairwiseTarget};
use attrcom::metrics::{connectivity_score, f1_score, modularity, nmi};
use attrcom::refine::{refine_labels, RefineConfig};

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..=3 * n)
            .prop_map(move |edges| Graph::from_edges(n, edges).unwrap())
    })
}

fn graph_and_partition(max_n: usize) -> impl Strategy<Value = (Graph, Partition)> {
    graph_strategy(max_n).prop_flat_map(|g| {
        let n = g.n();
        prop::collection::vec(0..4usize, n).prop_map(move |l| (g.clone(), Partition::new(l)))
    })
}

fn two_partitions(max_n: usize) -> impl Strategy<Value = (Partition, Partition)> {
    (2..=max_n).prop_flat_map(|n| {
        (prop::collection::vec(0..5usize, n), prop::collection::vec(0..5usize, n))
            .prop_map(|(a, b)| (Partition::new(a), Partition::new(b)))
    })
}

/// Modularity from the adjacency double sum.
fn modularity_oracle(g: &Graph, cs: &Partition) -> f64 {
    let two_m = 2.0 * g.m() as f64;
    if two_m == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for i in 0..g.n() {
        for j in 0..g.n() {
            if cs.community_of(i) == cs.community_of(j) {
                let a = if g.has_edge(i, j) { 1.0 } else { 0.0 };
                q += a - (g.degree(i) * g.degree(j)) as f64 / two_m;
            }
        }
    }
    q / two_m
}

fn components_per_community(g: &Graph, cs: &Partition) -> Vec<usize> {
    cs.communities()
        .iter()
        .map(|members| g.connected_components(Some(members)).k())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_ids_are_canonical(labels in prop::collection::vec(0..10usize, 0..40)) {
        let p = Partition::new(labels.clone());
        let mut seen = 0;
        for &c in p.assignment() {
            prop_assert!(c <= seen);
            if c == seen {
                seen += 1;
            }
        }
        prop_assert_eq!(seen, p.k());
        prop_assert_eq!(p.sizes().iter().sum::<usize>(), labels.len());
        prop_assert_eq!(Partition::new(p.assignment().to_vec()), p);
    }

    #[test]
    fn modularity_matches_double_sum((g, cs) in graph_and_partition(25)) {
        let q = modularity(&g, &cs).unwrap();
        prop_assert!((q - modularity_oracle(&g, &cs)).abs() < 1e-12);
        prop_assert!((-0.5..=1.0).contains(&q));
    }

    #[test]
    fn nmi_symmetric_and_bounded((a, b) in two_partitions(30)) {
        let ab = nmi(&a, &b).unwrap();
        let ba = nmi(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(nmi(&a, &a).unwrap(), 1.0);
        // relabeling does not matter
        let shifted = Partition::from_labels(&a.assignment().iter().map(|c| c + 7).rev().collect::<Vec<_>>());
        let rev_b = Partition::from_labels(&b.assignment().iter().rev().collect::<Vec<_>>());
        prop_assert!((nmi(&shifted, &rev_b).unwrap() - ab).abs() < 1e-12);
    }

    #[test]
    fn f1_symmetric_and_bounded((a, b) in two_partitions(30)) {
        let ab = f1_score(&a, &b).unwrap();
        prop_assert!((ab - f1_score(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn split_disconnected_gives_connected_refinement((g, cs) in graph_and_partition(30)) {
        let split = g.split_disconnected(&cs);
        prop_assert!(split.refines(&cs));
        prop_assert!(components_per_community(&g, &split).iter().all(|&c| c == 1));
        prop_assert_eq!(g.split_disconnected(&split), split.clone());
        prop_assert!(modularity(&g, &split).unwrap() >= modularity(&g, &cs).unwrap() - 1e-12);
        prop_assert_eq!(connectivity_score(&g, &split).unwrap(), 1.0);
    }

    #[test]
    fn leiden_communities_are_connected(g in graph_strategy(60), seed in any::<u64>()) {
        let p = leiden(&g, &LeidenConfig { seed, ..Default::default() }).unwrap();
        prop_assert_eq!(p.len(), g.n());
        prop_assert!(components_per_community(&g, &p).iter().all(|&c| c == 1));
        let singletons = modularity(&g, &Partition::singletons(g.n())).unwrap();
        prop_assert!(modularity(&g, &p).unwrap() >= singletons - 1e-12);
    }

    #[test]
    fn leiden_is_seed_deterministic(g in graph_strategy(40), seed in any::<u64>()) {
        let cfg = LeidenConfig { seed, ..Default::default() };
        prop_assert_eq!(leiden(&g, &cfg).unwrap(), leiden(&g, &cfg).unwrap());
    }

    #[test]
    fn refined_labels_are_connected_pieces((g, cs) in graph_and_partition(40), seed in 0..100u64) {
        let cfg = RefineConfig { leiden_runs: 3, seed, ..Default::default() };
        let r = refine_labels(&g, &cs, &cfg).unwrap();
        prop_assert!(r.refined.refines(&cs));
        prop_assert!(r.split.refines(&r.refined));
        prop_assert!(components_per_community(&g, &r.refined).iter().all(|&c| c == 1));
        // no piece count below the number of connected components
        prop_assert!(r.refined.k() >= g.split_disconnected(&cs).k());
    }

    #[test]
    fn loss_matches_dense_form(
        labels in prop::collection::vec(0..4usize, 1..20),
        seed in any::<u64>(),
    ) {
        let target = PairwiseTarget::new(Partition::new(labels.clone()));
        let n = labels.len();
        let mut state = seed | 1;
        let x = Array::from_shape_fn((n, 3), |_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 1000) as f64 / 1000.0 - 0.5
        });
        let eval = pairwise_loss(&target, x.view()).unwrap();
        let diff: Array2<f64> = x.dot(&x.t()) - target.dense();
        let dense = diff.mapv(|d| d * d).sum() / (n * n) as f64;
        prop_assert!(eval.value >= 0.0);
        prop_assert!((eval.value - dense).abs() < 1e-10);
    }

    #[test]
    fn cf_merge_is_additive(
        a in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 1..10),
        b in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 1..10),
    ) {
        let cf = |rows: &[Vec<f64>]| {
            let mut c = ClusteringFeature::empty(3);
            for r in rows {
                c.add_point(ndarray::aview1(r));
            }
            c
        };
        let mut merged = cf(&a);
        merged.add(&cf(&b));
        let all: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
        let direct = cf(&all);
        prop_assert_eq!(merged.n, direct.n);
        prop_assert!((merged.ss - direct.ss).abs() < 1e-9);
        for (x, y) in merged.ls.iter().zip(direct.ls.iter()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!((merged.radius() - direct.radius()).abs() < 1e-9);
    }

    #[test]
    fn birch_covers_every_row(
        rows in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 2), 1..80),
        threshold in 0.01..2.0f64,
        branching in 2..8usize,
    ) {
        let x = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        let cfg = BirchConfig { threshold_radius: threshold, branching_factor: branching, ..Default::default() };
        let p = birch_cluster(x.view(), &cfg).unwrap();
        prop_assert_eq!(p.len(), rows.len());
        prop_assert!(p.k() >= 1 && p.k() <= rows.len());
        let wide = BirchConfig { threshold_radius: 10.0, ..cfg };
        prop_assert_eq!(birch_cluster(x.view(), &wide).unwrap().k(), 1);
    }

    #[test]
    fn generator_respects_spec(
        n in 20..200usize,
        k in 2..8usize,
        df in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let spec = SyntheticSpec { n, k, attributes: 10, disconnected_fraction: df, seed, ..Default::default() };
        let a = generate_synthetic(&spec).unwrap();
        let labels = a.labels.clone().unwrap();
        prop_assert_eq!(a.n(), n);
        prop_assert_eq!(labels.k(), k - spec.disconnected_labels());
        prop_assert_eq!(a.attributes.rows(), n);
        let comps = components_per_community(&a.graph, &labels);
        prop_assert_eq!(comps.iter().filter(|&&c| c > 1).count(), spec.disconnected_labels());
        let b = generate_synthetic(&spec).unwrap();
        prop_assert_eq!(a.graph.edges().collect::<Vec<_>>(), b.graph.edges().collect::<Vec<_>>());
        prop_assert_eq!(a.attributes.values(), b.attributes.values());
    }
}
