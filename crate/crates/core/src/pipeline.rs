//! End-to-end detection: Leiden target, refined label target, GCN training,
//! BIRCH clustering and evaluation.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::birch::{birch_cluster, BirchConfig};
use crate::data_io::DatasetBundle;
use crate::error::{Error, Result};
use crate::gcn::{self, GcnInput, GcnModel, TrainConfig, DEFAULT_HIDDEN};
use crate::graph::Partition;
use crate::leiden::{best_of_runs, LeidenConfig};
use crate::loss::{total_loss, LossConfig, PairwiseTarget};
use crate::metrics::{evaluate, modularity, nmi, MetricsRecord};
use crate::refine::{refine_labels, RefineConfig};
use crate::seed::{derive_seed, STREAM_GCN_INIT, STREAM_GLOBAL_LEIDEN, STREAM_REFINE};

/// Which loss terms and post-processing a run uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Full,
    /// Leiden target only (`mu = 0`).
    LmOnly,
    /// Refined-label target only.
    LrOnly,
    /// Raw human labels in place of the refined labels.
    UnrefinedLabels,
    /// Full run, then every disconnected community is split into its
    /// connected components.
    ModifiedSplit,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Full, Mode::LmOnly, Mode::LrOnly, Mode::UnrefinedLabels, Mode::ModifiedSplit];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::LmOnly => "lm-only",
            Mode::LrOnly => "lr-only",
            Mode::UnrefinedLabels => "unrefined-labels",
            Mode::ModifiedSplit => "modified-split",
        }
    }

    fn uses_leiden_target(self) -> bool {
        self != Mode::LrOnly
    }

    fn uses_label_target(self) -> bool {
        self != Mode::LmOnly
    }
}

/// Label-loss weights tuned for the common benchmark networks.
pub fn mu_preset(network: &str) -> Option<f64> {
    let key = network.to_ascii_lowercase().replace(['_', ' '], "-");
    Some(match key.as_str() {
        "cora" => 0.5,
        "citeseer" => 0.2,
        "amazon-photo" | "photo" => 0.2,
        "amazon-pc" | "amazon-computers" | "pc" => 0.5,
        "coauthor-cs" | "cs" => 10.0,
        "coauthor-phy" | "coauthor-physics" | "phy" | "physics" => 0.5,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Weight of the label term.
    pub mu: f64,
    /// Leiden runs on the whole graph; the best by NMI against the labels
    /// (by modularity without labels) becomes the Leiden target.
    pub leiden_global_runs: usize,
    pub leiden: LeidenConfig,
    pub refine: RefineConfig,
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
    pub birch: BirchConfig,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub mode: Mode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mu: 0.5,
            leiden_global_runs: 30,
            leiden: LeidenConfig::default(),
            refine: RefineConfig::default(),
            train: TrainConfig::default(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            birch: BirchConfig::default(),
            seed: 0,
            mode: Mode::Full,
        }
    }
}

/// Per-stage seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub leiden: u64,
    pub refine: u64,
    pub gcn_init: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        LossConfig { mu: self.mu }.validate()?;
        if self.leiden_global_runs == 0 {
            return Err(Error::Config("leiden_global_runs must be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid hidden layer sizes {:?}", self.hidden)));
        }
        self.leiden.validate()?;
        self.refine.validate()?;
        self.train.validate()?;
        self.birch.validate()
    }

    pub fn stage_seeds(&self) -> StageSeeds {
        StageSeeds {
            leiden: derive_seed(self.seed, STREAM_GLOBAL_LEIDEN),
            refine: derive_seed(self.seed, STREAM_REFINE),
            gcn_init: derive_seed(self.seed, STREAM_GCN_INIT),
        }
    }

    /// Copy with the derived stage seeds written into the sub-configs.
    /// Running the result gives the same output as running `self`.
    pub fn resolved(&self) -> ConfigSnapshot {
        let seeds = self.stage_seeds();
        let mut config = self.clone();
        config.leiden.seed = seeds.leiden;
        config.refine.seed = seeds.refine;
        ConfigSnapshot { config, seeds }
    }
}

/// What `config.json` holds: the full config plus the derived seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    #[serde(flatten)]
    pub config: RunConfig,
    pub seeds: StageSeeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    #[serde(flatten)]
    pub metrics: MetricsRecord,
    /// Communities in the Leiden target, if one was built.
    pub leiden_target_communities: Option<usize>,
    /// Communities in the label target, if one was built.
    pub label_target_communities: Option<usize>,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub partition: Partition,
    pub report: RunReport,
    pub timings: Vec<StageTiming>,
    pub leiden_target: Option<Partition>,
    pub label_target: Option<Partition>,
    pub model: GcnModel,
    pub embedding: Array2<f64>,
}

struct Clock {
    timings: Vec<StageTiming>,
}

impl Clock {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage))?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{stage}: {seconds:.2}s");
        self.timings.push(StageTiming { stage: stage.to_string(), seconds });
        Ok(out)
    }
}

/// Leiden target: best of `runs` Leiden partitions, by NMI against the
/// labels or by modularity without labels.
pub fn leiden_target(bundle: &DatasetBundle, cfg: &RunConfig) -> Result<Partition> {
    let g = &bundle.graph;
    let leiden_cfg = cfg.leiden.with_seed(cfg.stage_seeds().leiden);
    let best = match &bundle.labels {
        Some(labels) => best_of_runs(g, cfg.leiden_global_runs, &leiden_cfg, |p| {
            nmi(p, labels).expect("partitions cover the same nodes")
        })?,
        None => best_of_runs(g, cfg.leiden_global_runs, &leiden_cfg, |p| {
            modularity(g, p).expect("partition covers the graph")
        })?,
    };
    log::info!("leiden target: {} communities from run {}", best.partition.k(), best.run);
    Ok(best.partition)
}

/// Runs the whole pipeline on `bundle`.
pub fn run(bundle: &DatasetBundle, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let g = &bundle.graph;
    if g.n() == 0 {
        return Err(Error::Precondition("dataset has no nodes".into()));
    }
    let mode = cfg.mode;
    let seeds = cfg.stage_seeds();
    let mut clock = Clock { timings: Vec::new() };

    let need_leiden = mode.uses_leiden_target() || bundle.labels.is_none();
    let cs_l = if need_leiden {
        Some(clock.time("leiden", || leiden_target(bundle, cfg))?)
    } else {
        None
    };
    // Without human labels the Leiden partition stands in for them.
    let cs_o = bundle.labels.as_ref().or(cs_l.as_ref()).expect("labels or leiden target");

    let cs_r = if !mode.uses_label_target() {
        None
    } else if mode == Mode::UnrefinedLabels {
        Some(cs_o.clone())
    } else {
        let refine_cfg = RefineConfig { seed: seeds.refine, ..cfg.refine.clone() };
        let r = clock.time("refine", || refine_labels(g, cs_o, &refine_cfg))?;
        debug_assert!(r.refined.refines(cs_o));
        Some(r.refined)
    };

    let hl = cs_l.clone().filter(|_| mode.uses_leiden_target()).map(PairwiseTarget::new);
    let hr = cs_r.clone().map(PairwiseTarget::new);
    // The label term alone is left unweighted.
    let loss_cfg = LossConfig { mu: if mode == Mode::LrOnly { 1.0 } else { cfg.mu } };

    let input = clock.time("propagate", || GcnInput::new(g, &bundle.attributes))?;
    let mut model = GcnModel::new(bundle.attributes.cols(), &cfg.hidden, seeds.gcn_init)
        .map_err(|e| e.in_stage("train"))?;
    let loss_trace = clock.time("train", || {
        gcn::train(&mut model, &input, &cfg.train, |x| total_loss(hl.as_ref(), hr.as_ref(), x, &loss_cfg))
    })?;
    let embedding = clock.time("embed", || gcn::embed(&model, &input))?;

    let mut cs = clock.time("birch", || birch_cluster(embedding.view(), &cfg.birch))?;
    if mode == Mode::ModifiedSplit {
        cs = g.split_disconnected(&cs);
    }
    let metrics = clock.time("metrics", || evaluate(g, &cs, bundle.labels.as_ref()))?;

    Ok(RunOutput {
        report: RunReport {
            mode,
            metrics,
            leiden_target_communities: cs_l.as_ref().map(Partition::k),
            label_target_communities: cs_r.as_ref().map(Partition::k),
            loss_trace,
        },
        partition: cs,
        timings: clock.timings,
        leiden_target: cs_l,
        label_target: cs_r,
        model,
        embedding,
    })
}

/// Metrics of `cs` on the bundle's graph, against its labels when present.
pub fn metric_report(bundle: &DatasetBundle, cs: &Partition) -> Result<MetricsRecord> {
    evaluate(&bundle.graph, cs, bundle.labels.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{generate_synthetic, SyntheticSpec};

    fn small_config() -> RunConfig {
        RunConfig {
            leiden_global_runs: 4,
            refine: RefineConfig { leiden_runs: 3, ..Default::default() },
            train: TrainConfig { epochs: 40, lr: 0.01 },
            hidden: vec![32, 16, 8],
            ..Default::default()
        }
    }

    fn bundle() -> DatasetBundle {
        generate_synthetic(&SyntheticSpec { n: 60, k: 3, attributes: 12, seed: 4, ..Default::default() }).unwrap()
    }

    #[test]
    fn presets() {
        assert_eq!(mu_preset("Cora"), Some(0.5));
        assert_eq!(mu_preset("coauthor_cs"), Some(10.0));
        assert_eq!(mu_preset("amazon photo"), Some(0.2));
        assert_eq!(mu_preset("karate"), None);
    }

    #[test]
    fn modified_split_is_connected() {
        let cfg = RunConfig { mode: Mode::ModifiedSplit, ..small_config() };
        let out = run(&bundle(), &cfg).unwrap();
        assert_eq!(out.report.metrics.connectivity, 1.0);
    }

    #[test]
    fn runs_are_reproducible() {
        let b = bundle();
        let a = run(&b, &small_config()).unwrap();
        let c = run(&b, &small_config()).unwrap();
        assert_eq!(a.report, c.report);
        assert_eq!(a.partition, c.partition);
    }

    #[test]
    fn resolved_config_replays() {
        let b = bundle();
        let cfg = small_config();
        let snap = cfg.resolved();
        let json = serde_json::to_string(&snap).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(run(&b, &back).unwrap().report, run(&b, &cfg).unwrap().report);
    }

    #[test]
    fn metric_report_on_labels() {
        let b = bundle();
        let labels = b.labels.clone().unwrap();
        let m = metric_report(&b, &labels).unwrap();
        assert_eq!(m.nmi, Some(1.0));
        assert_eq!(m.f1, Some(1.0));
    }

    #[test]
    fn unlabeled_falls_back_to_leiden() {
        let mut b = bundle();
        b.labels = None;
        let out = run(&b, &small_config()).unwrap();
        assert!(out.report.metrics.nmi.is_none());
        assert_eq!(out.label_target, out.leiden_target);
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let cfg = RunConfig { birch: BirchConfig { threshold_radius: -1.0, ..Default::default() }, ..small_config() };
        assert!(matches!(run(&bundle(), &cfg), Err(Error::Config(_))));
    }
}
