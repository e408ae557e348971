use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use attrcom::data_io::{self, DatasetBundle, SyntheticSpec};
use attrcom::graph::Partition;
use attrcom::leiden::{best_of_runs, LeidenConfig};
use attrcom::metrics::{evaluate, modularity, nmi, MetricsRecord};
use attrcom::pipeline::{self, mu_preset, Mode, RunConfig};
use attrcom::refine::{refine_labels, RefineConfig};

use crate::table::metrics_table;
use crate::{AblateArgs, Cli, Command, ConvertArgs, DetectArgs, GenArgs, InputArgs, LeidenArgs, MetricsArgs, PipelineArgs, RefineArgs};

/// Error carrying its own exit code.
#[derive(Debug)]
struct CliError {
    code: u8,
    msg: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    CliError { code: 1, msg: msg.into() }.into()
}

/// Exit codes: 1 usage, 2 data, 3 runtime.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return c.code;
        }
        if let Some(err) = cause.downcast_ref::<attrcom::Error>() {
            use attrcom::Error::*;
            return match err.root() {
                Config(_) | Precondition(_) => 1,
                Io { .. } | Parse { .. } | Data(_) | Shape(_) => 2,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    3
}

/// Fails with a data error naming `flag` when `path` does not exist.
fn existing<'a>(flag: &str, path: &'a Path) -> Result<&'a Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError { code: 2, msg: format!("{flag}: no such file: {}", path.display()) }.into())
    }
}

fn load_input(input: &InputArgs) -> Result<DatasetBundle> {
    let edges = existing("--edges", &input.edges)?;
    let attrs = input.attrs.as_deref().map(|p| existing("--attrs", p)).transpose()?;
    let labels = input.labels.as_deref().map(|p| existing("--labels", p)).transpose()?;
    let bundle = data_io::load_dataset(edges, attrs, labels).context("loading dataset")?;
    log::info!(
        "{}: {} nodes, {} edges, {} attributes",
        bundle.name,
        bundle.n(),
        bundle.graph.m(),
        bundle.attributes.cols()
    );
    Ok(bundle)
}

fn load_graph(edges: &Path, labels: Option<&Path>) -> Result<DatasetBundle> {
    let edges = existing("--edges", edges)?;
    let labels = labels.map(|p| existing("--labels", p)).transpose()?;
    data_io::load_graph(edges, labels).context("loading graph")
}

/// Defaults, then the config file, then flags.
fn resolve_config(args: &PipelineArgs, mode: Option<Mode>) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(existing("--config", path)?)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("--config {}: {e}", path.display())))?
        }
    };
    if let Some(name) = &args.network {
        cfg.mu = mu_preset(name).ok_or_else(|| usage(format!("--network: no preset for `{name}`")))?;
    }
    if let Some(mu) = args.mu {
        cfg.mu = mu;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = args.leiden_runs {
        cfg.leiden_global_runs = runs;
    }
    if let Some(runs) = args.refine_runs {
        cfg.refine.leiden_runs = runs;
    }
    if let Some(t) = args.threshold {
        cfg.refine.threshold_rule = t.into();
    }
    if let Some(hidden) = &args.hidden {
        cfg.hidden = hidden.clone();
    }
    if let Some(t) = args.birch_threshold {
        cfg.birch.threshold_radius = t;
    }
    if let Some(b) = args.birch_branching {
        cfg.birch.branching_factor = b;
    }
    if args.birch_reassign {
        cfg.birch.reassign = true;
    }
    if let Some(mode) = mode {
        cfg.mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_assignment(path: &Path, ids: &[String], p: &Partition) -> Result<()> {
    let mut out = String::from(data_io::ASSIGNMENT_HEADER);
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(&format!("{id}\t{}\n", p.community_of(i)));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
        #[cfg(not(feature = "parallel"))]
        log::warn!("built without parallel support; --threads {threads} ignored");
    }
    let json = cli.json;
    match cli.command {
        Command::Detect(a) => detect(a, json),
        Command::Leiden(a) => leiden(a, json),
        Command::Refine(a) => refine(a, json),
        Command::Metrics(a) => metrics(a, json),
        Command::Gen(a) => gen(a, json),
        Command::Ablate(a) => ablate(a, json),
        Command::Convert(a) => convert(a, json),
    }
}

fn detect(a: DetectArgs, json: bool) -> Result<()> {
    let cfg = resolve_config(&a.pipeline, a.mode.map(Mode::from))?;
    let bundle = load_input(&a.input)?;
    let out = pipeline::run(&bundle, &cfg)?;
    let files = data_io::write_results(
        &a.out.out,
        &bundle.ids,
        &out.partition,
        &out.report,
        &cfg.resolved(),
        &out.timings,
    )?;
    if let Some(path) = &a.save_model {
        out.model.save(path)?;
    }
    if json {
        return print_json(&serde_json::to_value(&out.report)?);
    }
    println!(
        "dataset {}: {} nodes, {} edges; mode {}; results in {}",
        bundle.name,
        bundle.n(),
        bundle.graph.m(),
        cfg.mode.name(),
        files.assignment.parent().unwrap_or(Path::new(".")).display()
    );
    print!("{}", metrics_table(&[(cfg.mode.name().to_string(), &out.report.metrics)]));
    Ok(())
}

fn leiden(a: LeidenArgs, json: bool) -> Result<()> {
    let bundle = load_graph(&a.edges, a.labels.as_deref())?;
    let g = &bundle.graph;
    let cfg = LeidenConfig { seed: a.seed, theta: a.theta, ..Default::default() };
    let best = match &bundle.labels {
        Some(l) => best_of_runs(g, a.runs, &cfg, |p| nmi(p, l).expect("same node set"))?,
        None => best_of_runs(g, a.runs, &cfg, |p| modularity(g, p).expect("covers graph"))?,
    };
    let m = evaluate(g, &best.partition, bundle.labels.as_ref())?;
    if let Some(path) = &a.output {
        write_assignment(path, &bundle.ids, &best.partition)?;
    }
    let criterion = if bundle.labels.is_some() { "nmi" } else { "modularity" };
    if json {
        return print_json(&json!({
            "runs": a.runs,
            "best_run": best.run,
            "criterion": criterion,
            "score": best.score,
            "metrics": m,
        }));
    }
    println!("best of {} runs by {criterion}: run {} (score {:.4})", a.runs, best.run, best.score);
    print!("{}", metrics_table(&[("leiden".into(), &m)]));
    Ok(())
}

fn refine(a: RefineArgs, json: bool) -> Result<()> {
    let bundle = load_graph(&a.edges, Some(&a.labels))?;
    let g = &bundle.graph;
    let labels = bundle.labels.as_ref().expect("labels were loaded");
    let cfg = RefineConfig { leiden_runs: a.runs, threshold_rule: a.threshold.into(), seed: a.seed, ..Default::default() };
    let r = refine_labels(g, labels, &cfg)?;
    let isolated = g.split_disconnected(labels);
    let rows: Vec<(String, MetricsRecord)> = [
        ("labels", labels),
        ("split-isolated", &isolated),
        ("leiden-split", &r.split),
        ("refined", &r.refined),
    ]
    .into_iter()
    .map(|(name, p)| Ok((name.to_string(), evaluate(g, p, Some(labels))?)))
    .collect::<Result<_>>()?;
    if let Some(path) = &a.output {
        write_assignment(path, &bundle.ids, &r.refined)?;
    }
    if json {
        let map: serde_json::Map<String, serde_json::Value> = rows
            .iter()
            .map(|(n, m)| Ok((n.clone(), serde_json::to_value(m)?)))
            .collect::<Result<_>>()?;
        return print_json(&serde_json::Value::Object(map));
    }
    let refs: Vec<(String, &MetricsRecord)> = rows.iter().map(|(n, m)| (n.clone(), m)).collect();
    print!("{}", metrics_table(&refs));
    Ok(())
}

fn metrics(a: MetricsArgs, json: bool) -> Result<()> {
    let bundle = load_graph(&a.edges, a.labels.as_deref())?;
    let cs = data_io::read_assignment(existing("--assignment", &a.assignment)?, &bundle.ids)?;
    let m = pipeline::metric_report(&bundle, &cs)?;
    if json {
        return print_json(&serde_json::to_value(&m)?);
    }
    print!("{}", metrics_table(&[("assignment".into(), &m)]));
    Ok(())
}

fn gen(a: GenArgs, json: bool) -> Result<()> {
    let spec = SyntheticSpec {
        n: a.n,
        k: a.k,
        p_in: a.p_in,
        p_out: a.p_out,
        attributes: a.attributes,
        signal: a.signal,
        disconnected_fraction: a.disconnected_fraction,
        coarse_fraction: a.coarse_fraction,
        seed: a.seed,
    };
    let bundle = data_io::generate_synthetic(&spec)?;
    data_io::write_dataset(&bundle, &a.out.out)?;
    let labels = bundle.labels.as_ref().expect("synthetic bundles are labeled");
    if json {
        return print_json(&json!({
            "nodes": bundle.n(),
            "edges": bundle.graph.m(),
            "labels": labels.k(),
            "attributes": bundle.attributes.cols(),
            "dir": a.out.out,
        }));
    }
    println!(
        "wrote {} nodes, {} edges, {} labels, {} attributes to {}",
        bundle.n(),
        bundle.graph.m(),
        labels.k(),
        bundle.attributes.cols(),
        a.out.out.display()
    );
    Ok(())
}

fn ablate(a: AblateArgs, json: bool) -> Result<()> {
    let base = resolve_config(&a.pipeline, None)?;
    if a.repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let bundle = load_input(&a.input)?;
    let mut modes = vec![Mode::Full];
    for m in a.modes.iter().map(|&m| Mode::from(m)) {
        if !modes.contains(&m) {
            modes.push(m);
        }
    }
    let mut runs = Vec::new();
    for &mode in &modes {
        for r in 0..a.repeats {
            let cfg = RunConfig { mode, seed: base.seed + r, ..base.clone() };
            let out = pipeline::run(&bundle, &cfg).with_context(|| format!("mode {}", mode.name()))?;
            runs.push((mode, cfg.seed, out.report));
        }
    }
    let records: Vec<serde_json::Value> = runs
        .iter()
        .map(|(mode, seed, report)| json!({ "mode": mode, "seed": seed, "report": report }))
        .collect();
    fs::create_dir_all(&a.out.out).with_context(|| format!("creating {}", a.out.out.display()))?;
    let path: PathBuf = a.out.out.join("ablation.json");
    fs::write(&path, serde_json::to_string_pretty(&records)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    if json {
        return print_json(&serde_json::Value::Array(records));
    }
    let rows: Vec<(String, &MetricsRecord)> = runs
        .iter()
        .map(|(mode, seed, report)| (format!("{}/{seed}", mode.name()), &report.metrics))
        .collect();
    print!("{}", metrics_table(&rows));
    Ok(())
}

fn convert(a: ConvertArgs, json: bool) -> Result<()> {
    let content = existing("--content", &a.content)?;
    let cites = existing("--cites", &a.cites)?;
    let c = data_io::convert_content_cites(content, cites, &a.out.out)?;
    if json {
        return print_json(&json!({
            "nodes": c.nodes,
            "edges_written": c.edges_written,
            "dangling_edges": c.dangling_edges,
            "dir": a.out.out,
        }));
    }
    println!(
        "wrote {} nodes and {} citation lines to {} ({} citations to unknown ids skipped)",
        c.nodes,
        c.edges_written,
        a.out.out.display(),
        c.dangling_edges
    );
    Ok(())
}
