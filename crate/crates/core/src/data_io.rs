//! Dataset files, the synthetic generator and result files.
//!
//! Input formats (blank lines and lines starting with `#` are ignored):
//!
//! * edges: one `u v` pair per line, whitespace separated, ids are arbitrary
//!   strings;
//! * attributes: either dense CSV rows `id,x1,...,xT`, or sparse triplets
//!   `id index value` (0-based `index`); a comma on the first data line
//!   selects the CSV form;
//! * labels: `id label` per line, labels are arbitrary strings.
//!
//! Node indices follow first appearance in the labels file, then the
//! attributes file, then the edge file.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttributeMatrix, Graph, Partition};
use crate::seed;

/// Graph, attributes and (optionally) human labels over the same nodes.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub name: String,
    pub ids: Vec<String>,
    pub graph: Graph,
    pub attributes: AttributeMatrix,
    pub labels: Option<Partition>,
    pub notes: Vec<String>,
}

impl DatasetBundle {
    pub fn new(
        name: impl Into<String>,
        ids: Vec<String>,
        graph: Graph,
        attributes: AttributeMatrix,
        labels: Option<Partition>,
    ) -> Result<Self> {
        let n = graph.n();
        if ids.len() != n || attributes.rows() != n || labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::Data(format!(
                "inconsistent sizes: {} ids, {n} nodes, {} attribute rows, {} labels",
                ids.len(),
                attributes.rows(),
                labels.as_ref().map_or(n, |l| l.len())
            )));
        }
        Ok(DatasetBundle { name: name.into(), ids, graph, attributes, labels, notes: Vec::new() })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>> + '_> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(e) => Some(Err(Error::io(path, e))),
            Ok(l) => {
                let t = l.trim();
                if t.is_empty() || t.starts_with('#') {
                    None
                } else {
                    Some(Ok((i + 1, t.to_string())))
                }
            }
        }))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

#[derive(Default)]
struct IdMap {
    index: HashMap<String, usize>,
    ids: Vec<String>,
}

impl IdMap {
    fn get_or_insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), self.ids.len() - 1);
        self.ids.len() - 1
    }
}

fn read_labels(path: &Path, ids: &mut IdMap) -> Result<HashMap<usize, String>> {
    let mut out = HashMap::new();
    for line in open_lines(path)? {
        let (no, l) = line?;
        let mut it = l.split_whitespace();
        let (Some(id), Some(label), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, no, "expected `id label`"));
        };
        let v = ids.get_or_insert(id);
        if out.insert(v, label.to_string()).is_some() {
            return Err(parse_err(path, no, format!("duplicate label for `{id}`")));
        }
    }
    Ok(out)
}

fn parse_value(path: &Path, no: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(path, no, format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, no, format!("non-finite attribute value `{s}`")));
    }
    Ok(v)
}

/// Sparse `(column, value)` entries per node index.
type AttributeRows = HashMap<usize, Vec<(usize, f64)>>;

/// Attribute rows keyed by node index, plus the column count.
fn read_attributes(path: &Path, ids: &mut IdMap) -> Result<(AttributeRows, usize)> {
    let mut rows = AttributeRows::new();
    let mut width = 0;
    let mut dense: Option<bool> = None;
    for line in open_lines(path)? {
        let (no, l) = line?;
        let is_dense = *dense.get_or_insert(l.contains(','));
        if is_dense {
            let mut fields = l.split(',').map(str::trim);
            let id = fields.next().unwrap_or_default();
            let values = fields
                .map(|f| parse_value(path, no, f))
                .collect::<Result<Vec<f64>>>()?;
            if rows.is_empty() {
                width = values.len();
            } else if values.len() != width {
                return Err(parse_err(path, no, format!("expected {width} values, found {}", values.len())));
            }
            let v = ids.get_or_insert(id);
            if rows.insert(v, values.into_iter().enumerate().collect()).is_some() {
                return Err(parse_err(path, no, format!("duplicate attribute row for `{id}`")));
            }
        } else {
            let mut it = l.split_whitespace();
            let (Some(id), Some(idx), Some(val), None) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(parse_err(path, no, "expected `id index value`"));
            };
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(path, no, format!("`{idx}` is not a column index")))?;
            let val = parse_value(path, no, val)?;
            width = width.max(idx + 1);
            let v = ids.get_or_insert(id);
            rows.entry(v).or_default().push((idx, val));
        }
    }
    Ok((rows, width))
}

fn read_edges(path: &Path, ids: &mut IdMap) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for line in open_lines(path)? {
        let (no, l) = line?;
        let mut it = l.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, no, "expected `u v`"));
        };
        edges.push((ids.get_or_insert(a), ids.get_or_insert(b)));
    }
    Ok(edges)
}

fn missing_error(kind: &str, ids: &[String], missing: Vec<usize>) -> Error {
    let shown: Vec<&str> = missing.iter().take(10).map(|&i| ids[i].as_str()).collect();
    let more = if missing.len() > 10 { format!(" and {} more", missing.len() - 10) } else { String::new() };
    Error::Data(format!("{} node(s) have no {kind}: {}{more}", missing.len(), shown.join(", ")))
}

/// Loads a dataset. Without an attribute file the adjacency rows are used as
/// attributes.
pub fn load_dataset(edges: &Path, attributes: Option<&Path>, labels: Option<&Path>) -> Result<DatasetBundle> {
    load(edges, attributes, labels, true)
}

/// Loads only the graph and labels; the bundle gets zero attribute columns.
pub fn load_graph(edges: &Path, labels: Option<&Path>) -> Result<DatasetBundle> {
    load(edges, None, labels, false)
}

fn load(edges: &Path, attributes: Option<&Path>, labels: Option<&Path>, fallback: bool) -> Result<DatasetBundle> {
    let mut ids = IdMap::default();
    let label_map = labels.map(|p| read_labels(p, &mut ids)).transpose()?;
    let attr_rows = attributes.map(|p| read_attributes(p, &mut ids)).transpose()?;
    let edge_list = read_edges(edges, &mut ids)?;
    let n = ids.ids.len();

    let graph = Graph::from_edges(n, edge_list)?;
    let mut notes = Vec::new();
    if graph.dropped_self_loops() + graph.dropped_duplicates() > 0 {
        notes.push(format!(
            "dropped {} self-loops and {} duplicate edges",
            graph.dropped_self_loops(),
            graph.dropped_duplicates()
        ));
    }

    let labels = match label_map {
        None => None,
        Some(map) => {
            let missing: Vec<usize> = (0..n).filter(|v| !map.contains_key(v)).collect();
            if !missing.is_empty() {
                return Err(missing_error("label", &ids.ids, missing));
            }
            let raw: Vec<&String> = (0..n).map(|v| &map[&v]).collect();
            Some(Partition::from_labels(&raw))
        }
    };

    let attributes = match attr_rows {
        None if fallback => {
            notes.push("no attribute file; adjacency rows used as attributes".into());
            adjacency_as_features(&graph)
        }
        None => AttributeMatrix::new(Array2::zeros((n, 0)))?,
        Some((rows, width)) => {
            let missing: Vec<usize> = (0..n).filter(|v| !rows.contains_key(v)).collect();
            if !missing.is_empty() {
                return Err(missing_error("attributes", &ids.ids, missing));
            }
            let mut x = Array2::zeros((n, width));
            for (v, row) in rows {
                for (j, val) in row {
                    x[[v, j]] = val;
                }
            }
            AttributeMatrix::new(x)?
        }
    };

    // `data/cora/edges.txt` is named after its directory
    let stem = edges.file_stem().map(|s| s.to_string_lossy().into_owned());
    let name = match stem.as_deref() {
        Some("edges") | None => edges
            .parent()
            .and_then(|d| d.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        Some(s) => s.to_string(),
    };
    let mut bundle = DatasetBundle::new(name, ids.ids, graph, attributes, labels)?;
    for note in &notes {
        log::warn!("{note}");
    }
    bundle.notes = notes;
    Ok(bundle)
}

/// Dense 0/1 adjacency rows as node attributes.
pub fn adjacency_as_features(g: &Graph) -> AttributeMatrix {
    if g.n() > 5000 {
        log::warn!("building a dense {0}x{0} adjacency feature matrix", g.n());
    }
    let mut x = Array2::zeros((g.n(), g.n()));
    for u in 0..g.n() {
        for &v in g.neighbors(u) {
            x[[u, v]] = 1.0;
        }
    }
    AttributeMatrix::new(x).expect("0/1 entries are finite")
}

/// Planted-partition attributed network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Planted blocks.
    pub k: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Attribute columns.
    pub attributes: usize,
    /// Attribute signal in `[0, 1]`; 0 makes attributes pure noise.
    pub signal: f64,
    /// Fraction of labels formed by uniting two planted blocks that share no
    /// edge, so that the label is disconnected.
    pub disconnected_fraction: f64,
    /// Like `disconnected_fraction`, but the two blocks keep the edges
    /// between them, so the label is connected and coarser than the blocks.
    pub coarse_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 300,
            k: 6,
            p_in: 0.3,
            p_out: 0.01,
            attributes: 60,
            signal: 0.8,
            disconnected_fraction: 0.0,
            coarse_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.k == 0 || self.n < self.k {
            return Err(Error::Config(format!("need 1 <= k <= n, got k={} n={}", self.k, self.n)));
        }
        if !(prob(self.p_in) && prob(self.p_out) && self.p_out < self.p_in) {
            return Err(Error::Config(format!(
                "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if !prob(self.signal) || !prob(self.disconnected_fraction) || !prob(self.coarse_fraction) {
            return Err(Error::Config(
                "signal, disconnected_fraction and coarse_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.attributes < self.k {
            return Err(Error::Config(format!(
                "{} attribute columns cannot give {} communities a signature",
                self.attributes, self.k
            )));
        }
        Ok(())
    }

    /// Number of labels that unite two blocks.
    pub fn disconnected_labels(&self) -> usize {
        ((self.disconnected_fraction * self.k as f64).round() as usize).min(self.k / 2)
    }

    /// Number of connected labels that unite two blocks.
    pub fn coarse_labels(&self) -> usize {
        ((self.coarse_fraction * self.k as f64).round() as usize).min(self.k / 2 - self.disconnected_labels())
    }
}

/// Planted block of node `i`: contiguous, near-equal blocks.
fn block_of(i: usize, n: usize, k: usize) -> usize {
    i * k / n
}

/// Generates a planted-partition bundle.
///
/// Blocks are made connected by linking their components with one extra
/// edge each. The first `2d` blocks are paired into `d` disconnected labels
/// (no edges between the two blocks of a pair), the next `2c` into `c`
/// connected coarse labels; the others are labels on their own. Each label
/// owns `T / labels` signature columns that are 1 with
/// probability `(1 + s) / 2` for its members and `(1 − s) / 2` otherwise;
/// any leftover columns are fair coins.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let (n, k) = (spec.n, spec.k);
    let mut rng = seed::rng(spec.seed);
    let d = spec.disconnected_labels();
    let paired_blocks = 2 * (d + spec.coarse_labels());
    let label_of_block = |b: usize| if b < paired_blocks { b / 2 } else { b - paired_blocks / 2 };
    let paired = |a: usize, b: usize| a != b && a < 2 * d && b < 2 * d && a / 2 == b / 2;

    let mut edges = Vec::new();
    for u in 0..n {
        let bu = block_of(u, n, k);
        for v in u + 1..n {
            let bv = block_of(v, n, k);
            let p = if bu == bv {
                spec.p_in
            } else if paired(bu, bv) {
                0.0
            } else {
                spec.p_out
            };
            if p > 0.0 && rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    // link the components inside every block
    let blocks = Partition::new((0..n).map(|i| block_of(i, n, k)).collect());
    let g0 = Graph::from_edges(n, edges.iter().copied())?;
    for members in blocks.communities() {
        let comps = g0.connected_components(Some(&members)).communities();
        for pair in comps.windows(2) {
            let a = members[pair[0][rng.random_range(0..pair[0].len())]];
            let b = members[pair[1][rng.random_range(0..pair[1].len())]];
            edges.push((a.min(b), a.max(b)));
        }
    }
    let graph = Graph::from_edges(n, edges)?;

    let labels = Partition::new((0..n).map(|i| label_of_block(block_of(i, n, k))).collect());
    let num_labels = labels.k();
    let width = spec.attributes / num_labels;
    let hi = (1.0 + spec.signal) / 2.0;
    let lo = (1.0 - spec.signal) / 2.0;
    let mut x = Array2::zeros((n, spec.attributes));
    for i in 0..n {
        let c = labels.community_of(i);
        for j in 0..spec.attributes {
            let owner = j / width;
            let p = if owner >= num_labels {
                0.5
            } else if owner == c {
                hi
            } else {
                lo
            };
            if rng.random_bool(p) {
                x[[i, j]] = 1.0;
            }
        }
    }
    let ids = (0..n).map(|i| i.to_string()).collect();
    let mut bundle = DatasetBundle::new(
        format!("synthetic-n{n}-k{k}-s{}", spec.seed),
        ids,
        graph,
        AttributeMatrix::new(x)?,
        Some(labels),
    )?;
    bundle.notes.push(format!(
        "{d} labels unite two disconnected blocks, {} unite two linked blocks",
        spec.coarse_labels()
    ));
    Ok(bundle)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `edges.txt`, `attributes.csv` and (with labels) `labels.txt`.
pub fn write_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let ids = &bundle.ids;
    let mut edges = String::new();
    for (u, v) in bundle.graph.edges() {
        edges.push_str(&format!("{} {}\n", ids[u], ids[v]));
    }
    write_file(&dir.join("edges.txt"), &edges)?;

    let mut attrs = String::new();
    for (i, row) in bundle.attributes.values().rows().into_iter().enumerate() {
        attrs.push_str(&ids[i]);
        for v in row {
            attrs.push_str(&format!(",{v}"));
        }
        attrs.push('\n');
    }
    write_file(&dir.join("attributes.csv"), &attrs)?;

    if let Some(labels) = &bundle.labels {
        let mut out = String::new();
        for (i, id) in ids.iter().enumerate() {
            out.push_str(&format!("{id} {}\n", labels.community_of(i)));
        }
        write_file(&dir.join("labels.txt"), &out)?;
    }
    Ok(())
}

/// Paths of the files written by [`write_results`].
#[derive(Debug, Clone)]
pub struct ResultFiles {
    pub assignment: PathBuf,
    pub metrics: PathBuf,
    pub config: PathBuf,
    pub timings: PathBuf,
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Data(format!("cannot serialize: {e}")))
}

pub const ASSIGNMENT_HEADER: &str = "id\tcommunity";

/// Writes `assignment.tsv`, `metrics.json`, `config.json` and
/// `timings.json`. Wall-clock timings are kept out of `metrics.json` so
/// that reruns produce identical metric files.
pub fn write_results<M, C, T>(
    out_dir: &Path,
    ids: &[String],
    partition: &Partition,
    metrics: &M,
    config: &C,
    timings: &T,
) -> Result<ResultFiles>
where
    M: Serialize,
    C: Serialize,
    T: Serialize,
{
    if ids.len() != partition.len() {
        return Err(Error::Precondition(format!(
            "{} ids for a partition of {} nodes",
            ids.len(),
            partition.len()
        )));
    }
    ensure_dir(out_dir)?;
    let files = ResultFiles {
        assignment: out_dir.join("assignment.tsv"),
        metrics: out_dir.join("metrics.json"),
        config: out_dir.join("config.json"),
        timings: out_dir.join("timings.json"),
    };
    let mut tsv = String::with_capacity(ids.len() * 8);
    tsv.push_str(ASSIGNMENT_HEADER);
    tsv.push('\n');
    for (i, id) in ids.iter().enumerate() {
        tsv.push_str(&format!("{id}\t{}\n", partition.community_of(i)));
    }
    write_file(&files.assignment, &tsv)?;
    write_file(&files.metrics, &to_json(metrics)?)?;
    write_file(&files.config, &to_json(config)?)?;
    write_file(&files.timings, &to_json(timings)?)?;
    Ok(files)
}

/// Reads an assignment file (`id<TAB>community`, optional header) and
/// orders it by `ids`. Every id must appear exactly once.
pub fn read_assignment(path: &Path, ids: &[String]) -> Result<Partition> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut raw: Vec<Option<String>> = vec![None; ids.len()];
    for line in open_lines(path)? {
        let (no, l) = line?;
        if l == ASSIGNMENT_HEADER {
            continue;
        }
        let mut it = l.split_whitespace();
        let (Some(id), Some(c), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, no, "expected `id community`"));
        };
        let &v = index
            .get(id)
            .ok_or_else(|| parse_err(path, no, format!("unknown node `{id}`")))?;
        if raw[v].replace(c.to_string()).is_some() {
            return Err(parse_err(path, no, format!("`{id}` assigned twice")));
        }
    }
    let missing: Vec<usize> = (0..ids.len()).filter(|&v| raw[v].is_none()).collect();
    if !missing.is_empty() {
        return Err(missing_error("community", ids, missing));
    }
    let raw: Vec<String> = raw.into_iter().map(Option::unwrap).collect();
    Ok(Partition::from_labels(&raw))
}

/// Summary of [`convert_content_cites`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversion {
    pub nodes: usize,
    pub edges_written: usize,
    pub dangling_edges: usize,
}

/// Converts the `<name>.content` / `<name>.cites` layout (content lines are
/// `id x1 ... xT label`, cites lines `cited citing`) into `edges.txt`,
/// `attributes.csv` and `labels.txt` in `out_dir`. Citations naming unknown
/// ids are skipped.
pub fn convert_content_cites(content: &Path, cites: &Path, out_dir: &Path) -> Result<Conversion> {
    let mut ids = Vec::new();
    let mut known = HashMap::new();
    let mut attrs = String::new();
    let mut labels = String::new();
    let mut width = None;
    for line in open_lines(content)? {
        let (no, l) = line?;
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(parse_err(content, no, "expected `id features... label`"));
        }
        let values = &fields[1..fields.len() - 1];
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(parse_err(content, no, "feature count differs from earlier lines"));
        }
        for v in values {
            parse_value(content, no, v)?;
        }
        let id = fields[0];
        if known.insert(id.to_string(), ids.len()).is_some() {
            return Err(parse_err(content, no, format!("duplicate node `{id}`")));
        }
        ids.push(id.to_string());
        attrs.push_str(id);
        for v in values {
            attrs.push(',');
            attrs.push_str(v);
        }
        attrs.push('\n');
        labels.push_str(&format!("{id} {}\n", fields[fields.len() - 1]));
    }

    let mut edges = String::new();
    let (mut written, mut dangling) = (0, 0);
    for line in open_lines(cites)? {
        let (no, l) = line?;
        let mut it = l.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(cites, no, "expected `cited citing`"));
        };
        if known.contains_key(a) && known.contains_key(b) {
            edges.push_str(&format!("{a} {b}\n"));
            written += 1;
        } else {
            dangling += 1;
        }
    }
    if dangling > 0 {
        log::warn!("skipped {dangling} citations naming unknown nodes");
    }
    ensure_dir(out_dir)?;
    write_file(&out_dir.join("edges.txt"), &edges)?;
    write_file(&out_dir.join("attributes.csv"), &attrs)?;
    write_file(&out_dir.join("labels.txt"), &labels)?;
    Ok(Conversion { nodes: ids.len(), edges_written: written, dangling_edges: dangling })
}
