//! Text file formats.
//!
//! Edge lists are whitespace-separated with a typed header:
//!
//! ```text
//! # comment lines start with '#'
//! n 200
//! layers 2
//! directed undirected
//! family 1 gaussian
//! family 2 logistic
//! edges
//! 1 1 2 0.731
//! 2 4 17 1
//! ```
//!
//! Rows are `layer i j value` with 1-based layers and nodes; pairs absent
//! from a layer are unobserved. The ground-truth sidecar uses the same
//! header (without `family`) and rows `layer i j theta mean` for every pair.
//! Tables are comma-separated with a header row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::averaging::CandidateId;
use crate::error::{Error, Result};
use crate::eval::{MetricKind, MetricReport};
use crate::family::EdgeFamily;
use crate::graph::{all_pairs, EdgeId, LayerData, MultilayerDataset, SymMatrix};
use crate::simgen::GroundTruth;

pub const PREDICTIONS_HEADER: &str = "i,j,prediction";
pub const HELDOUT_HEADER: &str = "i,j,value";
pub const WEIGHTS_HEADER: &str = "layer,dim,weight,cv";
pub const METRICS_HEADER: &str = "scenario,method,replicate,metric,value";

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place, so readers never see a partial file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn format_dataset(ds: &MultilayerDataset) -> String {
    let mut s = String::new();
    s.push_str("# transferma edge list\n");
    let _ = writeln!(s, "n {}", ds.n());
    let _ = writeln!(s, "layers {}", ds.num_layers());
    s.push_str("directed undirected\n");
    for (r, f) in ds.families().iter().enumerate() {
        let _ = writeln!(s, "family {} {}", r + 1, f);
    }
    s.push_str("edges\n");
    for (r, layer) in ds.layers().iter().enumerate() {
        for (e, v) in layer.iter() {
            let _ = writeln!(s, "{} {} {} {}", r + 1, e.i() + 1, e.j() + 1, v);
        }
    }
    s
}

pub fn write_dataset(path: &Path, ds: &MultilayerDataset) -> Result<()> {
    atomic_write(path, format_dataset(ds).as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<MultilayerDataset> {
    parse_dataset(&read_text(path)?, path)
}

struct Header {
    n: usize,
    layers: usize,
    families: Vec<Option<EdgeFamily>>,
}

/// Parses header lines up to and including `edges`; returns the header and
/// the remaining lines.
fn parse_header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    path: &Path,
    with_families: bool,
) -> Result<Header> {
    let mut n = None;
    let mut layers = None;
    let mut directed = None;
    let mut families: Vec<Option<EdgeFamily>> = Vec::new();
    let mut last_line = 0;
    for (line, text) in lines.by_ref() {
        last_line = line;
        let fields: Vec<&str> = text.split_whitespace().collect();
        let int = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| parse_err(path, line, format!("expected an integer, found `{s}`")))
        };
        match fields.as_slice() {
            ["edges"] => {
                let n = n.ok_or_else(|| parse_err(path, line, "header lacks `n`"))?;
                let layers: usize = layers.ok_or_else(|| parse_err(path, line, "header lacks `layers`"))?;
                if directed.is_none() {
                    return Err(parse_err(path, line, "header lacks `directed undirected`"));
                }
                families.resize(layers.max(families.len()), None);
                if families.len() > layers {
                    return Err(parse_err(path, line, "family declared for a layer beyond `layers`"));
                }
                if with_families {
                    if let Some(r) = families.iter().position(Option::is_none) {
                        return Err(parse_err(path, line, format!("no family declared for layer {}", r + 1)));
                    }
                }
                return Ok(Header { n, layers, families });
            }
            ["n", v] if n.is_none() => n = Some(int(v)?),
            ["layers", v] if layers.is_none() => layers = Some(int(v)?),
            ["directed", "undirected"] => directed = Some(()),
            ["directed", other] => {
                return Err(parse_err(path, line, format!("only undirected layers are supported, found `{other}`")))
            }
            ["family", r, f] if with_families => {
                let r = int(r)?;
                if r == 0 {
                    return Err(parse_err(path, line, "layers are numbered from 1"));
                }
                let f: EdgeFamily = f.parse().map_err(|e: Error| parse_err(path, line, e.to_string()))?;
                if families.len() < r {
                    families.resize(r, None);
                }
                if families[r - 1].replace(f).is_some() {
                    return Err(parse_err(path, line, format!("family of layer {r} declared twice")));
                }
            }
            _ => return Err(parse_err(path, line, format!("unexpected header line `{text}`"))),
        }
    }
    Err(parse_err(path, last_line, "missing `edges` line"))
}

fn parse_pair(path: &Path, line: usize, n: usize, i: &str, j: &str) -> Result<EdgeId> {
    let node = |s: &str| -> Result<usize> {
        let v: usize = s
            .parse()
            .map_err(|_| parse_err(path, line, format!("expected a node number, found `{s}`")))?;
        if v == 0 || v > n {
            return Err(parse_err(path, line, format!("node {v} outside 1..={n}")));
        }
        Ok(v - 1)
    };
    let (a, b) = (node(i)?, node(j)?);
    EdgeId::new(a, b).map_err(|e| parse_err(path, line, e.to_string()))
}

fn parse_layer_index(path: &Path, line: usize, layers: usize, s: &str) -> Result<usize> {
    let r: usize = s
        .parse()
        .map_err(|_| parse_err(path, line, format!("expected a layer number, found `{s}`")))?;
    if r == 0 || r > layers {
        return Err(parse_err(path, line, format!("layer {r} outside 1..={layers}")));
    }
    Ok(r - 1)
}

fn parse_value(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(path, line, format!("expected a number, found `{s}`")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value `{s}`")));
    }
    Ok(v)
}

/// Parses an edge list; `path` is used in error messages only.
pub fn parse_dataset(text: &str, path: &Path) -> Result<MultilayerDataset> {
    let mut lines = content_lines(text);
    let header = parse_header(&mut lines, path, true)?;
    let mut values: Vec<BTreeMap<EdgeId, f64>> = vec![BTreeMap::new(); header.layers];
    for (line, text) in lines {
        let fields: Vec<&str> = text.split_whitespace().collect();
        let [r, i, j, v] = fields.as_slice() else {
            return Err(parse_err(path, line, "expected `layer i j value`"));
        };
        let r = parse_layer_index(path, line, header.layers, r)?;
        let e = parse_pair(path, line, header.n, i, j)?;
        let v = parse_value(path, line, v)?;
        let family = header.families[r].expect("checked in header");
        family
            .validate_value(v)
            .map_err(|err| parse_err(path, line, err.to_string()))?;
        if values[r].insert(e, v).is_some() {
            return Err(parse_err(path, line, format!("duplicate edge {e} in layer {}", r + 1)));
        }
    }
    let layers = values
        .into_iter()
        .map(|v| LayerData::new(header.n, v))
        .collect::<Result<Vec<_>>>()?;
    let families = header.families.into_iter().map(|f| f.expect("checked")).collect();
    MultilayerDataset::new(layers, families)
}

pub fn format_truth(truth: &GroundTruth, n: usize) -> String {
    let mut s = String::new();
    s.push_str("# transferma ground truth: layer i j theta mean\n");
    let _ = writeln!(s, "n {n}");
    let _ = writeln!(s, "layers {}", truth.theta_star.len());
    s.push_str("directed undirected\nedges\n");
    for (r, (theta, mean)) in truth.theta_star.iter().zip(&truth.mean_star).enumerate() {
        for e in all_pairs(n) {
            let _ = writeln!(s, "{} {} {} {} {}", r + 1, e.i() + 1, e.j() + 1, theta.get(e), mean.get(e));
        }
    }
    s
}

pub fn write_truth(path: &Path, truth: &GroundTruth, n: usize) -> Result<()> {
    atomic_write(path, format_truth(truth, n).as_bytes())
}

/// True natural parameters and means per layer, as read from a sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub theta: Vec<SymMatrix>,
    pub mean: Vec<SymMatrix>,
}

pub fn read_truth(path: &Path) -> Result<TruthTable> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let header = parse_header(&mut lines, path, false)?;
    let mut theta = vec![SymMatrix::filled(header.n, f64::NAN); header.layers];
    let mut mean = theta.clone();
    for (line, text) in lines {
        let fields: Vec<&str> = text.split_whitespace().collect();
        let [r, i, j, t, m] = fields.as_slice() else {
            return Err(parse_err(path, line, "expected `layer i j theta mean`"));
        };
        let r = parse_layer_index(path, line, header.layers, r)?;
        let e = parse_pair(path, line, header.n, i, j)?;
        theta[r].set(e, parse_value(path, line, t)?);
        mean[r].set(e, parse_value(path, line, m)?);
    }
    if theta.iter().any(|t| t.packed().iter().any(|v| v.is_nan())) {
        return Err(Error::IncompleteInput(format!("{} does not cover every pair", path.display())));
    }
    Ok(TruthTable { theta, mean })
}

fn format_edge_values(header: &str, values: &BTreeMap<EdgeId, f64>) -> String {
    let mut s = String::with_capacity(values.len() * 24);
    s.push_str(header);
    s.push('\n');
    for (e, v) in values {
        let _ = writeln!(s, "{},{},{}", e.i() + 1, e.j() + 1, v);
    }
    s
}

pub fn write_predictions(path: &Path, preds: &BTreeMap<EdgeId, f64>) -> Result<()> {
    atomic_write(path, format_edge_values(PREDICTIONS_HEADER, preds).as_bytes())
}

pub fn write_heldout(path: &Path, values: &BTreeMap<EdgeId, f64>) -> Result<()> {
    atomic_write(path, format_edge_values(HELDOUT_HEADER, values).as_bytes())
}

/// Reads an `i,j,value` table (predictions or held-out values). Node
/// numbers are 1-based.
pub fn read_edge_values(path: &Path) -> Result<BTreeMap<EdgeId, f64>> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let Some((line, head)) = lines.next() else {
        return Err(parse_err(path, 1, "empty table"));
    };
    if head.split(',').count() != 3 {
        return Err(parse_err(path, line, "expected a 3-column header"));
    }
    let mut out = BTreeMap::new();
    for (line, text) in lines {
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        let [i, j, v] = fields.as_slice() else {
            return Err(parse_err(path, line, "expected `i,j,value`"));
        };
        let e = parse_pair(path, line, u32::MAX as usize, i, j)?;
        if out.insert(e, parse_value(path, line, v)?).is_some() {
            return Err(parse_err(path, line, format!("duplicate edge {e}")));
        }
    }
    Ok(out)
}

/// Weight report: one row per candidate with its weight and its own CV
/// criterion. Layers are 1-based.
pub fn format_weights(weights: &[(CandidateId, f64)], cv: &[(CandidateId, f64)]) -> String {
    let cv: BTreeMap<CandidateId, f64> = cv.iter().copied().collect();
    let mut s = String::new();
    s.push_str(WEIGHTS_HEADER);
    s.push('\n');
    for (c, w) in weights {
        let cv = cv.get(c).map_or(String::new(), |v| v.to_string());
        let _ = writeln!(s, "{},{},{},{}", c.layer + 1, c.dim, w, cv);
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn format_metric_rows(rows: &[MetricReport]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            csv_field(&r.scenario),
            csv_field(&r.method),
            r.replicate,
            r.metric,
            r.value
        );
    }
    s
}

/// Writes a complete metric table, replacing any existing file.
pub fn write_metrics(path: &Path, rows: &[MetricReport]) -> Result<()> {
    let contents = format!("{METRICS_HEADER}\n{}", format_metric_rows(rows));
    atomic_write(path, contents.as_bytes())
}

/// Appends rows to a metric table, creating it with a header if needed.
pub fn append_metrics(path: &Path, rows: &[MetricReport]) -> Result<()> {
    let mut contents = match fs::read_to_string(path) {
        Ok(existing) => {
            if existing.lines().next() != Some(METRICS_HEADER) {
                return Err(parse_err(path, 1, format!("expected header `{METRICS_HEADER}`")));
            }
            existing
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => format!("{METRICS_HEADER}\n"),
        Err(e) => return Err(Error::io(path, e)),
    };
    contents.push_str(&format_metric_rows(rows));
    atomic_write(path, contents.as_bytes())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricReport>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => return Err(parse_err(path, 1, format!("expected header `{METRICS_HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv(line);
        let [scenario, method, replicate, metric, value] = fields.as_slice() else {
            return Err(parse_err(path, k + 1, "expected 5 columns"));
        };
        rows.push(MetricReport {
            scenario: scenario.clone(),
            method: method.clone(),
            replicate: replicate
                .parse()
                .map_err(|_| parse_err(path, k + 1, "bad replicate number"))?,
            metric: metric
                .parse::<MetricKind>()
                .map_err(|e| parse_err(path, k + 1, e.to_string()))?,
            value: value.parse().map_err(|_| parse_err(path, k + 1, "bad value"))?,
        });
    }
    Ok(rows)
}

fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Writes a plain CSV table.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let fields: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    atomic_write(path, s.as_bytes())
}

/// `dir/name`, for output files confined to one run directory.
pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
