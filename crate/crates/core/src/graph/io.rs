use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Edge, EdgeLayer, MultiplexGraph};
use crate::error::{Error, Result};
use crate::ndauto::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Dense,
    /// No feature file; every node gets its own indicator column.
    Onehot,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub file: String,
    /// Insert the reverse of every listed edge at load time.
    #[serde(default)]
    pub undirected: bool,
}

/// `manifest.json` of a dataset directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub num_nodes: usize,
    pub feature_kind: FeatureKind,
    #[serde(default = "default_features_file")]
    pub features_file: String,
    pub layers: Vec<LayerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<String>,
    #[serde(default)]
    pub num_classes: usize,
}

fn default_features_file() -> String {
    "features.tsv".to_string()
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_index(path: &Path, line: usize, field: &str, bound: usize, what: &str) -> Result<usize> {
    let v: usize = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("`{field}` is not a {what} index")))?;
    if v >= bound {
        return Err(parse_err(
            path,
            line,
            format!("{what} {v} out of range (< {bound})"),
        ));
    }
    Ok(v)
}

pub(crate) fn read_edges(path: &Path, num_nodes: usize) -> Result<Vec<Edge>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (line, l) in lines(&text) {
        let mut fields = l.split('\t');
        let (Some(u), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(path, line, "expected `u<TAB>v`"));
        };
        edges.push((
            parse_index(path, line, u, num_nodes, "node")?,
            parse_index(path, line, v, num_nodes, "node")?,
        ));
    }
    Ok(edges)
}

fn read_features(path: &Path, num_nodes: usize) -> Result<Tensor> {
    let text = read(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, l) in lines(&text) {
        let before = data.len();
        for field in l.split('\t') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, "non-finite feature value"));
            }
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(
                    path,
                    line,
                    format!("{width} columns, expected {c}"),
                ));
            }
            _ => {}
        }
        rows += 1;
    }
    if rows != num_nodes {
        return Err(parse_err(
            path,
            rows,
            format!("{rows} feature rows, manifest says {num_nodes}"),
        ));
    }
    Ok(Tensor::from_raw(rows, cols.unwrap_or(0), data))
}

fn read_labels(path: &Path, num_nodes: usize, num_classes: usize) -> Result<Vec<Option<usize>>> {
    let text = read(path)?;
    let mut labels = vec![None; num_nodes];
    for (line, l) in lines(&text) {
        let mut fields = l.split('\t');
        let (Some(node), Some(class), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(path, line, "expected `node<TAB>class`"));
        };
        let node = parse_index(path, line, node, num_nodes, "node")?;
        let class = parse_index(path, line, class, num_classes, "class")?;
        if labels[node].replace(class).is_some() {
            return Err(parse_err(path, line, format!("node {node} labeled twice")));
        }
    }
    Ok(labels)
}

/// Loads a dataset directory (`manifest.json`, features, labels, edge files).
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<MultiplexGraph> {
    let dir = dir.as_ref();
    let m = Manifest::load(dir)?;
    let features = match m.feature_kind {
        FeatureKind::Dense => read_features(&dir.join(&m.features_file), m.num_nodes)?,
        FeatureKind::Onehot => Tensor::identity(m.num_nodes),
    };
    let mut layers = Vec::with_capacity(m.layers.len());
    for entry in &m.layers {
        let path = dir.join(&entry.file);
        let mut edges = read_edges(&path, m.num_nodes)?;
        if edges.is_empty() {
            return Err(Error::EmptyLayer(entry.name.clone()));
        }
        if entry.undirected {
            let reversed: Vec<Edge> = edges.iter().map(|&(u, v)| (v, u)).collect();
            edges.extend(reversed);
        }
        layers.push(EdgeLayer::new(entry.name.clone(), edges));
    }
    let labels = match &m.labels_file {
        Some(f) => Some(read_labels(&dir.join(f), m.num_nodes, m.num_classes)?),
        None => None,
    };
    MultiplexGraph::new(m.name, features, layers, labels, m.num_classes)
}

pub(crate) fn format_edges(edges: &[Edge]) -> String {
    let mut out = String::with_capacity(edges.len() * 12);
    for (u, v) in edges {
        writeln!(out, "{u}\t{v}").unwrap();
    }
    out
}

/// Writes `contents` to `path` via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp: PathBuf = path.to_path_buf();
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    tmp.set_file_name(name);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `g` as a dataset directory with every layer stored directed.
pub fn write_dataset(g: &MultiplexGraph, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut features = String::new();
    for r in 0..g.num_nodes() {
        for (c, v) in g.features().row(r).iter().enumerate() {
            if c > 0 {
                features.push('\t');
            }
            write!(features, "{v}").unwrap();
        }
        features.push('\n');
    }
    write_atomic(&dir.join("features.tsv"), features.as_bytes())?;
    let mut layers = Vec::new();
    for layer in g.layers() {
        let file = format!("{}.edges", layer.name);
        write_atomic(&dir.join(&file), format_edges(&layer.edges).as_bytes())?;
        layers.push(LayerEntry {
            name: layer.name.clone(),
            file,
            undirected: false,
        });
    }
    let labels_file = match g.labels() {
        Some(labels) => {
            let mut out = String::new();
            for (i, l) in labels.iter().enumerate() {
                if let Some(c) = l {
                    writeln!(out, "{i}\t{c}").unwrap();
                }
            }
            write_atomic(&dir.join("labels.tsv"), out.as_bytes())?;
            Some("labels.tsv".to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        name: g.name().to_string(),
        num_nodes: g.num_nodes(),
        feature_kind: FeatureKind::Dense,
        features_file: default_features_file(),
        layers,
        labels_file,
        num_classes: g.num_classes(),
    };
    write_atomic(&dir.join("manifest.json"), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

/// Adds (or replaces) an edge layer of the dataset in `src`, writing the
/// result to `dst`. When `dst` differs from `src`, every file the manifest
/// references (and `splits.json`) is copied first. The new layer is stored
/// directed, exactly as given.
pub fn add_layer_to_dataset(src: &Path, dst: &Path, layer: &EdgeLayer) -> Result<Manifest> {
    let mut m = Manifest::load(src)?;
    fs::create_dir_all(dst).map_err(|e| Error::io(dst, e))?;
    let same = fs::canonicalize(src).map_err(|e| Error::io(src, e))?
        == fs::canonicalize(dst).map_err(|e| Error::io(dst, e))?;
    let file = format!("{}.edges", layer.name);
    m.layers.retain(|l| l.name != layer.name);
    if !same {
        let mut files: Vec<&str> = m.layers.iter().map(|l| l.file.as_str()).collect();
        if m.feature_kind == FeatureKind::Dense {
            files.push(&m.features_file);
        }
        files.extend(m.labels_file.as_deref());
        if src.join("splits.json").exists() {
            files.push("splits.json");
        }
        for f in files {
            let bytes = fs::read(src.join(f)).map_err(|e| Error::io(src.join(f), e))?;
            write_atomic(&dst.join(f), &bytes)?;
        }
    }
    write_atomic(&dst.join(&file), format_edges(&layer.edges).as_bytes())?;
    m.layers.push(LayerEntry {
        name: layer.name.clone(),
        file,
        undirected: false,
    });
    write_atomic(&dst.join("manifest.json"), m.to_json().as_bytes())?;
    Ok(m)
}
