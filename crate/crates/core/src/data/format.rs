//! Dataset interchange: canonical JSON with sorted keys and 17 significant
//! digits per float, so that save → load → save is byte-identical.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::Value;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graphnet::{Graph, Task};

/// Per-graph label: node labels, a graph class or a regression target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Nodes(Vec<usize>),
    Class(usize),
    Value(f64),
}

impl Target {
    pub fn as_value(&self) -> Option<f64> {
        match *self {
            Target::Value(v) => Some(v),
            Target::Class(k) => Some(k as f64),
            Target::Nodes(_) => None,
        }
    }
}

/// One graph. Undirected edges are stored once; loading mirrors them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub x: Vec<Vec<f64>>,
    pub y: Target,
}

impl GraphRecord {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e[0], e[1])).collect()
    }

    /// The record as a graph with both edge directions stored.
    pub fn to_graph(&self) -> Result<Graph<f64>> {
        let cols = self.x.first().map_or(0, Vec::len);
        let data = self.x.iter().flatten().copied().collect();
        Graph::undirected(self.n, &self.pairs(), Tensor::matrix(self.n, cols, data)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fractions of graphs assigned to train and validation; the rest is test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.75, val: 0.125 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        if !(self.train >= 0.0 && self.val >= 0.0 && self.train + self.val <= 1.0) {
            return Err(Error::Config(format!(
                "split fractions must be non-negative with train + val <= 1, got {} and {}",
                self.train, self.val
            )));
        }
        Ok(())
    }

    /// Splits `order` (a permutation of graph indices) by rounded counts.
    pub fn assign(&self, order: &[usize]) -> Splits {
        let n = order.len();
        let n_train = ((self.train * n as f64).round() as usize).min(n);
        let n_val = ((self.val * n as f64).round() as usize).min(n - n_train);
        let sorted = |s: &[usize]| {
            let mut v = s.to_vec();
            v.sort_unstable();
            v
        };
        Splits {
            train: sorted(&order[..n_train]),
            val: sorted(&order[n_train..n_train + n_val]),
            test: sorted(&order[n_train + n_val..]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub task: Task,
    pub feature_dim: usize,
    pub graphs: Vec<GraphRecord>,
    pub splits: Splits,
    /// Generator settings and, for regression, the target rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Value>,
}

impl DatasetFile {
    /// Number of classes (largest label + 1), or 1 for regression.
    pub fn num_outputs(&self) -> usize {
        match self.task {
            Task::GraphRegress => 1,
            _ => {
                let max = self
                    .graphs
                    .iter()
                    .flat_map(|g| match &g.y {
                        Target::Nodes(v) => v.clone(),
                        Target::Class(k) => vec![*k],
                        Target::Value(_) => vec![],
                    })
                    .max()
                    .unwrap_or(0);
                max + 1
            }
        }
    }

    pub fn graph(&self, i: usize) -> Result<Graph<f64>> {
        self.graphs[i].to_graph()
    }

    pub fn validate(&self) -> Result<()> {
        for (gi, g) in self.graphs.iter().enumerate() {
            for (ei, e) in g.edges.iter().enumerate() {
                if let Some(&bad) = e.iter().find(|&&v| v >= g.n) {
                    return Err(Error::Validation(format!(
                        "graph {gi} edge {ei}: node index {bad} out of range for n = {}",
                        g.n
                    )));
                }
            }
            if g.x.len() != g.n {
                return Err(Error::Validation(format!(
                    "graph {gi}: {} feature rows for {} nodes",
                    g.x.len(),
                    g.n
                )));
            }
            if let Some(r) = g.x.iter().position(|row| row.len() != self.feature_dim) {
                return Err(Error::Validation(format!(
                    "graph {gi} node {r}: feature width {} differs from feature_dim {}",
                    g.x[r].len(),
                    self.feature_dim
                )));
            }
            if g.x.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("graph {gi}: non-finite feature")));
            }
            match (&g.y, self.task) {
                (Target::Nodes(labels), Task::NodeClass) if labels.len() == g.n => {}
                (Target::Nodes(labels), Task::NodeClass) => {
                    return Err(Error::Validation(format!(
                        "graph {gi}: {} node labels for {} nodes",
                        labels.len(),
                        g.n
                    )));
                }
                (Target::Class(_), Task::GraphClass) => {}
                (Target::Value(v), Task::GraphRegress) if v.is_finite() => {}
                (Target::Class(_), Task::GraphRegress) => {}
                (y, task) => {
                    return Err(Error::Validation(format!(
                        "graph {gi}: target {y:?} does not fit task {task:?}"
                    )));
                }
            }
        }
        let n = self.graphs.len();
        let mut seen = vec![false; n];
        for (name, split) in [("train", &self.splits.train), ("val", &self.splits.val), ("test", &self.splits.test)] {
            for &i in split {
                if i >= n {
                    return Err(Error::Validation(format!(
                        "{name} split lists graph {i}, but there are {n} graphs"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Validation(format!("graph {i} appears in more than one split")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("graph {i} is in no split")));
        }
        Ok(())
    }
}

/// Compact JSON whose floats always carry 17 significant digits.
struct CanonicalFormatter;

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Canonical serialization: keys sorted, floats in `{:.16e}` form.
pub fn to_canonical_json<S: Serialize>(value: &S) -> Result<String> {
    // `Value` keeps object keys in a sorted map.
    let tree = serde_json::to_value(value).map_err(|e| Error::Parse {
        record: None,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter);
    tree.serialize(&mut ser).map_err(|e| Error::Parse {
        record: None,
        message: e.to_string(),
    })?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

pub fn save_dataset(d: &DatasetFile, path: impl AsRef<Path>) -> Result<()> {
    d.validate()?;
    fs::write(path, to_canonical_json(d)?)?;
    Ok(())
}

/// Parses and validates a dataset. Errors inside a graph record carry the
/// record's index.
pub fn parse_dataset(text: &str) -> Result<DatasetFile> {
    let top: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        record: None,
        message: e.to_string(),
    })?;
    let Value::Object(mut map) = top else {
        return Err(Error::Parse {
            record: None,
            message: "top level must be a JSON object".into(),
        });
    };
    let raw_graphs = match map.remove("graphs") {
        Some(Value::Array(a)) => a,
        _ => {
            return Err(Error::Parse {
                record: None,
                message: "missing \"graphs\" array".into(),
            })
        }
    };
    let mut graphs = Vec::with_capacity(raw_graphs.len());
    for (i, g) in raw_graphs.into_iter().enumerate() {
        graphs.push(serde_json::from_value::<GraphRecord>(g).map_err(|e| Error::Parse {
            record: Some(i),
            message: e.to_string(),
        })?);
    }
    map.insert("graphs".into(), Value::Array(Vec::new()));
    let mut d: DatasetFile = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Parse {
        record: None,
        message: e.to_string(),
    })?;
    d.graphs = graphs;
    d.validate()?;
    Ok(d)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetFile> {
    parse_dataset(&fs::read_to_string(path)?)
}
