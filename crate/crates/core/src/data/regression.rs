//! Synthetic molecular-style regression: typed nodes, and a target counting
//! edges whose endpoint types form a reactive pair.

use serde::{Deserialize, Serialize};

use super::format::{DatasetFile, GraphRecord, SplitFractions, Target};
use super::sbm::{one_hot_row, repair_connectivity, splits_for};
use crate::error::{Error, Result};
use crate::graphnet::Task;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSpec {
    pub num_graphs: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub node_types: usize,
    pub edge_prob: f64,
    /// Selects the reactive pair set, see [`reactive_pairs`].
    pub rule: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub split: SplitFractions,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        RegressionSpec {
            num_graphs: 400,
            nodes_min: 10,
            nodes_max: 30,
            node_types: 4,
            edge_prob: 0.15,
            rule: 0,
            noise_sd: 0.05,
            seed: 0,
            split: SplitFractions::default(),
        }
    }
}

impl RegressionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.node_types < 2 {
            return Err(Error::Config(format!("need at least 2 node types, got {}", self.node_types)));
        }
        if self.num_graphs == 0 || self.nodes_min < 2 || self.nodes_min > self.nodes_max {
            return Err(Error::Config(format!(
                "need num_graphs > 0 and 2 <= nodes_min <= nodes_max, got {}, {}, {}",
                self.num_graphs, self.nodes_min, self.nodes_max
            )));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::Config(format!("edge_prob must lie in [0, 1], got {}", self.edge_prob)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd)));
        }
        reactive_pairs(self.rule, self.node_types)?;
        self.split.validate()
    }
}

/// Unordered type pairs for each rule id:
/// 0 → {(0,1)}; 1 → {(0,1), (2,3)}; 2 → every same-type pair.
pub fn reactive_pairs(rule: usize, node_types: usize) -> Result<Vec<(usize, usize)>> {
    match rule {
        0 => Ok(vec![(0, 1)]),
        1 if node_types >= 4 => Ok(vec![(0, 1), (2, 3)]),
        1 => Err(Error::Config("rule 1 needs at least 4 node types".into())),
        2 => Ok((0..node_types).map(|t| (t, t)).collect()),
        _ => Err(Error::Config(format!("unknown target rule {rule}"))),
    }
}

/// Noise-free target: reactive edges divided by node count.
pub fn regression_target(n: usize, types: &[usize], edges: &[(usize, usize)], pairs: &[(usize, usize)]) -> f64 {
    let reactive = edges
        .iter()
        .filter(|&&(a, b)| {
            let (ta, tb) = (types[a], types[b]);
            pairs.iter().any(|&(p, q)| (ta, tb) == (p, q) || (ta, tb) == (q, p))
        })
        .count();
    reactive as f64 / n as f64
}

/// Node types recovered from one-hot feature rows.
pub fn types_from_features(x: &[Vec<f64>]) -> Vec<usize> {
    x.iter()
        .map(|row| row.iter().position(|&v| v == 1.0).unwrap_or(0))
        .collect()
}

pub fn gen_regression_task(spec: &RegressionSpec) -> Result<DatasetFile> {
    spec.validate()?;
    let pairs = reactive_pairs(spec.rule, spec.node_types)?;
    let root = RngStream::new(spec.seed);
    let graphs = (0..spec.num_graphs)
        .map(|i| {
            let rng = &mut root.derive("graph", i as u64);
            let n = rng.range_inclusive(spec.nodes_min, spec.nodes_max);
            let types: Vec<usize> = (0..n).map(|_| rng.below(spec.node_types)).collect();
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.bernoulli(spec.edge_prob) {
                        edges.push((a, b));
                    }
                }
            }
            repair_connectivity(n, &mut edges, rng);
            let y = regression_target(n, &types, &edges, &pairs) + spec.noise_sd * rng.normal();
            GraphRecord {
                n,
                edges: edges.into_iter().map(|(a, b)| [a, b]).collect(),
                x: types.iter().map(|&t| one_hot_row(spec.node_types, t)).collect(),
                y: Target::Value(y),
            }
        })
        .collect();
    let pair_list: Vec<[usize; 2]> = pairs.iter().map(|&(a, b)| [a, b]).collect();
    Ok(DatasetFile {
        task: Task::GraphRegress,
        feature_dim: spec.node_types,
        graphs,
        splits: splits_for(&spec.split, spec.num_graphs, &root),
        metadata: Some(serde_json::json!({
            "generator": "regression",
            "spec": spec,
            "reactive_pairs": pair_list,
        })),
    })
}

/// Reactive pairs stored in a regression dataset's metadata.
pub fn metadata_pairs(d: &DatasetFile) -> Option<Vec<(usize, usize)>> {
    let list = d.metadata.as_ref()?.get("reactive_pairs")?;
    let pairs: Vec<[usize; 2]> = serde_json::from_value(list.clone()).ok()?;
    Some(pairs.into_iter().map(|p| (p[0], p[1])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_reactive_edge() {
        let mut types = vec![2; 10];
        types[0] = 0;
        types[1] = 1;
        let y = regression_target(10, &types, &[(0, 1), (2, 3)], &[(0, 1)]);
        assert_eq!(y, 0.1);
    }

    #[test]
    fn pair_order_does_not_matter() {
        let y = regression_target(2, &[1, 0], &[(0, 1)], &[(0, 1)]);
        assert_eq!(y, 0.5);
    }

    #[test]
    fn rejects_one_type() {
        let spec = RegressionSpec { node_types: 1, ..RegressionSpec::default() };
        assert!(spec.validate().is_err());
    }
}
