//! Stochastic block model generators for node and graph classification.

use serde::{Deserialize, Serialize};

use super::format::{DatasetFile, GraphRecord, SplitFractions, Target};
use crate::error::{Error, Result};
use crate::graphnet::{components, Task};
use crate::rng::RngStream;

/// Community-detection dataset: node labels are community ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmSpec {
    pub num_graphs: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub communities: usize,
    pub p_intra: f64,
    pub q_inter: f64,
    /// Fraction of nodes whose features reveal their community.
    pub labeled_fraction: f64,
    pub seed: u64,
    pub split: SplitFractions,
}

impl Default for SbmSpec {
    fn default() -> Self {
        SbmSpec {
            num_graphs: 400,
            nodes_min: 40,
            nodes_max: 60,
            communities: 6,
            p_intra: 0.5,
            q_inter: 0.05,
            labeled_fraction: 0.2,
            seed: 0,
            split: SplitFractions::default(),
        }
    }
}

fn check_probs(p_intra: f64, q_inter: f64) -> Result<()> {
    if !(0.0 <= q_inter && q_inter < p_intra && p_intra <= 1.0) {
        return Err(Error::Config(format!(
            "need 0 <= q_inter < p_intra <= 1, got p_intra = {p_intra}, q_inter = {q_inter}"
        )));
    }
    Ok(())
}

fn check_sizes(num_graphs: usize, nodes_min: usize, nodes_max: usize, communities: usize) -> Result<()> {
    if communities < 2 {
        return Err(Error::Config(format!("need at least 2 communities, got {communities}")));
    }
    if num_graphs == 0 {
        return Err(Error::Config("num_graphs must be positive".into()));
    }
    if nodes_min < communities || nodes_min > nodes_max {
        return Err(Error::Config(format!(
            "need communities <= nodes_min <= nodes_max, got {communities}, {nodes_min}, {nodes_max}"
        )));
    }
    Ok(())
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        check_sizes(self.num_graphs, self.nodes_min, self.nodes_max, self.communities)?;
        check_probs(self.p_intra, self.q_inter)?;
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(Error::Config(format!(
                "labeled_fraction must lie in [0, 1], got {}",
                self.labeled_fraction
            )));
        }
        self.split.validate()
    }
}

/// Near-equal community sizes (differing by at most one), randomly placed.
pub fn assign_communities(n: usize, k: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    rng.shuffle(&mut labels);
    labels
}

/// Samples each unordered pair once with probability `p_intra` inside a
/// community and `q_inter` across.
pub fn sample_block_edges(labels: &[usize], p_intra: f64, q_inter: f64, rng: &mut RngStream) -> Vec<(usize, usize)> {
    let n = labels.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_intra } else { q_inter };
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Joins connected components with one bridge each, between uniformly chosen
/// members of consecutive components. Returns the number of bridges added.
pub fn repair_connectivity(n: usize, edges: &mut Vec<(usize, usize)>, rng: &mut RngStream) -> usize {
    let comps = components(n, edges);
    for w in comps.windows(2) {
        let a = w[0][rng.below(w[0].len())];
        let b = w[1][rng.below(w[1].len())];
        edges.push((a.min(b), a.max(b)));
    }
    comps.len().saturating_sub(1)
}

fn one_hot(width: usize, hot: Option<usize>) -> Vec<f64> {
    let mut v = vec![0.0; width];
    if let Some(h) = hot {
        v[h] = 1.0;
    }
    v
}

fn shuffled_splits(split: &SplitFractions, n: usize, root: &RngStream) -> super::format::Splits {
    let mut order: Vec<usize> = (0..n).collect();
    root.derive("split", 0).shuffle(&mut order);
    split.assign(&order)
}

pub fn gen_sbm_node_graph(spec: &SbmSpec, rng: &mut RngStream) -> GraphRecord {
    let n = rng.range_inclusive(spec.nodes_min, spec.nodes_max);
    let labels = assign_communities(n, spec.communities, rng);
    let mut edges = sample_block_edges(&labels, spec.p_intra, spec.q_inter, rng);
    repair_connectivity(n, &mut edges, rng);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let n_labeled = (spec.labeled_fraction * n as f64).round() as usize;
    let mut revealed = vec![false; n];
    for &i in &order[..n_labeled] {
        revealed[i] = true;
    }
    let x = (0..n)
        .map(|i| one_hot(spec.communities, revealed[i].then_some(labels[i])))
        .collect();
    GraphRecord {
        n,
        edges: edges.into_iter().map(|(a, b)| [a, b]).collect(),
        x,
        y: Target::Nodes(labels),
    }
}

/// Generates the node-classification dataset. Graph `i` depends only on the
/// seed and `i`.
pub fn gen_sbm_node_task(spec: &SbmSpec) -> Result<DatasetFile> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);
    let graphs = (0..spec.num_graphs)
        .map(|i| gen_sbm_node_graph(spec, &mut root.derive("graph", i as u64)))
        .collect();
    Ok(DatasetFile {
        task: Task::NodeClass,
        feature_dim: spec.communities,
        graphs,
        splits: shuffled_splits(&spec.split, spec.num_graphs, &root),
        metadata: Some(serde_json::json!({ "generator": "sbm_node", "spec": spec })),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub p_intra: f64,
    pub q_inter: f64,
}

/// Graph classification: the label says which of two block-model regimes
/// produced the graph. Features are one-hot bucketized degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmGraphSpec {
    pub num_graphs: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub communities: usize,
    pub regime_a: Regime,
    pub regime_b: Regime,
    pub degree_buckets: usize,
    pub bucket_width: usize,
    pub seed: u64,
    pub split: SplitFractions,
}

impl Default for SbmGraphSpec {
    fn default() -> Self {
        SbmGraphSpec {
            num_graphs: 400,
            nodes_min: 40,
            nodes_max: 60,
            communities: 6,
            regime_a: Regime { p_intra: 0.5, q_inter: 0.05 },
            regime_b: Regime { p_intra: 0.3, q_inter: 0.08 },
            degree_buckets: 16,
            bucket_width: 2,
            seed: 0,
            split: SplitFractions::default(),
        }
    }
}

impl SbmGraphSpec {
    pub fn validate(&self) -> Result<()> {
        check_sizes(self.num_graphs, self.nodes_min, self.nodes_max, self.communities)?;
        check_probs(self.regime_a.p_intra, self.regime_a.q_inter)?;
        check_probs(self.regime_b.p_intra, self.regime_b.q_inter)?;
        if self.degree_buckets == 0 || self.bucket_width == 0 {
            return Err(Error::Config("degree_buckets and bucket_width must be positive".into()));
        }
        self.split.validate()
    }
}

/// Bucket of a degree: `min(deg / width, buckets - 1)`.
pub fn degree_bucket(degree: usize, width: usize, buckets: usize) -> usize {
    (degree / width).min(buckets - 1)
}

/// Even-indexed graphs come from regime A (label 0), odd from regime B.
pub fn gen_sbm_graph_task(spec: &SbmGraphSpec) -> Result<DatasetFile> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);
    let graphs = (0..spec.num_graphs)
        .map(|i| {
            let rng = &mut root.derive("graph", i as u64);
            let label = i % 2;
            let regime = if label == 0 { spec.regime_a } else { spec.regime_b };
            let n = rng.range_inclusive(spec.nodes_min, spec.nodes_max);
            let blocks = assign_communities(n, spec.communities, rng);
            let mut edges = sample_block_edges(&blocks, regime.p_intra, regime.q_inter, rng);
            repair_connectivity(n, &mut edges, rng);
            let mut deg = vec![0usize; n];
            for &(a, b) in &edges {
                deg[a] += 1;
                deg[b] += 1;
            }
            let x = deg
                .iter()
                .map(|&d| one_hot(spec.degree_buckets, Some(degree_bucket(d, spec.bucket_width, spec.degree_buckets))))
                .collect();
            GraphRecord {
                n,
                edges: edges.into_iter().map(|(a, b)| [a, b]).collect(),
                x,
                y: Target::Class(label),
            }
        })
        .collect();
    Ok(DatasetFile {
        task: Task::GraphClass,
        feature_dim: spec.degree_buckets,
        graphs,
        splits: shuffled_splits(&spec.split, spec.num_graphs, &root),
        metadata: Some(serde_json::json!({ "generator": "sbm_graph", "spec": spec })),
    })
}

pub(crate) fn splits_for(split: &SplitFractions, n: usize, root: &RngStream) -> super::format::Splits {
    shuffled_splits(split, n, root)
}

pub(crate) fn one_hot_row(width: usize, hot: usize) -> Vec<f64> {
    one_hot(width, Some(hot))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn community_sizes_differ_by_at_most_one() {
        let mut rng = RngStream::new(1);
        let labels = assign_communities(53, 6, &mut rng);
        let mut counts = [0usize; 6];
        for l in labels {
            counts[l] += 1;
        }
        assert_eq!(counts.iter().max().unwrap() - counts.iter().min().unwrap(), 1);
    }

    #[test]
    fn rejects_bad_probabilities() {
        let spec = SbmSpec { p_intra: 0.1, q_inter: 0.2, ..SbmSpec::default() };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let spec = SbmSpec { communities: 1, ..SbmSpec::default() };
        assert!(spec.validate().is_err());
        let spec = SbmSpec { labeled_fraction: 1.5, ..SbmSpec::default() };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn degree_buckets_saturate() {
        assert_eq!(degree_bucket(0, 2, 4), 0);
        assert_eq!(degree_bucket(5, 2, 4), 2);
        assert_eq!(degree_bucket(50, 2, 4), 3);
    }
}
