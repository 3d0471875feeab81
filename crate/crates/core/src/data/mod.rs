//! Synthetic datasets and their JSON file format.

mod format;
mod regression;
mod sbm;

use serde::{Deserialize, Serialize};

pub use format::{
    load_dataset, parse_dataset, save_dataset, to_canonical_json, DatasetFile, GraphRecord, SplitFractions, Splits,
    Target,
};
pub use regression::{
    gen_regression_task, metadata_pairs, reactive_pairs, regression_target, types_from_features, RegressionSpec,
};
pub use sbm::{
    assign_communities, degree_bucket, gen_sbm_graph_task, gen_sbm_node_graph, gen_sbm_node_task,
    repair_connectivity, sample_block_edges, Regime, SbmGraphSpec, SbmSpec,
};

use crate::error::Result;

/// Any generator, tagged by `"kind"` in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    SbmNode(SbmSpec),
    SbmGraph(SbmGraphSpec),
    Regression(RegressionSpec),
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<DatasetFile> {
        match self {
            GeneratorSpec::SbmNode(s) => gen_sbm_node_task(s),
            GeneratorSpec::SbmGraph(s) => gen_sbm_graph_task(s),
            GeneratorSpec::Regression(s) => gen_regression_task(s),
        }
    }
}
