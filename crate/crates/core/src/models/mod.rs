//! Lone-pair model, multitask model and the prediction pipeline.

mod features;
mod layers;
mod lone_pair;
mod multitask;
mod targets;
mod train;

pub use features::{
    graph_key, Batch, Candidate, GraphInputs, MolInputs, ATOM_FEATURES, BOND_EDGE_FEATURES, CANDIDATE_DISTANCE, CANDIDATE_GRAPH_DISTANCE, EDGE_FEATURES,
    GRAPH_DISTANCE_CAP, NODE_FEATURES, PAIR_FEATURES,
};
pub use layers::{apply_bn_stats, BatchNorm, Ctx, GatLayer, Head, Linear, Mlp};
pub use lone_pair::{train_lone_pair, Aggregator, ClampWarning, LonePairModel, LonePairModelConfig, LpLogits, MolBatch, TrainConfig};
pub use multitask::{ForwardTrace, MultitaskModel, MultitaskModelConfig, PredictionBundle, Scaler, NODE_HEAD_OUT};
pub use targets::BatchTargets;
pub use train::{
    export_trajectory, predict_graphs, predict_simg, step_seed, train_multitask, GraphPrediction, LossRecord, MultitaskTrainConfig,
};

use crate::graph::GraphError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
