//! Graph-convolutional motion generation from whole-hand tactile sensing.
//!
//! - [`tensor`], [`autograd`], [`optim`], [`pca`]: numeric substrate
//! - [`topology`]: sensor graph and propagation operator
//! - [`model`], [`checkpoint`]: GCN / MLP motion generators
//! - [`dataset`]: trajectory ingestion and preprocessing
//! - [`plant`]: synthetic grasp generator and toy plant
//! - [`trainer`], [`rollout`], [`analysis`]: training, closed loop, PCA

pub mod analysis;
pub mod autograd;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod model;
pub mod optim;
pub mod pca;
pub mod plant;
pub mod rollout;
pub mod tensor;
pub mod topology;
pub mod trainer;

pub use autograd::{Parameter, Tape, Var};
pub use error::{Error, Result};
pub use optim::{adam_step, AdamConfig};
pub use pca::{pca, Pca};
pub use tensor::Tensor;
pub use topology::{
    build_default_hand, build_toy_hand, load_topology, normalize_adjacency, Finger, HandLayout,
    HandTopology, PropagationMatrix, Segment, SensorNode,
};
pub use analysis::{
    compare_force_traces, extract_node_features, pca_node_map, ClusterReport, ForceComparison,
    NodeFeatureStack,
};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint};
pub use dataset::{
    downsample, encode_labels, preprocess, smooth, trim_static, Dataset, Pairs, PreprocessConfig,
    TrajectoryRecord, Trial,
};
pub use model::{build_model, build_model_scaled, ModelName, ModelParams, ModelSpec, Network, Scale};
pub use plant::{
    generate_dataset, generate_trial, DisturbanceKind, GeneratorConfig, Plant, PlantConfig,
    PlantState, SyntheticObject,
};
pub use rollout::{rollout, total_grip_force, Disturbance, RolloutConfig, RolloutTrace, Verdict};
pub use trainer::{evaluate, train, TrainConfig, TrainReport, Trainer};
