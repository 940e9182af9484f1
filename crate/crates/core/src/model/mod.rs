//! The federated model: parameter containers, prompts, features, the
//! reference prompt-conditioned model and its optimizer.

mod adamw;
mod features;
mod params;
mod prompts;
mod reference;
mod train;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use features::{extract_features, BaseFeatures, FeatureStack, IMAGE_FEATURES, NUM_FEATURES};
pub use params::{load_checkpoint, save_checkpoint, Manifest, ModelParams, NamedTensor, TensorSpec};
pub use prompts::{generate_point_prompts, PointPrompt};
pub use reference::{gradient, reference_params, ReferenceModel, SegmentationModel, TrainExample};
pub use train::{
    evaluate, evaluate_prepared, prepare_dataset, sample_seed, train_local, train_prepared, PreparedSample,
    TrainConfig,
};
