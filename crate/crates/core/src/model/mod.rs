//! The conditional neural process: encoder, mean aggregation, decoder heads,
//! the latent-variable extension and the per-class classifier.

pub mod checkpoint;
mod config;
pub(crate) mod network;
mod params;
mod predict;

pub use config::{Activation, Aggregator, ModelConfig, Variant};
pub use network::CallCounts;
pub use params::{layout, Bound, CnpParams, Layout, MlpLayout, ShapeTable};
pub use predict::{
    aggregate, classify, classify_logits, decode, encode_one, latent_posterior, latent_prior, predict,
    predict_gaussian, represent, sample_coherent, sample_coherent_from, AggregateState, ContextSet, GaussianPrediction,
    HeadOutput, LabelledSet, LatentGaussian, TargetSet,
};
