//! Text classification with non-linear, non-consecutive n-gram feature maps.
//!
//! Each feature layer scores every n-gram of a sentence, including n-grams
//! that skip words, through a low-rank (Kruskal) tensor, and aggregates them
//! per position with an exponential length decay. The aggregation runs as a
//! linear-time dynamic program. Layers are stacked with ReLU activations,
//! averaged over positions, concatenated and classified with a softmax.
//!
//! Gradients are derived by hand ([`layer::backward`], [`Model::backward`])
//! and training uses AdaGrad with L2 regularization and inverted dropout.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod layer;
pub mod network;
pub mod optimizer;

pub use data::{Dataset, EmbeddingTable, EncodedExample, Example};
pub use error::{Error, Result};
pub use layer::{ForwardTrace, LayerGrads, LayerParams};
pub use network::{Gradients, Mode, Model, ModelConfig, ModelOutput, PositionScores};
pub use optimizer::{AdaGradState, EpochStats, Evaluation, TrainConfig, TrainOutcome};
