//! Quantized layers mapped onto simulated macros, and desk-scale inference.

pub mod digits;
pub mod gru;
pub mod mapping;
pub mod network;
pub mod tensor;

pub use gru::{gru_reference, run_gru, synthetic_sequences, GruNetwork};
pub use mapping::{map_conv, map_dense, map_gru, LayerKind, LayerMapping, Placement, RowAssignment};
pub use network::{integer_reference, run_network, ClipStats, InferenceReport, Layer, ModelFile, Network};
pub use tensor::Tensor;
