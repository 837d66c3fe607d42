//! Network building blocks and the decision network.

pub mod checkpoint;
mod decision;
mod layers;

pub use decision::{DecisionNet, Embeddings, StateOutputs, Vocab};
pub use layers::{encode, fuse, info_nce, info_nce_from_similarity, Attention, EncoderBlock, LayerNorm, Linear};
