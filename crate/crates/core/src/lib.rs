//! Nested-Wasserstein sequence matching and self-imitation policy gradients.

pub mod cli;
pub mod embeddings;
pub mod metrics;
pub mod nested;
pub mod ot;
pub mod scalar;
pub mod seq_match;
pub mod sil;

pub type EmbeddingTable64 = embeddings::EmbeddingTable<f64>;
pub type EmbeddingTable32 = embeddings::EmbeddingTable<f32>;
pub type IpotConfig64 = ot::IpotConfig<f64>;
pub type IpotConfig32 = ot::IpotConfig<f32>;
pub type TransportPlan64 = ot::TransportPlan<f64>;
pub type TransportPlan32 = ot::TransportPlan<f32>;
pub type NestedResult64 = nested::NestedResult<f64>;
pub type NestedResult32 = nested::NestedResult<f32>;
