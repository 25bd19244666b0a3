//! Hierarchical multitask co-pretraining for person-job text, desk scale.
//!
//! The pipeline: a synthetic semi-structured corpus of user profiles and
//! job postings ([`corpus`]), a small autodiff tensor engine ([`tensor`]),
//! a tiny transformer sentence encoder ([`encoder`]), attention-fusion
//! layers that lift sentence → section → individual → interaction
//! embeddings ([`hierarchy`]), four pretraining task heads ([`heads`]),
//! a deterministic Adam trainer ([`trainer`]) and ranking evaluation plus
//! the ablation runner ([`eval`]).
//!
//! The numeric core is generic over the scalar type; the aliases below pin
//! the `f64` instantiation used by the training and evaluation pipeline.

pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod heads;
pub mod model;
pub mod trainer;
pub mod hierarchy;

pub mod rng;
pub mod scalar;
pub mod tensor;

pub use scalar::Scalar;

/// Dense `f64` tensor with gradient support.
pub type Tensor = tensor::Tensor<f64>;
/// Named trainable `f64` tensor.
pub type Parameter = tensor::Parameter<f64>;
/// Sentence encoder at `f64`.
pub type Encoder = encoder::Encoder<f64>;
/// Full model (encoder + fusion + cross-attention + heads) at `f64`.
pub type Model = model::Model<f64>;
/// Adam optimizer state at `f64`.
pub type AdamState = trainer::AdamState<f64>;
