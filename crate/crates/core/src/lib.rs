//! Aspect sentiment from document ratings.
//!
//! A small transformer encoder is trained to predict document star ratings
//! from an attention-pooled representation whose support is restricted to
//! noun (aspect) positions, with two auxiliary sentiment-word objectives. The
//! trained rating head then labels individual aspect spans without any
//! aspect-level supervision.

pub mod composition;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod masking;
pub mod model;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use composition::Pooling;
pub use corpus::{AspectQuery, Document, LabeledQuery, PolarityLabel, Rating, Vocabulary};
pub use encoder::{Encoder, EncoderConfig};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalResult};
pub use model::{Model, ModelInput, ObjectiveConfig, Prediction};
pub use params::Parameters;
pub use trainer::{train, TrainConfig, TrainState, Trainer};
