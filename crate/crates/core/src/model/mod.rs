//! Tapped convolutional encoder, projection heads and the fine-tune
//! classifier.

mod checkpoint;
mod config;
mod encoder;
mod heads;
mod net;

pub use checkpoint::{Checkpoint, RngState, FORMAT_VERSION, MAGIC};
pub use config::{EncoderConfig, ShapeTrace, StageKind};
pub use encoder::{Encoder, ForwardTaps};
pub use heads::{IntermediateHead, ProjectionHead};
pub use net::{build_finetune_model, encoder_param_count, Classifier, PretrainNet, Projections};
