//! Trainable TGN and TGNv2: reverse-mode tape, layers, Adam, training loop,
//! gradient checks and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;
pub mod tape;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use layers::{attention_embed, gru_cell, gru_update, mlp_decode, AttentionParams, Dropout, GruParams, MlpParams};
pub use model::{LearnableModel, ModelConfig, NodeEncoderMode};
pub use params::{Adam, ParamId, ParamStore, Tensor};
pub use tape::{Tape, Var};
pub use train::{first_window_losses, train, write_trace_csv, TraceRow, TrainConfig, TrainOutcome};
