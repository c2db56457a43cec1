//! Network assembly, presets and the checkpoint file.

pub mod checkpoint;
pub mod config;
pub mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{Modality, ModelConfig};
pub use network::{argmax, Cost, Dcmnet, Pass, Prediction};
