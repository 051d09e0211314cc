//! Two-phase training of small neural networks: gradient pre-training, then
//! meta-heuristic (GA or PSO) fine-tuning of a chosen layer's weights inside a
//! box `[theta - delta, theta + delta]` around the pre-trained values.

pub mod cli;
pub mod data;
pub mod error;
pub mod finetune;
pub mod metrics;
pub mod model;
pub mod optim;

pub use error::{Error, Result};
