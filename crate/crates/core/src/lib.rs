//! CNN → GRU → BiLSTM → multi-head attention sarcasm classifier, built on
//! a small reverse-mode autodiff core.

pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
