//! Iterative recursive attention for sequence classification.
//!
//! A small reverse-mode autodiff core ([`tensor`]) supports the layers in
//! [`nn`], the token [`encoder`], the iterative [`attention`] mechanism with
//! its overlap penalty, and the full [`model`]. [`optim`] and [`train`] hold
//! the training recipe; [`data`] the dataset loaders.
//!
//! Batch work runs one tape per example. With the default `parallel` feature
//! those tapes run on the rayon pool; see [`par::Execution`].

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod optim;
pub mod par;
pub mod params;
pub mod run;
pub mod tensor;
pub mod trace;
pub mod train;

pub use attention::{attention_penalty, AttentionTrace, IramConfig};
pub use config::{EncoderKind, ModelConfig};
pub use error::{IramError, Result};
pub use model::{ForwardResult, Model};
pub use optim::{OptimConfig, OptimState};
pub use par::Execution;
pub use params::Params;
pub use tensor::{Tape, Tensor, Var};
