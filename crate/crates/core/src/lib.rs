//! Conditional GAN that maps dermoscopic lesion photos to six binary
//! attribute masks.
//!
//! The crate is self-contained: a reverse-mode autodiff engine
//! ([`graph`], [`tensor`]), a U-Net generator and PatchGAN discriminator
//! ([`nn`]), losses and the training loop ([`objectives`]), mask I/O
//! ([`codec`]) and Jaccard scoring ([`evaluation`]).

pub mod codec;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod tensor;

pub use codec::{Attribute, Bitmap, MaskSet, ModelSample, SamplePair};
pub use error::{Error, Result};
pub use evaluation::{evaluate, jaccard, EmptyPolicy, EvalOptions, MetricsReport};
pub use graph::{Activation, Graph, NodeId};
pub use nn::{Discriminator, Generator, NetConfig, ParamStore};
pub use objectives::{TrainConfig, Trainer};
pub use rng::RngState;
pub use tensor::{Scalar, Tensor};
