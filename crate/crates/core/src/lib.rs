#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod generator;
pub mod graph;
pub mod layers;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod reasoning;
pub mod search;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod videoqa;
pub mod vocab;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{Initializer, ParamId, ParamStore};
pub use tensor::{Shape, Tensor};
