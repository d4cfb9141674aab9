#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity)]

pub mod error;
pub mod tensor;
pub mod network;
pub mod interpret;
pub mod data;
pub mod discrepancy;
pub mod attack;
pub mod train;
pub mod eval;

pub use error::{Error, Result};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph32 = tensor::Graph<f32>;
pub type Network32 = network::Network<f32>;
pub type Dataset32 = data::Dataset<f32>;
