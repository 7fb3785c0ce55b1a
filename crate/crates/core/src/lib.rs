//! Mode connectivity for bias-free ReLU networks: dropout stability,
//! noise stability, explicit low-loss paths between solutions, and the
//! tooling to train and probe small networks.

pub mod counterexample;
pub mod data;
pub mod dropout;
pub mod error;
pub mod linalg;
pub mod net;
pub mod paths;
pub mod stability;
pub mod train;

pub use error::{Error, Result};
