//! Training-free architecture scoring from the spectrum of the empirical
//! Fisher information matrix at initialization, with rank-quality metrics,
//! rank aggregation and a constrained evolutionary search over tiny
//! cell-based networks.

pub mod error;
pub mod fim;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod net;
pub mod ranking;
pub mod search;
pub mod space;
pub mod statlab;
pub mod tensor;

pub use error::{Error, Result};
