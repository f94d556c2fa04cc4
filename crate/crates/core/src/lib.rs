//! Knowledge graph link prediction with combined relation-aware and common
//! dense encoders, trained 1:N with binary cross-entropy and evaluated under
//! the filtered ranking protocol.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod kg_data;
pub mod model;
pub mod ndmath;
pub mod optim;
pub mod prepared;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
