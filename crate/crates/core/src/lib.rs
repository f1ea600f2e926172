//! Lost-sales inventory control with projected-inventory-level ordering.

pub mod backorder;
pub mod checks;
pub mod demand;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod projection;
pub mod policy;
pub mod scalar;
pub mod search;
pub mod sim;
pub mod stats;
pub mod system;
pub mod theory;

pub use error::{Error, Result};

pub type State = system::PipelineState<f64>;
pub type Costs = system::CostParams<f64>;
