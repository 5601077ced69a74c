//! Degree-based mean-field SIR epidemics on heterogeneous networks with
//! degree-class grouping and optimal vaccination/treatment control.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod grouping;
pub mod network;
pub mod optimizer;

pub use error::{Error, Result};
