//! Parametric robust structured H-infinity synthesis by dynamic inner
//! approximation of the uncertainty box.

pub mod algorithm;
pub mod analysis;
pub mod error;
pub mod fixtures;
pub mod float;
pub mod lft;
pub mod linalg;
pub mod minmin;
pub mod problem;
pub mod report;
pub mod synthesis;
pub mod worstcase;

pub use error::{Error, Result};
