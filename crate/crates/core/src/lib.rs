//! Partial domain adaptation: soft-weighted MMD feature alignment,
//! pseudo-label driven target-specific classifiers and peer consistency
//! between classifier heads, on a small reverse-mode tensor library.

pub mod data;
pub mod discrepancy;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod pseudo_label;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
