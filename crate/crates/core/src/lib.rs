//! Semi-supervised knowledge distillation for short-text classification.
//!
//! A large hashed-feature teacher is trained on a small labeled set, labels an
//! unlabeled pool, and a compact student is distilled from the confident part
//! of that pool.

pub mod corpus;
pub mod distill;
pub mod error;
pub mod eval;
pub mod features;
pub mod losses;
pub mod model;
pub mod train;

pub use error::{Error, Result};
