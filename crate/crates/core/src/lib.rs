//! Desk-scale laboratory for vision-conditioned language modeling: a small
//! visual-prefix decoder with reverse-mode autodiff, attention-window penalty
//! decoding, hierarchical feedback training, and object-hallucination
//! evaluation harnesses over a synthetic biased corpus.

pub mod data;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod feedback;
pub mod judge;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
