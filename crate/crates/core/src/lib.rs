//! Fact checking of structured radiology findings against anatomical locations.
//!
//! The crate parses findings out of report text ([`lexicon`]), grounds them in
//! per-image region boxes ([`atlas`]), synthesizes real/fake training pairs
//! ([`synth`]), trains a small contrastive/regression verifier on top of a
//! hand-written numerical core ([`nn`], [`model`]), and scores and corrects
//! reports ([`pipeline`], [`eval`]).

pub mod atlas;
pub mod bbox;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod lexicon;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod toy;

pub use bbox::BBox;
pub use error::{Error, Result};
pub use lexicon::{FflPattern, Lexicon, Polarity};
