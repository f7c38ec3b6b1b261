//! Allocation-only core of shiftforge.
//!
//! Everything in this crate is a pure function over in-memory data: manifest
//! validation, group-shift split construction, the soft nearest neighbor
//! regularizer and its gradients, classification metrics, confident-learning
//! review queues, a small residual CNN engine with manual backpropagation,
//! Grad-CAM and t-SNE. File formats, HTTP and the command line live in the
//! `shiftforge` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod augment;
pub mod gradcam;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod patch;
pub mod pixels;
pub mod record;
pub mod review;
pub mod split;
pub mod summary;
pub mod synth;
pub mod train;
pub mod tsne;

mod fingerprint;
mod rng;

pub use fingerprint::fingerprint;
pub use record::{Category, Label, Manifest, ManifestError, SampleRecord, Side, Transmission};
pub use split::{build_split, verify_split, SplitKind, SplitPlan, SplitStrategy};
