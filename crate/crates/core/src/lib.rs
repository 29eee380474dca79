//! Core algorithms for volumetric CNN experiments.
//!
//! Everything in this crate is a pure function of its inputs (plus explicit
//! seeded generators) and only needs `alloc`. File formats, the experiment
//! harness and the command-line front end live in the `volcnn` crate.
//!
//! Module map:
//!
//! - [`volume`]: 3D scalar fields, trilinear resampling, resizing, intensity
//!   normalization.
//! - [`augment`]: seeded zoom/shift/rotation augmentation and the A/B/C
//!   dataset-expansion strategies.
//! - [`nn`]: 3D convolution, batch norm, pooling, dense, dropout and loss
//!   layers with exact gradients, plus the five-depth architecture family.
//! - [`train`]: Adam, cross-entropy + l2 objective, early stopping.
//! - [`dataset`]: stratified K-fold plans and a synthetic volume generator.
//! - [`metrics`]: confusion matrices, ROC/PR areas, aggregation and exact t-SNE.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

mod error;
mod math;

pub mod augment;
pub mod dataset;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use rng::SeededRng;

/// Binary diagnostic label. AD is the positive class throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Label {
    /// Cognitively normal control.
    #[serde(rename = "CN")]
    Cn = 0,
    /// Alzheimer's disease.
    #[serde(rename = "AD")]
    Ad = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Cn),
            1 => Some(Label::Ad),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Cn => "CN",
            Label::Ad => "AD",
        }
    }
}
