//! Facial landmark regression with per-landmark self-assessed validity.
//!
//! The pieces: a validation-aware loss, a loss-proportional batch balancer,
//! image augmentation, a small residual CNN with its trainer, evaluation
//! metrics, rigid head-pose recovery and a synthetic data generator.

pub mod augment;
pub mod balance;
pub mod cli;
pub mod config;
pub mod eval;
pub mod error;
pub mod io;
pub mod landmarks;
pub mod loss;
pub mod net;
pub mod pose;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{Dataset, FaceBox, GrayImage, LandmarkSet, Point2, Sample, Subset, Triplet, TripletVector};
