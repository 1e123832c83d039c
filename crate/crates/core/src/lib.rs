//! Planar object tracking: per-frame homography, visibility mask and
//! tracking confidence from correlation cost volumes, inside a
//! coarse-to-fine Lucas-Kanade style loop. Includes a synthetic data
//! generator, training for the learned parts and an evaluation harness.

pub mod error;
pub mod geometry;
pub mod imaging;
pub mod features;
pub mod correlation;
pub mod estimation;
pub mod tracking;
pub mod synthbench;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
