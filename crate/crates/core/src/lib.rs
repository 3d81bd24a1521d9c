//! Child engagement estimation from multi-view pose streams.
//!
//! The pipeline fuses per-camera 3D keypoints into one room-aligned pose
//! track ([`fusion`]), turns it into robot-relative segment features
//! ([`features`]), assembles labelled sequences ([`dataset`]), trains a
//! FC/LSTM classifier with a class-weighted loss ([`model`]) and scores it
//! with leave-one-session-out cross-validation ([`eval`]). [`synthgen`]
//! produces seeded synthetic sessions in the same file formats.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod skeleton;
pub mod synthgen;

pub use error::{Error, Result};
