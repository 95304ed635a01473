//! Cat-and-mouse game between adversarial patches and an adversarially
//! trained toy person detector.
//!
//! The crate covers synthetic scene generation, a dual-head grid detector,
//! the patch application pipeline and objective, evaluation, the game loop
//! itself and its on-disk artifacts.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod game;
pub mod manifest;
pub mod patch;
pub mod regime;
pub mod report;
pub mod scene;
pub mod seed;
pub mod training;

pub use config::{GameConfig, Preset};
pub use error::{CoreError, Result};
pub use regime::Regime;
