//! Deterministic 2D urban driving simulation.
//!
//! The crate is organised as a pipeline: a [`town`] map hosts a
//! [`sim`] world, [`affordance`] extracts a compact scalar description of
//! the scene around the ego vehicle, [`perception`] degrades it like a
//! trained detector would, [`control`] turns it into throttle/brake/steer,
//! and [`bench`] scores whole driving suites.

pub mod affordance;
pub mod bench;
pub mod config;
pub mod control;
pub mod geometry;
pub mod perception;
pub mod planner;
pub mod sim;
pub mod town;
