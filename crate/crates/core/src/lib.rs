//! Delegation between heterogeneous gridworld agents.
//!
//! A manager chooses, at each decision point, which pre-trained agent acts
//! next. Agents differ in step size (how many atomic moves one arrow makes),
//! actuation error level and per-delegation cost. The manager learns from
//! delegation outcomes only. An exact model of the manager's decision process
//! and a value-iteration solver serve as a reference for the learner.

pub mod actions;
pub mod agents;
pub mod checks;
pub mod config;
pub mod error;
pub mod error_model;
pub mod gridworld;
pub mod manager;
pub mod oracle;
pub mod reward;
pub mod stats;
pub mod sweep;

pub use error::{Error, Result};
