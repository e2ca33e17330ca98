//! Command-line front end and HTTP service for the micromano simulator.

pub mod api;
pub mod commands;
pub mod engine;
