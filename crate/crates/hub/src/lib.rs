//! Command line and HTTP front ends for graphmimic.

pub mod cli;
pub mod config;
pub mod error;
pub mod service;
pub mod world;
