//! Operator surface for the re-creation pipeline: dataset generation, both
//! training stages, batch evaluation and the HTTP chat service.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod data;
pub mod responder;
pub mod service;

pub use config::RunConfig;
