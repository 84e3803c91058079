//! Orchestration for the `streamsift` binary: configuration, the pipeline
//! phases, index maintenance and the HTTP API.

pub mod app;
pub mod config;
pub mod error;
pub mod http;
pub mod indexer;
pub mod pipeline;
