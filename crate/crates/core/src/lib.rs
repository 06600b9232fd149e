pub mod config;
pub mod memsys;
pub mod model_alloc;
pub mod taskgraph;
pub mod mapper;
pub mod engine;
pub mod analytics;
pub mod cli;
