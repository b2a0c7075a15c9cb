pub mod client;
pub mod experiment;
pub mod fixtures;
pub mod fusion;
pub mod manifest;
pub mod mesh;
pub mod mock;
pub mod prompt;
pub mod report;
pub mod scoring;
pub mod seed;
pub mod stats;
