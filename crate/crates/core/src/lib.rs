//! Evaluation toolkit for governance vote decisions: vote tallies, voting
//! dynamics, market windows around proposal closes, decision policies and
//! alignment metrics against voter behavior.

pub mod dataset;
pub mod dynamics;
pub mod eval;
pub mod http;
pub mod ingest;
pub mod market;
pub mod model;
pub mod policy;
pub mod report;
pub mod store;

pub use dataset::Dataset;
