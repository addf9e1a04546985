//! Seeded synthetic governance datasets, their ground truth, and brute-force
//! reference implementations of every metric for equivalence tests.

pub mod compare;
mod generate;
pub mod harness;
pub mod oracle;
mod sampler;
mod spec;

pub use generate::{
    generate_dataset, GroundTruth, ProposalTruth, SpikeTruth, Synthetic, CLEAR_TARGET,
    CONTESTED_TARGET,
};
pub use sampler::Sampler;
pub use spec::{ArrivalPattern, BallotMix, ScenarioSpec, SpecError, VpDistribution};
