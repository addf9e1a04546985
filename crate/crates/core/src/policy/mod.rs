//! Vote-decision policies and the look-ahead-free context they decide from.

mod baseline;
mod context;
pub mod llm;
pub mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Proposal, Timestamp};

pub use crate::market::market_window_for;
pub use baseline::{seeded_index, Baseline, BaselinePolicy};
pub use context::{
    build_decision_context, jaccard, word_set, ContextOptions, DecisionContext, SimilarProposal,
    VisibleForum,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("proposal {0} not found")]
    NotFound(String),
    #[error("policy {policy} does not apply to proposal {proposal_id}: {reason}")]
    PolicyInapplicable {
        policy: String,
        proposal_id: String,
        reason: String,
    },
    #[error("policy {policy} failed on proposal {proposal_id}: {reason}")]
    PolicyFailure {
        policy: String,
        proposal_id: String,
        reason: String,
    },
    #[error("decision source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffMode {
    /// Decide at the opening of the vote.
    ExAnte,
    /// Decide at the close of the vote.
    ExPost,
}

impl CutoffMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CutoffMode::ExAnte => "ex_ante",
            CutoffMode::ExPost => "ex_post",
        }
    }

    pub fn timestamp_for(self, proposal: &Proposal) -> Timestamp {
        match self {
            CutoffMode::ExAnte => proposal.start,
            CutoffMode::ExPost => proposal.end,
        }
    }
}

impl std::str::FromStr for CutoffMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ex_ante" => Ok(CutoffMode::ExAnte),
            "ex_post" => Ok(CutoffMode::ExPost),
            other => Err(format!(
                "unknown cutoff {other:?}; expected ex-ante or ex-post"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoff {
    pub mode: CutoffMode,
    pub timestamp: Timestamp,
}

impl Cutoff {
    pub fn for_proposal(mode: CutoffMode, proposal: &Proposal) -> Self {
        Cutoff {
            mode,
            timestamp: mode.timestamp_for(proposal),
        }
    }
}

/// A policy's chosen option for one proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub proposal_id: String,
    pub policy_id: String,
    /// One-based index into the proposal's choices.
    pub selected_option: usize,
    pub selected_label: String,
    pub justification: String,
    pub cutoff: Cutoff,
    /// The policy had no evidence and fell back to a default option.
    #[serde(default)]
    pub fallback: bool,
}

impl PolicyDecision {
    pub fn index(&self) -> usize {
        self.selected_option - 1
    }

    pub fn new(
        ctx: &DecisionContext,
        policy_id: &str,
        index: usize,
        justification: String,
        fallback: bool,
    ) -> Self {
        PolicyDecision {
            proposal_id: ctx.proposal.proposal_id.clone(),
            policy_id: policy_id.to_string(),
            selected_option: index + 1,
            selected_label: ctx.proposal.choices[index].clone(),
            justification,
            cutoff: ctx.cutoff,
            fallback,
        }
    }
}

pub trait Policy: Send + Sync {
    fn id(&self) -> String;
    fn decide(&self, ctx: &DecisionContext) -> Result<PolicyDecision, PolicyError>;
}
