use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Cutoff, CutoffMode, PolicyError};
use crate::dataset::Dataset;
use crate::dynamics::{build_participation_series, compute_features, DynamicsFeatures};
use crate::market::{market_window_for, MarketWindow};
use crate::model::{
    argmax_lowest, tally_outcome, CommentCounts, ForumSignal, Proposal, ProposalOutcome, Timestamp,
    VoteRecord, SECONDS_PER_DAY,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextOptions {
    pub similar_k: usize,
    pub window_days: u32,
}

impl Default for ContextOptions {
    fn default() -> Self {
        ContextOptions {
            similar_k: 5,
            window_days: crate::market::DEFAULT_WINDOW_DAYS,
        }
    }
}

/// The part of a forum thread observable at the cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleForum {
    pub url: String,
    pub counts: CommentCounts,
    /// Thread-level scores survive only when the whole thread is visible;
    /// otherwise sentiment is recomputed from visible comment polarities.
    pub sentiment: Option<f64>,
    pub stance_score: Option<f64>,
    pub comment_timestamps: Vec<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarProposal {
    pub proposal: Proposal,
    pub similarity: f64,
    pub outcome: Option<ProposalOutcome>,
    /// Present only when the whole window had elapsed by the cutoff.
    pub market: Option<MarketWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionContext {
    pub proposal: Proposal,
    pub cutoff: Cutoff,
    pub votes_visible: Vec<VoteRecord>,
    pub forum_visible: Vec<VisibleForum>,
    pub dynamics_visible: Option<DynamicsFeatures>,
    pub similar_proposals: Vec<SimilarProposal>,
}

impl DecisionContext {
    pub fn market_history(&self) -> impl Iterator<Item = &MarketWindow> {
        self.similar_proposals
            .iter()
            .filter_map(|s| s.market.as_ref())
    }

    /// Latest timestamp carried by any visible record. A market window counts
    /// from the end of its last day; a similar proposal from its close.
    pub fn max_visible_timestamp(&self) -> Option<Timestamp> {
        let votes = self.votes_visible.iter().map(|v| v.timestamp);
        let forum = self
            .forum_visible
            .iter()
            .flat_map(|f| f.comment_timestamps.iter().copied());
        let similar = self.similar_proposals.iter().flat_map(|s| {
            let market = s.market.as_ref().map(market_known_at);
            std::iter::once(s.proposal.end).chain(market)
        });
        let dynamics = self.dynamics_visible.iter().filter_map(|d| d.meta.last_ts);
        votes.chain(forum).chain(similar).chain(dynamics).max()
    }
}

fn market_known_at(w: &MarketWindow) -> Timestamp {
    (w.last_day() + 1) * SECONDS_PER_DAY
}

/// Lowercased alphanumeric word set.
pub fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

fn proposal_words(p: &Proposal) -> BTreeSet<String> {
    let mut words = word_set(&p.title);
    if let Some(body) = &p.body {
        words.extend(word_set(body));
    }
    words
}

fn visible_forum(
    signal: &ForumSignal,
    cutoff: Timestamp,
    proposal_end: Timestamp,
) -> Option<VisibleForum> {
    if signal.comments.is_empty() {
        // Undated thread scores may summarize the whole discussion.
        return (cutoff >= proposal_end).then(|| VisibleForum {
            url: signal.url.clone(),
            counts: signal.comment_counts,
            sentiment: Some(signal.sentiment),
            stance_score: Some(signal.stance_score),
            comment_timestamps: Vec::new(),
        });
    }
    let visible: Vec<_> = signal
        .comments
        .iter()
        .filter(|c| c.timestamp <= cutoff)
        .collect();
    if visible.is_empty() {
        return None;
    }
    let mut counts = CommentCounts::default();
    for c in &visible {
        counts.add(c.polarity);
    }
    let whole = visible.len() == signal.comments.len();
    let recomputed = (counts.positive as f64 - counts.negative as f64) / counts.total() as f64;
    Some(VisibleForum {
        url: signal.url.clone(),
        counts,
        sentiment: Some(if whole { signal.sentiment } else { recomputed }),
        stance_score: whole.then_some(signal.stance_score),
        comment_timestamps: visible.iter().map(|c| c.timestamp).collect(),
    })
}

/// Assembles everything observable about `proposal_id` at the cutoff.
pub fn build_decision_context(
    dataset: &Dataset,
    proposal_id: &str,
    mode: CutoffMode,
    options: &ContextOptions,
) -> Result<DecisionContext, PolicyError> {
    let proposal = dataset
        .proposal(proposal_id)
        .ok_or_else(|| PolicyError::NotFound(proposal_id.to_string()))?;
    let cutoff = Cutoff::for_proposal(mode, proposal);
    let at = cutoff.timestamp;

    // Opening-time decisions see no ballots, even one cast in the first second.
    let visible = |ts: Timestamp| match mode {
        CutoffMode::ExAnte => ts < at,
        CutoffMode::ExPost => ts <= at,
    };
    let votes_visible: Vec<VoteRecord> = dataset
        .votes_for(proposal_id)
        .iter()
        .filter(|v| visible(v.timestamp))
        .cloned()
        .collect();
    let forum_visible = dataset
        .forum_for(proposal_id)
        .iter()
        .filter_map(|f| visible_forum(f, at, proposal.end))
        .collect();

    let dynamics_visible = if votes_visible.is_empty() {
        None
    } else {
        let series = build_participation_series(proposal, &votes_visible).ok();
        series.map(|s| {
            let leader = tally_outcome(proposal, &votes_visible)
                .ok()
                .map(|o| argmax_lowest(&o.per_option_vp).0);
            compute_features(&s, leader)
        })
    };

    let subject_words = proposal_words(proposal);
    let mut candidates: Vec<(f64, &Proposal)> = dataset
        .proposals_in(&proposal.space_id)
        .filter(|p| p.proposal_id != proposal.proposal_id && p.end <= at)
        .filter(|p| match &proposal.category {
            Some(c) => p.category.as_ref() == Some(c),
            None => true,
        })
        .map(|p| (jaccard(&subject_words, &proposal_words(p)), p))
        .collect();
    candidates.sort_by(|(sa, a), (sb, b)| {
        sb.total_cmp(sa)
            .then(b.end.cmp(&a.end))
            .then(a.proposal_id.cmp(&b.proposal_id))
    });
    let similar_proposals = candidates
        .into_iter()
        .take(options.similar_k)
        .map(|(similarity, p)| {
            let market = market_window_for(dataset, p, options.window_days);
            SimilarProposal {
                proposal: p.clone(),
                similarity,
                outcome: tally_outcome(p, dataset.votes_for(&p.proposal_id)).ok(),
                market: (market_known_at(&market) <= at).then_some(market),
            }
        })
        .collect();

    Ok(DecisionContext {
        proposal: proposal.clone(),
        cutoff,
        votes_visible,
        forum_visible,
        dynamics_visible,
        similar_proposals,
    })
}
