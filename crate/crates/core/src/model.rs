//! Canonical governance records and the tally logic every other module builds on.
//!
//! Option indices are zero-based in memory. The only one-based indices are the
//! ones that cross a wire boundary: ballot choice expressions (Snapshot's
//! convention) and [`crate::policy::PolicyDecision::selected_option`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// UTC seconds since the Unix epoch.
pub type Timestamp = i64;

/// UTC days since the Unix epoch.
pub type Day = i64;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Tolerance on the unit-sum property of a normalized allocation.
pub const ALLOCATION_TOLERANCE: f64 = 1e-9;

/// Relative tolerance on weight conservation in a tally.
pub const CONSERVATION_TOLERANCE: f64 = 1e-6;

pub fn day_of(ts: Timestamp) -> Day {
    ts.div_euclid(SECONDS_PER_DAY)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid choice: {0}")]
    InvalidChoice(String),
    #[error("invalid proposal {id}: {reason}")]
    InvalidProposal { id: String, reason: String },
    #[error("invalid vote by {voter} on {proposal_id}: {reason}")]
    InvalidVote {
        proposal_id: String,
        voter: String,
        reason: String,
    },
    #[error("cannot tally proposal {0}: no ballots")]
    EmptyTally(String),
    #[error("vote for {found} passed to tally of {expected}")]
    ProposalMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Binary,
    Multi,
}

impl ProposalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProposalKind::Binary => "binary",
            ProposalKind::Multi => "multi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub proposal_id: String,
    pub space_id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    pub choices: Vec<String>,
    pub created_at: Timestamp,
    pub start: Timestamp,
    pub end: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calls_for_change: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl Proposal {
    pub fn n_options(&self) -> usize {
        self.choices.len()
    }

    pub fn kind(&self) -> ProposalKind {
        classify_proposal_kind(self, &AbstainLabels::default())
    }

    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts <= self.end
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: &str| ModelError::InvalidProposal {
            id: self.proposal_id.clone(),
            reason: reason.to_string(),
        };
        if self.choices.len() < 2 {
            return Err(fail("fewer than two choices"));
        }
        let mut seen = BTreeSet::new();
        for label in &self.choices {
            if !seen.insert(label.trim()) {
                return Err(fail("duplicate choice label"));
            }
        }
        if self.start >= self.end {
            return Err(fail("voting window start is not before end"));
        }
        if self.created_at > self.start {
            return Err(fail("created after voting start"));
        }
        Ok(())
    }
}

/// Labels that do not count as a substantive option when classifying a proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstainLabels(pub Vec<String>);

impl Default for AbstainLabels {
    fn default() -> Self {
        AbstainLabels(vec!["abstain".to_string()])
    }
}

impl AbstainLabels {
    pub fn matches(&self, label: &str) -> bool {
        let label = label.trim();
        self.0.iter().any(|a| a.trim().eq_ignore_ascii_case(label))
    }
}

/// Binary iff exactly two options remain after removing abstain-like labels.
pub fn classify_proposal_kind(proposal: &Proposal, abstain: &AbstainLabels) -> ProposalKind {
    let substantive = proposal
        .choices
        .iter()
        .filter(|c| !abstain.matches(c))
        .count();
    if substantive == 2 {
        ProposalKind::Binary
    } else {
        ProposalKind::Multi
    }
}

/// A ballot's choice as it appears on the wire: a single 1-based option, an
/// approval list, or a weighted map from 1-based option to weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ChoiceExpr {
    Single(u32),
    Approval(Vec<u32>),
    Weighted(BTreeMap<u32, f64>),
}

impl<'de> Deserialize<'de> for ChoiceExpr {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;

        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            Single(u32),
            Approval(Vec<u32>),
            Weighted(BTreeMap<String, f64>),
        }
        match Wire::deserialize(deserializer)? {
            Wire::Single(i) => Ok(ChoiceExpr::Single(i)),
            Wire::Approval(v) => Ok(ChoiceExpr::Approval(v)),
            Wire::Weighted(m) => m
                .into_iter()
                .map(|(k, w)| {
                    k.trim().parse::<u32>().map(|k| (k, w)).map_err(|_| {
                        D::Error::custom(format!(
                            "weighted choice key {k:?} is not an option number"
                        ))
                    })
                })
                .collect::<Result<_, _>>()
                .map(ChoiceExpr::Weighted),
        }
    }
}

/// Normalized per-option allocation of one ballot; entries sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceWeights(Vec<f64>);

impl ChoiceWeights {
    pub fn unit(n_options: usize, index: usize) -> Self {
        let mut v = vec![0.0; n_options];
        v[index] = 1.0;
        ChoiceWeights(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Mass on a zero-based option; zero when out of range.
    pub fn on(&self, index: usize) -> f64 {
        self.0.get(index).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

fn check_index(i: u32, n_options: usize) -> Result<usize, ModelError> {
    if i == 0 || i as usize > n_options {
        Err(ModelError::InvalidChoice(format!(
            "option {i} outside 1..={n_options}"
        )))
    } else {
        Ok(i as usize - 1)
    }
}

pub fn normalize_choice(expr: &ChoiceExpr, n_options: usize) -> Result<ChoiceWeights, ModelError> {
    if n_options == 0 {
        return Err(ModelError::InvalidChoice("proposal has no options".into()));
    }
    match expr {
        ChoiceExpr::Single(i) => Ok(ChoiceWeights::unit(n_options, check_index(*i, n_options)?)),
        ChoiceExpr::Approval(list) => {
            if list.is_empty() {
                return Err(ModelError::InvalidChoice("empty approval list".into()));
            }
            let mut v = vec![0.0; n_options];
            let share = 1.0 / list.len() as f64;
            for i in list {
                v[check_index(*i, n_options)?] += share;
            }
            Ok(ChoiceWeights(v))
        }
        ChoiceExpr::Weighted(map) => {
            let mut v = vec![0.0; n_options];
            let mut sum = 0.0;
            for (i, w) in map {
                let idx = check_index(*i, n_options)?;
                if !w.is_finite() || *w < 0.0 {
                    return Err(ModelError::InvalidChoice(format!(
                        "weight {w} on option {i} is not a nonnegative number"
                    )));
                }
                v[idx] += *w;
                sum += *w;
            }
            if sum <= 0.0 {
                return Err(ModelError::InvalidChoice(
                    "weighted ballot has no positive weight".into(),
                ));
            }
            for x in &mut v {
                *x /= sum;
            }
            Ok(ChoiceWeights(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub proposal_id: String,
    pub voter: String,
    pub choice: ChoiceExpr,
    pub vp: f64,
    pub timestamp: Timestamp,
}

impl VoteRecord {
    pub fn allocation(&self, n_options: usize) -> Result<ChoiceWeights, ModelError> {
        normalize_choice(&self.choice, n_options)
    }

    /// Checks the ballot against its owning proposal.
    pub fn validate(&self, proposal: &Proposal) -> Result<ChoiceWeights, ModelError> {
        let fail = |reason: String| ModelError::InvalidVote {
            proposal_id: self.proposal_id.clone(),
            voter: self.voter.clone(),
            reason,
        };
        if self.proposal_id != proposal.proposal_id {
            return Err(ModelError::ProposalMismatch {
                expected: proposal.proposal_id.clone(),
                found: self.proposal_id.clone(),
            });
        }
        if !self.vp.is_finite() || self.vp < 0.0 {
            return Err(fail(format!(
                "voting power {} is negative or not finite",
                self.vp
            )));
        }
        if !proposal.contains(self.timestamp) {
            return Err(fail(format!(
                "timestamp {} outside window [{}, {}]",
                self.timestamp, proposal.start, proposal.end
            )));
        }
        self.allocation(proposal.n_options())
            .map_err(|e| fail(e.to_string()))
    }
}

/// Keeps each voter's latest ballot; returns survivors in input order and the
/// number of superseded ballots dropped. Equal timestamps keep the later entry.
pub fn dedup_latest(votes: Vec<VoteRecord>) -> (Vec<VoteRecord>, usize) {
    let mut latest: BTreeMap<(&str, &str), (Timestamp, usize)> = BTreeMap::new();
    for (pos, v) in votes.iter().enumerate() {
        let key = (v.proposal_id.as_str(), v.voter.as_str());
        match latest.get(&key) {
            Some(&(ts, _)) if ts > v.timestamp => {}
            _ => {
                latest.insert(key, (v.timestamp, pos));
            }
        }
    }
    let keep: BTreeSet<usize> = latest.values().map(|&(_, pos)| pos).collect();
    let dropped = votes.len() - keep.len();
    let kept = votes
        .into_iter()
        .enumerate()
        .filter(|(pos, _)| keep.contains(pos))
        .map(|(_, v)| v)
        .collect();
    (kept, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalOutcome {
    pub proposal_id: String,
    pub per_option_vp: Vec<f64>,
    pub total_vp: f64,
    pub n_voters: usize,
    /// Zero-based index of the winning option.
    pub final_index: usize,
    pub tie: bool,
}

/// Tallies voting power per option. Ballots are summed in a canonical order
/// so the result is bit-identical under any permutation of `votes`.
pub fn tally_outcome(
    proposal: &Proposal,
    votes: &[VoteRecord],
) -> Result<ProposalOutcome, ModelError> {
    if votes.is_empty() {
        return Err(ModelError::EmptyTally(proposal.proposal_id.clone()));
    }
    let n = proposal.n_options();
    let mut ordered: Vec<&VoteRecord> = votes.iter().collect();
    ordered.sort_by(|a, b| {
        a.voter
            .cmp(&b.voter)
            .then(a.timestamp.cmp(&b.timestamp))
            .then(a.vp.total_cmp(&b.vp))
    });
    let mut per_option = vec![0.0; n];
    let mut total = 0.0;
    let mut voters = BTreeSet::new();
    for v in ordered {
        if v.proposal_id != proposal.proposal_id {
            return Err(ModelError::ProposalMismatch {
                expected: proposal.proposal_id.clone(),
                found: v.proposal_id.clone(),
            });
        }
        let alloc = v.allocation(n)?;
        for (slot, share) in per_option.iter_mut().zip(alloc.as_slice()) {
            *slot += v.vp * share;
        }
        total += v.vp;
        voters.insert(v.voter.as_str());
    }
    let (final_index, tie) = argmax_lowest(&per_option);
    Ok(ProposalOutcome {
        proposal_id: proposal.proposal_id.clone(),
        per_option_vp: per_option,
        total_vp: total,
        n_voters: voters.len(),
        final_index,
        tie,
    })
}

/// Index of the maximum, lowest index on ties, plus whether a tie occurred.
pub fn argmax_lowest(values: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
            tie = false;
        } else if v == values[best] {
            tie = true;
        }
    }
    (best, tie)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommentCounts {
    pub positive: u32,
    pub negative: u32,
    pub neutral: u32,
}

impl CommentCounts {
    pub fn total(&self) -> u32 {
        self.positive + self.negative + self.neutral
    }

    pub fn add(&mut self, polarity: Polarity) {
        match polarity {
            Polarity::Positive => self.positive += 1,
            Polarity::Negative => self.negative += 1,
            Polarity::Neutral => self.neutral += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub fn from_score(score: f64) -> Self {
        if score > 0.0 {
            Polarity::Positive
        } else if score < 0.0 {
            Polarity::Negative
        } else {
            Polarity::Neutral
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForumComment {
    pub timestamp: Timestamp,
    pub polarity: Polarity,
}

/// Scored forum thread attached to a proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForumSignal {
    pub proposal_id: String,
    pub url: String,
    pub stance_score: f64,
    pub sentiment: f64,
    pub comment_counts: CommentCounts,
    #[serde(default)]
    pub comments: Vec<ForumComment>,
}

impl ForumSignal {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: &str| ModelError::InvalidProposal {
            id: self.proposal_id.clone(),
            reason: format!("forum signal {}: {reason}", self.url),
        };
        if !(-1.0..=1.0).contains(&self.stance_score) {
            return Err(fail("stance score outside [-1, 1]"));
        }
        if !(-1.0..=1.0).contains(&self.sentiment) {
            return Err(fail("sentiment outside [-1, 1]"));
        }
        if !self.comments.is_empty() {
            let mut derived = CommentCounts::default();
            for c in &self.comments {
                derived.add(c.polarity);
            }
            if derived != self.comment_counts {
                return Err(fail("comment counts disagree with comment list"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketMetric {
    Price,
    Tvl,
    Treasury,
    Index,
}

impl MarketMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            MarketMetric::Price => "price",
            MarketMetric::Tvl => "tvl",
            MarketMetric::Treasury => "treasury",
            MarketMetric::Index => "index",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailySample {
    pub day: Day,
    pub value: f64,
}

/// Daily series for one protocol metric; gaps are left absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSeries {
    pub protocol: String,
    pub metric: MarketMetric,
    pub samples: Vec<DailySample>,
}

impl MarketSeries {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| ModelError::InvalidProposal {
            id: self.protocol.clone(),
            reason: format!("{} series: {reason}", self.metric.as_str()),
        };
        for pair in self.samples.windows(2) {
            if pair[1].day <= pair[0].day {
                return Err(fail(format!(
                    "day {} not after {}",
                    pair[1].day, pair[0].day
                )));
            }
        }
        let nonneg = matches!(self.metric, MarketMetric::Tvl | MarketMetric::Treasury);
        for s in &self.samples {
            if !s.value.is_finite() || (nonneg && s.value < 0.0) {
                return Err(fail(format!("bad value {} on day {}", s.value, s.day)));
            }
        }
        Ok(())
    }

    pub fn values_in(&self, first: Day, last: Day) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.day >= first && s.day <= last)
            .map(|s| s.value)
            .collect()
    }
}

/// The evaluation universe: proposals and each voter's participation set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationSet {
    pub proposals: BTreeSet<String>,
    pub per_voter: BTreeMap<String, BTreeSet<String>>,
}

impl EvaluationSet {
    pub fn build<'a>(
        proposals: impl IntoIterator<Item = &'a str>,
        votes: impl IntoIterator<Item = &'a VoteRecord>,
    ) -> Self {
        let proposals: BTreeSet<String> = proposals.into_iter().map(str::to_string).collect();
        let mut per_voter: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for v in votes {
            if proposals.contains(&v.proposal_id) {
                per_voter
                    .entry(v.voter.clone())
                    .or_default()
                    .insert(v.proposal_id.clone());
            }
        }
        EvaluationSet {
            proposals,
            per_voter,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn proposal(choices: &[&str]) -> Proposal {
        Proposal {
            proposal_id: "p1".into(),
            space_id: "s".into(),
            title: "t".into(),
            body: None,
            choices: choices.iter().map(|s| s.to_string()).collect(),
            created_at: 0,
            start: 10,
            end: 100,
            calls_for_change: None,
            category: None,
        }
    }

    fn vote(voter: &str, choice: u32, vp: f64) -> VoteRecord {
        VoteRecord {
            proposal_id: "p1".into(),
            voter: voter.into(),
            choice: ChoiceExpr::Single(choice),
            vp,
            timestamp: 50,
        }
    }

    #[test]
    fn normalize_examples() {
        let w = normalize_choice(&ChoiceExpr::Single(2), 3).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 1.0, 0.0]);
        let w = normalize_choice(&ChoiceExpr::Approval(vec![1, 3]), 3).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.0, 0.5]);
        let w = normalize_choice(&ChoiceExpr::Weighted([(1, 2.0), (2, 6.0)].into()), 2).unwrap();
        assert_eq!(w.as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn normalize_errors() {
        assert!(normalize_choice(&ChoiceExpr::Single(0), 2).is_err());
        assert!(normalize_choice(&ChoiceExpr::Single(3), 2).is_err());
        assert!(normalize_choice(&ChoiceExpr::Approval(vec![1, 4]), 3).is_err());
        assert!(normalize_choice(&ChoiceExpr::Weighted([(1, 0.0), (2, 0.0)].into()), 2).is_err());
        assert!(normalize_choice(&ChoiceExpr::Weighted([(1, -1.0), (2, 3.0)].into()), 2).is_err());
    }

    #[test]
    fn choice_expr_wire_shapes() {
        let single: ChoiceExpr = serde_json::from_str("2").unwrap();
        assert_eq!(single, ChoiceExpr::Single(2));
        let approval: ChoiceExpr = serde_json::from_str("[1,3]").unwrap();
        assert_eq!(approval, ChoiceExpr::Approval(vec![1, 3]));
        let weighted: ChoiceExpr = serde_json::from_str(r#"{"1":2,"2":6.5}"#).unwrap();
        assert_eq!(weighted, ChoiceExpr::Weighted([(1, 2.0), (2, 6.5)].into()));
        assert_eq!(
            serde_json::to_string(&weighted).unwrap(),
            r#"{"1":2.0,"2":6.5}"#
        );
    }

    #[test]
    fn tally_three_ballots() {
        let p = proposal(&["A", "B"]);
        let out = tally_outcome(
            &p,
            &[vote("x", 1, 5.0), vote("y", 1, 3.0), vote("z", 2, 2.0)],
        )
        .unwrap();
        assert_eq!(out.per_option_vp, vec![8.0, 2.0]);
        assert_eq!(out.total_vp, 10.0);
        assert_eq!(out.final_index, 0);
        assert_eq!(out.n_voters, 3);
        assert!(!out.tie);
    }

    #[test]
    fn tally_single_ballot_and_tie() {
        let p = proposal(&["A", "B"]);
        let out = tally_outcome(&p, &[vote("x", 2, 7.0)]).unwrap();
        assert_eq!((out.final_index, out.total_vp, out.n_voters), (1, 7.0, 1));
        let out = tally_outcome(&p, &[vote("x", 1, 4.0), vote("y", 2, 4.0)]).unwrap();
        assert!(out.tie);
        assert_eq!(out.final_index, 0);
    }

    #[test]
    fn tally_empty_is_error() {
        let p = proposal(&["A", "B"]);
        assert_eq!(
            tally_outcome(&p, &[]),
            Err(ModelError::EmptyTally("p1".into()))
        );
    }

    #[test]
    fn classify_examples() {
        assert_eq!(
            proposal(&["For", "Against", "Abstain"]).kind(),
            ProposalKind::Binary
        );
        assert_eq!(proposal(&["Yes", "No"]).kind(), ProposalKind::Binary);
        assert_eq!(
            proposal(&["Option A", "Option B", "Option C"]).kind(),
            ProposalKind::Multi
        );
        let custom = AbstainLabels(vec!["abstain".into(), "no opinion".into()]);
        assert_eq!(
            classify_proposal_kind(&proposal(&["Yes", "No", "No Opinion"]), &custom),
            ProposalKind::Binary
        );
    }

    #[test]
    fn proposal_validation() {
        assert!(proposal(&["A", "B"]).validate().is_ok());
        assert!(proposal(&["A"]).validate().is_err());
        assert!(proposal(&["A", " A "]).validate().is_err());
        let mut p = proposal(&["A", "B"]);
        p.end = p.start;
        assert!(p.validate().is_err());
    }

    #[test]
    fn vote_validation_rejects_out_of_window() {
        let p = proposal(&["A", "B"]);
        let mut v = vote("x", 1, 1.0);
        v.timestamp = 101;
        assert!(v.validate(&p).is_err());
        v.timestamp = 100;
        assert!(v.validate(&p).is_ok());
        v.vp = -1.0;
        assert!(v.validate(&p).is_err());
    }

    #[test]
    fn dedup_keeps_latest() {
        let mut early = vote("x", 1, 1.0);
        early.timestamp = 20;
        let mut late = vote("x", 2, 1.0);
        late.timestamp = 30;
        let (kept, dropped) = dedup_latest(vec![late.clone(), vote("y", 1, 2.0), early]);
        assert_eq!(dropped, 1);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0], late);
    }

    #[test]
    fn evaluation_set_index() {
        let votes = [vote("x", 1, 1.0), vote("y", 2, 1.0)];
        let set = EvaluationSet::build(["p1"], votes.iter());
        assert_eq!(set.per_voter.len(), 2);
        assert!(set.per_voter["x"].contains("p1"));
    }

    fn choice_strategy(n: usize) -> impl Strategy<Value = ChoiceExpr> {
        let n = n as u32;
        prop_oneof![
            (1..=n).prop_map(ChoiceExpr::Single),
            proptest::collection::vec(1..=n, 1..6).prop_map(ChoiceExpr::Approval),
            proptest::collection::btree_map(1..=n, 0.0f64..1e6, 1..5)
                .prop_filter("needs a positive weight", |m| m.values().any(|w| *w > 0.0))
                .prop_map(ChoiceExpr::Weighted),
        ]
    }

    proptest! {
        #[test]
        fn allocation_sums_to_one((n, expr) in (2usize..8).prop_flat_map(|n| (Just(n), choice_strategy(n)))) {
            let w = normalize_choice(&expr, n).unwrap();
            prop_assert!((w.total() - 1.0).abs() <= ALLOCATION_TOLERANCE);
            prop_assert!(w.as_slice().iter().all(|x| (0.0..=1.0 + ALLOCATION_TOLERANCE).contains(x)));
        }

        #[test]
        fn tally_is_permutation_invariant_and_conserves_weight(
            ballots in proptest::collection::vec((1u32..=3, 0.0f64..1e6), 1..40),
            rotate in 0usize..40,
            scale in 0.01f64..100.0,
        ) {
            let p = proposal(&["A", "B", "C"]);
            let votes: Vec<VoteRecord> = ballots
                .iter()
                .enumerate()
                .map(|(i, (c, vp))| vote(&format!("v{i}"), *c, *vp))
                .collect();
            let base = tally_outcome(&p, &votes).unwrap();
            let mut rotated = votes.clone();
            rotated.rotate_left(rotate % votes.len());
            rotated.reverse();
            prop_assert_eq!(&tally_outcome(&p, &rotated).unwrap(), &base);

            let sum: f64 = base.per_option_vp.iter().sum();
            prop_assert!((sum - base.total_vp).abs() <= CONSERVATION_TOLERANCE * base.total_vp.max(1.0));
            prop_assert!(base.per_option_vp[base.final_index] >= base.per_option_vp.iter().cloned().fold(f64::MIN, f64::max));

            let scaled: Vec<VoteRecord> = votes.iter().cloned().map(|mut v| { v.vp *= scale; v }).collect();
            let s = tally_outcome(&p, &scaled).unwrap();
            if !base.tie {
                prop_assert_eq!(s.final_index, base.final_index);
            }
        }
    }
}
