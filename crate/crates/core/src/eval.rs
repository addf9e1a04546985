//! Alignment of policy decisions with token-weighted and headcount majorities,
//! human voter benchmarks, and the robustness tables built on them.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::market::MarketWindow;
use crate::model::{
    classify_proposal_kind, tally_outcome, AbstainLabels, ModelError, Proposal, ProposalKind,
    ProposalOutcome, VoteRecord,
};
use crate::policy::PolicyDecision;

pub const CONTESTED_THRESHOLD: f64 = 0.60;
pub const MIN_PARTICIPATION: usize = 5;

/// Vectors longer than this are summed pairwise.
pub const PAIRWISE_THRESHOLD: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("proposal {0} has zero total voting power")]
    DegenerateTally(String),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("missing decisions for {} proposals: {}", .missing.len(), .missing.join(", "))]
    Coverage { missing: Vec<String> },
    #[error("decision for {decision} does not match proposal {proposal}")]
    Mismatch { proposal: String, decision: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn pairwise(values: &[f64]) -> f64 {
    if values.len() <= 128 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise(&values[..mid]) + pairwise(&values[mid..])
    }
}

/// Sequential sum, or pairwise summation above [`PAIRWISE_THRESHOLD`].
pub fn stable_sum(values: &[f64]) -> f64 {
    if values.len() > PAIRWISE_THRESHOLD {
        pairwise(values)
    } else {
        values.iter().sum()
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| stable_sum(values) / values.len() as f64)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(quantile_sorted(&sorted, 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub q25: f64,
    pub q75: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    let m = mean(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let std = if values.len() < 2 {
        0.0
    } else {
        let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
        (stable_sum(&sq) / (values.len() - 1) as f64).sqrt()
    };
    Some(Summary {
        n: values.len(),
        mean: m,
        median: quantile_sorted(&sorted, 0.5),
        std,
        q25: quantile_sorted(&sorted, 0.25),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalAlignment {
    pub proposal_id: String,
    /// Share of voting power on the winning option.
    pub s_p: f64,
    /// Share of voting power on the policy's option.
    pub a_p: f64,
    /// Fraction of voters (allocation mass) on the policy's option.
    pub h_p: f64,
    pub ai_equals_final: bool,
    pub ai_index: usize,
    pub final_index: usize,
    pub kind: ProposalKind,
    pub calls_for_change: Option<bool>,
    pub tie: bool,
    pub n_voters: usize,
    pub total_vp: f64,
    /// Sum over ballots of the allocation on the winning option.
    pub final_ballot_mass: f64,
}

fn ballot_masses(proposal: &Proposal, votes: &[VoteRecord]) -> Result<Vec<f64>, ModelError> {
    let n = proposal.n_options();
    let mut ordered: Vec<&VoteRecord> = votes.iter().collect();
    ordered.sort_by(|a, b| {
        a.voter
            .cmp(&b.voter)
            .then(a.timestamp.cmp(&b.timestamp))
            .then(a.vp.total_cmp(&b.vp))
    });
    let mut mass = vec![0.0; n];
    for v in ordered {
        for (slot, share) in mass.iter_mut().zip(v.allocation(n)?.as_slice()) {
            *slot += share;
        }
    }
    Ok(mass)
}

/// Per-proposal alignment of one decision. Choosing the winner yields
/// `a_p == s_p` exactly since both read the same tally entry.
pub fn proposal_alignment(
    proposal: &Proposal,
    outcome: &ProposalOutcome,
    votes: &[VoteRecord],
    decision: &PolicyDecision,
    abstain: &AbstainLabels,
) -> Result<ProposalAlignment, EvalError> {
    if decision.proposal_id != proposal.proposal_id || outcome.proposal_id != proposal.proposal_id {
        return Err(EvalError::Mismatch {
            proposal: proposal.proposal_id.clone(),
            decision: decision.proposal_id.clone(),
        });
    }
    if outcome.total_vp.is_nan() || outcome.total_vp <= 0.0 || outcome.n_voters == 0 {
        return Err(EvalError::DegenerateTally(proposal.proposal_id.clone()));
    }
    let ai = decision.index();
    let t = outcome.total_vp;
    let mass = ballot_masses(proposal, votes)?;
    let final_index = outcome.final_index;
    Ok(ProposalAlignment {
        proposal_id: proposal.proposal_id.clone(),
        s_p: (outcome.per_option_vp[final_index] / t).min(1.0),
        a_p: (outcome.per_option_vp[ai] / t).min(1.0),
        h_p: (mass[ai] / outcome.n_voters as f64).min(1.0),
        ai_equals_final: ai == final_index,
        ai_index: ai,
        final_index,
        kind: classify_proposal_kind(proposal, abstain),
        calls_for_change: proposal.calls_for_change,
        tie: outcome.tie,
        n_voters: outcome.n_voters,
        total_vp: t,
        final_ballot_mass: mass[final_index],
    })
}

/// Tallies every proposal. Proposals without usable votes are returned
/// separately as degenerate.
pub fn compute_outcomes(dataset: &Dataset) -> (BTreeMap<String, ProposalOutcome>, Vec<String>) {
    let results: Vec<_> = dataset
        .proposals()
        .par_iter()
        .map(|p| {
            (
                p.proposal_id.clone(),
                tally_outcome(p, dataset.votes_for(&p.proposal_id)),
            )
        })
        .collect();
    let mut outcomes = BTreeMap::new();
    let mut degenerate = Vec::new();
    for (id, r) in results {
        match r {
            Ok(o) if o.total_vp > 0.0 => {
                outcomes.insert(id, o);
            }
            _ => degenerate.push(id),
        }
    }
    (outcomes, degenerate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedRun {
    pub per_proposal: Vec<ProposalAlignment>,
    /// Proposals excluded for zero voting power.
    pub degenerate: Vec<String>,
}

/// Aligns one decision per non-degenerate proposal. Any missing decision is a
/// coverage error naming every missing proposal.
pub fn align_decisions(
    dataset: &Dataset,
    outcomes: &BTreeMap<String, ProposalOutcome>,
    decisions: &[PolicyDecision],
    abstain: &AbstainLabels,
) -> Result<AlignedRun, EvalError> {
    let by_id: BTreeMap<&str, &PolicyDecision> = decisions
        .iter()
        .map(|d| (d.proposal_id.as_str(), d))
        .collect();
    let missing: Vec<String> = outcomes
        .keys()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::Coverage { missing });
    }
    let degenerate: Vec<String> = dataset
        .proposals()
        .iter()
        .filter(|p| !outcomes.contains_key(&p.proposal_id))
        .map(|p| p.proposal_id.clone())
        .collect();
    let proposals: Vec<&Proposal> = dataset
        .proposals()
        .iter()
        .filter(|p| outcomes.contains_key(&p.proposal_id))
        .collect();
    let per_proposal = proposals
        .par_iter()
        .map(|p| {
            proposal_alignment(
                p,
                &outcomes[&p.proposal_id],
                dataset.votes_for(&p.proposal_id),
                by_id[p.proposal_id.as_str()],
                abstain,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AlignedRun {
        per_proposal,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoterBenchmark {
    pub voter: String,
    pub n_proposals: usize,
    /// Voting-power weighted agreement with winners; absent when the voter
    /// never held positive power.
    pub tilde_a: Option<f64>,
    /// Unweighted agreement with winners.
    pub hat_a: f64,
    pub eligible: bool,
}

/// Per-voter agreement with realized winners over the proposals in
/// `outcomes`. Voters below `min_participation` are listed but not eligible.
pub fn voter_benchmarks(
    dataset: &Dataset,
    outcomes: &BTreeMap<String, ProposalOutcome>,
    min_participation: usize,
) -> Result<Vec<VoterBenchmark>, EvalError> {
    let mut per_voter: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (id, outcome) in outcomes {
        let proposal = dataset.proposal(id).ok_or_else(|| EvalError::Mismatch {
            proposal: id.clone(),
            decision: id.clone(),
        })?;
        let n = proposal.n_options();
        for v in dataset.votes_for(id) {
            let on_final = v.allocation(n)?.on(outcome.final_index);
            let entry = per_voter.entry(v.voter.as_str()).or_default();
            entry.0.push(v.vp);
            entry.1.push(on_final);
        }
    }
    Ok(per_voter
        .into_iter()
        .map(|(voter, (weights, matches))| {
            let weighted: Vec<f64> = weights.iter().zip(&matches).map(|(w, m)| w * m).collect();
            let total_w = stable_sum(&weights);
            let n_proposals = matches.len();
            VoterBenchmark {
                voter: voter.to_string(),
                n_proposals,
                tilde_a: (total_w > 0.0).then(|| (stable_sum(&weighted) / total_w).clamp(0.0, 1.0)),
                hat_a: (stable_sum(&matches) / n_proposals as f64).clamp(0.0, 1.0),
                eligible: n_proposals >= min_participation,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateAlignment {
    pub n_proposals: usize,
    pub p_ai_final: f64,
    pub mean_a: f64,
    pub mean_h: f64,
    pub mean_s: f64,
    /// Distribution rows for the per-proposal quantities and voter counts.
    pub distribution: Vec<MetricRow>,
    pub n_voters: usize,
    pub n_eligible_voters: usize,
    pub min_participation: usize,
    pub median_tilde_a: Option<f64>,
    pub median_hat_a: Option<f64>,
    pub mean_tilde_a: Option<f64>,
    pub mean_hat_a: Option<f64>,
    /// Mean token alignment exceeds the median voter's weighted agreement.
    pub ai_above_token_benchmark: Option<bool>,
    /// Mean headcount alignment exceeds the median voter's unweighted agreement.
    pub ai_above_headcount_benchmark: Option<bool>,
}

pub fn aggregate_alignment(
    per_proposal: &[ProposalAlignment],
    per_voter: &[VoterBenchmark],
    min_participation: usize,
) -> Result<AggregateAlignment, EvalError> {
    if per_proposal.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let col = |f: fn(&ProposalAlignment) -> f64| per_proposal.iter().map(f).collect::<Vec<f64>>();
    let a = col(|p| p.a_p);
    let h = col(|p| p.h_p);
    let s = col(|p| p.s_p);
    let nv = col(|p| p.n_voters as f64);
    let hits = col(|p| if p.ai_equals_final { 1.0 } else { 0.0 });
    let row = |name: &str, v: &[f64]| MetricRow {
        metric: name.to_string(),
        summary: summarize(v).expect("non-empty"),
    };
    let eligible: Vec<&VoterBenchmark> = per_voter.iter().filter(|v| v.eligible).collect();
    let tilde: Vec<f64> = eligible.iter().filter_map(|v| v.tilde_a).collect();
    let hat: Vec<f64> = eligible.iter().map(|v| v.hat_a).collect();
    let mean_a = mean(&a).expect("non-empty");
    let mean_h = mean(&h).expect("non-empty");
    let median_tilde_a = median(&tilde);
    let median_hat_a = median(&hat);
    Ok(AggregateAlignment {
        n_proposals: per_proposal.len(),
        p_ai_final: mean(&hits).expect("non-empty"),
        mean_a,
        mean_h,
        mean_s: mean(&s).expect("non-empty"),
        distribution: vec![
            row("a_p", &a),
            row("h_p", &h),
            row("s_p", &s),
            row("n_voters", &nv),
        ],
        n_voters: per_voter.len(),
        n_eligible_voters: eligible.len(),
        min_participation,
        median_tilde_a,
        median_hat_a,
        mean_tilde_a: mean(&tilde),
        mean_hat_a: mean(&hat),
        ai_above_token_benchmark: median_tilde_a.map(|m| mean_a > m),
        ai_above_headcount_benchmark: median_hat_a.map(|m| mean_h > m),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    BinaryChangeYes,
    BinaryChangeNo,
    MultiChangeYes,
    MultiChangeNo,
    Unlabeled,
}

impl Bucket {
    pub const ALL: [Bucket; 5] = [
        Bucket::BinaryChangeYes,
        Bucket::BinaryChangeNo,
        Bucket::MultiChangeYes,
        Bucket::MultiChangeNo,
        Bucket::Unlabeled,
    ];

    pub fn of(p: &ProposalAlignment) -> Bucket {
        match (p.kind, p.calls_for_change) {
            (_, None) => Bucket::Unlabeled,
            (ProposalKind::Binary, Some(true)) => Bucket::BinaryChangeYes,
            (ProposalKind::Binary, Some(false)) => Bucket::BinaryChangeNo,
            (ProposalKind::Multi, Some(true)) => Bucket::MultiChangeYes,
            (ProposalKind::Multi, Some(false)) => Bucket::MultiChangeNo,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::BinaryChangeYes => "binary_change_yes",
            Bucket::BinaryChangeNo => "binary_change_no",
            Bucket::MultiChangeYes => "multi_change_yes",
            Bucket::MultiChangeNo => "multi_change_no",
            Bucket::Unlabeled => "unlabeled",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Bucket::BinaryChangeYes => "Binary (change = yes)",
            Bucket::BinaryChangeNo => "Binary (change = no)",
            Bucket::MultiChangeYes => "Multi-option (change = yes)",
            Bucket::MultiChangeNo => "Multi-option (change = no)",
            Bucket::Unlabeled => "Unlabeled",
        }
    }
}

fn in_bucket(per_proposal: &[ProposalAlignment], bucket: Bucket) -> Vec<&ProposalAlignment> {
    per_proposal
        .iter()
        .filter(|p| Bucket::of(p) == bucket)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: Bucket,
    pub n: usize,
    /// Mean over ballots of the allocation on the winning option.
    pub human: Option<f64>,
    /// Fraction of proposals where the policy picked the winner.
    pub ai: Option<f64>,
    /// `(ai - human) * 100`.
    pub difference_pp: Option<f64>,
}

pub fn bucket_agreement(per_proposal: &[ProposalAlignment]) -> Vec<BucketRow> {
    Bucket::ALL
        .into_iter()
        .map(|bucket| {
            let members = in_bucket(per_proposal, bucket);
            let mass: Vec<f64> = members.iter().map(|p| p.final_ballot_mass).collect();
            let ballots: usize = members.iter().map(|p| p.n_voters).sum();
            let human = (ballots > 0).then(|| stable_sum(&mass) / ballots as f64);
            let hits: Vec<f64> = members
                .iter()
                .map(|p| if p.ai_equals_final { 1.0 } else { 0.0 })
                .collect();
            let ai = mean(&hits);
            BucketRow {
                bucket,
                n: members.len(),
                human,
                ai,
                difference_pp: human.zip(ai).map(|(h, a)| (a - h) * 100.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityCell {
    /// Proposals with the metric present.
    pub n: usize,
    pub positive: usize,
    pub probability: Option<f64>,
}

impl ProbabilityCell {
    fn from_values(values: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut positive) = (0, 0);
        for v in values {
            n += 1;
            if v > 0.0 {
                positive += 1;
            }
        }
        ProbabilityCell {
            n,
            positive,
            probability: (n > 0).then(|| positive as f64 / n as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    /// `None` for the all-proposals row.
    pub bucket: Option<Bucket>,
    pub price_ai: ProbabilityCell,
    pub price_final: ProbabilityCell,
    pub tvl_ai: ProbabilityCell,
    pub tvl_final: ProbabilityCell,
}

/// Probability of a positive post-close response. The policy-endorsed column
/// covers proposals whose adopted outcome is the policy's choice; the final
/// column covers every adopted outcome.
pub fn expost_validity(
    per_proposal: &[ProposalAlignment],
    windows: &BTreeMap<String, MarketWindow>,
) -> Vec<ValidityRow> {
    let row = |bucket: Option<Bucket>| {
        let members: Vec<&ProposalAlignment> = per_proposal
            .iter()
            .filter(|p| bucket.is_none_or(|b| Bucket::of(p) == b))
            .collect();
        let cell = |endorsed_only: bool, metric: fn(&MarketWindow) -> Option<f64>| {
            ProbabilityCell::from_values(
                members
                    .iter()
                    .filter(|p| !endorsed_only || p.ai_equals_final)
                    .filter_map(|p| windows.get(&p.proposal_id).and_then(metric)),
            )
        };
        ValidityRow {
            bucket,
            price_ai: cell(true, |w| w.price_pct_change),
            price_final: cell(false, |w| w.price_pct_change),
            tvl_ai: cell(true, |w| w.tvl_abnormal),
            tvl_final: cell(false, |w| w.tvl_abnormal),
        }
    };
    Bucket::ALL
        .into_iter()
        .map(Some)
        .chain(std::iter::once(None))
        .map(row)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetStats {
    pub n: usize,
    pub p_ai_final: Option<f64>,
    pub mean_a: Option<f64>,
    pub mean_h: Option<f64>,
    pub mean_s: Option<f64>,
}

pub fn subset_stats<'a>(members: impl IntoIterator<Item = &'a ProposalAlignment>) -> SubsetStats {
    let members: Vec<&ProposalAlignment> = members.into_iter().collect();
    let col = |f: &dyn Fn(&ProposalAlignment) -> f64| {
        mean(&members.iter().map(|p| f(p)).collect::<Vec<_>>())
    };
    SubsetStats {
        n: members.len(),
        p_ai_final: col(&|p| if p.ai_equals_final { 1.0 } else { 0.0 }),
        mean_a: col(&|p| p.a_p),
        mean_h: col(&|p| p.h_p),
        mean_s: col(&|p| p.s_p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestedReport {
    pub threshold: f64,
    pub all: SubsetStats,
    pub binary: SubsetStats,
    pub multi: SubsetStats,
}

pub fn contested_members(
    per_proposal: &[ProposalAlignment],
    threshold: f64,
) -> Vec<&ProposalAlignment> {
    per_proposal.iter().filter(|p| p.s_p <= threshold).collect()
}

pub fn contested_subset(per_proposal: &[ProposalAlignment], threshold: f64) -> ContestedReport {
    let members = contested_members(per_proposal, threshold);
    ContestedReport {
        threshold,
        all: subset_stats(members.iter().copied()),
        binary: subset_stats(
            members
                .iter()
                .copied()
                .filter(|p| p.kind == ProposalKind::Binary),
        ),
        multi: subset_stats(
            members
                .iter()
                .copied()
                .filter(|p| p.kind == ProposalKind::Multi),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalComparison {
    pub ex_ante: SubsetStats,
    pub ex_post: SubsetStats,
    pub n: usize,
    pub n_divergent: usize,
    /// Share of proposals whose selections differ between cutoffs.
    pub divergence: f64,
}

pub fn temporal_comparison(
    ex_ante: &[ProposalAlignment],
    ex_post: &[ProposalAlignment],
) -> Result<TemporalComparison, EvalError> {
    let ante: BTreeMap<&str, &ProposalAlignment> = ex_ante
        .iter()
        .map(|p| (p.proposal_id.as_str(), p))
        .collect();
    let post: BTreeMap<&str, &ProposalAlignment> = ex_post
        .iter()
        .map(|p| (p.proposal_id.as_str(), p))
        .collect();
    let ids: BTreeSet<&str> = ante.keys().chain(post.keys()).copied().collect();
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !(ante.contains_key(*id) && post.contains_key(*id)))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::Coverage { missing });
    }
    if ids.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let n_divergent = ids
        .iter()
        .filter(|id| ante[*id].ai_index != post[*id].ai_index)
        .count();
    Ok(TemporalComparison {
        ex_ante: subset_stats(ex_ante),
        ex_post: subset_stats(ex_post),
        n: ids.len(),
        n_divergent,
        divergence: n_divergent as f64 / ids.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChoiceExpr;
    use crate::policy::{Cutoff, CutoffMode};
    use proptest::prelude::*;

    fn proposal(id: &str, choices: &[&str], change: Option<bool>) -> Proposal {
        Proposal {
            proposal_id: id.into(),
            space_id: "s".into(),
            title: "t".into(),
            body: None,
            choices: choices.iter().map(|c| c.to_string()).collect(),
            created_at: 0,
            start: 10,
            end: 1000,
            calls_for_change: change,
            category: None,
        }
    }

    fn vote(p: &str, voter: &str, choice: ChoiceExpr, vp: f64) -> VoteRecord {
        VoteRecord {
            proposal_id: p.into(),
            voter: voter.into(),
            choice,
            vp,
            timestamp: 100,
        }
    }

    fn decision(p: &Proposal, index: usize) -> PolicyDecision {
        PolicyDecision {
            proposal_id: p.proposal_id.clone(),
            policy_id: "test".into(),
            selected_option: index + 1,
            selected_label: p.choices[index].clone(),
            justification: "x".into(),
            cutoff: Cutoff::for_proposal(CutoffMode::ExPost, p),
            fallback: false,
        }
    }

    fn align(p: &Proposal, votes: &[VoteRecord], ai: usize) -> ProposalAlignment {
        let o = tally_outcome(p, votes).unwrap();
        proposal_alignment(p, &o, votes, &decision(p, ai), &AbstainLabels::default()).unwrap()
    }

    #[test]
    fn three_voter_example() {
        let p = proposal("p", &["A", "B"], None);
        let votes = [
            vote("p", "x", ChoiceExpr::Single(1), 5.0),
            vote("p", "y", ChoiceExpr::Single(1), 3.0),
            vote("p", "z", ChoiceExpr::Single(2), 2.0),
        ];
        let a = align(&p, &votes, 0);
        assert!((a.s_p - 0.8).abs() < 1e-12);
        assert_eq!(a.a_p, a.s_p);
        assert!((a.h_p - 2.0 / 3.0).abs() < 1e-12);
        assert!(a.ai_equals_final);
        let b = align(&p, &votes, 1);
        assert!((b.a_p - 0.2).abs() < 1e-12);
        assert!((b.h_p - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unanimous_and_unchosen() {
        let p = proposal("p", &["A", "B", "C"], None);
        let votes = [
            vote("p", "x", ChoiceExpr::Single(2), 5.0),
            vote("p", "y", ChoiceExpr::Single(2), 1.0),
        ];
        let a = align(&p, &votes, 1);
        assert_eq!((a.s_p, a.a_p, a.h_p), (1.0, 1.0, 1.0));
        let b = align(&p, &votes, 2);
        assert_eq!((b.a_p, b.h_p), (0.0, 0.0));
    }

    #[test]
    fn zero_power_is_degenerate() {
        let p = proposal("p", &["A", "B"], None);
        let votes = [vote("p", "x", ChoiceExpr::Single(1), 0.0)];
        let o = tally_outcome(&p, &votes).unwrap();
        let err = proposal_alignment(&p, &o, &votes, &decision(&p, 0), &AbstainLabels::default())
            .unwrap_err();
        assert_eq!(err, EvalError::DegenerateTally("p".into()));
    }

    fn two_proposal_dataset() -> Dataset {
        let p1 = proposal("p1", &["A", "B"], Some(true));
        let p2 = proposal("p2", &["A", "B"], Some(true));
        let votes = vec![
            vote("p1", "v", ChoiceExpr::Single(1), 9.0),
            vote("p1", "w", ChoiceExpr::Single(1), 1.0),
            vote("p2", "v", ChoiceExpr::Single(1), 1.0),
            vote("p2", "u", ChoiceExpr::Single(2), 10.0),
        ];
        Dataset::new(vec![p1, p2], votes, vec![], BTreeMap::new())
    }

    #[test]
    fn voter_benchmark_weighting() {
        let ds = two_proposal_dataset();
        let (outcomes, degenerate) = compute_outcomes(&ds);
        assert!(degenerate.is_empty());
        let bench = voter_benchmarks(&ds, &outcomes, 2).unwrap();
        let v = bench.iter().find(|b| b.voter == "v").unwrap();
        assert_eq!(v.n_proposals, 2);
        assert!((v.tilde_a.unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(v.hat_a, 0.5);
        assert!(v.eligible);
        assert!(!bench.iter().find(|b| b.voter == "w").unwrap().eligible);
    }

    #[test]
    fn participation_threshold_excludes_four() {
        let ds = two_proposal_dataset();
        let (outcomes, _) = compute_outcomes(&ds);
        let bench = voter_benchmarks(&ds, &outcomes, MIN_PARTICIPATION).unwrap();
        assert!(bench.iter().all(|b| !b.eligible));
    }

    #[test]
    fn coverage_lists_missing() {
        let ds = two_proposal_dataset();
        let (outcomes, _) = compute_outcomes(&ds);
        let d = decision(ds.proposal("p1").unwrap(), 0);
        match align_decisions(&ds, &outcomes, &[d], &AbstainLabels::default()) {
            Err(EvalError::Coverage { missing }) => assert_eq!(missing, vec!["p2".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stats_helpers() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q25, 1.75);
        assert_eq!(s.q75, 3.25);
        assert_eq!(s.max, 4.0);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[7.0]).unwrap().std, 0.0);
        assert!(summarize(&[]).is_none());
        let big: Vec<f64> = (0..100_001).map(|i| (i % 7) as f64 * 0.1).collect();
        let naive: f64 = big.iter().sum();
        assert!((stable_sum(&big) - naive).abs() < 1e-6);
    }

    #[test]
    fn aggregate_single_proposal() {
        let p = proposal("p", &["A", "B"], None);
        let votes = [
            vote("p", "x", ChoiceExpr::Single(1), 5.0),
            vote("p", "y", ChoiceExpr::Single(2), 3.0),
        ];
        let a = align(&p, &votes, 0);
        let agg = aggregate_alignment(std::slice::from_ref(&a), &[], 5).unwrap();
        assert_eq!(agg.mean_a, a.a_p);
        assert_eq!(agg.mean_h, a.h_p);
        assert_eq!(agg.mean_s, a.s_p);
        assert_eq!(agg.p_ai_final, 1.0);
        assert_eq!(agg.ai_above_token_benchmark, None);
        assert_eq!(
            aggregate_alignment(&[], &[], 5),
            Err(EvalError::EmptyEvaluation)
        );
    }

    fn synthetic(n: usize) -> Vec<ProposalAlignment> {
        (0..n)
            .map(|i| ProposalAlignment {
                proposal_id: format!("p{i:02}"),
                s_p: 0.3 + 0.07 * i as f64,
                a_p: 0.5,
                h_p: 0.5,
                ai_equals_final: i % 3 != 0,
                ai_index: i % 2,
                final_index: 0,
                kind: if i % 2 == 0 {
                    ProposalKind::Binary
                } else {
                    ProposalKind::Multi
                },
                calls_for_change: if i % 5 == 0 { None } else { Some(i % 4 < 2) },
                tie: false,
                n_voters: 4,
                total_vp: 1.0,
                final_ballot_mass: 3.0,
            })
            .collect()
    }

    #[test]
    fn contested_membership_and_full_threshold() {
        let rows = synthetic(10);
        let report = contested_subset(&rows, CONTESTED_THRESHOLD);
        // s_p = 0.30, 0.37, 0.44, 0.51, 0.58 are at or below 0.60.
        assert_eq!(report.all.n, 5);
        assert_eq!(report.binary.n + report.multi.n, 5);
        let full = contested_subset(&rows, 1.0);
        assert_eq!(full.all, subset_stats(&rows));
        let none = contested_subset(&rows, 0.0);
        assert_eq!(none.all.n, 0);
        assert_eq!(none.all.p_ai_final, None);
    }

    #[test]
    fn buckets_sum_to_total() {
        let rows = synthetic(20);
        let table = bucket_agreement(&rows);
        assert_eq!(table.iter().map(|r| r.n).sum::<usize>(), 20);
        assert_eq!(table.last().unwrap().bucket, Bucket::Unlabeled);
        let matching: Vec<_> = rows
            .into_iter()
            .map(|r| ProposalAlignment {
                ai_equals_final: true,
                ..r
            })
            .collect();
        for row in bucket_agreement(&matching) {
            if row.n > 0 {
                assert_eq!(row.ai, Some(1.0));
                assert_eq!(row.human, Some(0.75));
            }
        }
    }

    #[test]
    fn validity_cells() {
        let rows = synthetic(6);
        let mut windows = BTreeMap::new();
        for r in &rows {
            windows.insert(
                r.proposal_id.clone(),
                MarketWindow {
                    proposal_id: r.proposal_id.clone(),
                    window_days: 3,
                    event_day: 0,
                    price_pct_change: Some(if r.ai_equals_final { 1.0 } else { -1.0 }),
                    adj_return: None,
                    tvl_abnormal: None,
                    treasury_abnormal: None,
                    data_coverage: Default::default(),
                },
            );
        }
        let table = expost_validity(&rows, &windows);
        let all = table.last().unwrap();
        assert_eq!(all.bucket, None);
        assert_eq!(all.price_ai.probability, Some(1.0));
        assert_eq!(all.price_final.n, 6);
        assert_eq!(all.price_final.positive, 4);
        assert_eq!(
            all.tvl_ai,
            ProbabilityCell {
                n: 0,
                positive: 0,
                probability: None
            }
        );
    }

    #[test]
    fn temporal_divergence() {
        let post = synthetic(10);
        let same = temporal_comparison(&post, &post).unwrap();
        assert_eq!(same.divergence, 0.0);
        assert_eq!(same.ex_ante, same.ex_post);
        let mut ante = post.clone();
        ante[3].ai_index += 1;
        let one = temporal_comparison(&ante, &post).unwrap();
        assert_eq!(one.n_divergent, 1);
        assert!((one.divergence - 0.10).abs() < 1e-15);
        match temporal_comparison(&ante[1..], &post) {
            Err(EvalError::Coverage { missing }) => assert_eq!(missing, vec!["p00".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn contested_filter_is_monotone(s in proptest::collection::vec(0.0f64..=1.0, 1..40), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let rows: Vec<ProposalAlignment> = synthetic(s.len())
                .into_iter()
                .zip(&s)
                .map(|(r, &s_p)| ProposalAlignment { s_p, ..r })
                .collect();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(contested_members(&rows, lo).len() <= contested_members(&rows, hi).len());
        }

        #[test]
        fn single_choice_headcount_is_plain_fraction(
            picks in proptest::collection::vec((0u32..3, 0.1f64..100.0), 1..30),
            ai in 0usize..3,
        ) {
            let p = proposal("p", &["A", "B", "C"], None);
            let votes: Vec<VoteRecord> = picks
                .iter()
                .enumerate()
                .map(|(i, &(c, vp))| vote("p", &format!("v{i}"), ChoiceExpr::Single(c + 1), vp))
                .collect();
            let a = align(&p, &votes, ai);
            let count = picks.iter().filter(|(c, _)| *c as usize == ai).count();
            prop_assert_eq!(a.h_p, count as f64 / picks.len() as f64);
            prop_assert!((0.0..=1.0).contains(&a.s_p) && (0.0..=1.0).contains(&a.a_p));
            let identity = align(&p, &votes, a.final_index);
            prop_assert_eq!(identity.a_p, identity.s_p);
        }
    }
}
