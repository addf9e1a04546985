//! Temporal participation features of one proposal's vote stream.
//!
//! The voting window `[start, end]` is cut into four equal quartiles, each
//! half-open except the last, which also takes votes cast exactly at `end`.
//! Leadership is sampled after every vote event; an option leads only when its
//! cumulative voting power strictly exceeds every other option's.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::model::{tally_outcome, ChoiceWeights, ModelError, Proposal, Timestamp, VoteRecord};

pub const QUARTILES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("degenerate series for {proposal_id}: {reason}")]
    DegenerateSeries { proposal_id: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEvent {
    pub timestamp: Timestamp,
    pub voter: String,
    pub allocation: ChoiceWeights,
    pub vp: f64,
    pub quartile: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub unique_voters: usize,
    pub total_votes: usize,
    pub first_ts: Option<Timestamp>,
    pub last_ts: Option<Timestamp>,
    pub per_quartile_vp_sums: [f64; QUARTILES],
    pub per_quartile_votes: [usize; QUARTILES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationSeries {
    pub proposal_id: String,
    pub n_options: usize,
    pub window: (Timestamp, Timestamp),
    pub events: Vec<SeriesEvent>,
    pub meta: SeriesMeta,
    /// Ballots dropped because they fell outside the voting window.
    pub rejected: usize,
}

/// Quartile of `ts` within `[start, end]`, or `None` outside the window.
pub fn quartile_of(start: Timestamp, end: Timestamp, ts: Timestamp) -> Option<usize> {
    if ts < start || ts > end || start >= end {
        return None;
    }
    let offset = (ts - start) as i128;
    let len = (end - start) as i128;
    Some(((offset * QUARTILES as i128) / len).min(QUARTILES as i128 - 1) as usize)
}

pub fn build_participation_series(
    proposal: &Proposal,
    votes: &[VoteRecord],
) -> Result<ParticipationSeries, DynamicsError> {
    let n = proposal.n_options();
    let mut rejected = 0;
    let mut events = Vec::with_capacity(votes.len());
    for v in votes {
        let Some(quartile) = quartile_of(proposal.start, proposal.end, v.timestamp) else {
            rejected += 1;
            continue;
        };
        if v.proposal_id != proposal.proposal_id {
            return Err(ModelError::ProposalMismatch {
                expected: proposal.proposal_id.clone(),
                found: v.proposal_id.clone(),
            }
            .into());
        }
        events.push(SeriesEvent {
            timestamp: v.timestamp,
            voter: v.voter.clone(),
            allocation: v.allocation(n)?,
            vp: v.vp,
            quartile,
        });
    }
    if rejected > 0 {
        tracing::warn!(proposal = %proposal.proposal_id, rejected, "votes outside voting window dropped");
    }
    events.sort_by(|a, b| (a.timestamp, &a.voter).cmp(&(b.timestamp, &b.voter)));

    let mut meta = SeriesMeta {
        total_votes: events.len(),
        first_ts: events.first().map(|e| e.timestamp),
        last_ts: events.last().map(|e| e.timestamp),
        unique_voters: events
            .iter()
            .map(|e| e.voter.as_str())
            .collect::<BTreeSet<_>>()
            .len(),
        ..Default::default()
    };
    for e in &events {
        meta.per_quartile_vp_sums[e.quartile] += e.vp;
        meta.per_quartile_votes[e.quartile] += 1;
    }
    Ok(ParticipationSeries {
        proposal_id: proposal.proposal_id.clone(),
        n_options: n,
        window: (proposal.start, proposal.end),
        events,
        meta,
        rejected,
    })
}

impl ParticipationSeries {
    pub fn total_vp(&self) -> f64 {
        self.events.iter().map(|e| e.vp).sum()
    }

    pub fn winner_total(&self, winner: usize) -> f64 {
        self.events
            .iter()
            .map(|e| e.vp * e.allocation.on(winner))
            .sum()
    }

    /// Current cumulative-VP leader after each event (`None` on ties).
    pub fn leaders(&self) -> Vec<Option<usize>> {
        let mut cumulative = vec![0.0; self.n_options];
        self.events
            .iter()
            .map(|e| {
                for (c, share) in cumulative.iter_mut().zip(e.allocation.as_slice()) {
                    *c += e.vp * share;
                }
                strict_leader(&cumulative)
            })
            .collect()
    }
}

fn strict_leader(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    let mut tied = false;
    for (i, &v) in values.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if v > values[b] => {
                best = Some(i);
                tied = false;
            }
            Some(b) if v == values[b] => tied = true,
            _ => {}
        }
    }
    if tied {
        None
    } else {
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadMetrics {
    /// `[quartile][option]`
    pub lead_ratio_by_quartile: Vec<Vec<f64>>,
    pub lead_ratio_total: Vec<f64>,
    pub early_ratio: Vec<f64>,
}

pub fn lead_metrics(series: &ParticipationSeries) -> LeadMetrics {
    let n = series.n_options;
    let mut hits = vec![vec![0usize; n]; QUARTILES];
    for (event, leader) in series.events.iter().zip(series.leaders()) {
        if let Some(i) = leader {
            hits[event.quartile][i] += 1;
        }
    }
    let by_quartile = hits
        .iter()
        .zip(series.meta.per_quartile_votes)
        .map(|(row, votes)| {
            row.iter()
                .map(|&h| h as f64 / votes.max(1) as f64)
                .collect()
        })
        .collect();
    let totals: Vec<usize> = (0..n)
        .map(|i| hits.iter().map(|row| row[i]).sum())
        .collect();
    let grand: usize = totals.iter().sum();
    let lead_ratio_total = if grand == 0 {
        vec![0.0; n]
    } else {
        totals.iter().map(|&t| t as f64 / grand as f64).collect()
    };
    let q1: usize = hits[0].iter().sum();
    let early_ratio = hits[0]
        .iter()
        .map(|&h| h as f64 / q1.max(1) as f64)
        .collect();
    LeadMetrics {
        lead_ratio_by_quartile: by_quartile,
        lead_ratio_total,
        early_ratio,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeMetrics {
    pub spike_index: f64,
    /// The largest single step exceeded the winner's whole tally.
    pub overflow: bool,
    /// Position of the spike event in the sorted event list.
    pub spike_event: usize,
    pub follow_support_ratio: f64,
    /// No voting power arrived after the spike.
    pub empty_tail: bool,
}

pub fn spike_metrics(
    series: &ParticipationSeries,
    winner: usize,
) -> Result<SpikeMetrics, DynamicsError> {
    let winner_total = series.winner_total(winner);
    if winner_total <= 0.0 || series.events.is_empty() {
        return Err(DynamicsError::DegenerateSeries {
            proposal_id: series.proposal_id.clone(),
            reason: format!("option {winner} has no voting power"),
        });
    }
    let mut spike_event = 0;
    for (i, e) in series.events.iter().enumerate() {
        if e.vp > series.events[spike_event].vp {
            spike_event = i;
        }
    }
    let raw = series.events[spike_event].vp / winner_total;
    let tail = &series.events[spike_event + 1..];
    let tail_total: f64 = tail.iter().map(|e| e.vp).sum();
    let tail_winner: f64 = tail.iter().map(|e| e.vp * e.allocation.on(winner)).sum();
    let empty_tail = tail_total <= 0.0;
    Ok(SpikeMetrics {
        spike_index: raw.min(1.0),
        overflow: raw > 1.0,
        spike_event,
        follow_support_ratio: if empty_tail {
            0.0
        } else {
            tail_winner / tail_total
        },
        empty_tail,
    })
}

/// One minus the share of the winner's tally carried by its top decile of
/// supporting events (`ceil(k/10)` of `k`).
pub fn stairwise_ratio(series: &ParticipationSeries, winner: usize) -> Result<f64, DynamicsError> {
    let mut contributions: Vec<f64> = series
        .events
        .iter()
        .filter(|e| e.allocation.on(winner) > 0.0)
        .map(|e| e.vp * e.allocation.on(winner))
        .collect();
    let total: f64 = contributions.iter().sum();
    if contributions.is_empty() || total <= 0.0 {
        return Err(DynamicsError::DegenerateSeries {
            proposal_id: series.proposal_id.clone(),
            reason: format!("no voting power allocated to option {winner}"),
        });
    }
    contributions.sort_by(|a, b| b.total_cmp(a));
    let top = contributions.len().div_ceil(10);
    let top_mass: f64 = contributions[..top].iter().sum();
    Ok(1.0 - top_mass / total)
}

/// Mean per-event voting power in the late half of the window minus the early
/// half; an empty half contributes zero.
pub fn half_slope_diff(series: &ParticipationSeries) -> f64 {
    let (start, end) = series.window;
    let len = (end - start) as i128;
    let (mut early, mut late) = ((0.0, 0usize), (0.0, 0usize));
    for e in &series.events {
        let slot = if 2 * (e.timestamp - start) as i128 >= len {
            &mut late
        } else {
            &mut early
        };
        slot.0 += e.vp;
        slot.1 += 1;
    }
    let mean = |(sum, n): (f64, usize)| if n == 0 { 0.0 } else { sum / n as f64 };
    mean(late) - mean(early)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsFeatures {
    pub proposal_id: String,
    pub meta: SeriesMeta,
    pub lead: LeadMetrics,
    /// Option the spike and stair metrics are measured against.
    pub winner: Option<usize>,
    pub spike: Option<SpikeMetrics>,
    pub stairwise_ratio: Option<f64>,
    pub half_slope_diff: f64,
}

/// Computes every feature. Spike and stair metrics are absent when the winner
/// is unknown or has no support.
pub fn compute_features(series: &ParticipationSeries, winner: Option<usize>) -> DynamicsFeatures {
    DynamicsFeatures {
        proposal_id: series.proposal_id.clone(),
        meta: series.meta.clone(),
        lead: lead_metrics(series),
        winner,
        spike: winner.and_then(|w| spike_metrics(series, w).ok()),
        stairwise_ratio: winner.and_then(|w| stairwise_ratio(series, w).ok()),
        half_slope_diff: half_slope_diff(series),
    }
}

/// Features of every proposal in canonical order, measured against the final
/// winner. Proposals whose votes fail validation are returned as errors.
pub fn dataset_features(dataset: &Dataset) -> Vec<Result<DynamicsFeatures, DynamicsError>> {
    dataset
        .proposals()
        .par_iter()
        .map(|p| {
            let votes = dataset.votes_for(&p.proposal_id);
            let series = build_participation_series(p, votes)?;
            let winner = tally_outcome(p, votes)
                .ok()
                .filter(|o| o.total_vp > 0.0)
                .map(|o| o.final_index);
            Ok(compute_features(&series, winner))
        })
        .collect()
}

/// Column order of the per-proposal feature CSV. Vector-valued features are
/// `;`-joined per option; the quartile matrix joins rows with `|`.
pub const CSV_COLUMNS: [&str; 20] = [
    "proposal_id",
    "n_options",
    "unique_voters",
    "total_votes",
    "first_ts",
    "last_ts",
    "q1_vp",
    "q2_vp",
    "q3_vp",
    "q4_vp",
    "lead_ratio_by_quartile",
    "lead_ratio_total",
    "early_ratio",
    "winner",
    "spike_index",
    "spike_overflow",
    "spike_follow_support_ratio",
    "spike_empty_tail",
    "stairwise_ratio",
    "half_slope_diff",
];

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl DynamicsFeatures {
    pub fn csv_record(&self) -> Vec<String> {
        let m = &self.meta;
        vec![
            self.proposal_id.clone(),
            self.lead.lead_ratio_total.len().to_string(),
            m.unique_voters.to_string(),
            m.total_votes.to_string(),
            opt(m.first_ts),
            opt(m.last_ts),
            m.per_quartile_vp_sums[0].to_string(),
            m.per_quartile_vp_sums[1].to_string(),
            m.per_quartile_vp_sums[2].to_string(),
            m.per_quartile_vp_sums[3].to_string(),
            self.lead
                .lead_ratio_by_quartile
                .iter()
                .map(|r| join(r))
                .collect::<Vec<_>>()
                .join("|"),
            join(&self.lead.lead_ratio_total),
            join(&self.lead.early_ratio),
            opt(self.winner.map(|w| w + 1)),
            opt(self.spike.as_ref().map(|s| s.spike_index)),
            opt(self.spike.as_ref().map(|s| s.overflow)),
            opt(self.spike.as_ref().map(|s| s.follow_support_ratio)),
            opt(self.spike.as_ref().map(|s| s.empty_tail)),
            opt(self.stairwise_ratio),
            self.half_slope_diff.to_string(),
        ]
    }
}

pub fn write_csv<W: std::io::Write>(
    out: W,
    features: &[DynamicsFeatures],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for f in features {
        w.write_record(f.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChoiceExpr;

    fn proposal(n: usize) -> Proposal {
        Proposal {
            proposal_id: "p".into(),
            space_id: "s".into(),
            title: "t".into(),
            body: None,
            choices: (0..n).map(|i| format!("opt{i}")).collect(),
            created_at: 0,
            start: 0,
            end: 1000,
            calls_for_change: None,
            category: None,
        }
    }

    fn vote(i: usize, ts: Timestamp, choice: u32, vp: f64) -> VoteRecord {
        VoteRecord {
            proposal_id: "p".into(),
            voter: format!("v{i:04}"),
            choice: ChoiceExpr::Single(choice),
            vp,
            timestamp: ts,
        }
    }

    fn series(votes: &[VoteRecord]) -> ParticipationSeries {
        build_participation_series(&proposal(2), votes).unwrap()
    }

    #[test]
    fn quartile_boundaries() {
        let s = series(&[
            vote(0, 100, 1, 1.0),
            vote(1, 300, 1, 1.0),
            vote(2, 600, 1, 1.0),
            vote(3, 900, 1, 1.0),
        ]);
        assert_eq!(s.meta.per_quartile_votes, [1, 1, 1, 1]);
        assert_eq!(quartile_of(0, 1000, 250), Some(1));
        assert_eq!(quartile_of(0, 1000, 249), Some(0));
        assert_eq!(quartile_of(0, 1000, 1000), Some(3));
        assert_eq!(quartile_of(0, 1000, 1001), None);
    }

    #[test]
    fn vote_at_end_is_last_quartile() {
        let s = series(&[vote(0, 1000, 1, 1.0)]);
        assert_eq!(s.meta.per_quartile_votes, [0, 0, 0, 1]);
    }

    #[test]
    fn empty_series_has_zero_meta() {
        let s = series(&[]);
        assert_eq!(s.meta, SeriesMeta::default());
        let lead = lead_metrics(&s);
        assert_eq!(lead.lead_ratio_total, vec![0.0, 0.0]);
        assert_eq!(half_slope_diff(&s), 0.0);
    }

    #[test]
    fn out_of_window_votes_are_rejected() {
        let mut v = vote(0, 1001, 1, 1.0);
        let s = series(&[v.clone(), vote(1, 5, 2, 1.0)]);
        assert_eq!(s.rejected, 1);
        assert_eq!(s.events.len(), 1);
        v.timestamp = -1;
        assert_eq!(series(&[v]).rejected, 1);
    }

    #[test]
    fn single_early_vote_leads() {
        let lead = lead_metrics(&series(&[vote(0, 10, 1, 3.0)]));
        assert_eq!(lead.early_ratio, vec![1.0, 0.0]);
        assert_eq!(lead.lead_ratio_total, vec![1.0, 0.0]);
        assert_eq!(lead.lead_ratio_by_quartile[0], vec![1.0, 0.0]);
    }

    #[test]
    fn alternating_leads_split_evenly() {
        // A, B(+2), A(+2), B(+2): leaders A, B, A, B.
        let s = series(&[
            vote(0, 10, 1, 1.0),
            vote(1, 20, 2, 2.0),
            vote(2, 30, 1, 2.0),
            vote(3, 40, 2, 2.0),
        ]);
        assert_eq!(s.leaders(), vec![Some(0), Some(1), Some(0), Some(1)]);
        assert_eq!(lead_metrics(&s).lead_ratio_total, vec![0.5, 0.5]);
    }

    #[test]
    fn ties_award_no_lead() {
        let s = series(&[
            vote(0, 10, 1, 0.0),
            vote(1, 20, 1, 2.0),
            vote(2, 30, 2, 2.0),
        ]);
        assert_eq!(s.leaders(), vec![None, Some(0), None]);
        let s = series(&[vote(0, 10, 1, 0.0), vote(1, 20, 2, 0.0)]);
        assert_eq!(lead_metrics(&s).lead_ratio_total, vec![0.0, 0.0]);
    }

    #[test]
    fn spike_single_event() {
        let s = series(&[vote(0, 10, 1, 10.0)]);
        let m = spike_metrics(&s, 0).unwrap();
        assert_eq!(m.spike_index, 1.0);
        assert!(m.empty_tail);
        assert_eq!(m.follow_support_ratio, 0.0);
    }

    #[test]
    fn spike_in_the_middle() {
        let vps = [1.0, 1.0, 8.0, 1.0, 1.0];
        let votes: Vec<_> = vps
            .iter()
            .enumerate()
            .map(|(i, &vp)| vote(i, 10 + i as i64, 1, vp))
            .collect();
        let m = spike_metrics(&series(&votes), 0).unwrap();
        assert_eq!(m.spike_index, 8.0 / 12.0);
        assert_eq!(m.follow_support_ratio, 1.0);
        assert_eq!(m.spike_event, 2);
        assert!(!m.empty_tail);
    }

    #[test]
    fn spike_last_event_has_empty_tail() {
        let m = spike_metrics(&series(&[vote(0, 10, 1, 1.0), vote(1, 20, 1, 5.0)]), 0).unwrap();
        assert!(m.empty_tail);
        assert_eq!(m.follow_support_ratio, 0.0);
    }

    #[test]
    fn losing_whale_overflows() {
        let m = spike_metrics(
            &series(&[
                vote(0, 10, 1, 1.0),
                vote(1, 20, 2, 5.0),
                vote(2, 30, 1, 1.0),
            ]),
            0,
        )
        .unwrap();
        assert!(m.overflow);
        assert_eq!(m.spike_index, 1.0);
        assert_eq!(m.follow_support_ratio, 1.0);
    }

    #[test]
    fn spike_requires_winner_support() {
        let err = spike_metrics(&series(&[vote(0, 10, 2, 1.0)]), 0).unwrap_err();
        assert!(matches!(err, DynamicsError::DegenerateSeries { .. }));
    }

    #[test]
    fn stairwise_examples() {
        let equal: Vec<_> = (0..10).map(|i| vote(i, 10 + i as i64, 1, 1.0)).collect();
        assert!((stairwise_ratio(&series(&equal), 0).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(
            stairwise_ratio(&series(&[vote(0, 10, 1, 4.0)]), 0).unwrap(),
            0.0
        );
        let mut whale: Vec<_> = (0..9).map(|i| vote(i, 10 + i as i64, 1, 1.0)).collect();
        whale.push(vote(9, 500, 1, 90.0));
        assert!((stairwise_ratio(&series(&whale), 0).unwrap() - (1.0 - 90.0 / 99.0)).abs() < 1e-12);
        assert!(stairwise_ratio(&series(&[vote(0, 10, 2, 1.0)]), 0).is_err());
    }

    #[test]
    fn half_slope_examples() {
        let uniform: Vec<_> = (0..8)
            .map(|i| vote(i, 50 + 125 * i as i64, 1, 2.0))
            .collect();
        assert!(half_slope_diff(&series(&uniform)).abs() <= 1e-12);
        let mut mixed: Vec<_> = (0..4).map(|i| vote(i, 10 + i as i64, 1, 1.0)).collect();
        mixed.extend((4..8).map(|i| vote(i, 600 + i as i64, 1, 3.0)));
        assert_eq!(half_slope_diff(&series(&mixed)), 2.0);
        let early: Vec<_> = (0..3)
            .map(|i| vote(i, 10 + i as i64, 1, 1.0 + i as f64))
            .collect();
        assert_eq!(half_slope_diff(&series(&early)), -2.0);
        // The midpoint itself belongs to the late half.
        assert_eq!(half_slope_diff(&series(&[vote(0, 500, 1, 4.0)])), 4.0);
    }

    #[test]
    fn weighted_ballots_allocate_fractionally() {
        let mut v = vote(0, 10, 1, 10.0);
        v.choice = ChoiceExpr::Weighted([(1, 3.0), (2, 1.0)].into());
        let s = series(&[v, vote(1, 20, 2, 1.0)]);
        assert_eq!(s.winner_total(0), 7.5);
        assert_eq!(stairwise_ratio(&s, 1).unwrap(), 1.0 - 2.5 / 3.5);
    }

    #[test]
    fn csv_has_documented_columns() {
        let s = series(&[vote(0, 10, 1, 10.0), vote(1, 700, 2, 1.0)]);
        let f = compute_features(&s, Some(0));
        let mut buf = Vec::new();
        write_csv(&mut buf, &[f]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        let row = lines.next().unwrap();
        assert!(row.starts_with("p,2,2,2,10,700,10,0,1,0,"));
    }
}
