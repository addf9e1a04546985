//! Brute-force reference metrics.
//!
//! Everything here is recomputed from raw records with the plainest possible
//! loops: no incremental state, no shared helpers from the production
//! modules. Leaders are found by re-summing each prefix from scratch, so the
//! cost is quadratic in the number of ballots. Only the plain record types
//! are borrowed from the core crate.

use std::collections::{BTreeMap, BTreeSet};

use dao_align_core::model::{ChoiceExpr, MarketMetric, Proposal, VoteRecord};
use dao_align_core::policy::{CutoffMode, PolicyDecision};
use dao_align_core::Dataset;

const DAY: i64 = 86_400;

/// Quarter of the voting window a timestamp falls in, or `None` outside it.
pub fn quartile(start: i64, end: i64, ts: i64) -> Option<usize> {
    if end <= start || ts < start || ts > end {
        return None;
    }
    let q = (4 * (ts - start) as i128) / (end - start) as i128;
    Some(if q > 3 { 3 } else { q as usize })
}

/// Per-option share of one ballot.
pub fn shares(choice: &ChoiceExpr, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    match choice {
        ChoiceExpr::Single(i) => out[*i as usize - 1] = 1.0,
        ChoiceExpr::Approval(list) => {
            for i in list {
                out[*i as usize - 1] += 1.0 / list.len() as f64;
            }
        }
        ChoiceExpr::Weighted(map) => {
            let mut total = 0.0;
            for w in map.values() {
                total += w;
            }
            for (i, w) in map {
                out[*i as usize - 1] += w / total;
            }
        }
    }
    out
}

fn first_max(values: &[f64]) -> usize {
    let mut best = 0;
    for i in 0..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

fn plain_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut s = 0.0;
    for v in values {
        s += v;
    }
    Some(s / values.len() as f64)
}

/// numpy-style linear quantile.
fn plain_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = if lo + 1 < v.len() { lo + 1 } else { lo };
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub q25: f64,
    pub q75: f64,
    pub max: f64,
}

fn summary(values: &[f64]) -> OracleSummary {
    let mean = plain_mean(values).unwrap();
    let mut ss = 0.0;
    for v in values {
        ss += (v - mean) * (v - mean);
    }
    let std = if values.len() > 1 {
        (ss / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    OracleSummary {
        n: values.len(),
        mean,
        median: plain_quantile(values, 0.5).unwrap(),
        std,
        q25: plain_quantile(values, 0.25).unwrap(),
        q75: plain_quantile(values, 0.75).unwrap(),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub per_option: Vec<f64>,
    pub total: f64,
    pub n_voters: usize,
    pub final_index: usize,
    pub tie: bool,
    /// Sum of ballot shares per option.
    pub ballot_mass: Vec<f64>,
}

fn outcome(proposal: &Proposal, votes: &[VoteRecord]) -> Option<OracleOutcome> {
    let n = proposal.choices.len();
    let mut per_option = vec![0.0; n];
    let mut ballot_mass = vec![0.0; n];
    let mut total = 0.0;
    let mut voters = BTreeSet::new();
    for v in votes {
        let s = shares(&v.choice, n);
        for i in 0..n {
            per_option[i] += v.vp * s[i];
            ballot_mass[i] += s[i];
        }
        total += v.vp;
        voters.insert(v.voter.clone());
    }
    if votes.is_empty() || total <= 0.0 {
        return None;
    }
    let final_index = first_max(&per_option);
    let tie = (0..n).any(|i| i != final_index && per_option[i] == per_option[final_index]);
    Some(OracleOutcome {
        per_option,
        total,
        n_voters: voters.len(),
        final_index,
        tie,
        ballot_mass,
    })
}

fn is_binary(proposal: &Proposal) -> bool {
    proposal
        .choices
        .iter()
        .filter(|c| !c.trim().eq_ignore_ascii_case("abstain"))
        .count()
        == 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAlignment {
    pub proposal_id: String,
    pub s: f64,
    pub a: f64,
    pub h: f64,
    pub hit: bool,
    pub ai_index: usize,
    pub binary: bool,
    pub change: Option<bool>,
    pub n_voters: usize,
    pub final_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleVoter {
    pub voter: String,
    pub n: usize,
    pub tilde: Option<f64>,
    pub hat: f64,
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSubset {
    pub n: usize,
    pub p_ai_final: Option<f64>,
    pub mean_a: Option<f64>,
    pub mean_h: Option<f64>,
    pub mean_s: Option<f64>,
}

fn subset(rows: &[&OracleAlignment]) -> OracleSubset {
    let col = |f: &dyn Fn(&OracleAlignment) -> f64| {
        plain_mean(&rows.iter().map(|r| f(r)).collect::<Vec<_>>())
    };
    OracleSubset {
        n: rows.len(),
        p_ai_final: col(&|r| if r.hit { 1.0 } else { 0.0 }),
        mean_a: col(&|r| r.a),
        mean_h: col(&|r| r.h),
        mean_s: col(&|r| r.s),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleBucket {
    pub name: &'static str,
    pub n: usize,
    pub human: Option<f64>,
    pub ai: Option<f64>,
    pub difference_pp: Option<f64>,
}

/// `(n, positive, probability)`.
pub type OracleCell = (usize, usize, Option<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct OracleValidity {
    /// `None` for the all-proposals row.
    pub bucket: Option<&'static str>,
    pub price_ai: OracleCell,
    pub price_final: OracleCell,
    pub tvl_ai: OracleCell,
    pub tvl_final: OracleCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePolicy {
    pub policy_id: String,
    pub cutoff: CutoffMode,
    pub rows: Vec<OracleAlignment>,
    pub p_ai_final: f64,
    pub mean_a: f64,
    pub mean_h: f64,
    pub mean_s: f64,
    /// a, h, s, n_voters.
    pub distribution: [OracleSummary; 4],
    pub buckets: Vec<OracleBucket>,
    pub validity: Vec<OracleValidity>,
    pub contested_all: OracleSubset,
    pub contested_binary: OracleSubset,
    pub contested_multi: OracleSubset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTemporal {
    pub policy_id: String,
    pub n: usize,
    pub n_divergent: usize,
    pub divergence: f64,
    pub ex_ante: OracleSubset,
    pub ex_post: OracleSubset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMarket {
    pub event_day: i64,
    pub price_pct_change: Option<f64>,
    pub adj_return: Option<f64>,
    pub tvl_abnormal: Option<f64>,
    pub treasury_abnormal: Option<f64>,
    /// `(pre, post)` sample counts for price, index, tvl, treasury.
    pub coverage: [(usize, usize); 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpike {
    pub spike_index: f64,
    pub overflow: bool,
    pub spike_event: usize,
    pub follow_support_ratio: f64,
    pub empty_tail: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleDynamics {
    pub unique_voters: usize,
    pub total_votes: usize,
    pub first_ts: Option<i64>,
    pub last_ts: Option<i64>,
    pub quartile_vp: [f64; 4],
    pub quartile_votes: [usize; 4],
    pub lead_by_quartile: Vec<Vec<f64>>,
    pub lead_total: Vec<f64>,
    pub early: Vec<f64>,
    pub spike: Option<OracleSpike>,
    pub stairwise: Option<f64>,
    pub half_slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub contested_threshold: f64,
    pub min_participation: usize,
    pub window_days: u32,
    pub exclude_ties: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            contested_threshold: 0.60,
            min_participation: 5,
            window_days: 3,
            exclude_ties: false,
        }
    }
}

/// One policy's decisions at one cutoff.
#[derive(Debug, Clone)]
pub struct OracleDecisions {
    pub policy_id: String,
    pub cutoff: CutoffMode,
    pub decisions: Vec<PolicyDecision>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleBundle {
    pub outcomes: BTreeMap<String, OracleOutcome>,
    pub degenerate: Vec<String>,
    pub n_ties: usize,
    pub voters: Vec<OracleVoter>,
    pub n_eligible: usize,
    pub mean_tilde: Option<f64>,
    pub median_tilde: Option<f64>,
    pub mean_hat: Option<f64>,
    pub median_hat: Option<f64>,
    /// Sorted by policy id, ex-ante before ex-post.
    pub policies: Vec<OraclePolicy>,
    pub temporal: Vec<OracleTemporal>,
    pub dynamics: BTreeMap<String, OracleDynamics>,
    pub market: BTreeMap<String, OracleMarket>,
}

fn bucket_name(row: &OracleAlignment) -> &'static str {
    match (row.binary, row.change) {
        (_, None) => "unlabeled",
        (true, Some(true)) => "binary_change_yes",
        (true, Some(false)) => "binary_change_no",
        (false, Some(true)) => "multi_change_yes",
        (false, Some(false)) => "multi_change_no",
    }
}

const BUCKETS: [&str; 5] = [
    "binary_change_yes",
    "binary_change_no",
    "multi_change_yes",
    "multi_change_no",
    "unlabeled",
];

fn cell(values: &[f64]) -> OracleCell {
    let positive = values.iter().filter(|v| **v > 0.0).count();
    let p = if values.is_empty() {
        None
    } else {
        Some(positive as f64 / values.len() as f64)
    };
    (values.len(), positive, p)
}

/// Sample counts and relative change of one series around `event_day`.
fn series_change(
    dataset: &Dataset,
    space: &str,
    metric: MarketMetric,
    event_day: i64,
    w: i64,
) -> ((usize, usize), Option<f64>) {
    let mut pre = Vec::new();
    let mut post = Vec::new();
    for series in dataset.market_for(space) {
        if series.metric != metric {
            continue;
        }
        for sample in &series.samples {
            if sample.day >= event_day - w && sample.day < event_day {
                pre.push(sample.value);
            }
            if sample.day > event_day && sample.day <= event_day + w {
                post.push(sample.value);
            }
        }
        break;
    }
    let change = match (plain_mean(&pre), plain_mean(&post)) {
        (Some(a), Some(b)) if a > 0.0 => Some(b / a - 1.0),
        _ => None,
    };
    ((pre.len(), post.len()), change)
}

pub fn oracle_market(dataset: &Dataset, proposal: &Proposal, window_days: u32) -> OracleMarket {
    let w = if window_days == 0 {
        1
    } else {
        window_days as i64
    };
    let event_day = proposal.end.div_euclid(DAY);
    let space = proposal.space_id.as_str();
    let (pc, price) = series_change(dataset, space, MarketMetric::Price, event_day, w);
    let (ic, index) = series_change(dataset, space, MarketMetric::Index, event_day, w);
    let (tc, tvl) = series_change(dataset, space, MarketMetric::Tvl, event_day, w);
    let (rc, treasury) = series_change(dataset, space, MarketMetric::Treasury, event_day, w);
    OracleMarket {
        event_day,
        price_pct_change: price.map(|p| 100.0 * p),
        adj_return: match (price, index) {
            (Some(p), Some(i)) => Some(100.0 * (p - i)),
            _ => None,
        },
        tvl_abnormal: tvl,
        treasury_abnormal: treasury,
        coverage: [pc, ic, tc, rc],
    }
}

pub fn oracle_dynamics(
    proposal: &Proposal,
    votes: &[VoteRecord],
    winner: Option<usize>,
) -> OracleDynamics {
    let n = proposal.choices.len();
    let (start, end) = (proposal.start, proposal.end);
    let mut events: Vec<(i64, String, f64, Vec<f64>, usize)> = Vec::new();
    for v in votes {
        if let Some(q) = quartile(start, end, v.timestamp) {
            events.push((v.timestamp, v.voter.clone(), v.vp, shares(&v.choice, n), q));
        }
    }
    events.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));

    let mut quartile_vp = [0.0; 4];
    let mut quartile_votes = [0usize; 4];
    for e in &events {
        quartile_vp[e.4] += e.2;
        quartile_votes[e.4] += 1;
    }

    let mut hits = vec![vec![0usize; n]; 4];
    for i in 0..events.len() {
        let mut cum = vec![0.0; n];
        for e in &events[..=i] {
            for (c, share) in cum.iter_mut().zip(&e.3) {
                *c += e.2 * share;
            }
        }
        let top = first_max(&cum);
        let unique = (0..n).all(|o| o == top || cum[o] != cum[top]);
        if unique {
            hits[events[i].4][top] += 1;
        }
    }
    let lead_by_quartile: Vec<Vec<f64>> = (0..4)
        .map(|q| {
            let denom = quartile_votes[q].max(1) as f64;
            hits[q].iter().map(|&h| h as f64 / denom).collect()
        })
        .collect();
    let grand: usize = hits.iter().flatten().sum();
    let lead_total: Vec<f64> = (0..n)
        .map(|o| {
            let t: usize = (0..4).map(|q| hits[q][o]).sum();
            if grand == 0 {
                0.0
            } else {
                t as f64 / grand as f64
            }
        })
        .collect();
    let q1: usize = hits[0].iter().sum();
    let early: Vec<f64> = hits[0]
        .iter()
        .map(|&h| h as f64 / q1.max(1) as f64)
        .collect();

    let spike = winner.and_then(|w| {
        let mut winner_total = 0.0;
        for e in &events {
            winner_total += e.2 * e.3[w];
        }
        if events.is_empty() || winner_total <= 0.0 {
            return None;
        }
        let mut at = 0;
        for (i, e) in events.iter().enumerate() {
            if e.2 > events[at].2 {
                at = i;
            }
        }
        let raw = events[at].2 / winner_total;
        let mut tail_total = 0.0;
        let mut tail_winner = 0.0;
        for e in &events[at + 1..] {
            tail_total += e.2;
            tail_winner += e.2 * e.3[w];
        }
        let empty_tail = tail_total <= 0.0;
        Some(OracleSpike {
            spike_index: if raw > 1.0 { 1.0 } else { raw },
            overflow: raw > 1.0,
            spike_event: at,
            follow_support_ratio: if empty_tail {
                0.0
            } else {
                tail_winner / tail_total
            },
            empty_tail,
        })
    });

    let stairwise = winner.and_then(|w| {
        let mut parts: Vec<f64> = events
            .iter()
            .filter(|e| e.3[w] > 0.0)
            .map(|e| e.2 * e.3[w])
            .collect();
        let mut total = 0.0;
        for p in &parts {
            total += p;
        }
        if parts.is_empty() || total <= 0.0 {
            return None;
        }
        parts.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let top = parts.len().div_ceil(10);
        let mut top_mass = 0.0;
        for p in &parts[..top] {
            top_mass += p;
        }
        Some(1.0 - top_mass / total)
    });

    let (mut early_sum, mut early_n, mut late_sum, mut late_n) = (0.0, 0usize, 0.0, 0usize);
    for e in &events {
        if 2 * (e.0 - start) >= end - start {
            late_sum += e.2;
            late_n += 1;
        } else {
            early_sum += e.2;
            early_n += 1;
        }
    }
    let late_mean = if late_n == 0 {
        0.0
    } else {
        late_sum / late_n as f64
    };
    let early_mean = if early_n == 0 {
        0.0
    } else {
        early_sum / early_n as f64
    };

    OracleDynamics {
        unique_voters: events
            .iter()
            .map(|e| e.1.as_str())
            .collect::<BTreeSet<_>>()
            .len(),
        total_votes: events.len(),
        first_ts: events.first().map(|e| e.0),
        last_ts: events.last().map(|e| e.0),
        quartile_vp,
        quartile_votes,
        lead_by_quartile,
        lead_total,
        early,
        spike,
        stairwise,
        half_slope: late_mean - early_mean,
    }
}

/// Recomputes every metric for `dataset` and the decision sets.
pub fn oracle_metrics(
    dataset: &Dataset,
    sets: &[OracleDecisions],
    options: &OracleOptions,
) -> OracleBundle {
    let mut outcomes = BTreeMap::new();
    let mut degenerate = Vec::new();
    for p in dataset.proposals() {
        match outcome(p, dataset.votes_for(&p.proposal_id)) {
            Some(o) => {
                outcomes.insert(p.proposal_id.clone(), o);
            }
            None => degenerate.push(p.proposal_id.clone()),
        }
    }
    let n_ties = outcomes.values().filter(|o| o.tie).count();
    if options.exclude_ties {
        outcomes.retain(|_, o| !o.tie);
    }

    let mut per_voter: BTreeMap<String, (f64, f64, f64, usize)> = BTreeMap::new();
    for (id, o) in &outcomes {
        let p = dataset.proposal(id).unwrap();
        for v in dataset.votes_for(id) {
            let on_final = shares(&v.choice, p.choices.len())[o.final_index];
            let e = per_voter
                .entry(v.voter.clone())
                .or_insert((0.0, 0.0, 0.0, 0));
            e.0 += v.vp;
            e.1 += v.vp * on_final;
            e.2 += on_final;
            e.3 += 1;
        }
    }
    let clamp = |x: f64| x.clamp(0.0, 1.0);
    let voters: Vec<OracleVoter> = per_voter
        .into_iter()
        .map(|(voter, (w, wm, m, n))| OracleVoter {
            voter,
            n,
            tilde: if w > 0.0 { Some(clamp(wm / w)) } else { None },
            hat: clamp(m / n as f64),
            eligible: n >= options.min_participation,
        })
        .collect();
    let tilde: Vec<f64> = voters
        .iter()
        .filter(|v| v.eligible)
        .filter_map(|v| v.tilde)
        .collect();
    let hat: Vec<f64> = voters
        .iter()
        .filter(|v| v.eligible)
        .map(|v| v.hat)
        .collect();

    let mut ordered: Vec<&OracleDecisions> = sets.iter().collect();
    ordered.sort_by(|a, b| (&a.policy_id, a.cutoff).cmp(&(&b.policy_id, b.cutoff)));
    let mut policies = Vec::new();
    for set in ordered {
        let mut rows = Vec::new();
        for p in dataset.proposals() {
            let Some(o) = outcomes.get(&p.proposal_id) else {
                continue;
            };
            let d = set
                .decisions
                .iter()
                .find(|d| d.proposal_id == p.proposal_id)
                .expect("oracle needs a decision per proposal");
            let ai = d.selected_option - 1;
            rows.push(OracleAlignment {
                proposal_id: p.proposal_id.clone(),
                s: (o.per_option[o.final_index] / o.total).min(1.0),
                a: (o.per_option[ai] / o.total).min(1.0),
                h: (o.ballot_mass[ai] / o.n_voters as f64).min(1.0),
                hit: ai == o.final_index,
                ai_index: ai,
                binary: is_binary(p),
                change: p.calls_for_change,
                n_voters: o.n_voters,
                final_mass: o.ballot_mass[o.final_index],
            });
        }
        let col = |f: &dyn Fn(&OracleAlignment) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
        let a = col(&|r| r.a);
        let h = col(&|r| r.h);
        let s = col(&|r| r.s);
        let nv = col(&|r| r.n_voters as f64);
        let hits = col(&|r| if r.hit { 1.0 } else { 0.0 });

        let buckets = BUCKETS
            .iter()
            .map(|&name| {
                let members: Vec<&OracleAlignment> =
                    rows.iter().filter(|r| bucket_name(r) == name).collect();
                let mut mass = 0.0;
                let mut ballots = 0usize;
                let mut hit = 0usize;
                for m in &members {
                    mass += m.final_mass;
                    ballots += m.n_voters;
                    if m.hit {
                        hit += 1;
                    }
                }
                let human = if ballots > 0 {
                    Some(mass / ballots as f64)
                } else {
                    None
                };
                let ai = if members.is_empty() {
                    None
                } else {
                    Some(hit as f64 / members.len() as f64)
                };
                OracleBucket {
                    name,
                    n: members.len(),
                    human,
                    ai,
                    difference_pp: match (human, ai) {
                        (Some(h), Some(a)) => Some(100.0 * (a - h)),
                        _ => None,
                    },
                }
            })
            .collect();

        let mut windows = BTreeMap::new();
        for r in &rows {
            windows.insert(
                r.proposal_id.clone(),
                oracle_market(
                    dataset,
                    dataset.proposal(&r.proposal_id).unwrap(),
                    options.window_days,
                ),
            );
        }
        let validity = BUCKETS
            .iter()
            .map(|&b| Some(b))
            .chain([None])
            .map(|bucket| {
                let members: Vec<&OracleAlignment> = rows
                    .iter()
                    .filter(|r| bucket.is_none() || Some(bucket_name(r)) == bucket)
                    .collect();
                let pick = |endorsed: bool, f: fn(&OracleMarket) -> Option<f64>| {
                    let vals: Vec<f64> = members
                        .iter()
                        .filter(|r| !endorsed || r.hit)
                        .filter_map(|r| f(&windows[&r.proposal_id]))
                        .collect();
                    cell(&vals)
                };
                OracleValidity {
                    bucket,
                    price_ai: pick(true, |m| m.price_pct_change),
                    price_final: pick(false, |m| m.price_pct_change),
                    tvl_ai: pick(true, |m| m.tvl_abnormal),
                    tvl_final: pick(false, |m| m.tvl_abnormal),
                }
            })
            .collect();

        let contested: Vec<&OracleAlignment> = rows
            .iter()
            .filter(|r| r.s <= options.contested_threshold)
            .collect();
        let binary: Vec<&OracleAlignment> =
            contested.iter().copied().filter(|r| r.binary).collect();
        let multi: Vec<&OracleAlignment> =
            contested.iter().copied().filter(|r| !r.binary).collect();
        policies.push(OraclePolicy {
            policy_id: set.policy_id.clone(),
            cutoff: set.cutoff,
            p_ai_final: plain_mean(&hits).unwrap(),
            mean_a: plain_mean(&a).unwrap(),
            mean_h: plain_mean(&h).unwrap(),
            mean_s: plain_mean(&s).unwrap(),
            distribution: [summary(&a), summary(&h), summary(&s), summary(&nv)],
            buckets,
            validity,
            contested_all: subset(&contested),
            contested_binary: subset(&binary),
            contested_multi: subset(&multi),
            rows,
        });
    }

    let mut temporal = Vec::new();
    for ante in policies.iter().filter(|p| p.cutoff == CutoffMode::ExAnte) {
        for post in policies
            .iter()
            .filter(|p| p.cutoff == CutoffMode::ExPost && p.policy_id == ante.policy_id)
        {
            let mut divergent = 0;
            for r in &ante.rows {
                let other = post
                    .rows
                    .iter()
                    .find(|x| x.proposal_id == r.proposal_id)
                    .unwrap();
                if other.ai_index != r.ai_index {
                    divergent += 1;
                }
            }
            let n = ante.rows.len();
            temporal.push(OracleTemporal {
                policy_id: ante.policy_id.clone(),
                n,
                n_divergent: divergent,
                divergence: divergent as f64 / n as f64,
                ex_ante: subset(&ante.rows.iter().collect::<Vec<_>>()),
                ex_post: subset(&post.rows.iter().collect::<Vec<_>>()),
            });
        }
    }

    let mut dynamics = BTreeMap::new();
    let mut market = BTreeMap::new();
    for p in dataset.proposals() {
        let winner = outcome(p, dataset.votes_for(&p.proposal_id)).map(|o| o.final_index);
        dynamics.insert(
            p.proposal_id.clone(),
            oracle_dynamics(p, dataset.votes_for(&p.proposal_id), winner),
        );
        market.insert(
            p.proposal_id.clone(),
            oracle_market(dataset, p, options.window_days),
        );
    }

    OracleBundle {
        outcomes,
        degenerate,
        n_ties,
        n_eligible: voters.iter().filter(|v| v.eligible).count(),
        mean_tilde: plain_mean(&tilde),
        median_tilde: plain_quantile(&tilde, 0.5),
        mean_hat: plain_mean(&hat),
        median_hat: plain_quantile(&hat, 0.5),
        voters,
        policies,
        temporal,
        dynamics,
        market,
    }
}
