use std::collections::{BTreeMap, BTreeSet};

use dao_align_core::model::{
    argmax_lowest, normalize_choice, ChoiceExpr, CommentCounts, DailySample, ForumComment,
    ForumSignal, MarketMetric, MarketSeries, Polarity, Proposal, VoteRecord, SECONDS_PER_DAY,
};
use dao_align_core::Dataset;
use serde::{Deserialize, Serialize};

use crate::oracle::quartile;
use crate::sampler::Sampler;
use crate::spec::{ArrivalPattern, BallotMix, ScenarioSpec, SpecError, VpDistribution};

/// Winner share that engineered contested proposals stay at or below.
pub const CONTESTED_TARGET: f64 = 0.58;
/// Winner share that every other proposal exceeds.
pub const CLEAR_TARGET: f64 = 0.62;

const ADJUST_LIMIT: usize = 100_000;

const VERBS: [&str; 6] = ["Adjust", "Extend", "Approve", "Renew", "Fund", "Pause"];
const TOPICS: [(&str, &str); 8] = [
    ("treasury diversification", "treasury"),
    ("grant program", "grants"),
    ("fee switch", "treasury"),
    ("liquidity incentives", "incentives"),
    ("risk parameters", "risk"),
    ("oracle upgrade", "risk"),
    ("delegate compensation", "grants"),
    ("bridge deployment", "incentives"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTruth {
    pub voter: String,
    pub timestamp: i64,
    pub quartile: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalTruth {
    pub proposal_id: String,
    pub arrival: ArrivalPattern,
    /// Zero-based option engineered to win.
    pub intended_winner: usize,
    pub contested: bool,
    /// The injected largest ballot, for late-spike proposals.
    pub spike: Option<SpikeTruth>,
}

/// What the generator engineered, for assertions in tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub proposals: Vec<ProposalTruth>,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone)]
struct Ballot {
    voter: usize,
    vp: f64,
    ts: i64,
    choice: ChoiceExpr,
    /// Never reweighted by the share adjustment.
    protected: bool,
}

fn shares(b: &Ballot, n: usize) -> Vec<f64> {
    normalize_choice(&b.choice, n)
        .expect("generated ballots are valid")
        .as_slice()
        .to_vec()
}

fn tally(ballots: &[Ballot], n: usize) -> (Vec<f64>, f64) {
    let mut t = vec![0.0; n];
    let mut total = 0.0;
    for b in ballots {
        for (slot, s) in t.iter_mut().zip(shares(b, n)) {
            *slot += b.vp * s;
        }
        total += b.vp;
    }
    (t, total)
}

fn swap_options(ballots: &mut [Ballot], a: usize, b: usize) {
    let (a, b) = (a as u32 + 1, b as u32 + 1);
    let swap = |i: u32| {
        if i == a {
            b
        } else if i == b {
            a
        } else {
            i
        }
    };
    for ballot in ballots {
        ballot.choice = match &ballot.choice {
            ChoiceExpr::Single(i) => ChoiceExpr::Single(swap(*i)),
            ChoiceExpr::Approval(list) => {
                ChoiceExpr::Approval(list.iter().map(|&i| swap(i)).collect())
            }
            ChoiceExpr::Weighted(map) => {
                ChoiceExpr::Weighted(map.iter().map(|(&i, &w)| (swap(i), w)).collect())
            }
        };
    }
}

fn by_vp_desc(ballots: &[Ballot]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ballots.len()).collect();
    order.sort_by(|&x, &y| ballots[y].vp.total_cmp(&ballots[x].vp).then(x.cmp(&y)));
    order
}

fn infeasible(id: &str, what: &str) -> SpecError {
    SpecError::Infeasible(format!("proposal {id}: {what}"))
}

/// Pushes the winner's share to at most [`CONTESTED_TARGET`] while keeping
/// it the strict leader.
fn make_contested(
    ballots: &mut [Ballot],
    winner: usize,
    n_sub: usize,
    n: usize,
    id: &str,
) -> Result<(), SpecError> {
    for _ in 0..ADJUST_LIMIT {
        let (t, total) = tally(ballots, n);
        let (lead, tie) = argmax_lowest(&t);
        if lead != winner {
            swap_options(ballots, lead, winner);
            continue;
        }
        if tie {
            let rival = (0..n)
                .find(|&j| j != winner && t[j] == t[winner])
                .expect("tie has a rival");
            let pick = ballots
                .iter()
                .enumerate()
                .filter(|(_, b)| {
                    let s = shares(b, n);
                    s[winner] > s[rival]
                })
                .max_by(|x, y| x.1.vp.total_cmp(&y.1.vp))
                .map(|(i, _)| i)
                .ok_or_else(|| infeasible(id, "cannot break a tied tally"))?;
            ballots[pick].vp *= 1.001;
            continue;
        }
        if t[winner] / total <= CONTESTED_TARGET {
            return Ok(());
        }
        let runner = (0..n_sub)
            .filter(|&j| j != winner)
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if t[b] >= t[j] => Some(b),
                _ => Some(j),
            })
            .expect("at least two options");
        let gap = t[winner] - t[runner];
        let order = by_vp_desc(ballots);
        let single = order.iter().copied().find(|&i| {
            !ballots[i].protected && ballots[i].choice == ChoiceExpr::Single(winner as u32 + 1)
        });
        if let Some(i) = single {
            if ballots[i].vp < gap {
                ballots[i].choice = ChoiceExpr::Single(runner as u32 + 1);
            } else {
                ballots[i].vp /= 2.0;
            }
            continue;
        }
        let partial = order
            .iter()
            .copied()
            .find(|&i| !ballots[i].protected && shares(&ballots[i], n)[winner] > 0.0)
            .ok_or_else(|| infeasible(id, "protected ballot alone exceeds the contested share"))?;
        ballots[partial].choice = ChoiceExpr::Single(runner as u32 + 1);
    }
    Err(infeasible(id, "contested share did not converge"))
}

/// Moves the largest dissenting ballots onto the winner until its share
/// exceeds [`CLEAR_TARGET`].
fn make_clear(ballots: &mut [Ballot], winner: usize, n: usize, id: &str) -> Result<(), SpecError> {
    let order = by_vp_desc(ballots);
    let mut cursor = 0;
    loop {
        let (t, total) = tally(ballots, n);
        let (lead, tie) = argmax_lowest(&t);
        if lead == winner && !tie && t[winner] / total > CLEAR_TARGET {
            return Ok(());
        }
        while cursor < order.len() && shares(&ballots[order[cursor]], n)[winner] >= 1.0 {
            cursor += 1;
        }
        let Some(&i) = order.get(cursor) else {
            return Err(infeasible(id, "winner cannot reach a clear majority"));
        };
        ballots[i].choice = ChoiceExpr::Single(winner as u32 + 1);
        cursor += 1;
    }
}

/// Splits ballots between two options, largest first onto the lighter side.
fn balance(ballots: &[Ballot], a: usize, b: usize) -> Vec<usize> {
    let mut mains = vec![a; ballots.len()];
    let (mut wa, mut wb) = (0.0, 0.0);
    for i in by_vp_desc(ballots) {
        if wa <= wb {
            mains[i] = a;
            wa += ballots[i].vp;
        } else {
            mains[i] = b;
            wb += ballots[i].vp;
        }
    }
    mains
}

fn ballot_choice(s: &mut Sampler, mix: BallotMix, main: usize, n: usize) -> ChoiceExpr {
    let r = s.unit();
    if r < mix.single {
        return ChoiceExpr::Single(main as u32 + 1);
    }
    let mut other = s.below(n - 1);
    if other >= main {
        other += 1;
    }
    if r < mix.single + mix.approval {
        ChoiceExpr::Approval(vec![main as u32 + 1, other as u32 + 1])
    } else {
        let round = |x: f64| (x * 1e4).round() / 1e4;
        ChoiceExpr::Weighted(BTreeMap::from([
            (main as u32 + 1, round(s.uniform(1.0, 4.0))),
            (other as u32 + 1, round(s.uniform(0.0, 1.0))),
        ]))
    }
}

fn arrival_time(s: &mut Sampler, pattern: ArrivalPattern, start: i64, end: i64) -> i64 {
    let len = end - start;
    let offset = match pattern {
        ArrivalPattern::Uniform | ArrivalPattern::LateSpike | ArrivalPattern::Mixed => {
            (s.unit() * (len + 1) as f64) as i64
        }
        ArrivalPattern::EarlyRush => {
            let u = s.unit();
            (u * u * (len + 1) as f64) as i64
        }
        ArrivalPattern::Stairwise => {
            let step = s.below(8) as i64;
            let centre = len * (2 * step + 1) / 16;
            centre + ((2.0 * s.unit() - 1.0) * (len / 64) as f64) as i64
        }
    };
    start + offset.clamp(0, len)
}

fn last_quarter_time(s: &mut Sampler, start: i64, end: i64) -> i64 {
    let len = end - start;
    let q4 = (3 * len + 3) / 4;
    start + q4 + s.below((len - q4 + 1) as usize) as i64
}

fn forum_thread(s: &mut Sampler, proposal: &Proposal, winner: usize) -> ForumSignal {
    let url = format!(
        "https://forum.synth.example/t/{}",
        &proposal.proposal_id[2..14]
    );
    if s.chance(0.1) {
        let counts = CommentCounts {
            positive: s.below(6) as u32,
            negative: s.below(6) as u32,
            neutral: s.below(4) as u32,
        };
        let total = counts.total();
        let stance = if total == 0 {
            0.0
        } else {
            (counts.positive as f64 - counts.negative as f64) / total as f64
        };
        return ForumSignal {
            proposal_id: proposal.proposal_id.clone(),
            url,
            stance_score: stance,
            sentiment: (s.uniform(-1.0, 1.0) * 100.0).round() / 100.0,
            comment_counts: counts,
            comments: Vec::new(),
        };
    }
    let m = s.between(1, 12);
    let lean = if winner == 0 { 0.65 } else { 0.35 };
    let from = proposal.created_at - 2 * SECONDS_PER_DAY;
    let span = (proposal.end + 2 * SECONDS_PER_DAY - from) as usize;
    let mut scored: Vec<(i64, f64)> = (0..m)
        .map(|_| {
            let ts = from + s.below(span) as i64;
            let r = s.unit();
            let score = if r < 0.8 * lean {
                s.uniform(0.2, 1.0)
            } else if r < 0.8 {
                -s.uniform(0.2, 1.0)
            } else {
                0.0
            };
            (ts, score)
        })
        .collect();
    scored.sort_by_key(|a| a.0);
    let mut counts = CommentCounts::default();
    let comments: Vec<ForumComment> = scored
        .iter()
        .map(|&(timestamp, score)| {
            let polarity = Polarity::from_score(score);
            counts.add(polarity);
            ForumComment {
                timestamp,
                polarity,
            }
        })
        .collect();
    let sentiment = scored.iter().map(|c| c.1).sum::<f64>() / m as f64;
    ForumSignal {
        proposal_id: proposal.proposal_id.clone(),
        url,
        stance_score: (counts.positive as f64 - counts.negative as f64) / m as f64,
        sentiment: sentiment.clamp(-1.0, 1.0),
        comment_counts: counts,
        comments,
    }
}

fn market_series(s: &mut Sampler, proposals: &[Proposal], protocol: &str) -> Vec<MarketSeries> {
    let first = proposals
        .iter()
        .map(|p| p.start)
        .min()
        .unwrap_or(0)
        .div_euclid(SECONDS_PER_DAY)
        - 10;
    let last = proposals
        .iter()
        .map(|p| p.end)
        .max()
        .unwrap_or(0)
        .div_euclid(SECONDS_PER_DAY)
        + 10;
    let plan = [
        (MarketMetric::Price, protocol, (1.0, 50.0)),
        (MarketMetric::Tvl, protocol, (1e6, 1e8)),
        (MarketMetric::Treasury, protocol, (1e5, 1e7)),
        (MarketMetric::Index, "index", (80.0, 120.0)),
    ];
    plan.into_iter()
        .map(|(metric, protocol, (lo, hi))| {
            let mut value = s.uniform(lo, hi);
            let mut samples = Vec::new();
            for day in first..=last {
                value *= 1.0 + 0.04 * (2.0 * s.unit() - 1.0);
                if !s.chance(0.08) {
                    samples.push(DailySample { day, value });
                }
            }
            MarketSeries {
                protocol: protocol.to_string(),
                metric,
                samples,
            }
        })
        .collect()
}

fn choice_labels(n_sub: usize, abstain: bool) -> Vec<String> {
    let mut labels: Vec<String> = if n_sub == 2 {
        vec!["For".into(), "Against".into()]
    } else {
        (0..n_sub)
            .map(|j| format!("Option {}", (b'A' + j as u8) as char))
            .collect()
    };
    if abstain {
        labels.push("Abstain".into());
    }
    labels
}

/// Builds a dataset from a scenario. The same spec always yields the same
/// dataset and ground truth.
pub fn generate_dataset(spec: &ScenarioSpec) -> Result<Synthetic, SpecError> {
    spec.validate()?;
    let mut s = Sampler::new(spec.seed);
    let mut voters: Vec<String> = Vec::with_capacity(spec.n_voters);
    let mut seen = BTreeSet::new();
    while voters.len() < spec.n_voters {
        let address = s.hex(20);
        if seen.insert(address.clone()) {
            voters.push(address);
        }
    }
    let base_vp: Vec<f64> = (0..spec.n_voters)
        .map(|_| match spec.vp {
            VpDistribution::Uniform { min, max } => s.uniform(min, max),
            VpDistribution::Pareto { alpha } => 10.0 * s.pareto(alpha),
        })
        .collect();
    let mut order: Vec<usize> = (0..spec.n_proposals).collect();
    s.shuffle(&mut order);
    let contested_set: BTreeSet<usize> = order[..spec.n_contested()].iter().copied().collect();

    let mut proposals = Vec::with_capacity(spec.n_proposals);
    let mut votes = Vec::new();
    let mut forum = Vec::new();
    let mut truth = Vec::with_capacity(spec.n_proposals);
    for i in 0..spec.n_proposals {
        let id = s.hex(32);
        let n_sub = s.between(spec.options[0], spec.options[1]);
        let abstain = s.chance(spec.abstain_fraction);
        let choices = choice_labels(n_sub, abstain);
        let n = choices.len();
        let verb = VERBS[s.below(VERBS.len())];
        let (topic, category) = TOPICS[s.below(TOPICS.len())];
        let start = spec.start
            + (i as i64) * spec.spacing_days as i64 * SECONDS_PER_DAY
            + s.below(3600) as i64;
        let end = start + spec.duration_days as i64 * SECONDS_PER_DAY;
        let created_at = start - 60 - s.below(SECONDS_PER_DAY as usize) as i64;
        let calls_for_change = if s.chance(spec.label_fraction) {
            Some(s.chance(0.5))
        } else {
            None
        };
        let arrival = match spec.arrival {
            ArrivalPattern::Mixed => ArrivalPattern::CONCRETE[s.below(4)],
            a => a,
        };
        let winner = s.below(n_sub);
        let contested = contested_set.contains(&i);
        let proposal = Proposal {
            proposal_id: id.clone(),
            space_id: spec.space.clone(),
            title: format!("{verb} the {topic} (round {})", i + 1),
            body: Some(format!(
                "{verb} the {topic}. Requested budget: {} tokens over {} months.",
                1000 * s.between(5, 500),
                s.between(1, 12)
            )),
            choices,
            created_at,
            start,
            end,
            calls_for_change,
            category: Some(category.to_string()),
        };

        let k = s.between(
            spec.participants[0],
            spec.participants[1].min(spec.n_voters),
        );
        let who = s.sample_indices(spec.n_voters, k);
        let mut ballots: Vec<Ballot> = who
            .iter()
            .map(|&v| Ballot {
                voter: v,
                vp: base_vp[v] * s.uniform(0.9, 1.1),
                ts: arrival_time(&mut s, arrival, start, end),
                choice: ChoiceExpr::Single(1),
                protected: false,
            })
            .collect();
        if arrival == ArrivalPattern::LateSpike && k >= 2 {
            let largest = ballots[1..].iter().map(|b| b.vp).fold(0.0, f64::max);
            let rest: f64 = ballots[1..].iter().map(|b| b.vp).sum();
            // A contested proposal cannot carry a ballot heavier than the rest combined.
            let vp = if contested {
                (3.0 * largest).min(0.9 * rest)
            } else {
                3.0 * largest
            };
            ballots[0].ts = last_quarter_time(&mut s, start, end);
            if vp > largest {
                ballots[0].vp = vp;
                ballots[0].protected = true;
            }
        }
        let mains = if contested {
            let runner = (winner + 1 + s.below(n_sub - 1)) % n_sub;
            balance(&ballots, winner, runner)
        } else {
            (0..k)
                .map(|_| {
                    if s.chance(0.6) {
                        winner
                    } else {
                        s.below(n_sub)
                    }
                })
                .collect()
        };
        for (b, main) in ballots.iter_mut().zip(mains) {
            let main = if abstain && s.chance(0.05) {
                n - 1
            } else {
                main
            };
            b.choice = ballot_choice(&mut s, spec.ballot_mix, main, n);
        }
        if contested {
            if make_contested(&mut ballots, winner, n_sub, n, &id).is_err() {
                for b in ballots.iter_mut() {
                    b.protected = false;
                }
                make_contested(&mut ballots, winner, n_sub, n, &id)?;
            }
        } else {
            make_clear(&mut ballots, winner, n, &id)?;
        }

        let spike = ballots.iter().find(|b| b.protected).map(|b| SpikeTruth {
            voter: voters[b.voter].clone(),
            timestamp: b.ts,
            quartile: quartile(start, end, b.ts).expect("inside window"),
        });
        if s.chance(spec.forum_fraction) {
            forum.push(forum_thread(&mut s, &proposal, winner));
        }
        votes.extend(ballots.into_iter().map(|b| VoteRecord {
            proposal_id: id.clone(),
            voter: voters[b.voter].clone(),
            choice: b.choice,
            vp: b.vp,
            timestamp: b.ts,
        }));
        truth.push(ProposalTruth {
            proposal_id: id,
            arrival,
            intended_winner: winner,
            contested,
            spike,
        });
        proposals.push(proposal);
    }

    let mut market = BTreeMap::new();
    if spec.market {
        let protocol = spec.space.split('.').next().unwrap_or("synth").to_string();
        market.insert(
            spec.space.clone(),
            market_series(&mut s, &proposals, &protocol),
        );
    }
    Ok(Synthetic {
        dataset: Dataset::new(proposals, votes, forum, market),
        truth: GroundTruth {
            seed: spec.seed,
            proposals: truth,
        },
    })
}
