use std::collections::BTreeMap;

use dao_align_core::dynamics::{build_participation_series, compute_features};
use dao_align_core::model::{ChoiceExpr, Proposal, VoteRecord};
use dao_align_core::report::ReportOptions;
use dao_align_core::Dataset;
use dao_align_synth::compare::{compare_dynamics, Diff};
use dao_align_synth::harness::{baseline_sets, diff_against_oracle, production_run};
use dao_align_synth::oracle::oracle_dynamics;
use dao_align_synth::{generate_dataset, ArrivalPattern, BallotMix, ScenarioSpec, VpDistribution};

fn check(spec: &ScenarioSpec, options: &ReportOptions) -> Diff {
    let syn = generate_dataset(spec).unwrap();
    let sets = baseline_sets(&syn.dataset, spec.seed).unwrap();
    let run = production_run(&syn.dataset, &sets, options).unwrap();
    diff_against_oracle(&syn.dataset, &sets, &run, options)
}

fn assert_clean(diff: &Diff) {
    assert!(diff.checked > 0);
    assert!(
        diff.is_clean(),
        "{} mismatches, first: {:?}",
        diff.mismatches.len(),
        &diff.mismatches[..diff.mismatches.len().min(5)]
    );
}

#[test]
fn small_scenarios_match_oracle() {
    for seed in 0..8 {
        let mut spec = ScenarioSpec::small(seed);
        spec.arrival = ArrivalPattern::CONCRETE[seed as usize % 4];
        spec.ballot_mix = BallotMix {
            single: 0.5,
            approval: 0.25,
            weighted: 0.25,
        };
        assert_clean(&check(&spec, &ReportOptions::default()));
    }
}

#[test]
fn options_are_honoured() {
    let spec = ScenarioSpec::small(21);
    let options = ReportOptions {
        contested_threshold: 0.7,
        min_participation: 2,
        window_days: 5,
        exclude_ties: true,
    };
    assert_clean(&check(&spec, &options));
}

#[test]
fn ten_thousand_votes() {
    let spec = ScenarioSpec {
        n_proposals: 1,
        n_voters: 10_000,
        participants: [10_000, 10_000],
        contested_fraction: 0.0,
        vp: VpDistribution::Uniform {
            min: 1.0,
            max: 1000.0,
        },
        arrival: ArrivalPattern::EarlyRush,
        ..ScenarioSpec::small(99)
    };
    assert_clean(&check(&spec, &ReportOptions::default()));
}

fn proposal() -> Proposal {
    Proposal {
        proposal_id: "p".into(),
        space_id: "s".into(),
        title: "t".into(),
        body: None,
        choices: vec!["For".into(), "Against".into(), "Abstain".into()],
        created_at: 0,
        start: 100,
        end: 900,
        calls_for_change: Some(true),
        category: None,
    }
}

fn vote(voter: &str, choice: ChoiceExpr, vp: f64, ts: i64) -> VoteRecord {
    VoteRecord {
        proposal_id: "p".into(),
        voter: voter.into(),
        choice,
        vp,
        timestamp: ts,
    }
}

#[test]
fn single_vote_dynamics_agree() {
    let p = proposal();
    let votes = vec![vote("a", ChoiceExpr::Single(2), 7.0, 500)];
    let f = compute_features(&build_participation_series(&p, &votes).unwrap(), Some(1));
    let o = oracle_dynamics(&p, &votes, Some(1));
    let mut diff = Diff::default();
    compare_dynamics(&mut diff, &f, &o);
    assert_clean(&diff);
    assert_eq!(o.spike.as_ref().unwrap().spike_index, 1.0);
    assert_eq!(o.stairwise, Some(0.0));
}

#[test]
fn tied_prefixes_agree() {
    let p = proposal();
    let votes = vec![
        vote("a", ChoiceExpr::Approval(vec![1, 2]), 4.0, 100),
        vote("b", ChoiceExpr::Single(2), 2.0, 300),
        vote("c", ChoiceExpr::Single(1), 2.0, 300),
        vote(
            "d",
            ChoiceExpr::Weighted(BTreeMap::from([(1, 1.0), (3, 3.0)])),
            8.0,
            900,
        ),
    ];
    let f = compute_features(&build_participation_series(&p, &votes).unwrap(), Some(0));
    let o = oracle_dynamics(&p, &votes, Some(0));
    let mut diff = Diff::default();
    compare_dynamics(&mut diff, &f, &o);
    assert_clean(&diff);
    assert_eq!(o.lead_total, vec![0.0, 1.0, 0.0]);
}

#[test]
fn empty_market_and_zero_power() {
    let p = proposal();
    let ds = Dataset::new(
        vec![p.clone()],
        vec![vote("a", ChoiceExpr::Single(1), 0.0, 200)],
        vec![],
        BTreeMap::new(),
    );
    let o = dao_align_synth::oracle::oracle_market(&ds, &p, 3);
    assert_eq!(o.price_pct_change, None);
    assert_eq!(o.coverage, [(0, 0); 4]);
    let bundle = dao_align_synth::oracle::oracle_metrics(&ds, &[], &Default::default());
    assert_eq!(bundle.degenerate, vec!["p".to_string()]);
}
