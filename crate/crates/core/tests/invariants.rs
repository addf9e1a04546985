use std::collections::BTreeMap;

use dao_align_core::eval::proposal_alignment;
use dao_align_core::model::{
    tally_outcome, AbstainLabels, ChoiceExpr, CommentCounts, ForumComment, ForumSignal, Polarity,
    Proposal, VoteRecord,
};
use dao_align_core::policy::{
    build_decision_context, ContextOptions, Cutoff, CutoffMode, PolicyDecision,
};
use dao_align_core::Dataset;
use proptest::prelude::*;

const START: i64 = 1_700_000_000;
const END: i64 = START + 5 * 86_400;

fn proposal(id: &str, n: usize, start: i64, end: i64) -> Proposal {
    Proposal {
        proposal_id: id.into(),
        space_id: "dao.eth".into(),
        title: format!("Adjust parameter {id}"),
        body: Some("Raise the fee".into()),
        choices: (1..=n).map(|i| format!("Option {i}")).collect(),
        created_at: start - 3600,
        start,
        end,
        calls_for_change: None,
        category: None,
    }
}

fn choice_strategy(n: u32) -> impl Strategy<Value = ChoiceExpr> {
    prop_oneof![
        (1..=n).prop_map(ChoiceExpr::Single),
        proptest::collection::btree_set(1..=n, 1..=n as usize)
            .prop_map(|s| ChoiceExpr::Approval(s.into_iter().collect())),
        proptest::collection::btree_map(1..=n, 1e-6f64..1e6, 1..=n as usize)
            .prop_map(|m: BTreeMap<u32, f64>| ChoiceExpr::Weighted(m)),
    ]
}

fn ballots() -> impl Strategy<Value = (u32, Vec<(ChoiceExpr, f64, i64)>)> {
    (2u32..8).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec((choice_strategy(n), 1e-3f64..1e7, START..=END), 1..60),
        )
    })
}

fn votes(id: &str, raw: &[(ChoiceExpr, f64, i64)]) -> Vec<VoteRecord> {
    raw.iter()
        .enumerate()
        .map(|(i, (choice, vp, ts))| VoteRecord {
            proposal_id: id.into(),
            voter: format!("0x{i:040x}"),
            choice: choice.clone(),
            vp: *vp,
            timestamp: *ts,
        })
        .collect()
}

fn decision(p: &Proposal, option: usize) -> PolicyDecision {
    PolicyDecision {
        proposal_id: p.proposal_id.clone(),
        policy_id: "fixed".into(),
        selected_option: option,
        selected_label: p.choices[option - 1].clone(),
        justification: String::new(),
        cutoff: Cutoff::for_proposal(CutoffMode::ExPost, p),
        fallback: false,
    }
}

proptest! {
    #[test]
    fn alignment_shares_stay_in_the_unit_interval((n, raw) in ballots(), pick in 1usize..8) {
        let p = proposal("p1", n as usize, START, END);
        let vs = votes("p1", &raw);
        let outcome = tally_outcome(&p, &vs).unwrap();
        let option = 1 + (pick - 1) % n as usize;
        let row = proposal_alignment(&p, &outcome, &vs, &decision(&p, option), &AbstainLabels::default()).unwrap();
        for x in [row.s_p, row.a_p, row.h_p] {
            prop_assert!((0.0..=1.0).contains(&x), "{x}");
        }
        prop_assert!(row.a_p <= row.s_p);
        let winner = decision(&p, outcome.final_index + 1);
        let best = proposal_alignment(&p, &outcome, &vs, &winner, &AbstainLabels::default()).unwrap();
        prop_assert_eq!(best.a_p.to_bits(), best.s_p.to_bits());
    }

    #[test]
    fn contexts_never_see_past_the_cutoff((n, raw) in ballots(), comment_offsets in proptest::collection::vec(-86_400i64..6 * 86_400, 0..12)) {
        let p = proposal("p1", n as usize, START, END);
        let earlier = proposal("p0", 2, START - 86_400, START + 3600);
        let mut vs = votes("p1", &raw);
        vs.push(VoteRecord {
            proposal_id: "p0".into(),
            voter: "0xabc".into(),
            choice: ChoiceExpr::Single(1),
            vp: 1.0,
            timestamp: START,
        });
        let forum = ForumSignal {
            proposal_id: "p1".into(),
            url: "https://forum.example/t/1".into(),
            stance_score: 0.2,
            sentiment: 0.1,
            comment_counts: CommentCounts { positive: comment_offsets.len() as u32, negative: 0, neutral: 0 },
            comments: comment_offsets
                .iter()
                .map(|o| ForumComment { timestamp: START + o, polarity: Polarity::Positive })
                .collect(),
        };
        let ds = Dataset::new(vec![earlier, p], vs, vec![forum], BTreeMap::new());
        for mode in [CutoffMode::ExAnte, CutoffMode::ExPost] {
            let ctx = build_decision_context(&ds, "p1", mode, &ContextOptions::default()).unwrap();
            let at = mode.timestamp_for(&ctx.proposal);
            prop_assert!(ctx.max_visible_timestamp().is_none_or(|t| t <= at));
            match mode {
                CutoffMode::ExAnte => {
                    prop_assert!(ctx.votes_visible.is_empty());
                    prop_assert!(ctx.dynamics_visible.is_none());
                    prop_assert!(ctx.similar_proposals.is_empty(), "the earlier proposal is still open");
                }
                CutoffMode::ExPost => {
                    prop_assert_eq!(ctx.votes_visible.len(), raw.len());
                    prop_assert_eq!(ctx.similar_proposals.len(), 1);
                }
            }
        }
    }
}

#[test]
fn a_ballot_cast_in_the_opening_second_is_hidden_ex_ante() {
    let p = proposal("p1", 2, START, END);
    let v = VoteRecord {
        proposal_id: "p1".into(),
        voter: "0x1".into(),
        choice: ChoiceExpr::Single(2),
        vp: 10.0,
        timestamp: START,
    };
    let ds = Dataset::new(vec![p], vec![v], vec![], BTreeMap::new());
    let ante =
        build_decision_context(&ds, "p1", CutoffMode::ExAnte, &ContextOptions::default()).unwrap();
    assert!(ante.votes_visible.is_empty());
    assert_eq!(ante.max_visible_timestamp(), None);
    let post =
        build_decision_context(&ds, "p1", CutoffMode::ExPost, &ContextOptions::default()).unwrap();
    assert_eq!(post.votes_visible.len(), 1);
}
