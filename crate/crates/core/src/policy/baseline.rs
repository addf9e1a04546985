use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DecisionContext, Policy, PolicyDecision, PolicyError};
use crate::model::{argmax_lowest, classify_proposal_kind, AbstainLabels, ProposalKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    TokenMajority,
    HeadcountMajority,
    SentimentSign,
    SeededRandom,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [
        Baseline::TokenMajority,
        Baseline::HeadcountMajority,
        Baseline::SentimentSign,
        Baseline::SeededRandom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::TokenMajority => "token_majority",
            Baseline::HeadcountMajority => "headcount_majority",
            Baseline::SentimentSign => "sentiment_sign",
            Baseline::SeededRandom => "seeded_random",
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Baseline::ALL
            .into_iter()
            .find(|b| b.as_str() == norm)
            .ok_or_else(|| format!("unknown baseline {s:?}"))
    }
}

#[derive(Debug, Clone)]
pub struct BaselinePolicy {
    pub baseline: Baseline,
    pub abstain: AbstainLabels,
    pub seed: u64,
}

impl BaselinePolicy {
    pub fn new(baseline: Baseline) -> Self {
        BaselinePolicy {
            baseline,
            abstain: AbstainLabels::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_abstain(mut self, abstain: AbstainLabels) -> Self {
        self.abstain = abstain;
        self
    }

    fn tally(&self, ctx: &DecisionContext, by_power: bool) -> Result<Vec<f64>, PolicyError> {
        let n = ctx.proposal.n_options();
        let mut totals = vec![0.0; n];
        let mut ordered: Vec<_> = ctx.votes_visible.iter().collect();
        ordered.sort_by(|a, b| a.voter.cmp(&b.voter).then(a.timestamp.cmp(&b.timestamp)));
        for v in ordered {
            let alloc = v
                .allocation(n)
                .map_err(|e| self.failure(ctx, e.to_string()))?;
            let weight = if by_power { v.vp } else { 1.0 };
            for (slot, share) in totals.iter_mut().zip(alloc.as_slice()) {
                *slot += weight * share;
            }
        }
        Ok(totals)
    }

    fn failure(&self, ctx: &DecisionContext, reason: String) -> PolicyError {
        PolicyError::PolicyFailure {
            policy: self.id(),
            proposal_id: ctx.proposal.proposal_id.clone(),
            reason,
        }
    }

    fn majority(
        &self,
        ctx: &DecisionContext,
        by_power: bool,
    ) -> Result<PolicyDecision, PolicyError> {
        let unit = if by_power { "voting power" } else { "ballots" };
        if ctx.votes_visible.is_empty() {
            return Ok(PolicyDecision::new(
                ctx,
                &self.id(),
                0,
                format!(
                    "No votes visible at the cutoff; defaulting to the first option by {unit}."
                ),
                true,
            ));
        }
        let totals = self.tally(ctx, by_power)?;
        let (index, tie) = argmax_lowest(&totals);
        let mut justification = format!(
            "Option \"{}\" leads with {:.6} {unit} of {:.6} across {} visible votes.",
            ctx.proposal.choices[index],
            totals[index],
            totals.iter().sum::<f64>(),
            ctx.votes_visible.len()
        );
        if tie {
            justification.push_str(" Tie broken toward the lowest index.");
        }
        Ok(PolicyDecision::new(
            ctx,
            &self.id(),
            index,
            justification,
            false,
        ))
    }

    fn sentiment_sign(&self, ctx: &DecisionContext) -> Result<PolicyDecision, PolicyError> {
        let p = &ctx.proposal;
        if classify_proposal_kind(p, &self.abstain) != ProposalKind::Binary {
            return Err(PolicyError::PolicyInapplicable {
                policy: self.id(),
                proposal_id: p.proposal_id.clone(),
                reason: "sentiment sign applies to binary proposals only".into(),
            });
        }
        let substantive: Vec<usize> = (0..p.n_options())
            .filter(|&i| !self.abstain.matches(&p.choices[i]))
            .collect();
        let (yes, no) = (substantive[0], substantive[1]);
        let scores: Vec<f64> = ctx
            .forum_visible
            .iter()
            .filter_map(|f| f.sentiment)
            .collect();
        if scores.is_empty() {
            return Ok(PolicyDecision::new(
                ctx,
                &self.id(),
                yes,
                "No forum sentiment visible at the cutoff; defaulting to the affirmative option."
                    .into(),
                true,
            ));
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let index = if mean > 0.0 { yes } else { no };
        let justification = format!(
            "Mean forum sentiment {mean:.6} over {} threads selects \"{}\".",
            scores.len(),
            p.choices[index]
        );
        Ok(PolicyDecision::new(
            ctx,
            &self.id(),
            index,
            justification,
            false,
        ))
    }

    fn seeded_random(&self, ctx: &DecisionContext) -> PolicyDecision {
        let index = seeded_index(
            self.seed,
            &ctx.proposal.proposal_id,
            ctx.proposal.n_options(),
        );
        PolicyDecision::new(
            ctx,
            &self.id(),
            index,
            format!(
                "Uniform draw with seed {} selects \"{}\".",
                self.seed, ctx.proposal.choices[index]
            ),
            false,
        )
    }
}

/// Uniform index in `0..n` from a generator keyed by seed and proposal id.
pub fn seeded_index(seed: u64, proposal_id: &str, n: usize) -> usize {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(proposal_id.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    ((unit * n as f64) as usize).min(n - 1)
}

impl Policy for BaselinePolicy {
    fn id(&self) -> String {
        self.baseline.as_str().to_string()
    }

    fn decide(&self, ctx: &DecisionContext) -> Result<PolicyDecision, PolicyError> {
        match self.baseline {
            Baseline::TokenMajority => self.majority(ctx, true),
            Baseline::HeadcountMajority => self.majority(ctx, false),
            Baseline::SentimentSign => self.sentiment_sign(ctx),
            Baseline::SeededRandom => Ok(self.seeded_random(ctx)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChoiceExpr, CommentCounts, Proposal, VoteRecord};
    use crate::policy::{Cutoff, CutoffMode, VisibleForum};

    fn ctx(choices: &[&str], votes: Vec<(&str, u32, f64)>, sentiments: &[f64]) -> DecisionContext {
        let proposal = Proposal {
            proposal_id: "p".into(),
            space_id: "s".into(),
            title: "t".into(),
            body: None,
            choices: choices.iter().map(|c| c.to_string()).collect(),
            created_at: 0,
            start: 10,
            end: 100,
            calls_for_change: None,
            category: None,
        };
        DecisionContext {
            cutoff: Cutoff::for_proposal(CutoffMode::ExPost, &proposal),
            proposal,
            votes_visible: votes
                .into_iter()
                .enumerate()
                .map(|(i, (voter, c, vp))| VoteRecord {
                    proposal_id: "p".into(),
                    voter: voter.into(),
                    choice: ChoiceExpr::Single(c),
                    vp,
                    timestamp: 20 + i as i64,
                })
                .collect(),
            forum_visible: sentiments
                .iter()
                .map(|&s| VisibleForum {
                    url: "u".into(),
                    counts: CommentCounts::default(),
                    sentiment: Some(s),
                    stance_score: None,
                    comment_timestamps: vec![],
                })
                .collect(),
            dynamics_visible: None,
            similar_proposals: vec![],
        }
    }

    #[test]
    fn token_and_headcount_majority() {
        let c = ctx(
            &["For", "Against"],
            vec![("a", 1, 10.0), ("b", 2, 1.0), ("c", 2, 1.0)],
            &[],
        );
        let tm = BaselinePolicy::new(Baseline::TokenMajority)
            .decide(&c)
            .unwrap();
        assert_eq!((tm.selected_option, tm.fallback), (1, false));
        let hm = BaselinePolicy::new(Baseline::HeadcountMajority)
            .decide(&c)
            .unwrap();
        assert_eq!(hm.selected_option, 2);
        assert!(!hm.justification.is_empty());
    }

    #[test]
    fn empty_votes_fall_back_to_first_option() {
        let c = ctx(&["For", "Against"], vec![], &[]);
        let d = BaselinePolicy::new(Baseline::TokenMajority)
            .decide(&c)
            .unwrap();
        assert_eq!((d.selected_option, d.fallback), (1, true));
    }

    #[test]
    fn sentiment_sign_rules() {
        let p = BaselinePolicy::new(Baseline::SentimentSign);
        let c = ctx(&["Abstain", "For", "Against"], vec![], &[0.4, -0.1]);
        assert_eq!(p.decide(&c).unwrap().selected_label, "For");
        let c = ctx(&["For", "Against", "Abstain"], vec![], &[-0.4]);
        assert_eq!(p.decide(&c).unwrap().selected_label, "Against");
        let c = ctx(&["For", "Against"], vec![], &[0.0]);
        assert_eq!(p.decide(&c).unwrap().selected_label, "Against");
        let c = ctx(&["A", "B", "C"], vec![], &[0.4]);
        assert!(matches!(
            p.decide(&c),
            Err(PolicyError::PolicyInapplicable { .. })
        ));
        let c = ctx(&["For", "Against"], vec![], &[]);
        assert!(p.decide(&c).unwrap().fallback);
    }

    #[test]
    fn seeded_random_is_deterministic() {
        let c = ctx(&["A", "B", "C", "D"], vec![], &[]);
        let p = BaselinePolicy::new(Baseline::SeededRandom).with_seed(42);
        assert_eq!(p.decide(&c).unwrap(), p.decide(&c).unwrap());
        let mut hits = [0usize; 4];
        for i in 0..4000 {
            hits[seeded_index(42, &format!("p{i}"), 4)] += 1;
        }
        assert!(hits.iter().all(|&h| (850..1150).contains(&h)), "{hits:?}");
    }

    #[test]
    fn baseline_names_round_trip() {
        for b in Baseline::ALL {
            assert_eq!(b.as_str().parse::<Baseline>().unwrap(), b);
        }
        assert_eq!(
            "token-majority".parse::<Baseline>().unwrap(),
            Baseline::TokenMajority
        );
    }
}
