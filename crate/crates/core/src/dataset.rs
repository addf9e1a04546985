use std::collections::BTreeMap;

use crate::model::{ForumSignal, MarketMetric, MarketSeries, Proposal, VoteRecord};

/// In-memory governance dataset, always held in canonical order: proposals by
/// (space, created, id); votes by (timestamp, voter); forum threads by url;
/// market series by (protocol, metric).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    proposals: Vec<Proposal>,
    votes: BTreeMap<String, Vec<VoteRecord>>,
    forum: BTreeMap<String, Vec<ForumSignal>>,
    /// Keyed by space id.
    market: BTreeMap<String, Vec<MarketSeries>>,
}

impl Dataset {
    pub fn new(
        proposals: Vec<Proposal>,
        votes: impl IntoIterator<Item = VoteRecord>,
        forum: impl IntoIterator<Item = ForumSignal>,
        market: BTreeMap<String, Vec<MarketSeries>>,
    ) -> Self {
        let mut ds = Dataset {
            proposals,
            ..Default::default()
        };
        for v in votes {
            ds.votes.entry(v.proposal_id.clone()).or_default().push(v);
        }
        for f in forum {
            ds.forum.entry(f.proposal_id.clone()).or_default().push(f);
        }
        ds.market = market;
        ds.canonicalize();
        ds
    }

    fn canonicalize(&mut self) {
        self.proposals.sort_by(|a, b| {
            (&a.space_id, a.created_at, &a.proposal_id).cmp(&(
                &b.space_id,
                b.created_at,
                &b.proposal_id,
            ))
        });
        for list in self.votes.values_mut() {
            list.sort_by(|a, b| (a.timestamp, &a.voter).cmp(&(b.timestamp, &b.voter)));
        }
        self.votes.retain(|_, v| !v.is_empty());
        for list in self.forum.values_mut() {
            list.sort_by(|a, b| a.url.cmp(&b.url));
        }
        for list in self.market.values_mut() {
            list.sort_by(|a, b| (&a.protocol, a.metric).cmp(&(&b.protocol, b.metric)));
        }
    }

    pub fn proposals(&self) -> &[Proposal] {
        &self.proposals
    }

    pub fn proposal(&self, id: &str) -> Option<&Proposal> {
        self.proposals.iter().find(|p| p.proposal_id == id)
    }

    pub fn votes_for(&self, proposal_id: &str) -> &[VoteRecord] {
        self.votes
            .get(proposal_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn forum_for(&self, proposal_id: &str) -> &[ForumSignal] {
        self.forum
            .get(proposal_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn market_for(&self, space_id: &str) -> &[MarketSeries] {
        self.market.get(space_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn market_series(&self, space_id: &str, metric: MarketMetric) -> Option<&MarketSeries> {
        self.market_for(space_id)
            .iter()
            .find(|s| s.metric == metric)
    }

    pub fn spaces(&self) -> Vec<&str> {
        let mut spaces: Vec<&str> = self
            .proposals
            .iter()
            .map(|p| p.space_id.as_str())
            .chain(self.market.keys().map(String::as_str))
            .collect();
        spaces.sort_unstable();
        spaces.dedup();
        spaces
    }

    pub fn proposals_in<'a>(
        &'a self,
        space_id: &'a str,
    ) -> impl Iterator<Item = &'a Proposal> + 'a {
        self.proposals
            .iter()
            .filter(move |p| p.space_id == space_id)
    }

    pub fn all_votes(&self) -> impl Iterator<Item = &VoteRecord> {
        self.votes.values().flatten()
    }

    pub fn n_votes(&self) -> usize {
        self.votes.values().map(Vec::len).sum()
    }

    /// Replaces one space's records, keeping other spaces intact.
    pub fn replace_space(&mut self, space_id: &str, other: Dataset) {
        let stale: Vec<String> = self
            .proposals_in(space_id)
            .map(|p| p.proposal_id.clone())
            .collect();
        for id in &stale {
            self.votes.remove(id);
            self.forum.remove(id);
        }
        self.proposals.retain(|p| p.space_id != space_id);
        self.market.remove(space_id);
        self.proposals.extend(other.proposals);
        self.votes.extend(other.votes);
        self.forum.extend(other.forum);
        self.market.extend(other.market);
        self.canonicalize();
    }
}
