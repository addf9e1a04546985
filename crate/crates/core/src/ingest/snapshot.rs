//! Snapshot hub GraphQL client.

use std::collections::BTreeSet;

use serde_json::{json, Value};

use super::{timestamp_from, IngestError, IngestStats};
use crate::http::{HttpClient, HttpError};
use crate::model::{dedup_latest, ChoiceExpr, Proposal, VoteRecord};

pub const PAGE_SIZE: usize = 1000;

pub const PROPOSALS_QUERY: &str = "query Proposals($space: String!, $first: Int!, $createdGte: Int!) {
  proposals(first: $first, where: {space: $space, state: \"closed\", created_gte: $createdGte}, orderBy: \"created\", orderDirection: asc) {
    id title body choices created start end space { id }
  }
}";

pub const PROPOSAL_QUERY: &str = "query Proposal($id: String!) {
  proposal(id: $id) {
    id title body choices created start end space { id }
  }
}";

pub const VOTES_QUERY: &str = "query Votes($proposal: String!, $first: Int!, $createdGte: Int!) {
  votes(first: $first, where: {proposal: $proposal, created_gte: $createdGte}, orderBy: \"created\", orderDirection: asc) {
    id voter created choice vp
  }
}";

#[derive(Debug)]
pub struct SnapshotClient<'a> {
    http: &'a HttpClient,
    endpoint: String,
}

fn field<'v>(obj: &'v Value, key: &str) -> Result<&'v Value, String> {
    obj.get(key)
        .filter(|v| !v.is_null())
        .ok_or_else(|| format!("missing {key}"))
}

fn string_field(obj: &Value, key: &str) -> Result<String, String> {
    field(obj, key)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| format!("{key} is not a string"))
}

fn ts_field(obj: &Value, key: &str) -> Result<i64, String> {
    timestamp_from(field(obj, key)?).ok_or_else(|| format!("{key} is not a timestamp"))
}

fn proposal_from(value: &Value) -> Result<Proposal, String> {
    let choices = field(value, "choices")?
        .as_array()
        .ok_or("choices is not a list")?
        .iter()
        .map(|c| {
            c.as_str()
                .map(str::to_string)
                .ok_or("choice label is not a string")
        })
        .collect::<Result<Vec<_>, _>>()?;
    let body = value
        .get("body")
        .and_then(Value::as_str)
        .map(str::to_string)
        .filter(|b| !b.is_empty());
    let proposal = Proposal {
        proposal_id: string_field(value, "id")?,
        space_id: field(value, "space")?
            .get("id")
            .and_then(Value::as_str)
            .ok_or("space.id missing")?
            .to_string(),
        title: string_field(value, "title")?,
        body,
        choices,
        created_at: ts_field(value, "created")?,
        start: ts_field(value, "start")?,
        end: ts_field(value, "end")?,
        calls_for_change: None,
        category: None,
    };
    proposal.validate().map_err(|e| e.to_string())?;
    Ok(proposal)
}

fn vp_from(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn vote_from(value: &Value, proposal: &Proposal) -> Result<VoteRecord, String> {
    let choice: ChoiceExpr = serde_json::from_value(field(value, "choice")?.clone())
        .map_err(|e| format!("choice: {e}"))?;
    let vote = VoteRecord {
        proposal_id: proposal.proposal_id.clone(),
        voter: string_field(value, "voter")?.to_lowercase(),
        choice,
        vp: vp_from(field(value, "vp")?).ok_or("vp is not a number")?,
        timestamp: ts_field(value, "created")?,
    };
    Ok(vote)
}

impl<'a> SnapshotClient<'a> {
    pub fn new(http: &'a HttpClient, endpoint: impl Into<String>) -> Self {
        SnapshotClient {
            http,
            endpoint: endpoint.into(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn query(&self, query: &str, variables: Value) -> Result<Value, IngestError> {
        let body = json!({ "query": query, "variables": variables });
        let reply = self
            .http
            .post_json(&self.endpoint, &body, &[])
            .map_err(|e| match e {
                HttpError::Malformed { url, reason } => {
                    IngestError::SourceProtocol(format!("{url}: {reason}"))
                }
                other => IngestError::SourceUnavailable(other),
            })?;
        if let Some(errors) = reply.get("errors").filter(|e| !e.is_null()) {
            return Err(IngestError::SourceProtocol(format!(
                "{}: {errors}",
                self.endpoint
            )));
        }
        reply.get("data").cloned().ok_or_else(|| {
            IngestError::SourceProtocol(format!("{}: reply has no data", self.endpoint))
        })
    }

    /// Pages through `(created, id)` order with a `created_gte` cursor. A full
    /// page that adds no unseen id means the cursor cannot advance.
    fn paged(
        &self,
        query: &str,
        root: &str,
        mut variables: impl FnMut(i64) -> Value,
    ) -> Result<Vec<Value>, IngestError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut cursor = 0i64;
        loop {
            let data = self.query(query, variables(cursor))?;
            let page = data.get(root).and_then(Value::as_array).ok_or_else(|| {
                IngestError::SourceProtocol(format!("{}: missing {root} list", self.endpoint))
            })?;
            let mut fresh = 0;
            let mut max_created = cursor;
            for item in page {
                let id = item.get("id").and_then(Value::as_str);
                if let Some(created) = item.get("created").and_then(timestamp_from) {
                    max_created = max_created.max(created);
                }
                match id {
                    Some(id) if seen.insert(id.to_string()) => {
                        fresh += 1;
                        out.push(item.clone());
                    }
                    Some(_) => {}
                    None => out.push(item.clone()),
                }
            }
            if page.len() < PAGE_SIZE {
                return Ok(out);
            }
            if fresh == 0 {
                return Err(IngestError::SourceProtocol(format!(
                    "{}: {root} cursor stuck at created={cursor}",
                    self.endpoint
                )));
            }
            cursor = max_created;
        }
    }

    /// Closed proposals of every space, ordered by `(space, created, id)`.
    pub fn fetch_proposals(
        &self,
        spaces: &[String],
        stats: &mut IngestStats,
    ) -> Result<Vec<Proposal>, IngestError> {
        if spaces.is_empty() {
            return Err(IngestError::InvalidArgument("no spaces requested".into()));
        }
        let mut proposals = Vec::new();
        for space in spaces {
            let raw = self.paged(
                PROPOSALS_QUERY,
                "proposals",
                |cursor| json!({ "space": space, "first": PAGE_SIZE, "createdGte": cursor }),
            )?;
            for item in raw {
                match proposal_from(&item) {
                    Ok(p) => proposals.push(p),
                    Err(reason) => {
                        stats.records_skipped += 1;
                        tracing::warn!(space = space.as_str(), reason, "proposal record skipped");
                    }
                }
            }
        }
        proposals.sort_by(|a, b| {
            (a.space_id.as_str(), a.created_at, a.proposal_id.as_str()).cmp(&(
                b.space_id.as_str(),
                b.created_at,
                b.proposal_id.as_str(),
            ))
        });
        Ok(proposals)
    }

    pub fn fetch_proposal(&self, proposal_id: &str) -> Result<Proposal, IngestError> {
        let data = self.query(PROPOSAL_QUERY, json!({ "id": proposal_id }))?;
        match data.get("proposal") {
            None | Some(Value::Null) => {
                Err(IngestError::NotFound(format!("proposal {proposal_id}")))
            }
            Some(v) => proposal_from(v)
                .map_err(|r| IngestError::SourceProtocol(format!("proposal {proposal_id}: {r}"))),
        }
    }

    /// Every ballot on the proposal, latest per voter, inside the voting window.
    pub fn fetch_votes(
        &self,
        proposal_id: &str,
        stats: &mut IngestStats,
    ) -> Result<Vec<VoteRecord>, IngestError> {
        let proposal = self.fetch_proposal(proposal_id)?;
        self.fetch_votes_for(&proposal, stats)
    }

    pub fn fetch_votes_for(
        &self,
        proposal: &Proposal,
        stats: &mut IngestStats,
    ) -> Result<Vec<VoteRecord>, IngestError> {
        let raw = self.paged(VOTES_QUERY, "votes", |cursor| {
            json!({ "proposal": proposal.proposal_id, "first": PAGE_SIZE, "createdGte": cursor })
        })?;
        let mut votes = Vec::with_capacity(raw.len());
        for item in raw {
            let vote = vote_from(&item, proposal);
            match vote {
                Ok(v) if !proposal.contains(v.timestamp) => {
                    stats.out_of_window += 1;
                    tracing::warn!(
                        proposal = proposal.proposal_id.as_str(),
                        voter = v.voter.as_str(),
                        "vote outside window dropped"
                    );
                }
                Ok(v) => match v.validate(proposal) {
                    Ok(_) => votes.push(v),
                    Err(e) => {
                        stats.records_skipped += 1;
                        tracing::warn!(proposal = proposal.proposal_id.as_str(), reason = %e, "vote record skipped");
                    }
                },
                Err(reason) => {
                    stats.records_skipped += 1;
                    tracing::warn!(
                        proposal = proposal.proposal_id.as_str(),
                        reason,
                        "vote record skipped"
                    );
                }
            }
        }
        let (mut votes, dropped) = dedup_latest(votes);
        stats.duplicates_dropped += dropped;
        votes.sort_by(|a, b| (a.timestamp, a.voter.as_str()).cmp(&(b.timestamp, b.voter.as_str())));
        Ok(votes)
    }
}
