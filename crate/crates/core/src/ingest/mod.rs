//! Fetching proposals, votes, forum signals and market series into a
//! [`Dataset`].

mod forum;
mod market_sources;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::Dataset;
use crate::http::{HttpClient, HttpConfig, HttpError};
use crate::model::{day_of, Day, MarketMetric, MarketSeries, Proposal, Timestamp};
use crate::store::{read_jsonl, SourceEntry};

pub use forum::{lexicon_score, load_forum_file, score_thread, RawComment, RawThread};
pub use market_sources::{daily_last, MarketClient, MarketEndpoints, DEFAULT_INDEX_PATH};
pub use snapshot::{SnapshotClient, PAGE_SIZE, PROPOSALS_QUERY, PROPOSAL_QUERY, VOTES_QUERY};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("source unavailable: {0}")]
    SourceUnavailable(#[from] HttpError),
    #[error("{0} not found")]
    NotFound(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error("source protocol error: {0}")]
    SourceProtocol(String),
    #[error("input file: {0}")]
    Input(String),
}

/// Warning counters accumulated while ingesting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records_skipped: usize,
    pub duplicates_dropped: usize,
    pub out_of_window: usize,
    pub market_missing: usize,
    pub labels_unmatched: usize,
}

impl IngestStats {
    pub fn merge(&mut self, other: &IngestStats) {
        self.records_skipped += other.records_skipped;
        self.duplicates_dropped += other.duplicates_dropped;
        self.out_of_window += other.out_of_window;
        self.market_missing += other.market_missing;
        self.labels_unmatched += other.labels_unmatched;
    }
}

/// Integer seconds, or a string holding integer seconds or an ISO 8601
/// datetime (UTC when no offset is given).
pub fn timestamp_from(value: &Value) -> Option<Timestamp> {
    match value {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.is_finite()).map(|f| f as i64)),
        Value::String(s) => {
            let s = s.trim();
            if let Ok(n) = s.parse::<i64>() {
                return Some(n);
            }
            if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
                return Some(dt.timestamp());
            }
            ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
                .iter()
                .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
                .map(|dt| dt.and_utc().timestamp())
        }
        _ => None,
    }
}

/// Manual annotation joined onto proposals by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalLabel {
    pub proposal_id: String,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub calls_for_change: Option<bool>,
}

pub fn load_labels(path: &Path) -> Result<Vec<ProposalLabel>, IngestError> {
    read_jsonl(path).map_err(|e| IngestError::Input(e.to_string()))
}

/// Copies labels onto matching proposals; returns how many labels matched nothing.
pub fn apply_labels(proposals: &mut [Proposal], labels: &[ProposalLabel]) -> usize {
    let by_id: BTreeMap<&str, &ProposalLabel> =
        labels.iter().map(|l| (l.proposal_id.as_str(), l)).collect();
    let mut matched = BTreeSet::new();
    for p in proposals.iter_mut() {
        if let Some(l) = by_id.get(p.proposal_id.as_str()) {
            matched.insert(l.proposal_id.as_str());
            if l.category.is_some() {
                p.category = l.category.clone();
            }
            if l.calls_for_change.is_some() {
                p.calls_for_change = l.calls_for_change;
            }
        }
    }
    by_id.len() - matched.len()
}

/// Market identifiers for one space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSource {
    pub space: String,
    /// DeFiLlama protocol slug for TVL and treasury.
    #[serde(default)]
    pub protocol: Option<String>,
    /// Token symbol for price quotes.
    #[serde(default)]
    pub symbol: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub snapshot_url: String,
    pub market: MarketEndpoints,
    pub spaces: Vec<SpaceSource>,
    pub forum_file: Option<PathBuf>,
    pub labels_file: Option<PathBuf>,
    /// Days of market data fetched on each side of the proposal closes.
    pub window_days: u32,
    pub fetch_index: bool,
    pub http: HttpConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            snapshot_url: "https://hub.snapshot.org/graphql".into(),
            market: MarketEndpoints::default(),
            spaces: Vec::new(),
            forum_file: None,
            labels_file: None,
            window_days: crate::market::DEFAULT_WINDOW_DAYS,
            fetch_index: true,
            http: HttpConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct IngestOutput {
    pub dataset: Dataset,
    pub sources: Vec<SourceEntry>,
    pub stats: IngestStats,
}

fn day_span(proposals: &[Proposal], window_days: u32) -> Option<(Day, Day)> {
    let w = window_days as Day + 1;
    let first = proposals.iter().map(|p| day_of(p.end)).min()?;
    let last = proposals.iter().map(|p| day_of(p.end)).max()?;
    Some((first - w, last + w))
}

fn fetch_optional(
    client: &MarketClient<'_>,
    protocol: &str,
    metric: MarketMetric,
    days: (Day, Day),
    stats: &mut IngestStats,
) -> Result<Option<MarketSeries>, IngestError> {
    match client.fetch_market_series(protocol, metric, days) {
        Ok(s) => Ok(Some(s)),
        Err(e @ (IngestError::NotFound(_) | IngestError::NoData(_))) => {
            stats.market_missing += 1;
            tracing::warn!(protocol, metric = metric.as_str(), error = %e, "market series missing");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Runs every configured fetch. Missing market series are counted, not fatal;
/// any other upstream failure aborts.
pub fn run_ingest(config: &IngestConfig) -> Result<IngestOutput, IngestError> {
    if config.spaces.is_empty() {
        return Err(IngestError::InvalidArgument("no spaces configured".into()));
    }
    let http = HttpClient::new(config.http.clone());
    let snapshot = SnapshotClient::new(&http, config.snapshot_url.clone());
    let market = MarketClient::new(&http, config.market.clone());
    let mut stats = IngestStats::default();
    let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);

    let space_ids: Vec<String> = config.spaces.iter().map(|s| s.space.clone()).collect();
    let mut proposals = snapshot.fetch_proposals(&space_ids, &mut stats)?;
    if let Some(path) = &config.labels_file {
        stats.labels_unmatched += apply_labels(&mut proposals, &load_labels(path)?);
    }

    let vote_results: Vec<_> = proposals
        .par_iter()
        .map(|p| {
            let mut local = IngestStats::default();
            snapshot.fetch_votes_for(p, &mut local).map(|v| (v, local))
        })
        .collect();
    let mut votes = Vec::new();
    for r in vote_results {
        let (v, local) = r?;
        stats.merge(&local);
        votes.extend(v);
    }

    let forum = match &config.forum_file {
        Some(path) => {
            let ids: BTreeSet<&str> = proposals.iter().map(|p| p.proposal_id.as_str()).collect();
            let all = load_forum_file(path)?;
            let before = all.len();
            let kept: Vec<_> = all
                .into_iter()
                .filter(|f| ids.contains(f.proposal_id.as_str()))
                .collect();
            stats.records_skipped += before - kept.len();
            kept
        }
        None => Vec::new(),
    };

    let mut market_series: BTreeMap<String, Vec<MarketSeries>> = BTreeMap::new();
    let mut index_cache: Option<Option<MarketSeries>> = None;
    let full_span = day_span(&proposals, config.window_days);
    for source in &config.spaces {
        let in_space: Vec<Proposal> = proposals
            .iter()
            .filter(|p| p.space_id == source.space)
            .cloned()
            .collect();
        let Some(days) = day_span(&in_space, config.window_days) else {
            continue;
        };
        let mut series = Vec::new();
        if let Some(slug) = &source.protocol {
            for metric in [MarketMetric::Tvl, MarketMetric::Treasury] {
                series.extend(fetch_optional(&market, slug, metric, days, &mut stats)?);
            }
        }
        if let Some(symbol) = &source.symbol {
            series.extend(fetch_optional(
                &market,
                symbol,
                MarketMetric::Price,
                days,
                &mut stats,
            )?);
            if config.fetch_index {
                if index_cache.is_none() {
                    let span = full_span.expect("proposals exist");
                    index_cache = Some(fetch_optional(
                        &market,
                        "index",
                        MarketMetric::Index,
                        span,
                        &mut stats,
                    )?);
                }
                series.extend(index_cache.clone().flatten());
            }
        }
        market_series.insert(source.space.clone(), series);
    }

    let mut sources = vec![SourceEntry {
        name: "snapshot".into(),
        endpoint: config.snapshot_url.clone(),
        fetched_at: now.clone(),
    }];
    if config.spaces.iter().any(|s| s.protocol.is_some()) {
        sources.push(SourceEntry {
            name: "defillama".into(),
            endpoint: config.market.defillama_url.clone(),
            fetched_at: now.clone(),
        });
    }
    if config.spaces.iter().any(|s| s.symbol.is_some()) {
        sources.push(SourceEntry {
            name: "coinmarketcap".into(),
            endpoint: config.market.cmc_url.clone(),
            fetched_at: now.clone(),
        });
    }
    if let Some(path) = &config.forum_file {
        sources.push(SourceEntry {
            name: "forum".into(),
            endpoint: path.display().to_string(),
            fetched_at: now.clone(),
        });
    }
    if let Some(path) = &config.labels_file {
        sources.push(SourceEntry {
            name: "labels".into(),
            endpoint: path.display().to_string(),
            fetched_at: now,
        });
    }

    Ok(IngestOutput {
        dataset: Dataset::new(proposals, votes, forum, market_series),
        sources,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn timestamps_from_ints_and_strings() {
        assert_eq!(timestamp_from(&json!(1700000000)), Some(1_700_000_000));
        assert_eq!(timestamp_from(&json!("1700000000")), Some(1_700_000_000));
        assert_eq!(timestamp_from(&json!("1970-01-02T00:00:00Z")), Some(86_400));
        assert_eq!(
            timestamp_from(&json!("1970-01-02T00:00:00.000Z")),
            Some(86_400)
        );
        assert_eq!(timestamp_from(&json!("1970-01-02 00:00:01")), Some(86_401));
        assert_eq!(timestamp_from(&json!("yesterday")), None);
        assert_eq!(timestamp_from(&json!(null)), None);
    }

    #[test]
    fn labels_join_by_id() {
        let mut ps = vec![Proposal {
            proposal_id: "a".into(),
            space_id: "s".into(),
            title: "t".into(),
            body: None,
            choices: vec!["x".into(), "y".into()],
            created_at: 0,
            start: 1,
            end: 2,
            calls_for_change: None,
            category: None,
        }];
        let labels = vec![
            ProposalLabel {
                proposal_id: "a".into(),
                category: Some("treasury".into()),
                calls_for_change: Some(true),
            },
            ProposalLabel {
                proposal_id: "zz".into(),
                category: None,
                calls_for_change: None,
            },
        ];
        assert_eq!(apply_labels(&mut ps, &labels), 1);
        assert_eq!(ps[0].calls_for_change, Some(true));
        assert_eq!(ps[0].category.as_deref(), Some("treasury"));
    }
}
