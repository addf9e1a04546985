//! Event-study responses around a proposal's close.
//!
//! The event day is the UTC day of the proposal's `end`. With a window of `w`
//! days the pre segment is days `[E-w, E)` and the post segment `(E, E+w]`;
//! the event day itself belongs to neither.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::collections::BTreeMap;

use crate::dataset::Dataset;
use crate::model::{day_of, Day, MarketMetric, MarketSeries, Proposal};

pub const DEFAULT_WINDOW_DAYS: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("{series}: empty {segment} segment")]
    NoData {
        series: String,
        segment: &'static str,
    },
    #[error("{series}: pre-event mean {mean} is not positive")]
    DegenerateBaseline { series: String, mean: f64 },
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `post_mean / pre_mean - 1` for a named series.
fn relative_change(series: &str, pre: &[f64], post: &[f64]) -> Result<f64, MarketError> {
    if pre.is_empty() {
        return Err(MarketError::NoData {
            series: series.to_string(),
            segment: "pre",
        });
    }
    if post.is_empty() {
        return Err(MarketError::NoData {
            series: series.to_string(),
            segment: "post",
        });
    }
    let pre_mean = mean(pre);
    if pre_mean <= 0.0 {
        return Err(MarketError::DegenerateBaseline {
            series: series.to_string(),
            mean: pre_mean,
        });
    }
    Ok(mean(post) / pre_mean - 1.0)
}

/// Percentage change between segment means.
pub fn windowed_pct_change(pre: &[f64], post: &[f64]) -> Result<f64, MarketError> {
    relative_change("series", pre, post).map(|r| r * 100.0)
}

/// Token change minus index change over the same window, in percent.
pub fn market_adjusted_return(
    token_pre: &[f64],
    token_post: &[f64],
    index_pre: &[f64],
    index_post: &[f64],
) -> Result<f64, MarketError> {
    let token = relative_change("token", token_pre, token_post)?;
    let index = relative_change("index", index_pre, index_post)?;
    Ok((token - index) * 100.0)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SeriesBundle<'a> {
    pub price: Option<&'a MarketSeries>,
    pub index: Option<&'a MarketSeries>,
    pub tvl: Option<&'a MarketSeries>,
    pub treasury: Option<&'a MarketSeries>,
}

/// Number of samples found in each segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SegmentCoverage {
    pub pre: usize,
    pub post: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Coverage {
    pub price: SegmentCoverage,
    pub index: SegmentCoverage,
    pub tvl: SegmentCoverage,
    pub treasury: SegmentCoverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketWindow {
    pub proposal_id: String,
    pub window_days: u32,
    pub event_day: Day,
    /// Percent.
    pub price_pct_change: Option<f64>,
    /// Percent, index-adjusted.
    pub adj_return: Option<f64>,
    /// Fraction.
    pub tvl_abnormal: Option<f64>,
    /// Fraction.
    pub treasury_abnormal: Option<f64>,
    pub data_coverage: Coverage,
}

impl MarketWindow {
    /// Last day whose samples influence this window.
    pub fn last_day(&self) -> Day {
        self.event_day + self.window_days as Day
    }
}

struct Segments {
    pre: Vec<f64>,
    post: Vec<f64>,
}

fn segments(series: Option<&MarketSeries>, event_day: Day, window: Day) -> Segments {
    match series {
        Some(s) => Segments {
            pre: s.values_in(event_day - window, event_day - 1),
            post: s.values_in(event_day + 1, event_day + window),
        },
        None => Segments {
            pre: Vec::new(),
            post: Vec::new(),
        },
    }
}

impl Segments {
    fn coverage(&self) -> SegmentCoverage {
        SegmentCoverage {
            pre: self.pre.len(),
            post: self.post.len(),
        }
    }

    fn change(&self, name: &str) -> Option<f64> {
        relative_change(name, &self.pre, &self.post).ok()
    }
}

/// Computes each metric independently; anything lacking data stays absent.
pub fn compute_market_window(
    proposal: &Proposal,
    bundle: &SeriesBundle<'_>,
    window_days: u32,
) -> MarketWindow {
    let event_day = day_of(proposal.end);
    let w = window_days.max(1) as Day;
    let price = segments(bundle.price, event_day, w);
    let index = segments(bundle.index, event_day, w);
    let tvl = segments(bundle.tvl, event_day, w);
    let treasury = segments(bundle.treasury, event_day, w);

    let price_change = price.change("price");
    let adj_return = match (price_change, index.change("index")) {
        (Some(p), Some(i)) => Some((p - i) * 100.0),
        _ => None,
    };
    MarketWindow {
        proposal_id: proposal.proposal_id.clone(),
        window_days: w as u32,
        event_day,
        price_pct_change: price_change.map(|r| r * 100.0),
        adj_return,
        tvl_abnormal: tvl.change("tvl"),
        treasury_abnormal: treasury.change("treasury"),
        data_coverage: Coverage {
            price: price.coverage(),
            index: index.coverage(),
            tvl: tvl.coverage(),
            treasury: treasury.coverage(),
        },
    }
}

/// Window for one proposal from its space's series in `dataset`.
pub fn market_window_for(dataset: &Dataset, proposal: &Proposal, window_days: u32) -> MarketWindow {
    let space = &proposal.space_id;
    let bundle = SeriesBundle {
        price: dataset.market_series(space, MarketMetric::Price),
        index: dataset.market_series(space, MarketMetric::Index),
        tvl: dataset.market_series(space, MarketMetric::Tvl),
        treasury: dataset.market_series(space, MarketMetric::Treasury),
    };
    compute_market_window(proposal, &bundle, window_days)
}

/// Windows for every proposal, keyed by proposal id.
pub fn dataset_windows(dataset: &Dataset, window_days: u32) -> BTreeMap<String, MarketWindow> {
    dataset
        .proposals()
        .iter()
        .map(|p| {
            (
                p.proposal_id.clone(),
                market_window_for(dataset, p, window_days),
            )
        })
        .collect()
}
