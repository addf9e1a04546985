//! Daily market series from DeFiLlama (TVL, treasury) and a CoinMarketCap
//! compatible API (token price, market index).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{timestamp_from, IngestError};
use crate::http::{HttpClient, HttpError};
use crate::model::{day_of, DailySample, Day, MarketMetric, MarketSeries, SECONDS_PER_DAY};

pub const DEFAULT_INDEX_PATH: &str = "/v3/index/cmc100-historical";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketEndpoints {
    pub defillama_url: String,
    pub cmc_url: String,
    /// Path of the index history endpoint under `cmc_url`.
    pub cmc_index_path: String,
    /// Environment variable holding the CoinMarketCap API key.
    pub cmc_key_env: String,
}

impl Default for MarketEndpoints {
    fn default() -> Self {
        MarketEndpoints {
            defillama_url: "https://api.llama.fi".into(),
            cmc_url: "https://pro-api.coinmarketcap.com".into(),
            cmc_index_path: DEFAULT_INDEX_PATH.into(),
            cmc_key_env: "CMC_API_KEY".into(),
        }
    }
}

#[derive(Debug)]
pub struct MarketClient<'a> {
    http: &'a HttpClient,
    endpoints: MarketEndpoints,
    cmc_key: Option<String>,
}

/// Keeps the last sample of each UTC day within `[first, last]`.
pub fn daily_last(
    points: impl IntoIterator<Item = (i64, f64)>,
    first: Day,
    last: Day,
) -> Vec<DailySample> {
    let mut by_day: BTreeMap<Day, (i64, f64)> = BTreeMap::new();
    for (ts, value) in points {
        if !value.is_finite() {
            continue;
        }
        let day = day_of(ts);
        if day < first || day > last {
            continue;
        }
        let slot = by_day.entry(day).or_insert((ts, value));
        if ts >= slot.0 {
            *slot = (ts, value);
        }
    }
    by_day
        .into_iter()
        .map(|(day, (_, value))| DailySample { day, value })
        .collect()
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn llama_points(reply: &Value) -> Option<Vec<(i64, f64)>> {
    reply.get("tvl")?.as_array().map(|rows| {
        rows.iter()
            .filter_map(|r| {
                Some((
                    timestamp_from(r.get("date")?)?,
                    number(r.get("totalLiquidityUSD")?)?,
                ))
            })
            .collect()
    })
}

fn cmc_quotes(reply: &Value, symbol: &str) -> Option<Vec<(i64, f64)>> {
    let data = reply.get("data")?;
    let holder = match data.get("quotes") {
        Some(_) => data,
        None => {
            let by_symbol = data
                .get(symbol)
                .or_else(|| data.get(symbol.to_uppercase()))?;
            match by_symbol {
                Value::Array(items) => items.first()?,
                other => other,
            }
        }
    };
    holder.get("quotes")?.as_array().map(|rows| {
        rows.iter()
            .filter_map(|r| {
                let price = r.pointer("/quote/USD/price")?;
                Some((timestamp_from(r.get("timestamp")?)?, number(price)?))
            })
            .collect()
    })
}

fn index_points(reply: &Value) -> Option<Vec<(i64, f64)>> {
    reply.get("data")?.as_array().map(|rows| {
        rows.iter()
            .filter_map(|r| {
                Some((
                    timestamp_from(r.get("update_time")?)?,
                    number(r.get("value")?)?,
                ))
            })
            .collect()
    })
}

impl<'a> MarketClient<'a> {
    pub fn new(http: &'a HttpClient, endpoints: MarketEndpoints) -> Self {
        let cmc_key = std::env::var(&endpoints.cmc_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        MarketClient {
            http,
            endpoints,
            cmc_key,
        }
    }

    pub fn endpoints(&self) -> &MarketEndpoints {
        &self.endpoints
    }

    fn get(&self, url: &str, what: &str) -> Result<Value, IngestError> {
        let key = self.cmc_key.as_deref().map(|k| ("X-CMC_PRO_API_KEY", k));
        let headers: Vec<(&str, &str)> = key.into_iter().collect();
        self.http.get_json(url, &headers).map_err(|e| match e {
            HttpError::NotFound { .. } => IngestError::NotFound(what.to_string()),
            HttpError::Malformed { url, reason } => {
                IngestError::SourceProtocol(format!("{url}: {reason}"))
            }
            other => IngestError::SourceUnavailable(other),
        })
    }

    /// Daily samples for `protocol` over the inclusive day range. Gaps stay
    /// gaps; intraday samples collapse to the day's last value.
    pub fn fetch_market_series(
        &self,
        protocol: &str,
        metric: MarketMetric,
        days: (Day, Day),
    ) -> Result<MarketSeries, IngestError> {
        let (first, last) = days;
        if first > last {
            return Err(IngestError::InvalidArgument(format!(
                "empty day range {first}..={last}"
            )));
        }
        let what = format!("{} series for {protocol}", metric.as_str());
        let time_start = first * SECONDS_PER_DAY;
        let time_end = (last + 1) * SECONDS_PER_DAY - 1;
        let points = match metric {
            MarketMetric::Tvl | MarketMetric::Treasury => {
                let path = if metric == MarketMetric::Tvl { "protocol" } else { "treasury" };
                let url = format!("{}/{path}/{protocol}", self.endpoints.defillama_url.trim_end_matches('/'));
                llama_points(&self.get(&url, &what)?)
            }
            MarketMetric::Price => {
                let url = format!(
                    "{}/v2/cryptocurrency/quotes/historical?symbol={protocol}&time_start={time_start}&time_end={time_end}&interval=daily",
                    self.endpoints.cmc_url.trim_end_matches('/')
                );
                cmc_quotes(&self.get(&url, &what)?, protocol)
            }
            MarketMetric::Index => {
                let url = format!(
                    "{}{}?time_start={time_start}&time_end={time_end}&interval=daily",
                    self.endpoints.cmc_url.trim_end_matches('/'),
                    self.endpoints.cmc_index_path
                );
                index_points(&self.get(&url, &what)?)
            }
        }
        .ok_or_else(|| IngestError::SourceProtocol(format!("{what}: unexpected reply shape")))?;
        let samples = daily_last(points, first, last);
        if samples.is_empty() {
            return Err(IngestError::NoData(what));
        }
        Ok(MarketSeries {
            protocol: protocol.to_string(),
            metric,
            samples,
        })
    }
}
