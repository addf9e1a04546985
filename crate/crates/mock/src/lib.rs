//! Fixture-backed HTTP server standing in for every upstream the pipeline
//! talks to. It binds an ephemeral localhost port and serves:
//!
//! * `POST /graphql`: Snapshot hub `proposals`, `proposal` and `votes` queries
//! * `GET /protocol/{slug}` and `GET /treasury/{slug}`: DeFiLlama series
//! * `GET /v2/cryptocurrency/quotes/historical`: CoinMarketCap price quotes
//! * `GET /v3/index/cmc100-historical`: market index history
//! * `POST /chat/completions`: scripted chat replies
//!
//! Each route counts its requests, and the first `fail_first` requests can be
//! answered with 503 to exercise retries.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use chrono::{DateTime, SecondsFormat};
use dao_align_core::model::{MarketMetric, MarketSeries, Proposal, VoteRecord, SECONDS_PER_DAY};
use dao_align_core::Dataset;
use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server};

/// Produces the assistant text for one chat request body.
pub type Responder = Arc<dyn Fn(&Value) -> String + Send + Sync>;

/// Replies taken from `script` in order, cycling when exhausted.
pub fn scripted(script: Vec<String>) -> Responder {
    let next = AtomicUsize::new(0);
    Arc::new(move |_| {
        let i = next.fetch_add(1, Ordering::SeqCst);
        script[i % script.len()].clone()
    })
}

/// Always answers with the first label under the prompt's `Choices:` heading,
/// as a JSON object.
pub fn first_choice_responder() -> Responder {
    Arc::new(|body| {
        let text = body["messages"]
            .as_array()
            .map(|m| {
                m.iter()
                    .filter_map(|x| x["content"].as_str())
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .unwrap_or_default();
        let label = text
            .lines()
            .skip_while(|l| l.trim() != "Choices:")
            .find_map(|l| l.trim().strip_prefix("1. "))
            .unwrap_or("1")
            .trim()
            .to_string();
        json!({"selected_option": label, "justification": "first listed option"}).to_string()
    })
}

#[derive(Clone, Default)]
pub struct Fixtures {
    pub proposals: Vec<Proposal>,
    pub votes: BTreeMap<String, Vec<VoteRecord>>,
    /// Keyed by lower-cased protocol slug or symbol.
    pub series: BTreeMap<(String, MarketMetric), MarketSeries>,
    pub llm: Option<Responder>,
    /// Answer this many requests with 503 before serving normally.
    pub fail_first: usize,
    /// Routes that always answer 503.
    pub failing_routes: BTreeSet<String>,
}

impl std::fmt::Debug for Fixtures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fixtures")
            .field("proposals", &self.proposals.len())
            .field("series", &self.series.len())
            .field("fail_first", &self.fail_first)
            .finish()
    }
}

impl Fixtures {
    /// Serves everything in `dataset`: proposals, votes and market series.
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let mut fx = Fixtures {
            proposals: dataset.proposals().to_vec(),
            ..Default::default()
        };
        for p in dataset.proposals() {
            fx.votes.insert(
                p.proposal_id.clone(),
                dataset.votes_for(&p.proposal_id).to_vec(),
            );
        }
        for space in dataset.spaces() {
            for s in dataset.market_for(space) {
                fx.series
                    .insert((s.protocol.to_lowercase(), s.metric), s.clone());
            }
        }
        fx
    }

    pub fn with_llm(mut self, responder: Responder) -> Self {
        self.llm = Some(responder);
        self
    }
}

#[derive(Default)]
struct State {
    counts: Mutex<BTreeMap<String, usize>>,
    chat_bodies: Mutex<Vec<Value>>,
    served: AtomicUsize,
}

pub struct MockServer {
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
    state: Arc<State>,
    url: String,
}

impl std::fmt::Debug for MockServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockServer")
            .field("url", &self.url)
            .finish()
    }
}

impl MockServer {
    pub fn start(fixtures: Fixtures) -> std::io::Result<Self> {
        let server = Arc::new(Server::http("127.0.0.1:0").map_err(std::io::Error::other)?);
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("mock server has no ip address"))?;
        let state = Arc::new(State::default());
        let handle = {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(request, &fixtures, &state);
                }
            })
        };
        Ok(MockServer {
            server,
            handle: Some(handle),
            state,
            url: format!("http://127.0.0.1:{port}"),
        })
    }

    /// Base URL without a trailing slash.
    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn graphql_url(&self) -> String {
        format!("{}/graphql", self.url)
    }

    /// Requests seen on one route: `graphql`, `defillama`, `cmc_quotes`,
    /// `cmc_index`, `chat` or `unknown`.
    pub fn requests(&self, route: &str) -> usize {
        self.state
            .counts
            .lock()
            .unwrap()
            .get(route)
            .copied()
            .unwrap_or(0)
    }

    pub fn total_requests(&self) -> usize {
        self.state.counts.lock().unwrap().values().sum()
    }

    /// Bodies of every chat request received, in arrival order.
    pub fn chat_requests(&self) -> Vec<Value> {
        self.state.chat_bodies.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn route_of(method: &Method, path: &str) -> &'static str {
    match (method, path) {
        (Method::Post, "/graphql") => "graphql",
        (Method::Post, "/chat/completions") | (Method::Post, "/v1/chat/completions") => "chat",
        (Method::Get, p) if p.starts_with("/protocol/") || p.starts_with("/treasury/") => {
            "defillama"
        }
        (Method::Get, "/v2/cryptocurrency/quotes/historical") => "cmc_quotes",
        (Method::Get, p) if p.starts_with("/v3/index/") => "cmc_index",
        _ => "unknown",
    }
}

fn query_params(query: &str) -> BTreeMap<String, String> {
    query
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn json_response(status: u16, body: &Value) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_data(body.to_string().into_bytes())
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn handle(mut request: Request, fx: &Fixtures, state: &State) {
    let url = request.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((url.as_str(), ""));
    let route = route_of(request.method(), path);
    *state
        .counts
        .lock()
        .unwrap()
        .entry(route.to_string())
        .or_default() += 1;
    let nth = state.served.fetch_add(1, Ordering::SeqCst);

    let mut raw = String::new();
    let _ = request.as_reader().read_to_string(&mut raw);
    let (status, body) = if nth < fx.fail_first || fx.failing_routes.contains(route) {
        (503, json!({"error": "service unavailable"}))
    } else {
        let params = query_params(query);
        match route {
            "graphql" => graphql(fx, &raw),
            "chat" => chat(fx, state, &raw),
            "defillama" => defillama(fx, path),
            "cmc_quotes" => cmc_quotes(fx, &params),
            "cmc_index" => cmc_index(fx, &params),
            _ => (404, json!({"error": format!("no route for {path}")})),
        }
    };
    let _ = request.respond(json_response(status, &body));
}

fn proposal_json(p: &Proposal) -> Value {
    json!({
        "id": p.proposal_id,
        "title": p.title,
        "body": p.body.clone().unwrap_or_default(),
        "choices": p.choices,
        "created": p.created_at,
        "start": p.start,
        "end": p.end,
        "space": {"id": p.space_id},
    })
}

fn vote_json(v: &VoteRecord) -> Value {
    json!({
        "id": format!("{}-{}", v.proposal_id, v.voter),
        "voter": v.voter,
        "created": v.timestamp,
        "choice": v.choice,
        "vp": v.vp,
    })
}

fn graphql(fx: &Fixtures, raw: &str) -> (u16, Value) {
    let Ok(body) = serde_json::from_str::<Value>(raw) else {
        return (400, json!({"errors": [{"message": "body is not JSON"}]}));
    };
    let query = body["query"].as_str().unwrap_or_default();
    let vars = &body["variables"];
    let first = vars["first"].as_u64().unwrap_or(1000) as usize;
    let gte = vars["createdGte"].as_i64().unwrap_or(0);
    if query.contains("votes(") {
        let proposal = vars["proposal"].as_str().unwrap_or_default();
        let mut votes: Vec<&VoteRecord> = fx
            .votes
            .get(proposal)
            .map(|v| v.iter().filter(|v| v.timestamp >= gte).collect())
            .unwrap_or_default();
        votes.sort_by(|a, b| (a.timestamp, &a.voter).cmp(&(b.timestamp, &b.voter)));
        let page: Vec<Value> = votes.into_iter().take(first).map(vote_json).collect();
        (200, json!({"data": {"votes": page}}))
    } else if query.contains("proposals(") {
        let space = vars["space"].as_str().unwrap_or_default();
        let mut ps: Vec<&Proposal> = fx
            .proposals
            .iter()
            .filter(|p| p.space_id == space && p.created_at >= gte)
            .collect();
        ps.sort_by(|a, b| (a.created_at, &a.proposal_id).cmp(&(b.created_at, &b.proposal_id)));
        let page: Vec<Value> = ps.into_iter().take(first).map(proposal_json).collect();
        (200, json!({"data": {"proposals": page}}))
    } else if query.contains("proposal(") {
        let id = vars["id"].as_str().unwrap_or_default();
        let found = fx
            .proposals
            .iter()
            .find(|p| p.proposal_id == id)
            .map(proposal_json);
        (200, json!({"data": {"proposal": found}}))
    } else {
        (200, json!({"errors": [{"message": "unsupported query"}]}))
    }
}

fn chat(fx: &Fixtures, state: &State, raw: &str) -> (u16, Value) {
    let Ok(body) = serde_json::from_str::<Value>(raw) else {
        return (400, json!({"error": "body is not JSON"}));
    };
    state.chat_bodies.lock().unwrap().push(body.clone());
    let Some(responder) = &fx.llm else {
        return (404, json!({"error": "no chat model configured"}));
    };
    let content = responder(&body);
    (
        200,
        json!({
            "id": "chatcmpl-mock",
            "object": "chat.completion",
            "model": body["model"],
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        }),
    )
}

fn iso(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::Millis, true))
        .unwrap_or_default()
}

fn range(params: &BTreeMap<String, String>) -> (i64, i64) {
    let get = |k: &str, d: i64| params.get(k).and_then(|v| v.parse().ok()).unwrap_or(d);
    (get("time_start", i64::MIN), get("time_end", i64::MAX))
}

fn defillama(fx: &Fixtures, path: &str) -> (u16, Value) {
    let (metric, slug) = match path.strip_prefix("/protocol/") {
        Some(slug) => (MarketMetric::Tvl, slug),
        None => (
            MarketMetric::Treasury,
            path.trim_start_matches("/treasury/"),
        ),
    };
    let Some(series) = fx.series.get(&(slug.to_lowercase(), metric)) else {
        return (404, json!({"error": format!("protocol {slug} not found")}));
    };
    // An early stale sample each day checks that intraday points collapse to
    // the day's last value.
    let mut rows = Vec::new();
    for s in &series.samples {
        let day = s.day * SECONDS_PER_DAY;
        rows.push(json!({"date": day + 60, "totalLiquidityUSD": s.value * 0.5}));
        rows.push(json!({"date": day + 43_200, "totalLiquidityUSD": s.value}));
    }
    (200, json!({"name": slug, "tvl": rows}))
}

fn cmc_quotes(fx: &Fixtures, params: &BTreeMap<String, String>) -> (u16, Value) {
    let symbol = params.get("symbol").cloned().unwrap_or_default();
    let Some(series) = fx.series.get(&(symbol.to_lowercase(), MarketMetric::Price)) else {
        return (
            404,
            json!({"status": {"error_message": format!("Invalid value for \"symbol\": \"{symbol}\"")}}),
        );
    };
    let (from, to) = range(params);
    let quotes: Vec<Value> = series
        .samples
        .iter()
        .map(|s| (s.day * SECONDS_PER_DAY + 43_200, s.value))
        .filter(|(ts, _)| *ts >= from && *ts <= to)
        .map(|(ts, price)| json!({"timestamp": iso(ts), "quote": {"USD": {"price": price}}}))
        .collect();
    (
        200,
        json!({"data": {symbol.to_uppercase(): [{"symbol": symbol.to_uppercase(), "quotes": quotes}]}}),
    )
}

fn cmc_index(fx: &Fixtures, params: &BTreeMap<String, String>) -> (u16, Value) {
    let Some(series) = fx
        .series
        .iter()
        .find(|((_, m), _)| *m == MarketMetric::Index)
        .map(|(_, s)| s)
    else {
        return (404, json!({"status": {"error_message": "no index data"}}));
    };
    let (from, to) = range(params);
    let rows: Vec<Value> = series
        .samples
        .iter()
        .map(|s| (s.day * SECONDS_PER_DAY, s.value))
        .filter(|(ts, _)| *ts >= from && *ts <= to)
        .map(|(ts, value)| json!({"value": value, "update_time": iso(ts)}))
        .collect();
    (200, json!({"data": rows}))
}
