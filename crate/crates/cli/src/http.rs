//! Read-only HTTP front end over the index and the report queries.
//!
//! | route | parameters |
//! |---|---|
//! | `GET /search` | `q` (required), `label`, `k` (1..=1000, default 10) |
//! | `GET /reports/counts` | none |
//! | `GET /reports/timeline` | `window` ms (default 3600000), `start`, `end` |

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde::Serialize;
use streamsift::analytics::Report;
use streamsift::index::{SearchHit, SearchQuery, SharedIndex};
use streamsift::streamproc::StopSignal;
use streamsift::Sentiment;

use crate::error::CliError;
use crate::pipeline::{self, CountSource, IngestSource, IngestSummary, Pipeline, StreamOptions};

pub const DEFAULT_K: usize = 10;
pub const MAX_K: usize = 1000;
pub const DEFAULT_WINDOW_MS: u64 = 3_600_000;
const REFRESH_EVERY: Duration = Duration::from_millis(200);
const PERSIST_EVERY: Duration = Duration::from_secs(5);

#[derive(Clone)]
pub struct AppState {
    pub index: SharedIndex,
    pub pipeline: Arc<Pipeline>,
}

#[derive(Debug, Serialize)]
pub struct SearchResponse {
    pub query: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Sentiment>,
    pub k: usize,
    pub hits: Vec<SearchHit>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/search", get(search))
        .route("/reports/counts", get(counts))
        .route("/reports/timeline", get(timeline))
        .with_state(state)
}

fn bad_request(msg: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, msg.into()).into_response()
}

fn internal(e: CliError) -> Response {
    let status = match e.exit_code() {
        2 => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    (status, e.to_string()).into_response()
}

fn json_body(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

/// Validates `/search` parameters into a query and `k`.
pub fn parse_search_params(
    params: &HashMap<String, String>,
) -> Result<(SearchQuery, usize), String> {
    let q = params.get("q").map(|s| s.trim()).unwrap_or_default();
    if q.is_empty() {
        return Err("missing or empty q".into());
    }
    let mut query = SearchQuery::parse(q)?;
    if query.terms.trim().is_empty() {
        return Err("query has no terms".into());
    }
    if let Some(l) = params.get("label") {
        let label: Sentiment = l.parse()?;
        if query.label.is_some_and(|existing| existing != label) {
            return Err("label parameter conflicts with the label: clause".into());
        }
        query.label = Some(label);
    }
    let k = match params.get("k") {
        None => DEFAULT_K,
        Some(k) => match k.parse::<usize>() {
            Ok(k) if (1..=MAX_K).contains(&k) => k,
            _ => return Err(format!("k must be an integer in 1..={MAX_K}")),
        },
    };
    Ok((query, k))
}

async fn search(
    State(state): State<AppState>,
    Query(params): Query<HashMap<String, String>>,
) -> Response {
    let (query, k) = match parse_search_params(&params) {
        Ok(v) => v,
        Err(e) => return bad_request(e),
    };
    let hits = state.index.snapshot().search(&query, k);
    let body = SearchResponse {
        query: query.terms,
        label: query.label,
        k,
        hits,
    };
    json_body(serde_json::to_string(&body).expect("serializes"))
}

async fn counts(State(state): State<AppState>) -> Response {
    let p = Arc::clone(&state.pipeline);
    match tokio::task::spawn_blocking(move || pipeline::counts(&p, &CountSource::Labeled)).await {
        Ok(Ok(report)) => json_body(report.to_json()),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(CliError::Internal(e.to_string())),
    }
}

async fn timeline(
    State(state): State<AppState>,
    Query(params): Query<HashMap<String, String>>,
) -> Response {
    let num = |key: &str| -> Result<Option<u64>, Response> {
        params
            .get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| bad_request(format!("{key} must be a non-negative integer")))
            })
            .transpose()
    };
    let (window, start, end) = match (num("window"), num("start"), num("end")) {
        (Ok(w), Ok(s), Ok(e)) => (w.unwrap_or(DEFAULT_WINDOW_MS), s, e),
        (Err(r), _, _) | (_, Err(r), _) | (_, _, Err(r)) => return r,
    };
    if window == 0 {
        return bad_request("window must be positive");
    }
    let p = Arc::clone(&state.pipeline);
    match tokio::task::spawn_blocking(move || pipeline::timeline(&p, window, start, end)).await {
        Ok(Ok(points)) => json_body(points.to_json()),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(CliError::Internal(e.to_string())),
    }
}

pub struct ServeOptions {
    pub port: u16,
    /// Also run the micro-batch loop in this process.
    pub with_stream: bool,
    /// Also ingest from this source in this process.
    pub ingest: Option<IngestSource>,
    pub stop: StopSignal,
    /// Receives the bound address once the listener is up.
    pub bound: Option<mpsc::Sender<SocketAddr>>,
}

/// Serves until `options.stop` fires. A background thread keeps the index
/// in step with the log. Returns the summary of the hosted ingest, if any.
pub fn serve(
    p: Arc<Pipeline>,
    mut options: ServeOptions,
) -> Result<Option<IngestSummary>, CliError> {
    let mut maintainer = p.index_maintainer()?;
    maintainer.catch_up()?;
    let state = AppState {
        index: maintainer.shared(),
        pipeline: Arc::clone(&p),
    };
    let done = Arc::new(AtomicBool::new(false));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;

    std::thread::scope(|s| {
        let refresher = s.spawn(|| -> Result<(), CliError> {
            let mut last_persist = Instant::now();
            while !done.load(Ordering::SeqCst) {
                std::thread::sleep(REFRESH_EVERY);
                maintainer.catch_up()?;
                if last_persist.elapsed() >= PERSIST_EVERY {
                    maintainer.persist()?;
                    last_persist = Instant::now();
                }
            }
            maintainer.catch_up()?;
            maintainer.persist()
        });
        let streamer = options.with_stream.then(|| {
            let stop = options.stop.clone();
            let p = &p;
            s.spawn(move || {
                pipeline::stream(
                    p,
                    StreamOptions {
                        stop,
                        max_batches: None,
                        until_idle: false,
                        index: false,
                    },
                )
            })
        });

        let ingester = options.ingest.take().map(|source| {
            let p = &p;
            s.spawn(move || {
                let summary = pipeline::ingest_with(p, source, false);
                match &summary {
                    Ok(s) => log::info!(
                        "ingest finished: {} in, {} out",
                        s.stats.records_in,
                        s.stats.envelopes_out
                    ),
                    Err(e) => log::error!("ingest failed: {e}"),
                }
                summary
            })
        });

        let stop = options.stop.clone();
        let served = runtime.block_on(async {
            let listener = tokio::net::TcpListener::bind(("127.0.0.1", options.port))
                .await
                .map_err(|e| CliError::Source(format!("cannot bind port {}: {e}", options.port)))?;
            let addr = listener.local_addr()?;
            log::info!("serving on http://{addr}");
            if let Some(tx) = &options.bound {
                let _ = tx.send(addr);
            }
            axum::serve(listener, router(state))
                .with_graceful_shutdown(async move {
                    while !stop.is_stopped() {
                        tokio::time::sleep(Duration::from_millis(50)).await;
                    }
                })
                .await
                .map_err(CliError::from)
        });
        options.stop.stop();
        done.store(true, Ordering::SeqCst);
        let refreshed = refresher.join().expect("index refresher panicked");
        let ingested = ingester
            .map(|h| h.join().expect("ingest thread panicked"))
            .transpose();
        if let Some(h) = streamer {
            h.join().expect("stream thread panicked")?;
        }
        served?;
        refreshed?;
        ingested
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn search_params_are_validated() {
        assert!(parse_search_params(&params(&[])).is_err());
        assert!(parse_search_params(&params(&[("q", "  ")])).is_err());
        assert!(parse_search_params(&params(&[("q", "x"), ("label", "meh")])).is_err());
        assert!(parse_search_params(&params(&[("q", "x"), ("k", "0")])).is_err());
        assert!(parse_search_params(&params(&[("q", "x"), ("k", "abc")])).is_err());
        assert!(parse_search_params(&params(&[("q", "x"), ("k", "1001")])).is_err());
        assert!(
            parse_search_params(&params(&[("q", "label:positive x"), ("label", "negative")]))
                .is_err()
        );
        let (q, k) = parse_search_params(&params(&[
            ("q", "happy day"),
            ("label", "Positive"),
            ("k", "3"),
        ]))
        .unwrap();
        assert_eq!(q.terms, "happy day");
        assert_eq!(q.label, Some(Sentiment::Positive));
        assert_eq!(k, 3);
        let (q, k) = parse_search_params(&params(&[("q", "label:negative AND rain")])).unwrap();
        assert_eq!(
            (q.terms.as_str(), q.label, k),
            ("rain", Some(Sentiment::Negative), DEFAULT_K)
        );
    }
}
