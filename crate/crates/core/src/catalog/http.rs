//! JSON-over-HTTP front end of the catalog.

use std::collections::BTreeMap;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::pin::Pin;
use std::sync::Arc;
use std::task::{Context, Poll};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use bytes::Bytes;
use http_body::Frame;
use serde::Serialize;
use serde_json::{json, Map, Value};
use tokio::sync::mpsc;

use super::{Catalog, CatalogError, Filters};
use crate::model::{Period, Release};

const DEFAULT_PAGE_SIZE: usize = 100;
const EXPORT_CHUNK: usize = 64 * 1024;

#[derive(Debug)]
pub enum ApiError {
    Catalog(CatalogError),
    Params(String),
    Internal(String),
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        ApiError::Catalog(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, detail) = match &self {
            ApiError::Params(d) => (StatusCode::BAD_REQUEST, "invalid_params", d.clone()),
            ApiError::Internal(d) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", d.clone()),
            ApiError::Catalog(e) => {
                let (status, code) = match e {
                    CatalogError::UnknownDataset(_) => (StatusCode::NOT_FOUND, "unknown_dataset"),
                    CatalogError::UnknownRelease(_) => (StatusCode::NOT_FOUND, "unknown_release"),
                    CatalogError::UnknownColumn { .. } => (StatusCode::NOT_FOUND, "unknown_column"),
                    CatalogError::MoeColumn { .. } => (StatusCode::BAD_REQUEST, "moe_column"),
                    CatalogError::InvalidQuery(_) => (StatusCode::BAD_REQUEST, "invalid_query"),
                    CatalogError::InvalidPage(_) => (StatusCode::BAD_REQUEST, "invalid_page"),
                    _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
                };
                (status, code, e.to_string())
            }
        };
        (status, Json(json!({ "error": code, "detail": detail }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Params = Query<BTreeMap<String, String>>;

fn reject_unknown(params: &BTreeMap<String, String>, allowed: &[&str]) -> ApiResult<()> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(ApiError::Params(format!("unknown parameter {k:?}"))),
        None => Ok(()),
    }
}

const FILTER_KEYS: [&str; 3] = ["sumlevel", "stusab", "geoid"];

fn filters(params: &BTreeMap<String, String>) -> Filters {
    let get = |k: &str| params.get(k).filter(|v| !v.is_empty()).cloned();
    Filters {
        sumlevel: get("sumlevel"),
        stusab: get("stusab"),
        geoid: get("geoid"),
    }
}

fn number(params: &BTreeMap<String, String>, key: &str, default: usize) -> ApiResult<usize> {
    match params.get(key).filter(|v| !v.is_empty()) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError::Params(format!("{key} must be a non-negative integer, got {v:?}"))),
    }
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, CatalogError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(ApiError::from)
}

async fn releases(State(c): State<Arc<Catalog>>) -> Json<Vec<Release>> {
    Json(c.releases())
}

async fn subjects(State(c): State<Arc<Catalog>>, Path((year, period)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let year: u16 = year
        .parse()
        .map_err(|_| ApiError::Params(format!("bad year {year:?}")))?;
    let period: Period = period.parse().map_err(|e: crate::model::ModelError| ApiError::Params(e.to_string()))?;
    let release = Release::new(year, period).map_err(|e| ApiError::Params(e.to_string()))?;
    Ok(Json(c.subjects(release)?))
}

async fn table(State(c): State<Arc<Catalog>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(c.table_info(&id)?))
}

#[derive(Serialize)]
struct RowsPayload {
    total: usize,
    page: usize,
    page_size: usize,
    header: Vec<String>,
    rows: Vec<Map<String, Value>>,
}

async fn rows(State(c): State<Arc<Catalog>>, Path(id): Path<String>, Query(params): Params) -> ApiResult<impl IntoResponse> {
    reject_unknown(&params, &["sumlevel", "stusab", "geoid", "page", "page_size"])?;
    let page = number(&params, "page", 1)?;
    let page_size = number(&params, "page_size", DEFAULT_PAGE_SIZE)?;
    let f = filters(&params);
    let slice = blocking(move || c.table_slice(&id, &f, page, page_size)).await?;
    let rows = slice
        .rows
        .into_iter()
        .map(|row| {
            slice
                .header
                .iter()
                .zip(row)
                .map(|(h, v)| (h.clone(), if v.is_empty() { Value::Null } else { Value::String(v) }))
                .collect()
        })
        .collect();
    Ok(Json(RowsPayload {
        total: slice.total,
        page: slice.page,
        page_size: slice.page_size,
        header: slice.header,
        rows,
    }))
}

async fn stats(
    State(c): State<Arc<Catalog>>,
    Path((id, column)): Path<(String, String)>,
    Query(params): Params,
) -> ApiResult<impl IntoResponse> {
    reject_unknown(&params, &FILTER_KEYS)?;
    let f = filters(&params);
    Ok(Json(blocking(move || c.quick_stats(&id, &column, &f)).await?))
}

async fn search(State(c): State<Arc<Catalog>>, Query(params): Params) -> ApiResult<impl IntoResponse> {
    reject_unknown(&params, &["q"])?;
    let q = params.get("q").cloned().unwrap_or_default();
    Ok(Json(c.search(&q)?))
}

/// Response body fed from a blocking writer thread.
struct ChannelBody {
    rx: mpsc::Receiver<Result<Bytes, io::Error>>,
}

impl http_body::Body for ChannelBody {
    type Data = Bytes;
    type Error = io::Error;

    fn poll_frame(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Option<Result<Frame<Bytes>, io::Error>>> {
        self.rx.poll_recv(cx).map(|item| item.map(|r| r.map(Frame::data)))
    }
}

struct ChannelWriter {
    tx: mpsc::Sender<Result<Bytes, io::Error>>,
}

impl Write for ChannelWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .blocking_send(Ok(Bytes::copy_from_slice(buf)))
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "client went away"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

async fn export(State(c): State<Arc<Catalog>>, Path(id): Path<String>, Query(params): Params) -> ApiResult<Response> {
    reject_unknown(&params, &FILTER_KEYS)?;
    let handle = c.table(&id)?;
    let file_name = format!("{}.csv", handle.dataset_id);
    let f = filters(&params);
    let (tx, rx) = mpsc::channel(8);
    tokio::task::spawn_blocking(move || {
        let writer = BufWriter::with_capacity(EXPORT_CHUNK, ChannelWriter { tx: tx.clone() });
        if let Err(e) = c.export(&id, &f, writer) {
            let _ = tx.blocking_send(Err(io::Error::other(e.to_string())));
        }
    });
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{file_name}\"")),
        ],
        axum::body::Body::new(ChannelBody { rx }),
    )
        .into_response())
}

pub fn router(catalog: Arc<Catalog>) -> Router {
    Router::new()
        .route("/releases", get(releases))
        .route("/releases/{year}/{period}/subjects", get(subjects))
        .route("/tables/{dataset_id}", get(table))
        .route("/tables/{dataset_id}/rows", get(rows))
        .route("/tables/{dataset_id}/stats/{column}", get(stats))
        .route("/tables/{dataset_id}/export", get(export))
        .route("/search", get(search))
        .with_state(catalog)
}

/// Serve until the process is stopped.
pub async fn serve(catalog: Catalog, addr: SocketAddr) -> io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("catalog listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(catalog))).await
}
