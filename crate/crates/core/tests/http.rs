use std::fs;
use std::sync::{Arc, OnceLock};

use acs_core::catalog::http::router;
use acs_core::catalog::load_catalog;
use acs_core::fixture::{generate_release, FixtureSpec};
use acs_core::pipeline::{build_release, BuildOptions};
use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::Value;
use tower::ServiceExt;

const MEDIAN_AGE: &str = "us.gov.census.acs.2014.5yr.age-sex.median-age-by-sex";
const MEANS: &str = "us.gov.census.acs.2014.5yr.journey-to-work.means-of-transportation-to-work";

struct Built {
    _src: tempfile::TempDir,
    out: tempfile::TempDir,
}

fn built() -> &'static Built {
    static BUILT: OnceLock<Built> = OnceLock::new();
    BUILT.get_or_init(|| {
        let spec = FixtureSpec {
            geos_per_state: 40,
            ..FixtureSpec::default()
        };
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        generate_release(&spec, src.path()).unwrap();
        build_release(src.path(), out.path(), spec.release, &BuildOptions::default()).unwrap();
        Built { _src: src, out }
    })
}

fn app() -> Router {
    router(Arc::new(load_catalog(built().out.path()).unwrap()))
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let response = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = response.status();
    (status, to_bytes(response.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, body) = get(app, uri).await;
    (status, serde_json::from_slice(&body).unwrap())
}

#[tokio::test]
async fn browse_endpoints() {
    let app = app();
    let (status, releases) = get_json(&app, "/releases").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(releases, serde_json::json!([{ "year": 2014, "period": "5yr" }]));

    let (_, subjects) = get_json(&app, "/releases/2014/5yr/subjects").await;
    assert_eq!(subjects[0]["subject_id"], "01");
    assert_eq!(subjects[1]["slug"], "journey-to-work");
    assert_eq!(subjects[1]["table_count"], 5);

    let (status, _) = get_json(&app, "/releases/2013/5yr/subjects").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, err) = get_json(&app, "/releases/2014/9yr/subjects").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(err["detail"].is_string());

    let (status, table) = get_json(&app, &format!("/tables/{MEDIAN_AGE}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(table["table_id"], "B01002");
    assert_eq!(table["columns"]["001"]["moe_column_id"], "b01002_001_moe");

    let (status, err) = get_json(&app, "/tables/us.gov.census.acs.2014.5yr.x.y").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "unknown_dataset");
}

#[tokio::test]
async fn search_endpoint() {
    let app = app();
    let (status, hits) = get_json(&app, "/search?q=median+age").await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = hits.as_array().unwrap().iter().map(|h| h["dataset_id"].as_str().unwrap()).collect();
    assert!(ids.contains(&MEDIAN_AGE));
    let (_, upper) = get_json(&app, "/search?q=MEDIAN%20AGE").await;
    assert_eq!(upper, hits);
    let (_, none) = get_json(&app, "/search?q=zzzqqq").await;
    assert_eq!(none, serde_json::json!([]));
    let (status, err) = get_json(&app, "/search?q=").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "invalid_query");
    let (status, _) = get_json(&app, "/search?query=median").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn rows_pagination_partition() {
    let app = app();
    let (_, all) = get_json(&app, &format!("/tables/{MEANS}/rows?sumlevel=050&page_size=1000")).await;
    let total = all["total"].as_u64().unwrap() as usize;
    assert_eq!(total, 3 * 26);
    let all_rows = all["rows"].as_array().unwrap().clone();
    assert!(all_rows.iter().all(|r| r["sumlevel"] == "050"));
    for size in [1usize, 7, 100] {
        let mut collected = Vec::new();
        for page in 1..=total.div_ceil(size) + 1 {
            let (status, body) =
                get_json(&app, &format!("/tables/{MEANS}/rows?sumlevel=050&page={page}&page_size={size}")).await;
            assert_eq!(status, StatusCode::OK);
            assert_eq!(body["total"].as_u64().unwrap() as usize, total);
            collected.extend(body["rows"].as_array().unwrap().iter().cloned());
        }
        assert_eq!(collected, all_rows, "page size {size}");
    }
    let (status, err) = get_json(&app, &format!("/tables/{MEANS}/rows?page_size=1001")).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_page")));
    let (status, _) = get_json(&app, &format!("/tables/{MEANS}/rows?page=abc")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, empty) = get_json(&app, &format!("/tables/{MEANS}/rows?stusab=ZZ")).await;
    assert_eq!((empty["total"].as_u64(), empty["rows"].as_array().unwrap().len()), (Some(0), 0));
}

#[tokio::test]
async fn stats_endpoint() {
    let app = app();
    let (_, page) = get_json(&app, &format!("/tables/{MEANS}/rows?page=8&page_size=1")).await;
    let geoid = page["rows"][0]["geoid"].as_str().unwrap().to_string();
    let (status, body) = get_json(&app, &format!("/tables/{MEANS}/stats/b08001_003?geoid={geoid}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["count"], 1);
    let cv = body["moe"]["cv_percent"].as_f64().unwrap();
    assert!((cv - 48.6).abs() <= 0.05);
    assert_eq!((body["moe"]["ci_low"].as_f64(), body["moe"]["ci_high"].as_f64()), (Some(12.0), Some(108.0)));

    let (status, whole) = get_json(&app, &format!("/tables/{MEANS}/stats/b08001_003")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(whole["moe"].is_null());
    assert_eq!(whole["count"].as_u64().unwrap() + whole["nulls"].as_u64().unwrap(), 120);

    let (status, err) = get_json(&app, &format!("/tables/{MEANS}/stats/b99999_001")).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_column")));
    let (status, err) = get_json(&app, &format!("/tables/{MEANS}/stats/b08001_003_moe")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(err["detail"].as_str().unwrap().contains("b08001_003"));
}

#[tokio::test]
async fn export_matches_file() {
    let app = app();
    let (status, body) = get(&app, &format!("/tables/{MEANS}/export")).await;
    assert_eq!(status, StatusCode::OK);
    let path = built().out.path().join("2014_5yr/tables").join(format!("{MEANS}.csv"));
    assert_eq!(body, fs::read(path).unwrap());

    let (status, body) = get(&app, &format!("/tables/{MEANS}/export?stusab=BB")).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    assert_eq!(text.lines().count(), 41);
    assert!(text.lines().skip(1).all(|l| l.contains(",BB,")));

    let (status, _) = get(&app, "/tables/nope/export").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn repeated_requests_are_identical() {
    let app = app();
    for uri in ["/search?q=sex", &format!("/tables/{MEDIAN_AGE}/rows?page=2&page_size=7")] {
        assert_eq!(get(&app, uri).await, get(&app, uri).await);
    }
}
