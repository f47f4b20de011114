//! Builds a small run offline, then walks one participant through the
//! survey API in-process.

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use ctrip::corpus::Country;
use ctrip::pipeline::{dry_run, Backends, Pipeline, RunConfig};

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> anyhow::Result<(u16, Value)> {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))?;
    let resp = app.clone().oneshot(req).await?;
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await?.to_bytes();
    Ok((
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    ))
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let out = dir.path().join("run");
    dry_run(&out)?;
    let mut cfg = RunConfig {
        seed: 2024,
        countries: vec![Country::KR, Country::DE],
        nouns_per_country: Some(3),
        templates_limit: Some(2),
        ..RunConfig::default()
    };
    cfg.paths.out_dir = out;
    let pipeline = Pipeline::with_backends(cfg, Backends::mock())?;
    let app = ctrip::survey::router(Arc::new(pipeline.survey_service()?));

    let (_, reg) = call(
        &app,
        "POST",
        "/api/participants",
        Some(json!({"token": "demo", "country": "KR"})),
    )
    .await?;
    println!("registered: {reg}");
    loop {
        let (status, page) = call(&app, "GET", "/api/participant/demo/next-page", None).await?;
        if status == 404 {
            println!("done: {}", page["error"]);
            break;
        }
        println!(
            "page {} of {}: {}",
            page["page_number"], page["total_pages"], page["base_prompt"]
        );
        for item in page["items"].as_array().into_iter().flatten() {
            let body = json!({
                "token": "demo",
                "page_id": page["page_id"],
                "item": item["item"],
                "ranks": {"A": 1, "B": 2, "C": 3, "D": 4},
            });
            let (status, _) = call(&app, "POST", "/api/responses", Some(body)).await?;
            println!("  {} -> {status}", item["item"]);
        }
    }
    Ok(())
}
