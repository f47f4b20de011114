use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use ctrip::corpus::{Category, Country, CultureNoun, NounForm};
use ctrip::evaluation::SurveyItem;
use ctrip::refinement::ConfigId;
use ctrip::survey::{
    read_responses, router, PageSlot, ServiceConfig, Slot, SurveyPage, SurveyService,
    RESPONSES_FILE,
};

struct Fixture {
    _dir: tempfile::TempDir,
    store: std::path::PathBuf,
    images: std::path::PathBuf,
    pages: Vec<SurveyPage>,
    nouns: Vec<CultureNoun>,
}

fn fixture(pages_per_country: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("gen");
    std::fs::create_dir_all(images.join("images")).unwrap();
    let mut pages = Vec::new();
    let mut nouns = Vec::new();
    for country in [Country::KR, Country::DE] {
        for i in 0..pages_per_country {
            let id = format!("{}_n{i}", country.code().to_lowercase());
            nouns.push(CultureNoun::new(
                &id,
                format!("Noun {i}"),
                country,
                Category::FoodDrink,
                NounForm::Transliteration,
            ));
            let order = [
                ConfigId::CTrip3,
                ConfigId::Base,
                ConfigId::CTrip5,
                ConfigId::CTrip0,
            ];
            let slots = Slot::ALL
                .into_iter()
                .zip(order)
                .map(|(slot, config_id)| {
                    let image = format!("images/{id}__{config_id}__0.png");
                    std::fs::write(images.join(&image), format!("png:{id}:{config_id}")).unwrap();
                    PageSlot {
                        slot,
                        config_id,
                        image,
                    }
                })
                .collect();
            pages.push(SurveyPage {
                page_id: format!("pg-{id}"),
                noun_id: id.clone(),
                country,
                prompt_id: format!("{id}-t01"),
                base_prompt: format!("A photo of Noun {i} at dusk"),
                slots,
            });
        }
    }
    Fixture {
        store: dir.path().join("store"),
        images,
        _dir: dir,
        pages,
        nouns,
    }
}

fn service(f: &Fixture) -> axum::Router {
    let svc = SurveyService::open(
        f.pages.clone(),
        &f.nouns,
        &f.images,
        &f.store,
        ServiceConfig::default(),
    )
    .unwrap()
    .with_clock(|| Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap());
    router(Arc::new(svc))
}

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

fn assert_blind(body: &[u8]) {
    let text = String::from_utf8_lossy(body);
    for c in ConfigId::ALL {
        assert!(
            !text.contains(&format!("\"{}\"", c.code())),
            "config id leaked: {text}"
        );
    }
    assert!(!text.contains("config"), "config field leaked: {text}");
}

async fn register(app: &axum::Router, token: &str, country: &str) -> Value {
    let (s, b) = call(
        app,
        "POST",
        "/api/participants",
        Some(json!({"token": token, "country": country, "age_bracket": "25-34", "gender": "F"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    serde_json::from_slice(&b).unwrap()
}

async fn next_page(app: &axum::Router, token: &str) -> (StatusCode, Value) {
    let (s, b) = call(
        app,
        "GET",
        &format!("/api/participant/{token}/next-page"),
        None,
    )
    .await;
    assert_blind(&b);
    (s, serde_json::from_slice(&b).unwrap())
}

fn ranks(r: [u8; 4]) -> Value {
    json!({"A": r[0], "B": r[1], "C": r[2], "D": r[3]})
}

async fn submit(
    app: &axum::Router,
    token: &str,
    page: &str,
    item: SurveyItem,
    r: Value,
) -> StatusCode {
    let (s, b) = call(
        app,
        "POST",
        "/api/responses",
        Some(json!({"token": token, "page_id": page, "item": item.code(), "ranks": r})),
    )
    .await;
    assert_blind(&b);
    s
}

#[tokio::test]
async fn page_view_is_blind_and_complete() {
    let f = fixture(20);
    let app = service(&f);
    register(&app, "tok-1", "KR").await;
    let (s, page) = next_page(&app, "tok-1").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(page["page_number"], 1);
    assert_eq!(page["total_pages"], 15);
    let images = page["images"].as_array().unwrap();
    assert_eq!(images.len(), 4);
    let page_id = page["page_id"].as_str().unwrap();
    for (img, slot) in images.iter().zip(["A", "B", "C", "D"]) {
        assert_eq!(img["url"], format!("/images/{page_id}-{slot}.png"));
    }
    let items = page["items"].as_array().unwrap();
    assert_eq!(items.len(), 4);
    assert!(items[0]["text"]
        .as_str()
        .unwrap()
        .contains("South Korea culture"));
    assert!(items[0]["text"]
        .as_str()
        .unwrap()
        .ends_with("(1=most representative, 4=least representative)"));
    assert!(items[3]["text"].as_str().unwrap().starts_with(&format!(
        "Image Description: {}",
        page["base_prompt"].as_str().unwrap()
    )));

    let url = images[1]["url"].as_str().unwrap();
    let (s, body) = call(&app, "GET", url, None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().ends_with(":base"));
    let (s, _) = call(&app, "GET", "/images/pg-nope-A.png", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn invalid_duplicate_and_unknown() {
    let f = fixture(20);
    let app = service(&f);
    register(&app, "tok-2", "DE").await;
    let (_, page) = next_page(&app, "tok-2").await;
    let page_id = page["page_id"].as_str().unwrap().to_string();
    let item = SurveyItem::Offensiveness;

    assert_eq!(
        submit(&app, "tok-2", &page_id, item, ranks([1, 1, 3, 4])).await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        submit(&app, "tok-2", &page_id, item, ranks([0, 2, 3, 4])).await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        submit(
            &app,
            "tok-2",
            &page_id,
            item,
            json!({"A": 1, "B": 2, "C": 3})
        )
        .await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        submit(
            &app,
            "tok-2",
            &page_id,
            item,
            json!({"A": 1, "B": 2, "C": 3, "E": 4})
        )
        .await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        submit(&app, "tok-2", &page_id, item, ranks([1, 2, 3, 4])).await,
        StatusCode::OK
    );
    assert_eq!(
        submit(&app, "tok-2", &page_id, item, ranks([4, 3, 2, 1])).await,
        StatusCode::CONFLICT
    );
    assert_eq!(
        submit(&app, "tok-2", "pg-missing", item, ranks([1, 2, 3, 4])).await,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        submit(&app, "nobody", &page_id, item, ranks([1, 2, 3, 4])).await,
        StatusCode::NOT_FOUND
    );

    let (s, _) = call(
        &app,
        "POST",
        "/api/responses",
        Some(json!({"token": "tok-2"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", "/api/participant/stranger/next-page", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let stored = read_responses(&f.store.join(RESPONSES_FILE)).unwrap();
    assert_eq!(stored.len(), 1);
    // slots A..D hold CTrip3, Base, CTrip5, CTrip0 in the fixture
    let r = &stored[0].response.ranks;
    assert_eq!(
        (
            r[&ConfigId::CTrip3],
            r[&ConfigId::Base],
            r[&ConfigId::CTrip5],
            r[&ConfigId::CTrip0]
        ),
        (1, 2, 3, 4)
    );
}

#[tokio::test]
async fn fifteen_page_flow_survives_restart() {
    let f = fixture(20);
    let app = service(&f);
    register(&app, "flow", "KR").await;
    let mut seen = Vec::new();
    for k in 0..15 {
        if k == 7 {
            // restart the service mid-survey
            let app2 = service(&f);
            let (_, page) = next_page(&app2, "flow").await;
            assert_eq!(page["page_number"], 8);
        }
        let app = if k >= 7 { service(&f) } else { app.clone() };
        let (s, page) = next_page(&app, "flow").await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(page["page_number"], k + 1);
        let page_id = page["page_id"].as_str().unwrap().to_string();
        assert!(!seen.contains(&page_id), "page re-served");
        for item in SurveyItem::ALL {
            assert_eq!(
                submit(&app, "flow", &page_id, item, ranks([2, 1, 4, 3])).await,
                StatusCode::OK
            );
        }
        seen.push(page_id);
    }
    let (s, body) = next_page(&service(&f), "flow").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "survey_complete");

    let stored = read_responses(&f.store.join(RESPONSES_FILE)).unwrap();
    assert_eq!(stored.len(), 15 * 4);
    assert!(stored
        .iter()
        .all(|r| r.response.is_valid() && r.response.participant_id == "flow"));
    let mut keys: Vec<_> = stored
        .iter()
        .map(|r| (r.response.page_id.clone(), r.response.item))
        .collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), 60);
}

#[tokio::test]
async fn schedules_are_per_country_and_stable() {
    let f = fixture(20);
    let app = service(&f);
    let a = register(&app, "kr-1", "KR").await;
    assert_eq!(a["total_pages"], 15);
    let (_, p) = next_page(&app, "kr-1").await;
    assert!(p["page_id"].as_str().unwrap().starts_with("pg-kr_"));
    // re-registering is idempotent, switching country is refused
    register(&app, "kr-1", "KR").await;
    let (s, _) = call(
        &app,
        "POST",
        "/api/participants",
        Some(json!({"token": "kr-1", "country": "DE"})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(
        &app,
        "POST",
        "/api/participants",
        Some(json!({"token": "x", "country": "XX"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(
        &app,
        "POST",
        "/api/participants",
        Some(json!({"token": "x", "country": "US"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    // auto-registration through the query string
    let (s, b) = call(
        &app,
        "GET",
        "/api/participant/de-9/next-page?country=DE",
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert!(v["page_id"].as_str().unwrap().starts_with("pg-de_"));

    // a restarted service gives the same next page
    let (_, again) = next_page(&service(&f), "kr-1").await;
    assert_eq!(again["page_id"], p["page_id"]);
}

#[tokio::test]
async fn small_pools_cap_schedules() {
    let f = fixture(3);
    let app = service(&f);
    let a = register(&app, "few", "KR").await;
    assert_eq!(a["total_pages"], 3);
}
