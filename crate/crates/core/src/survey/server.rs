use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    item_definitions, keyword, PageDealer, Slot, SurveyPage, DEFAULT_PAGES_PER_PARTICIPANT,
};
use crate::artifact::{self, ArtifactError, JsonlAppender, ASSIGNMENT_SCHEMA, RESPONSE_SCHEMA};
use crate::corpus::{Country, CultureNoun};
use crate::evaluation::{is_rank_permutation, SurveyItem, SurveyResponse};

pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const ASSIGNMENTS_FILE: &str = "assignments.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub pages_per_participant: usize,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            pages_per_participant: DEFAULT_PAGES_PER_PARTICIPANT,
            seed: 0,
        }
    }
}

/// A registered participant and their page schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub token: String,
    pub country: Country,
    pub age_bracket: Option<String>,
    pub gender: Option<String>,
    pub pages: Vec<String>,
    pub registered_at: DateTime<Utc>,
}

/// One stored answer, with the slot ranks as submitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredResponse {
    #[serde(flatten)]
    pub response: SurveyResponse,
    pub slot_ranks: BTreeMap<Slot, u8>,
    pub received_at: DateTime<Utc>,
}

pub fn read_responses(path: &Path) -> Result<Vec<StoredResponse>, ArtifactError> {
    artifact::read_jsonl_or_empty(path, RESPONSE_SCHEMA)
}

#[derive(Debug, Clone, Deserialize)]
pub struct Registration {
    pub token: String,
    pub country: String,
    #[serde(default)]
    pub age_bracket: Option<String>,
    #[serde(default)]
    pub gender: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ResponseSubmission {
    pub token: String,
    pub page_id: String,
    pub item: String,
    pub ranks: BTreeMap<String, i64>,
}

struct Inner {
    assignments: HashMap<String, Assignment>,
    dealers: HashMap<Country, PageDealer>,
    answered: HashSet<(String, String, SurveyItem)>,
    responses: JsonlAppender,
    assignments_out: JsonlAppender,
}

/// Survey state: pages, schedules and the append-only response store.
///
/// All writes go through one mutex, so store lines are never interleaved.
pub struct SurveyService {
    pages: HashMap<String, SurveyPage>,
    nouns: HashMap<String, CultureNoun>,
    image_root: PathBuf,
    config: ServiceConfig,
    clock: Box<dyn Fn() -> DateTime<Utc> + Send + Sync>,
    inner: Mutex<Inner>,
}

#[derive(Debug)]
struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1, "message": self.2}))).into_response()
    }
}

fn bad_request(code: &'static str, msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, code, msg.into())
}

fn not_found(code: &'static str, msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, code, msg.into())
}

fn internal(e: ArtifactError) -> ApiError {
    log::error!("store write failed: {e}");
    ApiError(
        StatusCode::INTERNAL_SERVER_ERROR,
        "store_failure",
        e.to_string(),
    )
}

impl SurveyService {
    /// Opens (or creates) the store in `store_dir` and replays earlier
    /// registrations so dealing resumes where it stopped.
    pub fn open(
        pages: Vec<SurveyPage>,
        nouns: &[CultureNoun],
        image_root: &Path,
        store_dir: &Path,
        config: ServiceConfig,
    ) -> Result<Self, ArtifactError> {
        let mut dealers: HashMap<Country, PageDealer> = Country::ALL
            .into_iter()
            .map(|c| (c, PageDealer::new(&pages, c, config.seed)))
            .collect();
        let stored: Vec<Assignment> =
            artifact::read_jsonl_or_empty(&store_dir.join(ASSIGNMENTS_FILE), ASSIGNMENT_SCHEMA)?;
        let mut assignments = HashMap::new();
        for a in stored {
            let replayed = dealers
                .get_mut(&a.country)
                .expect("every country has a dealer")
                .deal(config.pages_per_participant);
            if replayed != a.pages {
                log::warn!(
                    "schedule of {} differs from a fresh deal; keeping the stored one",
                    a.token
                );
            }
            assignments.insert(a.token.clone(), a);
        }
        let answered = read_responses(&store_dir.join(RESPONSES_FILE))?
            .into_iter()
            .map(|r| {
                (
                    r.response.participant_id,
                    r.response.page_id,
                    r.response.item,
                )
            })
            .collect();
        Ok(SurveyService {
            pages: pages.into_iter().map(|p| (p.page_id.clone(), p)).collect(),
            nouns: nouns.iter().map(|n| (n.id.clone(), n.clone())).collect(),
            image_root: image_root.to_path_buf(),
            config,
            clock: Box::new(Utc::now),
            inner: Mutex::new(Inner {
                assignments,
                dealers,
                answered,
                responses: JsonlAppender::open(&store_dir.join(RESPONSES_FILE), RESPONSE_SCHEMA)?,
                assignments_out: JsonlAppender::open(
                    &store_dir.join(ASSIGNMENTS_FILE),
                    ASSIGNMENT_SCHEMA,
                )?,
            }),
        })
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    fn register(&self, reg: Registration) -> Result<Assignment, ApiError> {
        let token = reg.token.trim();
        if token.is_empty() {
            return Err(bad_request("invalid_token", "token must not be empty"));
        }
        let country: Country = reg
            .country
            .parse()
            .map_err(|e: String| bad_request("invalid_country", e))?;
        let mut inner = self.inner.lock().expect("store lock");
        if let Some(existing) = inner.assignments.get(token) {
            if existing.country != country {
                return Err(ApiError(
                    StatusCode::CONFLICT,
                    "already_registered",
                    format!("token registered for {}", existing.country.code()),
                ));
            }
            return Ok(existing.clone());
        }
        let dealer = inner
            .dealers
            .get_mut(&country)
            .expect("every country has a dealer");
        if dealer.pool_size() == 0 {
            return Err(bad_request(
                "no_pages",
                format!("no survey pages for {}", country.code()),
            ));
        }
        let pages = dealer.deal(self.config.pages_per_participant);
        let a = Assignment {
            token: token.to_string(),
            country,
            age_bracket: reg.age_bracket,
            gender: reg.gender,
            pages,
            registered_at: (self.clock)(),
        };
        inner.assignments_out.append(&a).map_err(internal)?;
        inner.assignments.insert(a.token.clone(), a.clone());
        Ok(a)
    }

    fn next_page(
        &self,
        token: &str,
        country: Option<String>,
    ) -> Result<serde_json::Value, ApiError> {
        let known = self
            .inner
            .lock()
            .expect("store lock")
            .assignments
            .contains_key(token);
        if !known {
            let Some(country) = country else {
                return Err(bad_request(
                    "unregistered",
                    "register the token first or pass ?country=<code>",
                ));
            };
            self.register(Registration {
                token: token.to_string(),
                country,
                age_bracket: None,
                gender: None,
            })?;
        }
        let inner = self.inner.lock().expect("store lock");
        let a = &inner.assignments[token];
        let answered_items = |page_id: &str| -> BTreeSet<SurveyItem> {
            SurveyItem::ALL
                .into_iter()
                .filter(|i| {
                    inner
                        .answered
                        .contains(&(token.to_string(), page_id.to_string(), *i))
                })
                .collect()
        };
        let next = a
            .pages
            .iter()
            .enumerate()
            .find(|(_, p)| answered_items(p).len() < SurveyItem::ALL.len());
        let Some((k, page_id)) = next else {
            return Err(not_found("survey_complete", "all pages answered"));
        };
        let page = self
            .pages
            .get(page_id)
            .ok_or_else(|| not_found("unknown_page", page_id.clone()))?;
        let kw = self
            .nouns
            .get(&page.noun_id)
            .map(keyword)
            .unwrap_or_else(|| page.noun_id.clone());
        let images: Vec<serde_json::Value> = page
            .slots
            .iter()
            .map(|s| json!({"slot": s.slot, "url": format!("/images/{}.png", page.image_id(s.slot))}))
            .collect();
        Ok(json!({
            "page_id": page.page_id,
            "noun": kw,
            "base_prompt": page.base_prompt,
            "page_number": k + 1,
            "total_pages": a.pages.len(),
            "images": images,
            "items": item_definitions(page.country, &kw, &page.base_prompt),
            "answered_items": answered_items(page_id),
        }))
    }

    fn submit(&self, sub: ResponseSubmission) -> Result<serde_json::Value, ApiError> {
        let item: SurveyItem = sub
            .item
            .parse()
            .map_err(|e: String| bad_request("invalid_item", e))?;
        let mut inner = self.inner.lock().expect("store lock");
        let a = inner
            .assignments
            .get(&sub.token)
            .ok_or_else(|| not_found("unknown_participant", sub.token.clone()))?;
        let page = self
            .pages
            .get(&sub.page_id)
            .filter(|_| a.pages.contains(&sub.page_id))
            .ok_or_else(|| not_found("unknown_page", sub.page_id.clone()))?;
        let mut slot_ranks = BTreeMap::new();
        for (k, v) in &sub.ranks {
            let slot: Slot = k
                .parse()
                .map_err(|e: String| bad_request("invalid_ranks", e))?;
            let rank = u8::try_from(*v)
                .map_err(|_| bad_request("invalid_ranks", format!("rank {v} out of range")))?;
            slot_ranks.insert(slot, rank);
        }
        if slot_ranks.len() != Slot::ALL.len() || !is_rank_permutation(slot_ranks.values().copied())
        {
            return Err(bad_request(
                "invalid_ranks",
                "ranks must assign 1, 2, 3 and 4 to slots A, B, C and D",
            ));
        }
        let key = (sub.token.clone(), sub.page_id.clone(), item);
        if inner.answered.contains(&key) {
            return Err(ApiError(
                StatusCode::CONFLICT,
                "duplicate",
                "this item was already answered".into(),
            ));
        }
        let record = StoredResponse {
            response: page.to_response(&sub.token, item, &slot_ranks),
            slot_ranks,
            received_at: (self.clock)(),
        };
        inner.responses.append(&record).map_err(internal)?;
        inner.answered.insert(key);
        let page_complete = SurveyItem::ALL.iter().all(|i| {
            inner
                .answered
                .contains(&(sub.token.clone(), sub.page_id.clone(), *i))
        });
        Ok(json!({"status": "stored", "page_complete": page_complete}))
    }

    fn image(&self, file: &str) -> Result<Vec<u8>, ApiError> {
        let missing = || not_found("unknown_image", file.to_string());
        let id = file.strip_suffix(".png").ok_or_else(missing)?;
        let (page_id, slot) = id.rsplit_once('-').ok_or_else(missing)?;
        let slot: Slot = slot.parse().map_err(|_| missing())?;
        let page = self.pages.get(page_id).ok_or_else(missing)?;
        let rel = &page
            .slots
            .iter()
            .find(|s| s.slot == slot)
            .ok_or_else(missing)?
            .image;
        std::fs::read(self.image_root.join(rel)).map_err(|_| missing())
    }
}

#[derive(Deserialize)]
struct NextPageQuery {
    country: Option<String>,
}

async fn register_handler(
    State(svc): State<Arc<SurveyService>>,
    Json(reg): Json<Registration>,
) -> Response {
    match svc.register(reg) {
        Ok(a) => Json(json!({"token": a.token, "total_pages": a.pages.len()})).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn next_page_handler(
    State(svc): State<Arc<SurveyService>>,
    UrlPath(token): UrlPath<String>,
    Query(q): Query<NextPageQuery>,
) -> Response {
    match svc.next_page(&token, q.country) {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn submit_handler(
    State(svc): State<Arc<SurveyService>>,
    body: axum::body::Bytes,
) -> Response {
    let sub: ResponseSubmission = match serde_json::from_slice(&body) {
        Ok(s) => s,
        Err(e) => return bad_request("invalid_body", e.to_string()).into_response(),
    };
    match svc.submit(sub) {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn image_handler(
    State(svc): State<Arc<SurveyService>>,
    UrlPath(file): UrlPath<String>,
) -> Response {
    match svc.image(&file) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(service: Arc<SurveyService>) -> Router {
    Router::new()
        .route("/api/participants", post(register_handler))
        .route("/api/participant/{token}/next-page", get(next_page_handler))
        .route("/api/responses", post(submit_handler))
        .route("/images/{file}", get(image_handler))
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn serve(service: Arc<SurveyService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("survey service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
