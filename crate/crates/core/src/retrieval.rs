//! Raw cultural information for a culture noun.
//!
//! The encyclopedia is consulted first. When it has no article, or the
//! article is shorter than [`RetrievalConfig::sufficiency_min_chars`], web
//! search snippets are fetched as well. Results are cached on disk keyed by
//! noun and configuration so reruns never hit the network twice.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::artifact::{self, ArtifactError, RETRIEVAL_SCHEMA};
use crate::backend::BackendError;
use crate::corpus::{display_name, CultureNoun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InfoSource {
    Encyclopedia,
    WebSearch,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInfo {
    pub noun_id: String,
    pub source: InfoSource,
    pub text: String,
    pub fetched_at: DateTime<Utc>,
    pub char_count: usize,
}

impl RawInfo {
    pub fn new(
        noun_id: impl Into<String>,
        source: InfoSource,
        text: String,
        fetched_at: DateTime<Utc>,
    ) -> Self {
        let char_count = text.chars().count();
        RawInfo {
            noun_id: noun_id.into(),
            source,
            text,
            fetched_at,
            char_count,
        }
    }

    /// Content fingerprint recorded in refinement traces.
    pub fn fingerprint(&self) -> String {
        artifact::sha256_hex(self.text.as_bytes())[..16].to_string()
    }
}

/// On-disk cache record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub noun_id: String,
    pub source: InfoSource,
    pub text: String,
    pub fetched_at: DateTime<Utc>,
}

impl From<&RawInfo> for CacheEntry {
    fn from(r: &RawInfo) -> Self {
        CacheEntry {
            noun_id: r.noun_id.clone(),
            source: r.source,
            text: r.text.clone(),
            fetched_at: r.fetched_at,
        }
    }
}

impl From<CacheEntry> for RawInfo {
    fn from(e: CacheEntry) -> Self {
        RawInfo::new(e.noun_id, e.source, e.text, e.fetched_at)
    }
}

/// What to return when the encyclopedia text is too short but present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Encyclopedia text followed by web text.
    #[default]
    Merge,
    /// Web text only.
    WebOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub sufficiency_min_chars: usize,
    pub max_web_results: usize,
    pub timeout_secs: u64,
    pub cache_dir: Option<PathBuf>,
    pub fallback: FallbackPolicy,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            sufficiency_min_chars: 400,
            max_web_results: 5,
            timeout_secs: 30,
            cache_dir: None,
            fallback: FallbackPolicy::Merge,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.sufficiency_min_chars < 1 {
            return Err(RetrievalError::InvalidConfig(
                "sufficiency_min_chars must be >= 1".into(),
            ));
        }
        if self.max_web_results < 1 {
            return Err(RetrievalError::InvalidConfig(
                "max_web_results must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Hash of the settings that change what `retrieve` returns.
    pub fn fingerprint(&self) -> String {
        let key = format!(
            "min={};web={};fallback={:?}",
            self.sufficiency_min_chars, self.max_web_results, self.fallback
        );
        artifact::sha256_hex(key.as_bytes())[..16].to_string()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("no encyclopedia article for {noun:?}")]
    NotFound { noun: String },
    #[error("web search returned no results for {noun:?}")]
    EmptyResults { noun: String },
    #[error("rate limited (retry after {retry_after_secs}s)")]
    RateLimited { retry_after_secs: u64 },
    #[error("transport failure: {0}")]
    Transport(BackendError),
    #[error("no usable information for {noun:?} (encyclopedia: {encyclopedia}; web: {web})")]
    AllSourcesFailed {
        noun: String,
        encyclopedia: String,
        web: String,
    },
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Noun(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Cache(#[from] ArtifactError),
}

impl From<BackendError> for RetrievalError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::RateLimited { retry_after_secs } => {
                RetrievalError::RateLimited { retry_after_secs }
            }
            other => RetrievalError::Transport(other),
        }
    }
}

impl RetrievalError {
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            RetrievalError::Transport(_) | RetrievalError::RateLimited { .. }
        )
    }
}

pub trait EncyclopediaSource: Send + Sync {
    /// Plain-text extract of the best-matching article, `None` when nothing matches.
    fn lookup(&self, title: &str) -> Result<Option<String>, BackendError>;
}

pub trait WebSearchSource: Send + Sync {
    /// Result snippets in rank order, at most `max_results`.
    fn search(&self, query: &str, max_results: usize) -> Result<Vec<String>, BackendError>;
}

type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct Retriever<'a> {
    encyclopedia: &'a dyn EncyclopediaSource,
    web: &'a dyn WebSearchSource,
    cfg: RetrievalConfig,
    clock: Clock,
}

impl<'a> Retriever<'a> {
    pub fn new(
        encyclopedia: &'a dyn EncyclopediaSource,
        web: &'a dyn WebSearchSource,
        cfg: RetrievalConfig,
    ) -> Result<Self, RetrievalError> {
        cfg.validate()?;
        Ok(Retriever {
            encyclopedia,
            web,
            cfg,
            clock: Box::new(Utc::now),
        })
    }

    /// Replaces the timestamp source (fixed clocks make artifacts reproducible).
    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.cfg
    }

    fn cache_path(&self, noun_id: &str, key: &str) -> Option<PathBuf> {
        self.cfg
            .cache_dir
            .as_ref()
            .map(|d| d.join(format!("{}-{}.json", sanitize(noun_id), key)))
    }

    pub fn retrieve_encyclopedia(&self, noun: &CultureNoun) -> Result<RawInfo, RetrievalError> {
        let cache = self.cache_path(&noun.id, "encyclopedia");
        if let Some(hit) = cache.as_deref().map(load_cache).transpose()?.flatten() {
            return Ok(hit);
        }
        let name = display_name(noun)?;
        match self.encyclopedia.lookup(name)? {
            Some(text) if !text.trim().is_empty() => {
                let info = RawInfo::new(&noun.id, InfoSource::Encyclopedia, text, (self.clock)());
                if let Some(p) = cache {
                    store_cache(&p, &info)?;
                }
                Ok(info)
            }
            _ => Err(RetrievalError::NotFound {
                noun: name.to_string(),
            }),
        }
    }

    pub fn retrieve_web(&self, noun: &CultureNoun) -> Result<RawInfo, RetrievalError> {
        let cache = self.cache_path(&noun.id, &format!("web{}", self.cfg.max_web_results));
        if let Some(hit) = cache.as_deref().map(load_cache).transpose()?.flatten() {
            return Ok(hit);
        }
        let name = display_name(noun)?;
        let snippets: Vec<String> = self
            .web
            .search(name, self.cfg.max_web_results)?
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .take(self.cfg.max_web_results)
            .collect();
        if snippets.is_empty() {
            return Err(RetrievalError::EmptyResults {
                noun: name.to_string(),
            });
        }
        let info = RawInfo::new(
            &noun.id,
            InfoSource::WebSearch,
            snippets.join("\n\n"),
            (self.clock)(),
        );
        if let Some(p) = cache {
            store_cache(&p, &info)?;
        }
        Ok(info)
    }

    /// Encyclopedia first, web fallback when the article is missing or short.
    pub fn retrieve(&self, noun: &CultureNoun) -> Result<RawInfo, RetrievalError> {
        let cache = self.cache_path(&noun.id, &self.cfg.fingerprint());
        if let Some(hit) = cache.as_deref().map(load_cache).transpose()?.flatten() {
            return Ok(hit);
        }
        let min = self.cfg.sufficiency_min_chars;
        let enc = self.retrieve_encyclopedia(noun);
        let info = match enc {
            Ok(info) if info.char_count >= min => info,
            enc => {
                let web = self.retrieve_web(noun);
                let combined = match (&enc, &web) {
                    (Ok(e), Ok(w)) if self.cfg.fallback == FallbackPolicy::Merge => {
                        Some(RawInfo::new(
                            &noun.id,
                            InfoSource::Merged,
                            format!("{}\n\n{}", e.text, w.text),
                            (self.clock)(),
                        ))
                    }
                    (_, Ok(w)) => Some(w.clone()),
                    _ => None,
                };
                match combined {
                    Some(info) if info.char_count >= min => info,
                    _ => {
                        let describe = |r: &Result<RawInfo, RetrievalError>| match r {
                            Ok(i) => format!("{} chars, below {min}", i.char_count),
                            Err(e) => e.to_string(),
                        };
                        let encyclopedia = describe(&enc);
                        let web = describe(&web);
                        return Err(RetrievalError::AllSourcesFailed {
                            noun: noun.name.clone(),
                            encyclopedia,
                            web,
                        });
                    }
                }
            }
        };
        if let Some(p) = cache {
            store_cache(&p, &info)?;
        }
        Ok(info)
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn load_cache(path: &Path) -> Result<Option<RawInfo>, RetrievalError> {
    if !path.exists() {
        return Ok(None);
    }
    let mut recs: Vec<CacheEntry> = artifact::read_jsonl(path, RETRIEVAL_SCHEMA)?;
    Ok(recs.pop().map(RawInfo::from))
}

pub fn store_cache(path: &Path, info: &RawInfo) -> Result<(), RetrievalError> {
    let entry = CacheEntry::from(info);
    artifact::write_jsonl(path, RETRIEVAL_SCHEMA, [&entry])?;
    Ok(())
}

/// Strips HTML tags and decodes common entities. Paragraph breaks survive;
/// runs of spaces inside a line collapse to one.
pub fn html_to_text(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let mut chars = html.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '<' => {
                let mut tag = String::new();
                for t in chars.by_ref() {
                    if t == '>' {
                        break;
                    }
                    tag.push(t);
                }
                let name = tag
                    .trim_start_matches('/')
                    .split(|ch: char| ch.is_whitespace() || ch == '/')
                    .next()
                    .unwrap_or("")
                    .to_ascii_lowercase();
                if matches!(
                    name.as_str(),
                    "br" | "p" | "div" | "li" | "h1" | "h2" | "h3" | "h4"
                ) {
                    out.push('\n');
                }
            }
            '&' => {
                let mut ent = String::new();
                while let Some(&n) = chars.peek() {
                    if n == ';' || ent.len() > 8 || n.is_whitespace() {
                        break;
                    }
                    ent.push(n);
                    chars.next();
                }
                let decoded = match ent.as_str() {
                    "amp" => Some('&'),
                    "lt" => Some('<'),
                    "gt" => Some('>'),
                    "quot" => Some('"'),
                    "apos" | "#39" => Some('\''),
                    "nbsp" => Some(' '),
                    e if e.starts_with("#x") || e.starts_with("#X") => {
                        u32::from_str_radix(&e[2..], 16)
                            .ok()
                            .and_then(char::from_u32)
                    }
                    e if e.starts_with('#') => e[1..].parse().ok().and_then(char::from_u32),
                    _ => None,
                };
                match (decoded, chars.peek()) {
                    (Some(d), Some(';')) => {
                        chars.next();
                        out.push(d);
                    }
                    _ => {
                        out.push('&');
                        out.push_str(&ent);
                    }
                }
            }
            _ => out.push(c),
        }
    }
    let lines: Vec<String> = out
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect();
    let mut text = String::new();
    let mut blank = 0;
    for l in lines {
        if l.is_empty() {
            blank += 1;
            continue;
        }
        if !text.is_empty() {
            text.push_str(if blank > 0 { "\n\n" } else { "\n" });
        }
        blank = 0;
        text.push_str(&l);
    }
    text
}

/// In-memory encyclopedia keyed by title. Counts lookups.
#[derive(Debug, Default)]
pub struct FixtureEncyclopedia {
    pub articles: HashMap<String, String>,
    calls: AtomicUsize,
}

impl FixtureEncyclopedia {
    pub fn new(articles: impl IntoIterator<Item = (String, String)>) -> Self {
        FixtureEncyclopedia {
            articles: articles.into_iter().collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl EncyclopediaSource for FixtureEncyclopedia {
    fn lookup(&self, title: &str) -> Result<Option<String>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.articles.get(title).cloned())
    }
}

/// In-memory web search keyed by query. Counts searches.
#[derive(Debug, Default)]
pub struct FixtureWebSearch {
    pub results: HashMap<String, Vec<String>>,
    calls: AtomicUsize,
}

impl FixtureWebSearch {
    pub fn new(results: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        FixtureWebSearch {
            results: results.into_iter().collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl WebSearchSource for FixtureWebSearch {
    fn search(&self, query: &str, max_results: usize) -> Result<Vec<String>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self
            .results
            .get(query)
            .map(|r| r.iter().take(max_results).cloned().collect())
            .unwrap_or_default())
    }
}

/// Offline source that fabricates deterministic descriptive text for any
/// noun. A noun's digest decides whether the encyclopedia has a long article,
/// a short stub or nothing, so dry runs exercise every fallback path.
#[derive(Debug, Default, Clone, Copy)]
pub struct SyntheticSource;

impl SyntheticSource {
    fn bucket(title: &str) -> u8 {
        artifact::sha256_hex(title.as_bytes()).as_bytes()[0] % 3
    }
}

const SYNTHETIC_SENTENCES: [&str; 8] = [
    "It has a long history and is closely tied to family and community traditions.",
    "It is usually made from local materials, and its colors range from earthy browns to bright reds.",
    "People use it during seasonal festivals and everyday life alike.",
    "Its rounded shape and decorative patterns make it easy to recognize.",
    "It is often compared to better-known objects from neighboring cultures.",
    "Craftspeople pass the techniques for making it from one generation to the next.",
    "Visitors frequently see it in museums, markets and historic districts.",
    "Its design reflects the climate and daily routines of the region where it developed.",
];

impl EncyclopediaSource for SyntheticSource {
    fn lookup(&self, title: &str) -> Result<Option<String>, BackendError> {
        Ok(match Self::bucket(title) {
            0 => None,
            1 => Some(format!(
                "{title} is a cultural item. {}",
                SYNTHETIC_SENTENCES[0]
            )),
            _ => Some(format!(
                "{title} is a traditional cultural item. {}",
                SYNTHETIC_SENTENCES.join(" ")
            )),
        })
    }
}

impl WebSearchSource for SyntheticSource {
    fn search(&self, query: &str, max_results: usize) -> Result<Vec<String>, BackendError> {
        Ok((0..max_results.min(4))
            .map(|i| {
                format!(
                    "{query}: {} {}",
                    SYNTHETIC_SENTENCES[(2 * i + 1) % SYNTHETIC_SENTENCES.len()],
                    SYNTHETIC_SENTENCES[(2 * i + 2) % SYNTHETIC_SENTENCES.len()]
                )
            })
            .collect())
    }
}
