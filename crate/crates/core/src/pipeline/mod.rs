//! Run orchestration: a [`RunConfig`], the backends it selects, and one
//! method per pipeline stage. Every stage reads its inputs from and writes its
//! outputs to the run's output directory, and can be rerun safely.

mod config;
mod simulate;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{
    self, ArtifactError, JsonlAppender, AGGREGATE_SCHEMA, FINAL_PROMPT_SCHEMA, FREQUENCY_SCHEMA,
    RETRIEVAL_SCHEMA, TRACE_SCHEMA, VIE_SCHEMA,
};
use crate::backend::{BackendError, CompletionBackend, ImageBackend, JudgeBackend, RateLimiter};
use crate::client::{
    HttpCompletion, HttpEncyclopedia, HttpImageBackend, HttpTransport, HttpWebSearch,
};
use crate::corpus::{
    self, load_noun_registry, load_templates, shipped_registry, shipped_templates, BasePrompt,
    CorpusError, CultureNoun, NounRegistry, PromptTemplate,
};
use crate::evaluation::{
    self, assign_quartiles, count_frequencies, mmsr_plus_vote, open_captions, report,
    AggregatedLabel, AggregationMethod, AggregationResult, EvalError, FrequencyRecord,
    SurveyResponse, VieScore, WorkerSkill,
};
use crate::generation::{
    self, plan_batch, read_final_prompts, read_manifest, run_batch, BatchReport, FinalPrompt,
    GenerationError, RequestKey, StubImageBackend,
};
use crate::refinement::{
    apply_configuration, ConfigId, MockCompletion, PromptTemplates, RefineError,
};
use crate::retrieval::{
    CacheEntry, EncyclopediaSource, InfoSource, RawInfo, RetrievalError, Retriever,
    SyntheticSource, WebSearchSource,
};
use crate::survey::{self, SurveyError, SurveyPage, SurveyService};

pub use config::{
    AnalysisSettings, BackendConfig, BackendKind, PathsConfig, RunConfig, SurveySettings,
};
pub use simulate::{dry_run, simulate_responses, synthetic_captions, DryRunSummary, DRY_RUN_CLOCK};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("missing input {path}; run `{stage}` first")]
    MissingInput { path: PathBuf, stage: &'static str },
    #[error("{0}")]
    Invalid(String),
    #[error("{stage}: {failed} item(s) failed")]
    Incomplete { stage: &'static str, failed: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl PipelineError {
    /// True when an external service failed rather than the input or config.
    pub fn is_transport(&self) -> bool {
        match self {
            PipelineError::Incomplete { .. } => true,
            PipelineError::Retrieval(e) => e.is_transport(),
            PipelineError::Refine(e) => e.is_transport(),
            PipelineError::Eval(e) => e.is_transport(),
            PipelineError::Backend(e) => e.is_transport(),
            _ => false,
        }
    }

    /// Short machine-readable tag for error logs.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::MissingInput { .. } => "missing_input",
            PipelineError::Invalid(_) => "invalid",
            PipelineError::Incomplete { .. } => "incomplete",
            PipelineError::Corpus(_) => "corpus",
            PipelineError::Retrieval(_) => "retrieval",
            PipelineError::Refine(_) => "refinement",
            PipelineError::Generation(_) => "generation",
            PipelineError::Survey(_) => "survey",
            PipelineError::Eval(_) => "evaluation",
            PipelineError::Artifact(_) => "artifact",
            PipelineError::Backend(_) => "backend",
        }
    }
}

/// File names inside the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn prompts(&self) -> PathBuf {
        self.root.join("prompts.jsonl")
    }
    pub fn retrieval(&self) -> PathBuf {
        self.root.join("retrieval.jsonl")
    }
    pub fn traces(&self) -> PathBuf {
        self.root.join("traces.jsonl")
    }
    pub fn final_prompts(&self) -> PathBuf {
        self.root.join("final_prompts.jsonl")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join(generation::MANIFEST_FILE)
    }
    pub fn pages(&self) -> PathBuf {
        self.root.join("survey").join("pages.jsonl")
    }
    pub fn store(&self) -> PathBuf {
        self.root.join("survey").join("store")
    }
    pub fn responses(&self) -> PathBuf {
        self.store().join(survey::RESPONSES_FILE)
    }
    pub fn frequencies(&self) -> PathBuf {
        self.root.join("frequencies.jsonl")
    }
    pub fn aggregate(&self) -> PathBuf {
        self.root.join("aggregate.jsonl")
    }
    pub fn skills(&self) -> PathBuf {
        self.root.join("skills.csv")
    }
    pub fn vie(&self) -> PathBuf {
        self.root.join("vie.jsonl")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub struct Backends {
    pub completion: Box<dyn CompletionBackend>,
    pub judge: Box<dyn JudgeBackend>,
    pub images: Box<dyn ImageBackend>,
    pub encyclopedia: Box<dyn EncyclopediaSource>,
    pub web: Box<dyn WebSearchSource>,
}

impl Backends {
    /// Offline stand-ins: deterministic completions, digest-derived images and
    /// judge scores, synthetic retrieval text.
    pub fn mock() -> Self {
        Backends {
            completion: Box::new(MockCompletion::new()),
            judge: Box::new(evaluation::StubJudge),
            images: Box::new(StubImageBackend::default()),
            encyclopedia: Box::new(SyntheticSource),
            web: Box::new(SyntheticSource),
        }
    }

    pub fn http(cfg: &BackendConfig) -> Result<Self, PipelineError> {
        let limiter = Arc::new(RateLimiter::new(Duration::from_millis(cfg.min_interval_ms)));
        let transport = HttpTransport::new(Duration::from_secs(cfg.timeout_secs), limiter)?;
        let judge_url = cfg.judge_url.clone().unwrap_or_else(|| cfg.llm_url.clone());
        Ok(Backends {
            completion: Box::new(HttpCompletion::new(
                transport.clone(),
                &cfg.llm_url,
                &cfg.llm_model,
            )),
            judge: Box::new(HttpCompletion::new(
                transport.clone(),
                judge_url,
                &cfg.judge_model,
            )),
            images: Box::new(
                HttpImageBackend::new(transport.clone(), &cfg.image_url, &cfg.image_model)
                    .with_size(cfg.image_width, cfg.image_height),
            ),
            encyclopedia: Box::new(HttpEncyclopedia::new(
                transport.clone(),
                &cfg.encyclopedia_url,
            )),
            web: Box::new(
                HttpWebSearch::new(transport, &cfg.search_url)
                    .with_engine_id(cfg.search_engine_id.clone()),
            ),
        })
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self, PipelineError> {
        match cfg.kind {
            BackendKind::Mock => Ok(Backends::mock()),
            BackendKind::Http => Backends::http(cfg),
        }
    }
}

type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RetrieveSummary {
    pub encyclopedia: usize,
    pub web_search: usize,
    pub merged: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RefineSummary {
    pub written: usize,
    pub skipped: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AggregateSummary {
    pub responses: usize,
    pub workers: usize,
    pub labels: usize,
    pub judged: usize,
    pub judge_skipped: usize,
    pub judge_failed: usize,
}

/// Judge scores for one generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VieRecord {
    pub prompt_id: String,
    pub noun_id: String,
    pub config_id: ConfigId,
    pub index: u32,
    pub sc: f64,
    pub pq: f64,
    pub overall: f64,
}

pub struct Pipeline {
    cfg: RunConfig,
    registry: NounRegistry,
    templates: Vec<PromptTemplate>,
    prompt_templates: PromptTemplates,
    backends: Backends,
    clock: Clock,
    layout: Layout,
}

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingInput { path, stage })
    }
}

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .expect("thread pool")
}

impl Pipeline {
    /// Loads the registry and templates named by `cfg` and builds its backends.
    pub fn new(cfg: RunConfig) -> Result<Self, PipelineError> {
        let backends = Backends::from_config(&cfg.backend)?;
        Self::with_backends(cfg, backends)
    }

    pub fn with_backends(cfg: RunConfig, backends: Backends) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let registry = match &cfg.paths.registry {
            Some(p) => load_noun_registry(p)?,
            None => shipped_registry(),
        };
        let templates = match &cfg.paths.templates {
            Some(p) => load_templates(p)?,
            None => shipped_templates(),
        };
        let prompt_templates = match &cfg.paths.prompt_templates {
            Some(d) => PromptTemplates::load(d)?,
            None => PromptTemplates::shipped(),
        };
        let layout = Layout::new(&cfg.paths.out_dir);
        Ok(Pipeline {
            cfg,
            registry,
            templates,
            prompt_templates,
            backends,
            clock: Arc::new(Utc::now),
            layout,
        })
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn registry(&self) -> &NounRegistry {
        &self.registry
    }

    pub fn selected_nouns(&self) -> Vec<CultureNoun> {
        let countries = self.cfg.selected_countries();
        let per = self.cfg.nouns_per_country.unwrap_or(usize::MAX);
        self.registry.select(&countries, per)
    }

    pub fn selected_templates(&self) -> &[PromptTemplate] {
        let n = self
            .cfg
            .templates_limit
            .unwrap_or(self.templates.len())
            .min(self.templates.len());
        &self.templates[..n]
    }

    fn noun(&self, id: &str) -> Result<&CultureNoun, PipelineError> {
        self.registry
            .get(id)
            .ok_or_else(|| PipelineError::Invalid(format!("noun {id:?} is not in the registry")))
    }

    fn base_prompts(&self) -> Result<Vec<BasePrompt>, PipelineError> {
        Ok(corpus::read_prompts(&require(
            self.layout.prompts(),
            "expand",
        )?)?)
    }

    /// Base prompts for the selected nouns and templates.
    pub fn expand(&self) -> Result<usize, PipelineError> {
        let prompts = corpus::expand_prompts(&self.selected_nouns(), self.selected_templates())?;
        corpus::write_prompts(&self.layout.prompts(), &prompts)?;
        log::info!("expanded {} base prompts", prompts.len());
        Ok(prompts.len())
    }

    /// Raw information for every noun that has base prompts. Results are
    /// cached per noun, so a rerun only contacts the sources for misses.
    pub fn retrieve(&self) -> Result<RetrieveSummary, PipelineError> {
        let prompts = self.base_prompts()?;
        let mut seen = HashSet::new();
        let nouns: Vec<&CultureNoun> = prompts
            .iter()
            .filter(|p| seen.insert(p.noun_id.as_str()))
            .map(|p| self.noun(&p.noun_id))
            .collect::<Result<_, _>>()?;
        let mut rcfg = self.cfg.retrieval.clone();
        rcfg.cache_dir = Some(self.cfg.cache_dir());
        let clock = self.clock.clone();
        let retriever = Retriever::new(&*self.backends.encyclopedia, &*self.backends.web, rcfg)?
            .with_clock(move || clock());
        let results: Vec<Result<RawInfo, RetrievalError>> = pool(self.cfg.parallelism)
            .install(|| nouns.par_iter().map(|n| retriever.retrieve(n)).collect());

        let mut summary = RetrieveSummary::default();
        let mut entries = Vec::new();
        let mut transport = None;
        for (noun, r) in nouns.iter().zip(results) {
            match r {
                Ok(info) => {
                    match info.source {
                        InfoSource::Encyclopedia => summary.encyclopedia += 1,
                        InfoSource::WebSearch => summary.web_search += 1,
                        InfoSource::Merged => summary.merged += 1,
                    }
                    entries.push(CacheEntry::from(&info));
                }
                Err(e) if e.is_transport() => {
                    summary.failed += 1;
                    transport.get_or_insert(e);
                }
                Err(e) => {
                    log::warn!("{}: {e}", noun.id);
                    summary.failed += 1;
                }
            }
        }
        artifact::write_jsonl(&self.layout.retrieval(), RETRIEVAL_SCHEMA, &entries)?;
        match transport {
            Some(e) => Err(e.into()),
            None => Ok(summary),
        }
    }

    fn raw_info(&self) -> Result<HashMap<String, RawInfo>, PipelineError> {
        let entries: Vec<CacheEntry> = artifact::read_jsonl(
            &require(self.layout.retrieval(), "retrieve")?,
            RETRIEVAL_SCHEMA,
        )?;
        Ok(entries
            .into_iter()
            .map(|e| (e.noun_id.clone(), RawInfo::from(e)))
            .collect())
    }

    /// Final prompts (and loop traces) for `configs`, skipping pairs already
    /// written by an earlier run.
    pub fn refine(&self, configs: &[ConfigId]) -> Result<RefineSummary, PipelineError> {
        let prompts = self.base_prompts()?;
        let info = if configs.iter().any(|c| *c != ConfigId::Base) {
            self.raw_info()?
        } else {
            HashMap::new()
        };
        let done: HashSet<(String, ConfigId)> = artifact::read_jsonl_or_empty::<FinalPrompt>(
            &self.layout.final_prompts(),
            FINAL_PROMPT_SCHEMA,
        )?
        .into_iter()
        .map(|f| (f.prompt_id, f.config_id))
        .collect();
        let mut summary = RefineSummary::default();
        let mut work = Vec::new();
        for p in &prompts {
            for &c in configs {
                if done.contains(&(p.prompt_id.clone(), c)) {
                    summary.skipped += 1;
                } else {
                    work.push((p, c, self.noun(&p.noun_id)?));
                }
            }
        }
        let mut finals = JsonlAppender::open(&self.layout.final_prompts(), FINAL_PROMPT_SCHEMA)?;
        let mut traces = JsonlAppender::open(&self.layout.traces(), TRACE_SCHEMA)?;
        let pool = pool(self.cfg.parallelism);
        let backend: &dyn CompletionBackend = &*self.backends.completion;
        for chunk in work.chunks(self.cfg.parallelism * 4) {
            let results: Vec<_> = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|(p, c, noun)| {
                        apply_configuration(
                            *c,
                            noun,
                            info.get(&p.noun_id),
                            p,
                            &self.cfg.refinement,
                            &self.prompt_templates,
                            backend,
                        )
                    })
                    .collect()
            });
            let mut transport = None;
            for ((p, _, _), r) in chunk.iter().zip(results) {
                match r {
                    Ok(out) => {
                        if let Some(t) = &out.trace {
                            traces.append(t)?;
                        }
                        finals.append(&FinalPrompt {
                            prompt_id: p.prompt_id.clone(),
                            noun_id: p.noun_id.clone(),
                            config_id: out.config_id,
                            text: out.text,
                        })?;
                        summary.written += 1;
                    }
                    Err(e) if e.is_transport() => {
                        summary.failed += 1;
                        transport.get_or_insert(e);
                    }
                    Err(e) => {
                        log::warn!("{}: {e}", p.prompt_id);
                        summary.failed += 1;
                    }
                }
            }
            if let Some(e) = transport {
                return Err(e.into());
            }
        }
        log::info!(
            "refine: {} written, {} already done, {} failed",
            summary.written,
            summary.skipped,
            summary.failed
        );
        Ok(summary)
    }

    /// Images for every final prompt; completed manifest entries are kept.
    pub fn generate(&self) -> Result<BatchReport, PipelineError> {
        let finals = read_final_prompts(&require(self.layout.final_prompts(), "refine")?)?;
        let requests = plan_batch(&finals, self.cfg.images_per_prompt);
        let report = run_batch(
            &requests,
            &*self.backends.images,
            &self.layout.root,
            self.cfg.parallelism,
        )?;
        log::info!(
            "generate: {} new, {} kept, {} failed",
            report.generated,
            report.skipped,
            report.failed
        );
        Ok(report)
    }

    pub fn build_survey(&self) -> Result<Vec<SurveyPage>, PipelineError> {
        require(self.layout.manifest(), "generate")?;
        let manifest: Vec<_> = read_manifest(&self.layout.root)?
            .into_iter()
            .filter(|e| e.is_verified(&self.layout.root))
            .collect();
        let prompts = self.base_prompts()?;
        let pages =
            survey::build_survey(&manifest, &prompts, &self.selected_nouns(), self.cfg.seed)?;
        survey::write_pages(&self.layout.pages(), &pages)?;
        log::info!("built {} survey pages", pages.len());
        Ok(pages)
    }

    /// The survey service over the built pages and the run's response store.
    pub fn survey_service(&self) -> Result<SurveyService, PipelineError> {
        let pages = survey::read_pages(&require(self.layout.pages(), "build-survey")?)?;
        let svc = SurveyService::open(
            pages,
            self.registry.nouns(),
            &self.layout.root,
            &self.layout.store(),
            survey::ServiceConfig {
                pages_per_participant: self.cfg.survey.pages_per_participant,
                seed: self.cfg.seed,
            },
        )?;
        let clock = self.clock.clone();
        Ok(svc.with_clock(move || clock()))
    }

    /// Caption frequencies of the selected nouns.
    pub fn analyze(&self, captions: Option<&Path>) -> Result<Vec<FrequencyRecord>, PipelineError> {
        let path = captions
            .or(self.cfg.paths.captions.as_deref())
            .ok_or_else(|| {
                PipelineError::Config("no caption file given (paths.captions)".into())
            })?;
        let reader = open_captions(path)?;
        let records = count_frequencies(reader, &self.selected_nouns())?;
        artifact::write_jsonl(&self.layout.frequencies(), FREQUENCY_SCHEMA, &records)?;
        Ok(records)
    }

    /// Aggregates stored survey responses (per country, since participants
    /// only rank pages of their own country) and scores images with the judge.
    pub fn aggregate(&self) -> Result<AggregateSummary, PipelineError> {
        let stored = survey::read_responses(&require(self.layout.responses(), "serve")?)?;
        if stored.is_empty() {
            return Err(PipelineError::Invalid("the response store is empty".into()));
        }
        let mut by_country: BTreeMap<_, Vec<SurveyResponse>> = BTreeMap::new();
        for s in stored.iter() {
            let country = self.noun(&s.response.noun_id)?.country;
            by_country
                .entry(country)
                .or_default()
                .push(s.response.clone());
        }
        let mut labels = Vec::new();
        let mut skills = Vec::new();
        for (country, responses) in &by_country {
            let r = mmsr_plus_vote(responses, &self.cfg.analysis.mmsr).inspect_err(|_| {
                log::error!("aggregation failed for {}", country.code());
            })?;
            labels.extend(r.labels);
            skills.extend(r.skills);
        }
        artifact::write_jsonl(&self.layout.aggregate(), AGGREGATE_SCHEMA, &labels)?;
        write_skills(&self.layout.skills(), &skills)?;

        let mut summary = AggregateSummary {
            responses: stored.len(),
            workers: skills.len(),
            labels: labels.len(),
            ..Default::default()
        };
        if self.cfg.analysis.judge {
            let (judged, skipped, failed) = self.judge_images()?;
            summary.judged = judged;
            summary.judge_skipped = skipped;
            summary.judge_failed = failed;
        }
        Ok(summary)
    }

    fn judge_images(&self) -> Result<(usize, usize, usize), PipelineError> {
        let finals = read_final_prompts(&require(self.layout.final_prompts(), "refine")?)?;
        let text: HashMap<(&str, ConfigId), &str> = finals
            .iter()
            .map(|f| ((f.prompt_id.as_str(), f.config_id), f.text.as_str()))
            .collect();
        let done: HashSet<RequestKey> =
            artifact::read_jsonl_or_empty::<VieRecord>(&self.layout.vie(), VIE_SCHEMA)?
                .into_iter()
                .map(|v| RequestKey {
                    prompt_id: v.prompt_id,
                    config_id: v.config_id,
                    index: v.index,
                })
                .collect();
        let todo: Vec<_> = read_manifest(&self.layout.root)?
            .into_iter()
            .filter(|e| e.is_verified(&self.layout.root))
            .collect();
        let skipped = todo.iter().filter(|e| done.contains(&e.key())).count();
        let todo: Vec<_> = todo
            .into_iter()
            .filter(|e| !done.contains(&e.key()))
            .collect();
        let judge: &dyn JudgeBackend = &*self.backends.judge;
        let retries = self.cfg.analysis.judge_retries;
        let root = &self.layout.root;
        let results: Vec<Result<VieScore, PipelineError>> =
            pool(self.cfg.parallelism).install(|| {
                todo.par_iter()
                    .map(|e| {
                        let rel = e.path.as_deref().expect("verified entries have a path");
                        let png = std::fs::read(root.join(rel))
                            .map_err(|err| ArtifactError::io(root.join(rel), err))?;
                        let prompt = text
                            .get(&(e.prompt_id.as_str(), e.config_id))
                            .copied()
                            .unwrap_or_default();
                        Ok(evaluation::vie_score(judge, prompt, &png, retries)?)
                    })
                    .collect()
            });
        let mut out = JsonlAppender::open(&self.layout.vie(), VIE_SCHEMA)?;
        let (mut judged, mut failed) = (0, 0);
        let mut transport = None;
        for (e, r) in todo.iter().zip(results) {
            match r {
                Ok(v) => {
                    out.append(&VieRecord {
                        prompt_id: e.prompt_id.clone(),
                        noun_id: e.noun_id.clone(),
                        config_id: e.config_id,
                        index: e.index,
                        sc: v.sc,
                        pq: v.pq,
                        overall: v.overall,
                    })?;
                    judged += 1;
                }
                Err(err) if err.is_transport() => {
                    failed += 1;
                    transport.get_or_insert(err);
                }
                Err(err) => {
                    log::warn!("judge {}: {err}", e.prompt_id);
                    failed += 1;
                }
            }
        }
        match transport {
            Some(e) => Err(e),
            None => Ok((judged, skipped, failed)),
        }
    }

    /// Writes the report CSVs and returns their paths.
    pub fn report(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let labels: Vec<AggregatedLabel> = artifact::read_jsonl(
            &require(self.layout.aggregate(), "aggregate")?,
            AGGREGATE_SCHEMA,
        )?;
        let freqs: Vec<FrequencyRecord> = artifact::read_jsonl(
            &require(self.layout.frequencies(), "analyze")?,
            FREQUENCY_SCHEMA,
        )?;
        let quartiles = assign_quartiles(&freqs)?;
        let vie_records: Vec<VieRecord> =
            artifact::read_jsonl_or_empty(&self.layout.vie(), VIE_SCHEMA)?;
        let vie = mean_vie(&vie_records);
        let aggregation = AggregationResult {
            method: AggregationMethod::MmsrPlusVote,
            labels,
            skills: Vec::new(),
        };
        let dir = self.layout.report_dir();
        let files = report::write_report(
            &dir,
            &report::ReportInput {
                aggregation: &aggregation,
                quartiles: &quartiles,
                nouns: self.registry.nouns(),
                vie: &vie,
                compare: self.cfg.analysis.compare,
                parity_threshold: self.cfg.analysis.parity_threshold,
            },
        )?;
        Ok(files.into_iter().map(|f| dir.join(f)).collect())
    }
}

/// Per-configuration means of the judge scores.
pub fn mean_vie(records: &[VieRecord]) -> Vec<(ConfigId, VieScore)> {
    ConfigId::ALL
        .into_iter()
        .filter_map(|c| {
            let rs: Vec<&VieRecord> = records.iter().filter(|r| r.config_id == c).collect();
            if rs.is_empty() {
                return None;
            }
            let n = rs.len() as f64;
            let mean = |f: fn(&VieRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            Some((
                c,
                VieScore {
                    sc: mean(|r| r.sc),
                    pq: mean(|r| r.pq),
                    overall: mean(|r| r.overall),
                },
            ))
        })
        .collect()
}

fn write_skills(path: &Path, skills: &[WorkerSkill]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let rows = std::iter::once(["participant_id".to_string(), "skill".to_string()]).chain(
        skills
            .iter()
            .map(|s| [s.participant_id.clone(), format!("{:.6}", s.skill)]),
    );
    for r in rows {
        w.write_record(&r).map_err(EvalError::from)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ArtifactError::io(path, e.into_error()))?;
    artifact::write_atomic(path, &bytes)?;
    Ok(())
}
