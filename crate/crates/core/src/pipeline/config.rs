use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::Country;
use crate::evaluation::{MmsrOptions, DEFAULT_JUDGE_RETRIES, DEFAULT_PARITY_THRESHOLD};
use crate::generation::DEFAULT_IMAGES_PER_PROMPT;
use crate::refinement::{ConfigId, RefinementSettings};
use crate::retrieval::RetrievalConfig;
use crate::survey::DEFAULT_PAGES_PER_PARTICIPANT;

/// Settings shared by every subcommand, read from one TOML file.
///
/// Relative paths are resolved against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub parallelism: usize,
    pub images_per_prompt: u32,
    /// Countries to run; empty means all eight.
    pub countries: Vec<Country>,
    /// First N nouns of each country in registry order; all when unset.
    pub nouns_per_country: Option<usize>,
    /// First N templates; all when unset.
    pub templates_limit: Option<usize>,
    pub paths: PathsConfig,
    pub backend: BackendConfig,
    pub refinement: RefinementSettings,
    pub retrieval: RetrievalConfig,
    pub survey: SurveySettings,
    pub analysis: AnalysisSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            parallelism: 4,
            images_per_prompt: DEFAULT_IMAGES_PER_PROMPT,
            countries: Vec::new(),
            nouns_per_country: None,
            templates_limit: None,
            paths: PathsConfig::default(),
            backend: BackendConfig::default(),
            refinement: RefinementSettings::default(),
            retrieval: RetrievalConfig::default(),
            survey: SurveySettings::default(),
            analysis: AnalysisSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Noun registry CSV; the shipped registry when unset.
    pub registry: Option<PathBuf>,
    /// Prompt template CSV; the shipped templates when unset.
    pub templates: Option<PathBuf>,
    /// Directory with the refine/score/feedback prompt texts.
    pub prompt_templates: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Retrieval cache; `<out_dir>/cache` when unset.
    pub cache_dir: Option<PathBuf>,
    /// Caption file for `analyze`, optionally gzip-compressed.
    pub captions: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            registry: None,
            templates: None,
            prompt_templates: None,
            out_dir: PathBuf::from("run"),
            cache_dir: None,
            captions: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Offline stand-ins for every service.
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL of an OpenAI-compatible chat-completions API.
    pub llm_url: String,
    pub llm_model: String,
    /// Defaults to `llm_url`.
    pub judge_url: Option<String>,
    pub judge_model: String,
    pub image_url: String,
    pub image_model: String,
    pub image_width: u32,
    pub image_height: u32,
    pub encyclopedia_url: String,
    pub search_url: String,
    pub search_engine_id: Option<String>,
    pub timeout_secs: u64,
    /// Minimum spacing between requests to one host.
    pub min_interval_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            llm_url: "http://localhost:8000/v1".into(),
            llm_model: "meta-llama/Meta-Llama-3-70B-Instruct".into(),
            judge_url: None,
            judge_model: "gpt-4o".into(),
            image_url: "http://localhost:7860/generate".into(),
            image_model: "stable-diffusion-2".into(),
            image_width: 768,
            image_height: 768,
            encyclopedia_url: "https://en.wikipedia.org/w/api.php".into(),
            search_url: "https://www.googleapis.com/customsearch/v1".into(),
            search_engine_id: None,
            timeout_secs: 120,
            min_interval_ms: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveySettings {
    pub pages_per_participant: usize,
    pub bind: SocketAddr,
    /// Simulated participants per country in dry runs.
    pub simulated_participants: usize,
}

impl Default for SurveySettings {
    fn default() -> Self {
        SurveySettings {
            pages_per_participant: DEFAULT_PAGES_PER_PARTICIPANT,
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            simulated_participants: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub parity_threshold: f64,
    /// Configuration compared against the base prompt.
    pub compare: ConfigId,
    /// Score generated images with the multimodal judge during `aggregate`.
    pub judge: bool,
    pub judge_retries: u32,
    pub mmsr: MmsrOptions,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            parity_threshold: DEFAULT_PARITY_THRESHOLD,
            compare: ConfigId::CTrip5,
            judge: true,
            judge_retries: DEFAULT_JUDGE_RETRIES,
            mmsr: MmsrOptions::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        resolve(base, &mut p.out_dir);
        for opt in [
            &mut p.registry,
            &mut p.templates,
            &mut p.prompt_templates,
            &mut p.cache_dir,
            &mut p.captions,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, opt);
        }
        if let Some(x) = &mut self.retrieval.cache_dir {
            resolve(base, x);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.parallelism == 0 {
            return bad("parallelism must be >= 1".into());
        }
        if self.images_per_prompt == 0 {
            return bad("images_per_prompt must be >= 1".into());
        }
        if self.nouns_per_country == Some(0) || self.templates_limit == Some(0) {
            return bad("selection limits must be >= 1".into());
        }
        if self.survey.pages_per_participant == 0 {
            return bad("survey.pages_per_participant must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.analysis.parity_threshold) {
            return bad("analysis.parity_threshold must lie in [0, 1]".into());
        }
        for (name, p) in [
            ("registry", &self.paths.registry),
            ("templates", &self.paths.templates),
            ("captions", &self.paths.captions),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return bad(format!("paths.{name}: {} is not a file", p.display()));
                }
            }
        }
        if let Some(d) = &self.paths.prompt_templates {
            if !d.is_dir() {
                return bad(format!(
                    "paths.prompt_templates: {} is not a directory",
                    d.display()
                ));
            }
        }
        for c in [ConfigId::CTrip3, ConfigId::CTrip5] {
            if let Some(rc) = self.refinement.refiner_config(c) {
                rc.validate()
                    .map_err(|e| PipelineError::Config(format!("refinement: {e}")))?;
            }
        }
        self.retrieval
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.backend.kind == BackendKind::Http {
            for (name, v) in [
                ("llm_url", &self.backend.llm_url),
                ("image_url", &self.backend.image_url),
                ("encyclopedia_url", &self.backend.encyclopedia_url),
                ("search_url", &self.backend.search_url),
            ] {
                if !(v.starts_with("http://") || v.starts_with("https://")) {
                    return bad(format!("backend.{name} must be an http(s) URL, got {v:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn selected_countries(&self) -> Vec<Country> {
        if self.countries.is_empty() {
            Country::ALL.to_vec()
        } else {
            self.countries.clone()
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.retrieval
            .cache_dir
            .clone()
            .or_else(|| self.paths.cache_dir.clone())
            .unwrap_or_else(|| self.paths.out_dir.join("cache"))
    }
}
