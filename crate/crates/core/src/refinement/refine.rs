use serde::{Deserialize, Serialize};

use super::{
    enforce_length_limit, parse_score, render_feedback_prompt, render_refine_prompt,
    render_scoring_prompt, ConfigId, CriteriaScore, Feedback, Iteration, PromptTemplates,
    RefineError, RefinedPrompt, RefinementTrace, RefinerConfig, StopReason,
};
use crate::backend::{BackendError, CompletionBackend, Step};
use crate::corpus::{display_name, BasePrompt, CultureNoun};
use crate::retrieval::RawInfo;

const REASK_SUFFIX: &str =
    "\n\nYour previous answer could not be read. Reply with exactly one line per criterion \
in the form \"<Criterion>: <integer>\" and nothing else.";

/// Strips chat-style wrappers ("Refined prompt:", surrounding quotes).
fn clean_completion(text: &str) -> String {
    let mut t = text.trim();
    for label in ["refined prompt:", "revised prompt:", "prompt:"] {
        if t.len() >= label.len() && t[..label.len()].eq_ignore_ascii_case(label) {
            t = t[label.len()..].trim_start();
            break;
        }
    }
    let t = t.trim();
    let unquoted = t
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .filter(|s| !s.contains('"'))
        .unwrap_or(t);
    unquoted.trim().to_string()
}

fn call(
    backend: &dyn CompletionBackend,
    step: Step,
    iteration: u32,
    prompt: &str,
) -> Result<String, RefineError> {
    let out = backend
        .complete(step, prompt)
        .map_err(|source| RefineError::BackendFailure {
            step,
            iteration,
            source,
        })?;
    if out.trim().is_empty() {
        return Err(RefineError::BackendFailure {
            step,
            iteration,
            source: BackendError::InvalidResponse("empty completion".into()),
        });
    }
    Ok(out)
}

fn score_with_retries(
    backend: &dyn CompletionBackend,
    prompt: &str,
    cfg: &RefinerConfig,
    iteration: u32,
) -> Result<CriteriaScore, RefineError> {
    let attempts = cfg.score_retries + 1;
    let mut request = prompt.to_string();
    let mut last = None;
    for attempt in 0..attempts {
        if attempt == 1 {
            request.push_str(REASK_SUFFIX);
        }
        let reply = call(backend, Step::Score, iteration, &request)?;
        match parse_score(&reply, &cfg.criteria) {
            Ok(s) => return Ok(s),
            Err(e) => {
                log::debug!(
                    "iteration {iteration}: unreadable score block ({e}), attempt {}",
                    attempt + 1
                );
                last = Some(e);
            }
        }
    }
    Err(RefineError::ScoreParseFailure {
        iteration,
        attempts,
        source: last.expect("at least one attempt"),
    })
}

/// Runs refine → score → feedback until the total strictly exceeds the
/// threshold or `max_iterations` iterations have been scored.
///
/// The trace's `config_id` is `CTrip5` for the full criteria set and `CTrip3`
/// otherwise.
pub fn refine_loop(
    noun: &CultureNoun,
    info: &RawInfo,
    base: &BasePrompt,
    cfg: &RefinerConfig,
    templates: &PromptTemplates,
    backend: &dyn CompletionBackend,
) -> Result<RefinementTrace, RefineError> {
    cfg.validate()?;
    let name = display_name(noun).map_err(|_| RefineError::TemplateSlotMissing {
        template: "refine_initial",
        slot: "K",
    })?;
    let mut iterations: Vec<Iteration> = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    for i in 0..cfg.max_iterations {
        let previous = iterations.last().map(|it| {
            (
                &it.refined,
                it.feedback
                    .as_ref()
                    .expect("continuing iterations carry feedback"),
            )
        });
        let request = render_refine_prompt(
            templates,
            name,
            &info.text,
            &base.text,
            previous,
            cfg.word_cap,
        )?;
        let reply = clean_completion(&call(backend, Step::Refine, i, &request)?);
        let refined = RefinedPrompt::new(enforce_length_limit(&reply, cfg.word_cap), i);

        let scoring = render_scoring_prompt(templates, name, &refined, &cfg.criteria)?;
        let score = score_with_retries(backend, &scoring, cfg, i)?;

        let passed = score.total > cfg.threshold;
        let last = i + 1 == cfg.max_iterations;
        if passed || last {
            stop_reason = if passed {
                StopReason::ThresholdReached
            } else {
                StopReason::MaxIterations
            };
            iterations.push(Iteration {
                refined,
                score,
                feedback: None,
            });
            break;
        }
        let request = render_feedback_prompt(templates, name, &refined, &score)?;
        let text = call(backend, Step::Feedback, i, &request)?
            .trim()
            .to_string();
        iterations.push(Iteration {
            refined,
            score,
            feedback: Some(Feedback { text, iteration: i }),
        });
    }
    let final_prompt = iterations
        .last()
        .map(|it| it.refined.text.clone())
        .expect("max_iterations >= 1");
    let config_id = if cfg.criteria.len() == super::Criterion::ALL.len() {
        ConfigId::CTrip5
    } else {
        ConfigId::CTrip3
    };
    Ok(RefinementTrace {
        noun_id: noun.id.clone(),
        prompt_id: base.prompt_id.clone(),
        config_id,
        base_prompt: base.text.clone(),
        raw_info_fingerprint: info.fingerprint(),
        model: backend.model_label().to_string(),
        threshold: cfg.threshold,
        iterations,
        stop_reason,
        final_prompt,
    })
}

/// Shared knobs for the four prompt configurations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementSettings {
    pub word_cap: usize,
    pub max_iterations: u32,
    pub score_retries: u32,
    pub cultural_threshold: u32,
    pub full_threshold: u32,
}

impl Default for RefinementSettings {
    fn default() -> Self {
        RefinementSettings {
            word_cap: RefinerConfig::DEFAULT_WORD_CAP,
            max_iterations: RefinerConfig::DEFAULT_MAX_ITERATIONS,
            score_retries: RefinerConfig::DEFAULT_SCORE_RETRIES,
            cultural_threshold: RefinerConfig::CULTURAL_THRESHOLD,
            full_threshold: RefinerConfig::FULL_THRESHOLD,
        }
    }
}

impl RefinementSettings {
    /// Loop configuration for the refining configurations, `None` otherwise.
    pub fn refiner_config(&self, config: ConfigId) -> Option<RefinerConfig> {
        let base = match config {
            ConfigId::CTrip3 => RefinerConfig::cultural(),
            ConfigId::CTrip5 => RefinerConfig::full(),
            ConfigId::Base | ConfigId::CTrip0 => return None,
        };
        Some(RefinerConfig {
            threshold: if config == ConfigId::CTrip3 {
                self.cultural_threshold
            } else {
                self.full_threshold
            },
            max_iterations: self.max_iterations,
            word_cap: self.word_cap,
            score_retries: self.score_retries,
            ..base
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfiguredPrompt {
    pub config_id: ConfigId,
    pub text: String,
    pub trace: Option<RefinementTrace>,
}

/// Produces the final prompt text for one configuration.
///
/// * `Base`: the base prompt unchanged.
/// * `CTrip0`: base prompt followed by the raw information, length-capped, no
///   completions.
/// * `CTrip3` / `CTrip5`: the refinement loop with three or five criteria.
pub fn apply_configuration(
    config: ConfigId,
    noun: &CultureNoun,
    info: Option<&RawInfo>,
    base: &BasePrompt,
    settings: &RefinementSettings,
    templates: &PromptTemplates,
    backend: &dyn CompletionBackend,
) -> Result<ConfiguredPrompt, RefineError> {
    let text_and_trace = match config {
        ConfigId::Base => (base.text.clone(), None),
        ConfigId::CTrip0 => {
            let info = info
                .filter(|i| !i.text.trim().is_empty())
                .ok_or(RefineError::MissingInfo(config))?;
            let base_text = base.text.trim_end();
            let sep = if base_text.ends_with(['.', '!', '?']) {
                " "
            } else {
                ". "
            };
            let joined = format!(
                "{base_text}{sep}{}",
                info.text.split_whitespace().collect::<Vec<_>>().join(" ")
            );
            (enforce_length_limit(&joined, settings.word_cap), None)
        }
        ConfigId::CTrip3 | ConfigId::CTrip5 => {
            let info = info.ok_or(RefineError::MissingInfo(config))?;
            let cfg = settings
                .refiner_config(config)
                .expect("refining configuration");
            let trace = refine_loop(noun, info, base, &cfg, templates, backend)?;
            (trace.final_prompt.clone(), Some(trace))
        }
    };
    Ok(ConfiguredPrompt {
        config_id: config,
        text: text_and_trace.0,
        trace: text_and_trace.1,
    })
}
