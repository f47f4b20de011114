//! Iterative prompt refinement: refine, score against the rubric, feed the
//! scores back, repeat until the total clears the threshold or the iteration
//! budget runs out.

mod length;
mod mock;
mod refine;
mod score;
mod templates;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use length::{enforce_length_limit, word_count};
pub use mock::{CountingBackend, MockCompletion, ScriptedBackend};
pub use refine::{apply_configuration, refine_loop, ConfiguredPrompt, RefinementSettings};
pub use score::{parse_score, ScoreError};
pub use templates::{
    render_feedback_prompt, render_refine_prompt, render_scoring_prompt, PromptTemplates,
    RefineTemplate,
};

use crate::backend::{BackendError, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aspect {
    CulturalContexts,
    VisualDetails,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    Clarity,
    Background,
    Purpose,
    VisualElements,
    ComparableObjects,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::Clarity,
        Criterion::Background,
        Criterion::Purpose,
        Criterion::VisualElements,
        Criterion::ComparableObjects,
    ];

    pub const CULTURAL: [Criterion; 3] = [
        Criterion::Clarity,
        Criterion::Background,
        Criterion::Purpose,
    ];

    pub fn aspect(self) -> Aspect {
        match self {
            Criterion::Clarity | Criterion::Background | Criterion::Purpose => {
                Aspect::CulturalContexts
            }
            Criterion::VisualElements | Criterion::ComparableObjects => Aspect::VisualDetails,
        }
    }

    /// Label used in the score block wire format.
    pub fn code(self) -> &'static str {
        match self {
            Criterion::Clarity => "Clarity",
            Criterion::Background => "Background",
            Criterion::Purpose => "Purpose",
            Criterion::VisualElements => "VisualElements",
            Criterion::ComparableObjects => "ComparableObjects",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Criterion::VisualElements => "Visual Elements",
            Criterion::ComparableObjects => "Comparable Objects",
            other => other.code(),
        }
    }

    /// Rubric definition shown to the scorer.
    pub fn description(self) -> &'static str {
        match self {
            Criterion::Clarity => {
                "How clearly and easily the prompt conveys the details needed to explain the culture noun."
            }
            Criterion::Background => "Whether the prompt gives appropriate historical or temporal context.",
            Criterion::Purpose => "Whether the prompt describes what the culture noun is for or how it is used.",
            Criterion::VisualElements => {
                "Whether the prompt gives enough visual information, such as color and shape."
            }
            Criterion::ComparableObjects => {
                "Whether the prompt compares the culture noun to a well-known or famous example."
            }
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Criterion {
    type Err = String;
    /// Case-insensitive; spaces, underscores and hyphens are ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        Criterion::ALL
            .into_iter()
            .find(|c| c.code().to_lowercase() == norm)
            .ok_or_else(|| format!("unknown criterion {s:?}"))
    }
}

/// Rubric scores for the active criteria. `total` is always recomputed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaScore {
    pub scores: BTreeMap<Criterion, u8>,
    pub total: u32,
}

impl CriteriaScore {
    pub fn new(scores: BTreeMap<Criterion, u8>) -> Result<Self, ScoreError> {
        for (c, v) in &scores {
            if *v > 10 {
                return Err(ScoreError::OutOfRange {
                    criterion: *c,
                    value: i64::from(*v),
                });
            }
        }
        let total = scores.values().map(|v| u32::from(*v)).sum();
        Ok(CriteriaScore { scores, total })
    }

    pub fn get(&self, c: Criterion) -> Option<u8> {
        self.scores.get(&c).copied()
    }

    pub fn criteria(&self) -> impl Iterator<Item = Criterion> + '_ {
        self.scores.keys().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub text: String,
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedPrompt {
    pub text: String,
    pub iteration: u32,
    pub word_count: usize,
}

impl RefinedPrompt {
    pub fn new(text: impl Into<String>, iteration: u32) -> Self {
        let text = text.into();
        let word_count = word_count(&text);
        RefinedPrompt {
            text,
            iteration,
            word_count,
        }
    }
}

/// Which prompt variant an image is generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfigId {
    Base,
    #[serde(rename = "ctrip0")]
    CTrip0,
    #[serde(rename = "ctrip3")]
    CTrip3,
    #[serde(rename = "ctrip5")]
    CTrip5,
}

impl ConfigId {
    pub const ALL: [ConfigId; 4] = [
        ConfigId::Base,
        ConfigId::CTrip0,
        ConfigId::CTrip3,
        ConfigId::CTrip5,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ConfigId::Base => "base",
            ConfigId::CTrip0 => "ctrip0",
            ConfigId::CTrip3 => "ctrip3",
            ConfigId::CTrip5 => "ctrip5",
        }
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ConfigId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConfigId::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                format!("unknown configuration {s:?} (expected base, ctrip0, ctrip3 or ctrip5)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerConfig {
    pub criteria: Vec<Criterion>,
    pub threshold: u32,
    pub max_iterations: u32,
    pub word_cap: usize,
    pub score_retries: u32,
}

impl RefinerConfig {
    pub const DEFAULT_WORD_CAP: usize = 60;
    pub const DEFAULT_MAX_ITERATIONS: u32 = 5;
    pub const DEFAULT_SCORE_RETRIES: u32 = 2;
    pub const FULL_THRESHOLD: u32 = 40;
    pub const CULTURAL_THRESHOLD: u32 = 24;

    /// All five criteria, threshold 40.
    pub fn full() -> Self {
        RefinerConfig {
            criteria: Criterion::ALL.to_vec(),
            threshold: Self::FULL_THRESHOLD,
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
            word_cap: Self::DEFAULT_WORD_CAP,
            score_retries: Self::DEFAULT_SCORE_RETRIES,
        }
    }

    /// Cultural-context criteria only, threshold 24.
    pub fn cultural() -> Self {
        RefinerConfig {
            criteria: Criterion::CULTURAL.to_vec(),
            threshold: Self::CULTURAL_THRESHOLD,
            ..Self::full()
        }
    }

    pub fn max_total(&self) -> u32 {
        10 * self.criteria.len() as u32
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        let invalid = |m: &str| Err(RefineError::InvalidConfig(m.to_string()));
        if self.criteria.is_empty() {
            return Err(RefineError::EmptyCriteriaSet);
        }
        let mut sorted = self.criteria.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.criteria.len() {
            return invalid("criteria set contains duplicates");
        }
        if self.threshold > self.max_total() {
            return invalid("threshold exceeds the maximum attainable total");
        }
        if self.max_iterations < 1 {
            return invalid("max_iterations must be >= 1");
        }
        if self.word_cap < 1 {
            return invalid("word_cap must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    ThresholdReached,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Iteration {
    pub refined: RefinedPrompt,
    pub score: CriteriaScore,
    pub feedback: Option<Feedback>,
}

/// Everything one refinement run produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub noun_id: String,
    pub prompt_id: String,
    pub config_id: ConfigId,
    pub base_prompt: String,
    pub raw_info_fingerprint: String,
    pub model: String,
    pub threshold: u32,
    pub iterations: Vec<Iteration>,
    pub stop_reason: StopReason,
    pub final_prompt: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("template {template} is missing slot {{{{{slot}}}}}")]
    TemplateSlotMissing {
        template: &'static str,
        slot: &'static str,
    },
    #[error("criteria set is empty")]
    EmptyCriteriaSet,
    #[error("invalid refiner config: {0}")]
    InvalidConfig(String),
    #[error("{step} completion failed at iteration {iteration}: {source}")]
    BackendFailure {
        step: Step,
        iteration: u32,
        #[source]
        source: BackendError,
    },
    #[error("could not parse scores at iteration {iteration} after {attempts} attempts: {source}")]
    ScoreParseFailure {
        iteration: u32,
        attempts: u32,
        #[source]
        source: ScoreError,
    },
    #[error("raw information is required for {0}")]
    MissingInfo(ConfigId),
    #[error("cannot read template: {0}")]
    TemplateIo(String),
}

impl RefineError {
    pub fn is_transport(&self) -> bool {
        matches!(self, RefineError::BackendFailure { source, .. } if source.is_transport())
    }
}
