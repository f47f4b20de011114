//! Survey statistics: caption frequency groups, crowd aggregation, mean
//! ranks, improvement scores, t-tests and the image judge.

mod frequency;
mod mmsr;
mod quartiles;
pub mod report;
mod stats;
mod viescore;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifact::ArtifactError;
use crate::refinement::ConfigId;

pub use frequency::{count_frequencies, count_frequencies_in, open_captions, FrequencyRecord};
pub use mmsr::{majority_vote, mmsr_aggregate, mmsr_plus_vote, vote_labels, MmsrOptions};
pub use quartiles::{assign_quartiles, Quartile, QuartileAssignment};
pub use stats::{
    improvement_scores, ln_gamma, mean_rank, normalized_improvement, regularized_incomplete_beta,
    student_t_sf, welch_t_test, ImprovementScore, RankFilter, TTestResult,
    DEFAULT_PARITY_THRESHOLD,
};
pub use viescore::{
    parse_judge_scores, render_pq_prompt, render_sc_prompt, vie_score, StubJudge, VieScore,
    DEFAULT_JUDGE_RETRIES,
};

/// The four ranking questions asked on every survey page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurveyItem {
    CulturalRepresentation,
    KeywordNaturalness,
    Offensiveness,
    DescriptionAlignment,
}

impl SurveyItem {
    pub const ALL: [SurveyItem; 4] = [
        SurveyItem::CulturalRepresentation,
        SurveyItem::KeywordNaturalness,
        SurveyItem::Offensiveness,
        SurveyItem::DescriptionAlignment,
    ];

    pub fn code(self) -> &'static str {
        match self {
            SurveyItem::CulturalRepresentation => "cultural_representation",
            SurveyItem::KeywordNaturalness => "keyword_naturalness",
            SurveyItem::Offensiveness => "offensiveness",
            SurveyItem::DescriptionAlignment => "description_alignment",
        }
    }
}

impl fmt::Display for SurveyItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SurveyItem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SurveyItem::ALL
            .into_iter()
            .find(|i| i.code() == s)
            .ok_or_else(|| format!("unknown survey item {s:?}"))
    }
}

/// Number of ranking classes per task.
pub const NUM_LABELS: u8 = 4;

/// One participant's ranking of the four configurations for one item of one
/// page, after slot letters have been mapped back to configurations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub participant_id: String,
    pub page_id: String,
    pub noun_id: String,
    pub item: SurveyItem,
    pub ranks: BTreeMap<ConfigId, u8>,
}

impl SurveyResponse {
    /// True when `ranks` assigns 1..=4 to the four configurations.
    pub fn is_valid(&self) -> bool {
        is_rank_permutation(self.ranks.values().copied()) && self.ranks.len() == ConfigId::ALL.len()
    }
}

pub fn is_rank_permutation(ranks: impl IntoIterator<Item = u8>) -> bool {
    let mut seen = [false; NUM_LABELS as usize];
    let mut n = 0;
    for r in ranks {
        if !(1..=NUM_LABELS).contains(&r) || seen[(r - 1) as usize] {
            return false;
        }
        seen[(r - 1) as usize] = true;
        n += 1;
    }
    n == NUM_LABELS as usize
}

/// A categorical task: the rank given to one configuration for one item.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RankingTask {
    pub page_id: String,
    pub item: SurveyItem,
    pub config_id: ConfigId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSkill {
    pub participant_id: String,
    pub skill: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationMethod {
    #[serde(rename = "mmsr")]
    Mmsr,
    #[serde(rename = "mmsr_vote")]
    MmsrPlusVote,
    #[serde(rename = "vote")]
    MajorityVote,
}

/// An aggregated rank. `page_id` is `None` for per-noun labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub page_id: Option<String>,
    pub noun_id: String,
    pub item: SurveyItem,
    pub config_id: ConfigId,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub method: AggregationMethod,
    pub labels: Vec<AggregatedLabel>,
    pub skills: Vec<WorkerSkill>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("need at least 4 nouns for quartiles, got {0}")]
    TooFewNouns(usize),
    #[error("insufficient overlap between participants; disconnected: {disconnected:?}")]
    InsufficientOverlap { disconnected: Vec<String> },
    #[error(
        "invalid response from {participant} on {page_id}/{item}: ranks are not a permutation"
    )]
    InvalidResponse {
        participant: String,
        page_id: String,
        item: SurveyItem,
    },
    #[error("{participant} answered {page_id}/{item} more than once")]
    DuplicateResponse {
        participant: String,
        page_id: String,
        item: SurveyItem,
    },
    #[error("page {page_id} is attributed to both {first} and {second}")]
    InconsistentPage {
        page_id: String,
        first: String,
        second: String,
    },
    #[error("no aggregated labels match the selection")]
    EmptySelection,
    #[error("mean rank {0} outside [1, 4]")]
    OutOfDomain(f64),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("judge reply unreadable after {attempts} attempts: {reply:?}")]
    JudgeUnparseable { attempts: u32, reply: String },
    #[error("judge request failed: {0}")]
    Judge(#[from] crate::backend::BackendError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl EvalError {
    pub fn is_transport(&self) -> bool {
        matches!(self, EvalError::Judge(e) if e.is_transport())
    }
}
