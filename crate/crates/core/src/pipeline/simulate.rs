use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Backends, Pipeline, PipelineError, RunConfig};
use crate::artifact::{self, RESPONSE_SCHEMA, TRACE_SCHEMA};
use crate::corpus::{Country, CultureNoun};
use crate::evaluation::SurveyItem;
use crate::generation::{read_manifest, EntryStatus};
use crate::refinement::{ConfigId, RefinementTrace};
use crate::survey::{PageDealer, Slot, StoredResponse, SurveyPage};

/// Timestamp used for every record a dry run writes.
pub const DRY_RUN_CLOCK: i64 = 1_735_689_600;

fn dry_clock() -> DateTime<Utc> {
    DateTime::from_timestamp(DRY_RUN_CLOCK, 0).expect("valid timestamp")
}

/// Mean planted quality per configuration; higher ranks better.
fn planted_quality(c: ConfigId) -> f64 {
    match c {
        ConfigId::Base => 0.0,
        ConfigId::CTrip0 => 0.3,
        ConfigId::CTrip3 => 0.6,
        ConfigId::CTrip5 => 0.8,
    }
}

/// Simulated participants answering every item of their dealt pages.
///
/// Each (page, item) has a planted ranking. A participant with accuracy `p`
/// (drawn from U[0.55, 0.95]) submits it with probability `p` and a uniformly
/// random ranking otherwise.
pub fn simulate_responses(
    pages: &[SurveyPage],
    participants_per_country: usize,
    pages_per_participant: usize,
    seed: u64,
    received_at: DateTime<Utc>,
) -> Vec<StoredResponse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth: HashMap<(&str, SurveyItem), BTreeMap<Slot, u8>> = HashMap::new();
    for page in pages {
        for item in SurveyItem::ALL {
            let mut scored: Vec<(f64, Slot)> = page
                .slots
                .iter()
                .map(|s| {
                    (
                        planted_quality(s.config_id) + rng.random_range(-0.5..0.5),
                        s.slot,
                    )
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            let ranks = scored
                .iter()
                .enumerate()
                .map(|(i, (_, s))| (*s, i as u8 + 1))
                .collect();
            truth.insert((page.page_id.as_str(), item), ranks);
        }
    }
    let by_id: HashMap<&str, &SurveyPage> = pages.iter().map(|p| (p.page_id.as_str(), p)).collect();
    let mut out = Vec::new();
    for country in Country::ALL {
        let mut dealer = PageDealer::new(pages, country, seed);
        if dealer.pool_size() == 0 {
            continue;
        }
        for k in 0..participants_per_country {
            let token = format!("sim-{}-{k:02}", country.code().to_lowercase());
            let accuracy: f64 = rng.random_range(0.55..0.95);
            for page_id in dealer.deal(pages_per_participant) {
                let page = by_id[page_id.as_str()];
                for item in SurveyItem::ALL {
                    let slot_ranks = if rng.random_bool(accuracy) {
                        truth[&(page.page_id.as_str(), item)].clone()
                    } else {
                        let mut r = [1u8, 2, 3, 4];
                        r.shuffle(&mut rng);
                        Slot::ALL.into_iter().zip(r).collect()
                    };
                    out.push(StoredResponse {
                        response: page.to_response(&token, item, &slot_ranks),
                        slot_ranks,
                        received_at,
                    });
                }
            }
        }
    }
    out
}

const FILLER: [&str; 6] = [
    "a cat sleeping on a sofa",
    "stock photo of a city skyline at night",
    "two people walking along a beach",
    "close-up of a red sports car",
    "a bowl of fruit on a wooden table",
    "mountains reflected in a quiet lake",
];

/// A caption file in which each noun's display name appears a seeded number
/// of times, mixed with filler lines. US nouns are mentioned more often.
pub fn synthetic_captions(nouns: &[CultureNoun], seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00C0_FFEE);
    let mut lines: Vec<String> = Vec::new();
    for n in nouns {
        let bias = if n.country == Country::US { 40 } else { 0 };
        let count = bias + rng.random_range(0..30);
        for i in 0..count {
            lines.push(format!("photo {i} of {} in everyday use", n.name));
        }
    }
    for i in 0..lines.len().max(20) {
        lines.push(FILLER[i % FILLER.len()].to_string());
    }
    lines.shuffle(&mut rng);
    let mut text = lines.join("\n");
    text.push('\n');
    text
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DryRunSummary {
    pub base_prompts: usize,
    pub final_prompts: usize,
    pub traces: usize,
    pub images: usize,
    pub pages: usize,
    pub responses: usize,
    pub report_files: Vec<PathBuf>,
}

/// The whole pipeline on offline backends: 2 countries, 3 nouns each, 2
/// templates, all four configurations, simulated survey answers. A fixed
/// clock makes every artifact reproducible byte for byte.
pub fn dry_run(out_dir: &Path) -> Result<DryRunSummary, PipelineError> {
    let mut cfg = RunConfig {
        seed: 2024,
        countries: vec![Country::KR, Country::DE],
        nouns_per_country: Some(3),
        templates_limit: Some(2),
        ..RunConfig::default()
    };
    cfg.paths.out_dir = out_dir.to_path_buf();
    let p = Pipeline::with_backends(cfg, Backends::mock())?.with_clock(dry_clock);
    let layout = p.layout().clone();
    let cfg = p.config().clone();

    let base_prompts = p.expand()?;
    let r = p.retrieve()?;
    if r.failed > 0 {
        return Err(PipelineError::Incomplete {
            stage: "retrieve",
            failed: r.failed,
        });
    }
    let refined = p.refine(&ConfigId::ALL)?;
    if refined.failed > 0 {
        return Err(PipelineError::Incomplete {
            stage: "refine",
            failed: refined.failed,
        });
    }
    let batch = p.generate()?;
    if batch.failed > 0 {
        return Err(PipelineError::Incomplete {
            stage: "generate",
            failed: batch.failed,
        });
    }
    let pages = p.build_survey()?;
    let responses = simulate_responses(
        &pages,
        cfg.survey.simulated_participants,
        cfg.survey.pages_per_participant,
        cfg.seed,
        dry_clock(),
    );
    artifact::write_jsonl(&layout.responses(), RESPONSE_SCHEMA, &responses)?;
    let captions = layout.root.join("captions.txt");
    artifact::write_atomic(
        &captions,
        synthetic_captions(&p.selected_nouns(), cfg.seed).as_bytes(),
    )?;
    p.analyze(Some(&captions))?;
    p.aggregate()?;
    let report_files = p.report()?;

    let finals = crate::generation::read_final_prompts(&layout.final_prompts())?;
    let traces: Vec<RefinementTrace> = artifact::read_jsonl(&layout.traces(), TRACE_SCHEMA)?;
    let images = read_manifest(&layout.root)?
        .iter()
        .filter(|e| e.status == EntryStatus::Ok)
        .count();
    Ok(DryRunSummary {
        base_prompts,
        final_prompts: finals.len(),
        traces: traces.len(),
        images,
        pages: pages.len(),
        responses: responses.len(),
        report_files,
    })
}
