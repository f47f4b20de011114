//! Survey pages, participant schedules and the ranking service.
//!
//! A page shows one noun's base prompt and one image per configuration in a
//! seeded slot order `A`–`D`. Which configuration sits behind which slot is
//! known only to the server.

mod server;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, ArtifactError, PAGE_SCHEMA};
use crate::corpus::{display_name, BasePrompt, Country, CultureNoun};
use crate::evaluation::{SurveyItem, SurveyResponse};
use crate::generation::{EntryStatus, ManifestEntry};
use crate::refinement::ConfigId;

pub use server::{
    read_responses, router, serve, Assignment, Registration, ResponseSubmission, ServiceConfig,
    StoredResponse, SurveyService, ASSIGNMENTS_FILE, RESPONSES_FILE,
};

pub const DEFAULT_PAGES_PER_PARTICIPANT: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    A,
    B,
    C,
    D,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::A, Slot::B, Slot::C, Slot::D];
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Slot::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .ok_or_else(|| format!("unknown slot {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageSlot {
    pub slot: Slot,
    pub config_id: ConfigId,
    /// Image path relative to the generation output directory.
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyPage {
    pub page_id: String,
    pub noun_id: String,
    pub country: Country,
    pub prompt_id: String,
    pub base_prompt: String,
    pub slots: Vec<PageSlot>,
}

impl SurveyPage {
    pub fn config_at(&self, slot: Slot) -> Option<ConfigId> {
        self.slots
            .iter()
            .find(|s| s.slot == slot)
            .map(|s| s.config_id)
    }

    pub fn image_id(&self, slot: Slot) -> String {
        format!("{}-{slot}", self.page_id)
    }

    /// Translates slot ranks into configuration ranks.
    pub fn to_response(
        &self,
        participant: &str,
        item: SurveyItem,
        ranks: &BTreeMap<Slot, u8>,
    ) -> SurveyResponse {
        SurveyResponse {
            participant_id: participant.to_string(),
            page_id: self.page_id.clone(),
            noun_id: self.noun_id.clone(),
            item,
            ranks: ranks
                .iter()
                .filter_map(|(s, r)| self.config_at(*s).map(|c| (c, *r)))
                .collect(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SurveyError {
    #[error("no image for noun {noun} under configuration {config}")]
    MissingConfigImage { noun: String, config: ConfigId },
    #[error("base prompt {0} not found")]
    MissingPrompt(String),
    #[error("noun {0} not in registry")]
    UnknownNoun(String),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

fn sub_seed(seed: u64, label: &str) -> u64 {
    let d = artifact::sha256_hex(format!("{seed}\u{0}{label}").as_bytes());
    u64::from_str_radix(&d[..16], 16).expect("hex digest")
}

/// One page per noun that has images in the manifest, in registry order.
///
/// For each noun a base prompt is drawn from those in the manifest, then one
/// successful image per configuration, then a slot order. All draws come from
/// a stream seeded by `(seed, noun_id)`.
pub fn build_survey(
    manifest: &[ManifestEntry],
    prompts: &[BasePrompt],
    nouns: &[CultureNoun],
    seed: u64,
) -> Result<Vec<SurveyPage>, SurveyError> {
    let prompt_text: HashMap<&str, &str> = prompts
        .iter()
        .map(|p| (p.prompt_id.as_str(), p.text.as_str()))
        .collect();
    let mut by_noun: BTreeMap<&str, BTreeMap<&str, Vec<&ManifestEntry>>> = BTreeMap::new();
    for e in manifest {
        by_noun
            .entry(e.noun_id.as_str())
            .or_default()
            .entry(e.prompt_id.as_str())
            .or_default()
            .push(e);
    }
    for id in by_noun.keys() {
        if !nouns.iter().any(|n| n.id == *id) {
            return Err(SurveyError::UnknownNoun(id.to_string()));
        }
    }
    let mut pages = Vec::new();
    for noun in nouns {
        let Some(by_prompt) = by_noun.get(noun.id.as_str()) else {
            continue;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &noun.id));
        let candidates: Vec<&str> = by_prompt.keys().copied().collect();
        let prompt_id = *candidates.choose(&mut rng).expect("non-empty");
        let entries = &by_prompt[prompt_id];
        let mut slots_configs = Vec::new();
        for config in ConfigId::ALL {
            let mut ok: Vec<&&ManifestEntry> = entries
                .iter()
                .filter(|e| {
                    e.config_id == config && e.status == EntryStatus::Ok && e.path.is_some()
                })
                .collect();
            ok.sort_by_key(|e| e.index);
            let pick = ok
                .choose(&mut rng)
                .ok_or_else(|| SurveyError::MissingConfigImage {
                    noun: noun.id.clone(),
                    config,
                })?;
            slots_configs.push((config, pick.path.clone().expect("checked")));
        }
        slots_configs.shuffle(&mut rng);
        let base = prompt_text
            .get(prompt_id)
            .ok_or_else(|| SurveyError::MissingPrompt(prompt_id.to_string()))?;
        pages.push(SurveyPage {
            page_id: format!("pg-{}", noun.id),
            noun_id: noun.id.clone(),
            country: noun.country,
            prompt_id: prompt_id.to_string(),
            base_prompt: base.to_string(),
            slots: Slot::ALL
                .into_iter()
                .zip(slots_configs)
                .map(|(slot, (config_id, image))| PageSlot {
                    slot,
                    config_id,
                    image,
                })
                .collect(),
        });
    }
    Ok(pages)
}

pub fn write_pages(path: &Path, pages: &[SurveyPage]) -> Result<(), ArtifactError> {
    artifact::write_jsonl(path, PAGE_SCHEMA, pages)
}

pub fn read_pages(path: &Path) -> Result<Vec<SurveyPage>, ArtifactError> {
    artifact::read_jsonl(path, PAGE_SCHEMA)
}

/// Deals page schedules to the participants of one country.
///
/// Pages are drawn without replacement from a seeded shuffle of the
/// country's pages; when the deck runs out it is reshuffled. A participant
/// never gets the same page twice, so schedules are capped at the number of
/// pages available.
#[derive(Debug, Clone)]
pub struct PageDealer {
    pool: Vec<String>,
    deck: Vec<String>,
    rng: ChaCha8Rng,
}

impl PageDealer {
    pub fn new(pages: &[SurveyPage], country: Country, seed: u64) -> Self {
        let pool: Vec<String> = pages
            .iter()
            .filter(|p| p.country == country)
            .map(|p| p.page_id.clone())
            .collect();
        PageDealer {
            pool,
            deck: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, country.code())),
        }
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    pub fn deal(&mut self, n: usize) -> Vec<String> {
        let target = n.min(self.pool.len());
        let mut out: Vec<String> = Vec::with_capacity(target);
        let mut deferred = Vec::new();
        while out.len() < target {
            if self.deck.is_empty() {
                self.deck = self.pool.clone();
                self.deck.shuffle(&mut self.rng);
            }
            let p = self.deck.pop().expect("refilled");
            if out.contains(&p) {
                deferred.push(p);
            } else {
                out.push(p);
            }
        }
        self.deck.extend(deferred.into_iter().rev());
        out
    }
}

/// Title and instruction text of one survey item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemDefinition {
    pub item: SurveyItem,
    pub title: String,
    pub text: String,
}

pub fn item_title(item: SurveyItem) -> &'static str {
    match item {
        SurveyItem::CulturalRepresentation => "Cultural Representation",
        SurveyItem::KeywordNaturalness => "The naturalness of the keyword",
        SurveyItem::Offensiveness => "Offensiveness",
        SurveyItem::DescriptionAlignment => "Description and Image Alignment",
    }
}

/// Instruction text with `[country]`, `[keyword]` and `[prompt]` placeholders.
pub fn item_template(item: SurveyItem) -> &'static str {
    match item {
        SurveyItem::CulturalRepresentation => {
            "Rank the images from 1 for the best representation of [country] culture to 4 for the worst cultural \
             representation. Please ignore image artifacts (such as distorted faces, hands, or glitches) when \
             considering Cultural Representation. (1=most representative, 4=least representative)"
        }
        SurveyItem::KeywordNaturalness => {
            "Keyword: [keyword], Rank the images from 1 for the most natural-looking to 4 for the least \
             natural-looking. Please ignore image artifacts (such as distorted faces, hands, or glitches) when \
             considering The naturalness of the keyword. (1=most natural, 4=least natural)"
        }
        SurveyItem::Offensiveness => {
            "Rank the images by their offensiveness to you personally, numbering from 1 as the least offensive to \
             4 for the most offensive. Please ignore image artifacts (such as distorted faces, hands, or glitches) \
             when considering Offensiveness. (1=least offensive, 4=most offensive)"
        }
        SurveyItem::DescriptionAlignment => {
            "Image Description: [prompt], Rank the accuracy of the match between the image and its description. \
             Number each image from 1 for the image best described by the description to 4 for the worst match \
             between image and description. (1=best described, 4=worst described)"
        }
    }
}

pub fn item_definitions(country: Country, keyword: &str, prompt: &str) -> Vec<ItemDefinition> {
    SurveyItem::ALL
        .into_iter()
        .map(|item| ItemDefinition {
            item,
            title: item_title(item).to_string(),
            text: item_template(item)
                .replace("[country]", country.name())
                .replace("[keyword]", keyword)
                .replace("[prompt]", prompt),
        })
        .collect()
}

/// Display name for survey text, falling back to the stored name.
pub(crate) fn keyword(noun: &CultureNoun) -> String {
    display_name(noun)
        .map(str::to_string)
        .unwrap_or_else(|_| noun.name.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Category, NounForm};

    fn noun(id: &str, country: Country) -> CultureNoun {
        CultureNoun::new(
            id,
            id,
            country,
            Category::FoodDrink,
            NounForm::Transliteration,
        )
    }

    fn entry(noun: &str, prompt: &str, config: ConfigId, index: u32) -> ManifestEntry {
        ManifestEntry {
            prompt_id: prompt.into(),
            noun_id: noun.into(),
            config_id: config,
            index,
            seed: 0,
            path: Some(format!("images/{prompt}__{config}__{index}.png")),
            digest: Some("d".into()),
            status: EntryStatus::Ok,
            backend: "stub".into(),
            error: None,
        }
    }

    fn fixture() -> (Vec<ManifestEntry>, Vec<BasePrompt>, Vec<CultureNoun>) {
        let nouns = vec![
            noun("kr_a", Country::KR),
            noun("kr_b", Country::KR),
            noun("de_c", Country::DE),
        ];
        let mut manifest = Vec::new();
        let mut prompts = Vec::new();
        for n in &nouns {
            for t in 1..=2 {
                let pid = format!("{}-t0{t}", n.id);
                prompts.push(BasePrompt {
                    prompt_id: pid.clone(),
                    noun_id: n.id.clone(),
                    template_id: t,
                    text: format!("A photo of {}", n.name),
                });
                for c in ConfigId::ALL {
                    for i in 0..2 {
                        manifest.push(entry(&n.id, &pid, c, i));
                    }
                }
            }
        }
        (manifest, prompts, nouns)
    }

    #[test]
    fn pages_have_four_distinct_configs() {
        let (m, p, n) = fixture();
        let pages = build_survey(&m, &p, &n, 7).unwrap();
        assert_eq!(pages.len(), 3);
        for page in &pages {
            assert_eq!(page.slots.len(), 4);
            let mut configs: Vec<ConfigId> = page.slots.iter().map(|s| s.config_id).collect();
            configs.sort();
            assert_eq!(configs, ConfigId::ALL);
            assert!(page.slots.iter().all(|s| s.image.contains(&page.prompt_id)));
        }
        assert_eq!(pages, build_survey(&m, &p, &n, 7).unwrap());
    }

    #[test]
    fn slot_orders_vary_with_seed() {
        let (m, p, n) = fixture();
        let orders: std::collections::HashSet<Vec<ConfigId>> = (0..20)
            .flat_map(|s| build_survey(&m, &p, &n, s).unwrap())
            .map(|pg| pg.slots.iter().map(|s| s.config_id).collect())
            .collect();
        assert!(orders.len() > 5);
    }

    #[test]
    fn missing_config_image() {
        let (m, p, n) = fixture();
        let m: Vec<_> = m
            .into_iter()
            .filter(|e| e.config_id != ConfigId::CTrip3)
            .collect();
        assert!(matches!(
            build_survey(&m, &p, &n, 1),
            Err(SurveyError::MissingConfigImage {
                config: ConfigId::CTrip3,
                ..
            })
        ));
    }

    #[test]
    fn dealer_without_repeats_then_reshuffles() {
        let pages: Vec<SurveyPage> = (0..10)
            .map(|i| SurveyPage {
                page_id: format!("pg-{i}"),
                noun_id: format!("n{i}"),
                country: Country::JP,
                prompt_id: String::new(),
                base_prompt: String::new(),
                slots: vec![],
            })
            .collect();
        let mut d = PageDealer::new(&pages, Country::JP, 3);
        let a = d.deal(4);
        let b = d.deal(4);
        let mut first8: Vec<_> = a.iter().chain(&b).cloned().collect();
        first8.sort();
        first8.dedup();
        assert_eq!(first8.len(), 8);
        for _ in 0..20 {
            let s = d.deal(7);
            let mut u = s.clone();
            u.sort();
            u.dedup();
            assert_eq!(u.len(), 7);
        }
        assert_eq!(d.deal(15).len(), 10);
        assert!(PageDealer::new(&pages, Country::US, 3).deal(15).is_empty());
    }

    #[test]
    fn item_texts_substituted() {
        let defs = item_definitions(Country::KR, "Hangari", "A photo of Hangari");
        assert!(defs[0]
            .text
            .contains("representation of South Korea culture"));
        assert!(defs[0]
            .text
            .ends_with("(1=most representative, 4=least representative)"));
        assert!(defs[1].text.starts_with("Keyword: Hangari, Rank"));
        assert!(defs[2]
            .text
            .ends_with("(1=least offensive, 4=most offensive)"));
        assert!(defs[3]
            .text
            .starts_with("Image Description: A photo of Hangari, Rank"));
        assert!(defs.iter().all(|d| !d.text.contains('[')));
    }
}
