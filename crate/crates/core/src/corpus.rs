//! Culture-noun registry, prompt templates and base-prompt expansion.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifact::{self, ArtifactError, PROMPT_SCHEMA};

/// Placeholder substituted with a noun's display name.
pub const NOUN_PLACEHOLDER: &str = "{noun}";

/// Nouns per country in a complete registry.
pub const NOUNS_PER_COUNTRY: usize = 25;

const SHIPPED_NOUNS: &str = include_str!("../data/nouns.csv");
const SHIPPED_TEMPLATES: &str = include_str!("../data/templates.csv");

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed registry at line {line}: {message}")]
    MalformedRegistry { line: usize, message: String },
    #[error("registry invariant violated{}: {message}", noun.as_ref().map(|n| format!(" ({n})")).unwrap_or_default())]
    InvariantViolation {
        noun: Option<String>,
        message: String,
    },
    #[error("noun {noun:?} is marked AdjectivePlusEnglish but does not start with a {country} adjective")]
    FormMismatch { noun: String, country: Country },
    #[error("template {template_id} has {count} `{{noun}}` placeholders, expected exactly one")]
    PlaceholderCount { template_id: u32, count: usize },
    #[error("malformed templates at line {line}: {message}")]
    MalformedTemplates { line: usize, message: String },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Country {
    IN,
    PK,
    CN,
    JP,
    KR,
    VN,
    US,
    DE,
}

impl Country {
    pub const ALL: [Country; 8] = [
        Country::IN,
        Country::PK,
        Country::CN,
        Country::JP,
        Country::KR,
        Country::VN,
        Country::US,
        Country::DE,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Country::IN => "IN",
            Country::PK => "PK",
            Country::CN => "CN",
            Country::JP => "JP",
            Country::KR => "KR",
            Country::VN => "VN",
            Country::US => "US",
            Country::DE => "DE",
        }
    }

    /// English name used in survey text.
    pub fn name(self) -> &'static str {
        match self {
            Country::IN => "India",
            Country::PK => "Pakistan",
            Country::CN => "China",
            Country::JP => "Japan",
            Country::KR => "South Korea",
            Country::VN => "Vietnam",
            Country::US => "USA",
            Country::DE => "Germany",
        }
    }

    /// Adjectival forms accepted as the prefix of an `AdjectivePlusEnglish` noun.
    pub fn adjectives(self) -> &'static [&'static str] {
        match self {
            Country::IN => &["Indian"],
            Country::PK => &["Pakistani"],
            Country::CN => &["Chinese"],
            Country::JP => &["Japanese"],
            Country::KR => &["Korean"],
            Country::VN => &["Vietnamese"],
            Country::US => &["American"],
            Country::DE => &["German", "Deutsch"],
        }
    }
}

impl fmt::Display for Country {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Country {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Country::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown country code {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Architecture,
    CityLandmark,
    Clothing,
    DanceMusic,
    VisualArts,
    FoodDrink,
    ReligionFestival,
    UtensilsTools,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Architecture,
        Category::CityLandmark,
        Category::Clothing,
        Category::DanceMusic,
        Category::VisualArts,
        Category::FoodDrink,
        Category::ReligionFestival,
        Category::UtensilsTools,
    ];

    /// Required nouns per country for this category.
    pub fn quota(self) -> usize {
        match self {
            Category::Architecture => 3,
            Category::CityLandmark => 5,
            Category::Clothing => 4,
            Category::DanceMusic => 2,
            Category::VisualArts => 1,
            Category::FoodDrink => 5,
            Category::ReligionFestival => 3,
            Category::UtensilsTools => 2,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Category::Architecture => "architecture",
            Category::CityLandmark => "city_landmark",
            Category::Clothing => "clothing",
            Category::DanceMusic => "dance_music",
            Category::VisualArts => "visual_arts",
            Category::FoodDrink => "food_drink",
            Category::ReligionFestival => "religion_festival",
            Category::UtensilsTools => "utensils_tools",
        }
    }

    fn index(self) -> usize {
        Category::ALL.iter().position(|c| *c == self).unwrap()
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.code() == s.trim())
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NounForm {
    Transliteration,
    AdjectivePlusEnglish,
}

impl FromStr for NounForm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Transliteration" => Ok(NounForm::Transliteration),
            "AdjectivePlusEnglish" => Ok(NounForm::AdjectivePlusEnglish),
            other => Err(format!("unknown form {other:?}")),
        }
    }
}

impl fmt::Display for NounForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NounForm::Transliteration => "Transliteration",
            NounForm::AdjectivePlusEnglish => "AdjectivePlusEnglish",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CultureNoun {
    pub id: String,
    pub name: String,
    pub country: Country,
    pub category: Category,
    pub form: NounForm,
}

impl CultureNoun {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        country: Country,
        category: Category,
        form: NounForm,
    ) -> Self {
        CultureNoun {
            id: id.into(),
            name: name.into(),
            country,
            category,
            form,
        }
    }
}

/// Returns the text a noun is written as inside prompts.
///
/// The registry stores the already-composed form, so this only checks that an
/// `AdjectivePlusEnglish` name really starts with the country adjective.
pub fn display_name(noun: &CultureNoun) -> Result<&str, CorpusError> {
    if noun.form == NounForm::AdjectivePlusEnglish {
        let ok = noun.country.adjectives().iter().any(|adj| {
            noun.name
                .strip_prefix(adj)
                .is_some_and(|rest| rest.starts_with(' ') && !rest.trim().is_empty())
        });
        if !ok {
            return Err(CorpusError::FormMismatch {
                noun: noun.name.clone(),
                country: noun.country,
            });
        }
    }
    Ok(&noun.name)
}

#[derive(Debug, Deserialize)]
struct NounRow {
    id: String,
    name: String,
    country: String,
    category: String,
    form: String,
}

/// A validated registry of culture nouns in load order.
#[derive(Debug, Clone, PartialEq)]
pub struct NounRegistry {
    nouns: Vec<CultureNoun>,
    category_counts: BTreeMap<Country, [usize; 8]>,
}

impl NounRegistry {
    pub fn nouns(&self) -> &[CultureNoun] {
        &self.nouns
    }

    pub fn len(&self) -> usize {
        self.nouns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CultureNoun> {
        self.nouns.iter().find(|n| n.id == id)
    }

    /// Per-country histogram in [`Category::ALL`] order.
    pub fn category_counts(&self) -> &BTreeMap<Country, [usize; 8]> {
        &self.category_counts
    }

    pub fn by_country(&self, country: Country) -> impl Iterator<Item = &CultureNoun> {
        self.nouns.iter().filter(move |n| n.country == country)
    }

    /// Takes the first `per_country` nouns (load order) of each listed country.
    pub fn select(&self, countries: &[Country], per_country: usize) -> Vec<CultureNoun> {
        countries
            .iter()
            .flat_map(|c| self.by_country(*c).take(per_country).cloned())
            .collect()
    }

    /// Canonical CSV form; loading it back yields an identical registry.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["id", "name", "country", "category", "form"])
            .unwrap();
        for n in &self.nouns {
            w.write_record([
                n.id.as_str(),
                n.name.as_str(),
                n.country.code(),
                n.category.code(),
                &n.form.to_string(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Parses registry CSV without the per-country quota checks.
///
/// Syntax, codes, duplicate ids and name forms are still validated.
pub fn parse_nouns(text: &str) -> Result<Vec<CultureNoun>, CorpusError> {
    if text.trim().is_empty() {
        return Err(CorpusError::MalformedRegistry {
            line: 1,
            message: "empty registry file".into(),
        });
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::MalformedRegistry {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected = ["id", "name", "country", "category", "form"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(CorpusError::MalformedRegistry {
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    let mut nouns = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.deserialize::<NounRow>().enumerate() {
        let line = i + 2;
        let malformed = |message: String| CorpusError::MalformedRegistry { line, message };
        let row = row.map_err(|e| malformed(e.to_string()))?;
        let country = row.country.parse::<Country>().map_err(malformed)?;
        let category = row.category.parse::<Category>().map_err(malformed)?;
        let form = row.form.parse::<NounForm>().map_err(malformed)?;
        if row.id.is_empty() || row.name.is_empty() {
            return Err(malformed("id and name must be non-empty".into()));
        }
        if !seen.insert(row.id.clone()) {
            return Err(CorpusError::InvariantViolation {
                noun: Some(row.id),
                message: format!("duplicate id at line {line}"),
            });
        }
        let noun = CultureNoun {
            id: row.id,
            name: row.name,
            country,
            category,
            form,
        };
        display_name(&noun)?;
        nouns.push(noun);
    }
    if nouns.is_empty() {
        return Err(CorpusError::MalformedRegistry {
            line: 2,
            message: "registry has no rows".into(),
        });
    }
    Ok(nouns)
}

/// Builds a registry and checks the per-country quotas: each of the eight
/// countries has 25 nouns split by [`Category::quota`].
pub fn registry_from_nouns(nouns: Vec<CultureNoun>) -> Result<NounRegistry, CorpusError> {
    let mut category_counts: BTreeMap<Country, [usize; 8]> = BTreeMap::new();
    for n in &nouns {
        category_counts.entry(n.country).or_insert([0; 8])[n.category.index()] += 1;
    }
    for country in Country::ALL {
        let counts = category_counts.get(&country).copied().unwrap_or([0; 8]);
        for cat in Category::ALL {
            let got = counts[cat.index()];
            if got != cat.quota() {
                return Err(CorpusError::InvariantViolation {
                    noun: None,
                    message: format!(
                        "{country} has {got} {} nouns, expected {}",
                        cat.code(),
                        cat.quota()
                    ),
                });
            }
        }
    }
    Ok(NounRegistry {
        nouns,
        category_counts,
    })
}

pub fn parse_noun_registry(text: &str) -> Result<NounRegistry, CorpusError> {
    registry_from_nouns(parse_nouns(text)?)
}

pub fn load_noun_registry(path: &Path) -> Result<NounRegistry, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| ArtifactError::io(path, e))?;
    parse_noun_registry(&text)
}

/// The 200-noun registry bundled with the crate.
pub fn shipped_registry() -> NounRegistry {
    parse_noun_registry(SHIPPED_NOUNS).expect("bundled registry is valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: u32,
    pub text: String,
}

pub fn validate_template(t: &PromptTemplate) -> Result<(), CorpusError> {
    let count = t.text.matches(NOUN_PLACEHOLDER).count();
    if count != 1 {
        return Err(CorpusError::PlaceholderCount {
            template_id: t.id,
            count,
        });
    }
    if t.text.replace(NOUN_PLACEHOLDER, "").trim().is_empty() {
        return Err(CorpusError::MalformedTemplates {
            line: 0,
            message: format!("template {} is only a placeholder", t.id),
        });
    }
    Ok(())
}

pub fn parse_templates(text: &str) -> Result<Vec<PromptTemplate>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let mut out: Vec<PromptTemplate> = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.deserialize::<PromptTemplate>().enumerate() {
        let line = i + 2;
        let t = row.map_err(|e| CorpusError::MalformedTemplates {
            line,
            message: e.to_string(),
        })?;
        if t.id == 0 || !seen.insert(t.id) {
            return Err(CorpusError::MalformedTemplates {
                line,
                message: format!("template id {} is zero or duplicated", t.id),
            });
        }
        validate_template(&t)?;
        out.push(t);
    }
    if out.is_empty() {
        return Err(CorpusError::MalformedTemplates {
            line: 1,
            message: "no templates".into(),
        });
    }
    Ok(out)
}

pub fn load_templates(path: &Path) -> Result<Vec<PromptTemplate>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| ArtifactError::io(path, e))?;
    parse_templates(&text)
}

/// The 50 templates bundled with the crate.
pub fn shipped_templates() -> Vec<PromptTemplate> {
    parse_templates(SHIPPED_TEMPLATES).expect("bundled templates are valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasePrompt {
    pub prompt_id: String,
    pub noun_id: String,
    pub template_id: u32,
    pub text: String,
}

pub fn prompt_id(noun_id: &str, template_id: u32) -> String {
    format!("{noun_id}-t{template_id:02}")
}

/// Cross product of nouns and templates in (noun, template) order.
pub fn expand_prompts(
    nouns: &[CultureNoun],
    templates: &[PromptTemplate],
) -> Result<Vec<BasePrompt>, CorpusError> {
    for t in templates {
        validate_template(t)?;
    }
    let mut out = Vec::with_capacity(nouns.len() * templates.len());
    for noun in nouns {
        let name = display_name(noun)?;
        for t in templates {
            out.push(BasePrompt {
                prompt_id: prompt_id(&noun.id, t.id),
                noun_id: noun.id.clone(),
                template_id: t.id,
                text: t.text.replacen(NOUN_PLACEHOLDER, name, 1),
            });
        }
    }
    Ok(out)
}

pub fn write_prompts(path: &Path, prompts: &[BasePrompt]) -> Result<(), CorpusError> {
    Ok(artifact::write_jsonl(path, PROMPT_SCHEMA, prompts)?)
}

pub fn read_prompts(path: &Path) -> Result<Vec<BasePrompt>, CorpusError> {
    Ok(artifact::read_jsonl(path, PROMPT_SCHEMA)?)
}
