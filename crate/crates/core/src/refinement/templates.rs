use std::path::Path;

use super::{CriteriaScore, Criterion, Feedback, RefineError, RefinedPrompt};

const REFINE_INITIAL: &str = include_str!("../../data/prompts/refine_initial.txt");
const REFINE_FOLLOWUP: &str = include_str!("../../data/prompts/refine_followup.txt");
const SCORING: &str = include_str!("../../data/prompts/scoring.txt");
const FEEDBACK: &str = include_str!("../../data/prompts/feedback.txt");

/// Which of the two refine templates is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineTemplate {
    /// First iteration: noun, raw information, base prompt.
    Initial,
    /// Later iterations: noun, raw information, previous refined prompt, feedback.
    Followup,
}

/// The four editable step templates. Slots are written `{{NAME}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub refine_initial: String,
    pub refine_followup: String,
    pub scoring: String,
    pub feedback: String,
}

const INITIAL_SLOTS: [&str; 3] = ["K", "I", "P"];
const FOLLOWUP_SLOTS: [&str; 4] = ["K", "I", "RP", "F"];
const SCORING_SLOTS: [&str; 2] = ["RP", "criteria_block"];
const FEEDBACK_SLOTS: [&str; 2] = ["RP", "scores_block"];

impl PromptTemplates {
    pub fn shipped() -> Self {
        PromptTemplates {
            refine_initial: REFINE_INITIAL.to_string(),
            refine_followup: REFINE_FOLLOWUP.to_string(),
            scoring: SCORING.to_string(),
            feedback: FEEDBACK.to_string(),
        }
    }

    /// Reads `refine_initial.txt`, `refine_followup.txt`, `scoring.txt` and
    /// `feedback.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, RefineError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| RefineError::TemplateIo(format!("{}: {e}", dir.join(name).display())))
        };
        let t = PromptTemplates {
            refine_initial: read("refine_initial.txt")?,
            refine_followup: read("refine_followup.txt")?,
            scoring: read("scoring.txt")?,
            feedback: read("feedback.txt")?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        check_slots("refine_initial", &self.refine_initial, &INITIAL_SLOTS, true)?;
        check_slots(
            "refine_followup",
            &self.refine_followup,
            &FOLLOWUP_SLOTS,
            true,
        )?;
        check_slots("scoring", &self.scoring, &SCORING_SLOTS, false)?;
        check_slots("feedback", &self.feedback, &FEEDBACK_SLOTS, false)
    }
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::shipped()
    }
}

fn check_slots(
    template: &'static str,
    text: &str,
    slots: &[&'static str],
    ordered: bool,
) -> Result<(), RefineError> {
    let mut last = 0;
    for &slot in slots {
        let token = format!("{{{{{slot}}}}}");
        match text.find(&token) {
            Some(pos) if !ordered || pos >= last => last = pos,
            _ => return Err(RefineError::TemplateSlotMissing { template, slot }),
        }
    }
    Ok(())
}

/// Substitutes `{{name}}` tokens in one pass; inserted values are not rescanned.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out =
        String::with_capacity(template.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match values.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[start..start + 2 + end + 2]),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Builds the refine request. `previous` is absent on the first iteration and
/// carries the last refined prompt and its feedback afterwards.
pub fn render_refine_prompt(
    templates: &PromptTemplates,
    noun: &str,
    info: &str,
    base_prompt: &str,
    previous: Option<(&RefinedPrompt, &Feedback)>,
    word_cap: usize,
) -> Result<String, RefineError> {
    let which = if previous.is_some() {
        RefineTemplate::Followup
    } else {
        RefineTemplate::Initial
    };
    let (name, template, slots): (&'static str, &str, &[&'static str]) = match which {
        RefineTemplate::Initial => ("refine_initial", &templates.refine_initial, &INITIAL_SLOTS),
        RefineTemplate::Followup => (
            "refine_followup",
            &templates.refine_followup,
            &FOLLOWUP_SLOTS,
        ),
    };
    check_slots(name, template, slots, true)?;
    let missing = |slot| RefineError::TemplateSlotMissing {
        template: name,
        slot,
    };
    if noun.trim().is_empty() {
        return Err(missing("K"));
    }
    if info.trim().is_empty() {
        return Err(missing("I"));
    }
    let cap = word_cap.to_string();
    let mut text = match previous {
        None => {
            if base_prompt.trim().is_empty() {
                return Err(missing("P"));
            }
            fill(
                template,
                &[
                    ("K", noun),
                    ("I", info),
                    ("P", base_prompt),
                    ("word_cap", &cap),
                ],
            )
        }
        Some((rp, fb)) => {
            if rp.text.trim().is_empty() {
                return Err(missing("RP"));
            }
            if fb.text.trim().is_empty() {
                return Err(missing("F"));
            }
            fill(
                template,
                &[
                    ("K", noun),
                    ("I", info),
                    ("RP", &rp.text),
                    ("F", &fb.text),
                    ("word_cap", &cap),
                ],
            )
        }
    };
    if !template.contains("{{word_cap}}") {
        text.push_str(&format!("\n\nUse at most {word_cap} words."));
    }
    Ok(text)
}

fn criteria_block(criteria: &[Criterion]) -> String {
    criteria
        .iter()
        .map(|c| {
            let aspect = match c.aspect() {
                super::Aspect::CulturalContexts => "cultural contexts",
                super::Aspect::VisualDetails => "visual details",
            };
            format!(
                "- {} ({aspect}): {} Score 0 to 10.",
                c.code(),
                c.description()
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_scoring_prompt(
    templates: &PromptTemplates,
    noun: &str,
    refined: &RefinedPrompt,
    criteria: &[Criterion],
) -> Result<String, RefineError> {
    if criteria.is_empty() {
        return Err(RefineError::EmptyCriteriaSet);
    }
    check_slots("scoring", &templates.scoring, &SCORING_SLOTS, false)?;
    let block = criteria_block(criteria);
    let max_total = (10 * criteria.len()).to_string();
    Ok(fill(
        &templates.scoring,
        &[
            ("K", noun),
            ("RP", &refined.text),
            ("criteria_block", &block),
            ("max_total", &max_total),
        ],
    ))
}

pub fn render_feedback_prompt(
    templates: &PromptTemplates,
    noun: &str,
    refined: &RefinedPrompt,
    score: &CriteriaScore,
) -> Result<String, RefineError> {
    check_slots("feedback", &templates.feedback, &FEEDBACK_SLOTS, false)?;
    let mut block: Vec<String> = score
        .scores
        .iter()
        .map(|(c, v)| format!("{}: {v}", c.code()))
        .collect();
    block.push(format!(
        "Total: {} / {}",
        score.total,
        10 * score.scores.len()
    ));
    let block = block.join("\n");
    Ok(fill(
        &templates.feedback,
        &[("K", noun), ("RP", &refined.text), ("scores_block", &block)],
    ))
}
