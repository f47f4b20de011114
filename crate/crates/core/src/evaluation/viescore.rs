use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::artifact::sha256_hex;
use crate::backend::{BackendError, JudgeBackend};

pub const DEFAULT_JUDGE_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VieScore {
    pub sc: f64,
    pub pq: f64,
    pub overall: f64,
}

impl VieScore {
    pub fn new(sc: f64, pq: f64) -> Self {
        VieScore {
            sc,
            pq,
            overall: (sc * pq).sqrt(),
        }
    }
}

const SC_TEMPLATE: &str = "You are a professional digital artist. You will evaluate how well an AI-generated \
image follows the text prompt it was made from.

Rate from 0 to 10: 0 means the image does not follow the prompt at all, 10 means it follows the prompt \
perfectly.

Text prompt: {prompt}

Reply only with JSON of the form {\"score\": [n], \"reasoning\": \"...\"}.";

const PQ_TEMPLATE: &str = "You are a professional digital artist. You will evaluate the perceptual quality of \
an AI-generated image, regardless of what it depicts.

Give two ratings from 0 to 10. The first is naturalness: 0 means the scene looks unnatural (wrong sense of \
distance, shadows or lighting), 10 means it looks natural. The second is artifacts: 0 means heavy distortion, \
noise, blur or malformed parts, 10 means no artifacts.

Reply only with JSON of the form {\"score\": [naturalness, artifacts], \"reasoning\": \"...\"}.";

const REASK: &str = "\n\nYour previous reply could not be parsed. Reply with the JSON object only.";

pub fn render_sc_prompt(prompt_text: &str) -> String {
    SC_TEMPLATE.replace("{prompt}", prompt_text)
}

pub fn render_pq_prompt() -> String {
    PQ_TEMPLATE.to_string()
}

#[derive(Deserialize)]
struct JudgeReply {
    score: Vec<f64>,
}

/// Reads `{"score": [..]}` out of a reply (surrounding prose is ignored) and
/// checks that it holds `expected` values in `[0, 10]`.
pub fn parse_judge_scores(reply: &str, expected: usize) -> Option<Vec<f64>> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    let parsed: JudgeReply = serde_json::from_str(&reply[start..=end]).ok()?;
    let ok =
        parsed.score.len() == expected && parsed.score.iter().all(|s| (0.0..=10.0).contains(s));
    ok.then_some(parsed.score)
}

fn ask(
    judge: &dyn JudgeBackend,
    prompt: &str,
    image: &[u8],
    expected: usize,
    retries: u32,
) -> Result<f64, EvalError> {
    let mut request = prompt.to_string();
    let mut last = String::new();
    for attempt in 0..=retries {
        if attempt == 1 {
            request.push_str(REASK);
        }
        last = judge.judge(&request, image)?;
        if let Some(scores) = parse_judge_scores(&last, expected) {
            return Ok(scores.into_iter().fold(f64::INFINITY, f64::min));
        }
    }
    Err(EvalError::JudgeUnparseable {
        attempts: retries + 1,
        reply: last,
    })
}

/// Semantic consistency and perceptual quality from a multimodal judge; each
/// is the minimum of its sub-scores and `overall = sqrt(sc * pq)`.
pub fn vie_score(
    judge: &dyn JudgeBackend,
    prompt_text: &str,
    image_png: &[u8],
    retries: u32,
) -> Result<VieScore, EvalError> {
    let sc = ask(judge, &render_sc_prompt(prompt_text), image_png, 1, retries)?;
    let pq = ask(judge, &render_pq_prompt(), image_png, 2, retries)?;
    Ok(VieScore::new(sc, pq))
}

/// Offline judge: scores derived from the image digest, so identical images
/// always get identical scores.
#[derive(Debug, Clone, Default)]
pub struct StubJudge;

impl JudgeBackend for StubJudge {
    fn judge(&self, prompt: &str, image_png: &[u8]) -> Result<String, BackendError> {
        let d = sha256_hex(image_png);
        let byte = |i: usize| u8::from_str_radix(&d[2 * i..2 * i + 2], 16).unwrap_or(0);
        let score = |i: usize| 4 + u32::from(byte(i)) % 7;
        Ok(if prompt.contains("naturalness") {
            format!(
                "{{\"score\": [{}, {}], \"reasoning\": \"stub\"}}",
                score(1),
                score(2)
            )
        } else {
            format!("{{\"score\": [{}], \"reasoning\": \"stub\"}}", score(0))
        })
    }

    fn model_label(&self) -> &str {
        "stub-judge"
    }
}
