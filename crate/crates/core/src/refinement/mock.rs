use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::Criterion;
use crate::backend::{BackendError, CompletionBackend, Step};

fn digest_u64(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn line_value<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.trim().strip_prefix(label))
        .map(str::trim)
        .filter(|v| !v.is_empty())
}

fn quoted_noun(prompt: &str) -> &str {
    prompt
        .split('"')
        .nth(1)
        .filter(|s| !s.is_empty() && s.len() < 80)
        .unwrap_or("the culture noun")
}

const DETAILS: [&str; 10] = [
    "a traditional item with deep roots in local history",
    "used by families during festivals and daily life",
    "shaped with smooth curves and a rounded body",
    "colored in warm earthy browns and deep reds",
    "similar in role to a well-known ceramic jar",
    "made by skilled artisans using inherited techniques",
    "decorated with simple patterns near the rim",
    "often placed outdoors in orderly rows",
    "a symbol of care, patience and seasonal rhythm",
    "comparable in size to a large wine barrel",
];

/// Offline completion model that answers every step deterministically from
/// the request text alone, so identical requests always get identical
/// replies.
///
/// Refined prompts grow by one descriptive clause per iteration and scores
/// rise with prompt length, so loops usually pass within a few iterations.
#[derive(Debug, Clone)]
pub struct MockCompletion {
    label: String,
}

impl MockCompletion {
    pub fn new() -> Self {
        MockCompletion {
            label: "mock-completion".into(),
        }
    }

    fn refine(&self, prompt: &str) -> String {
        let noun = quoted_noun(prompt);
        let anchor = line_value(prompt, "Previous refined prompt:")
            .or_else(|| line_value(prompt, "Base prompt:"))
            .map(|s| s.trim_end_matches('.').to_string())
            .unwrap_or_else(|| format!("An image of {noun}"));
        let pick = (digest_u64(&[prompt]) % DETAILS.len() as u64) as usize;
        format!("{anchor}, {noun} being {}.", DETAILS[pick])
    }

    fn score(&self, prompt: &str) -> String {
        let mut active: Vec<Criterion> = Criterion::ALL
            .into_iter()
            .filter(|c| prompt.contains(&format!("- {} (", c.code())))
            .collect();
        if active.is_empty() {
            active = Criterion::ALL.to_vec();
        }
        let text = line_value(prompt, "Prompt:").unwrap_or(prompt);
        let words = text.split_whitespace().count() as u64;
        active
            .iter()
            .map(|c| {
                let jitter = digest_u64(&[c.code(), text]) % 3;
                format!("{}: {}", c.code(), (4 + words / 8 + jitter).min(10))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn feedback(&self, prompt: &str) -> String {
        let lowest = prompt
            .lines()
            .filter_map(|l| {
                let (k, v) = l.split_once(':')?;
                let c = k.trim().parse::<Criterion>().ok()?;
                Some((v.trim().parse::<u32>().ok()?, c))
            })
            .min();
        match lowest {
            Some((v, c)) => format!(
                "{} scored {v}. Add more concrete detail addressing {} while keeping the scene.",
                c.title(),
                c.description().to_lowercase()
            ),
            None => "Add more concrete cultural and visual detail.".into(),
        }
    }
}

impl Default for MockCompletion {
    fn default() -> Self {
        Self::new()
    }
}

impl CompletionBackend for MockCompletion {
    fn complete(&self, step: Step, prompt: &str) -> Result<String, BackendError> {
        Ok(match step {
            Step::Refine => self.refine(prompt),
            Step::Score => self.score(prompt),
            Step::Feedback => self.feedback(prompt),
        })
    }

    fn model_label(&self) -> &str {
        &self.label
    }
}

#[derive(Debug, Default)]
struct ScriptState {
    calls: HashMap<Step, usize>,
}

/// Backend whose scoring replies follow a fixed list of totals.
///
/// The n-th scoring call reports `totals[n]` (the last entry repeats), spread
/// as evenly as possible over the active criteria. Refine and feedback replies
/// are numbered placeholders. A fresh instance always replays the same
/// sequence.
#[derive(Debug)]
pub struct ScriptedBackend {
    totals: Vec<u32>,
    criteria: Vec<Criterion>,
    unparseable_scores: usize,
    fail: Option<(Step, usize)>,
    state: Mutex<ScriptState>,
}

impl ScriptedBackend {
    pub fn new(totals: Vec<u32>, criteria: &[Criterion]) -> Self {
        assert!(!totals.is_empty(), "script needs at least one total");
        for t in &totals {
            assert!(
                *t as usize <= 10 * criteria.len(),
                "total {t} not reachable"
            );
        }
        ScriptedBackend {
            totals,
            criteria: criteria.to_vec(),
            unparseable_scores: 0,
            fail: None,
            state: Mutex::new(ScriptState::default()),
        }
    }

    /// The first `n` scoring replies are free text without a score block.
    pub fn with_unparseable_scores(mut self, n: usize) -> Self {
        self.unparseable_scores = n;
        self
    }

    /// The `call`-th request (0-based) for `step` fails with a transport error.
    pub fn failing_at(mut self, step: Step, call: usize) -> Self {
        self.fail = Some((step, call));
        self
    }

    pub fn calls(&self, step: Step) -> usize {
        self.state
            .lock()
            .unwrap()
            .calls
            .get(&step)
            .copied()
            .unwrap_or(0)
    }

    fn spread(&self, total: u32) -> String {
        let n = self.criteria.len() as u32;
        self.criteria
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let v = total / n + u32::from((i as u32) < total % n);
                format!("{}: {v}", c.code())
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, step: Step, _prompt: &str) -> Result<String, BackendError> {
        let n = {
            let mut st = self.state.lock().unwrap();
            let slot = st.calls.entry(step).or_insert(0);
            *slot += 1;
            *slot - 1
        };
        if self.fail == Some((step, n)) {
            return Err(BackendError::Transport(format!(
                "scripted failure on {step} call {n}"
            )));
        }
        Ok(match step {
            Step::Refine => format!("refined prompt {n}"),
            Step::Feedback => format!("feedback {n}"),
            Step::Score if n < self.unparseable_scores => {
                "This prompt looks quite good overall.".into()
            }
            Step::Score => {
                let k = n - self.unparseable_scores;
                let total = *self
                    .totals
                    .get(k)
                    .unwrap_or_else(|| self.totals.last().unwrap());
                self.spread(total)
            }
        })
    }

    fn model_label(&self) -> &str {
        "scripted"
    }
}

/// Wraps a backend and counts requests per step.
#[derive(Debug)]
pub struct CountingBackend<B> {
    inner: B,
    refine: AtomicUsize,
    score: AtomicUsize,
    feedback: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            refine: AtomicUsize::new(0),
            score: AtomicUsize::new(0),
            feedback: AtomicUsize::new(0),
        }
    }

    pub fn count(&self, step: Step) -> usize {
        match step {
            Step::Refine => &self.refine,
            Step::Score => &self.score,
            Step::Feedback => &self.feedback,
        }
        .load(Ordering::SeqCst)
    }

    pub fn total(&self) -> usize {
        self.count(Step::Refine) + self.count(Step::Score) + self.count(Step::Feedback)
    }
}

impl<B: CompletionBackend> CompletionBackend for CountingBackend<B> {
    fn complete(&self, step: Step, prompt: &str) -> Result<String, BackendError> {
        match step {
            Step::Refine => &self.refine,
            Step::Score => &self.score,
            Step::Feedback => &self.feedback,
        }
        .fetch_add(1, Ordering::SeqCst);
        self.inner.complete(step, prompt)
    }

    fn model_label(&self) -> &str {
        self.inner.model_label()
    }
}
