use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EvalError, FrequencyRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quartile {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Quartile {
    pub const ALL: [Quartile; 4] = [Quartile::Q1, Quartile::Q2, Quartile::Q3, Quartile::Q4];

    /// Q1 and Q2 hold the rarely captioned nouns.
    pub fn is_uc(self) -> bool {
        matches!(self, Quartile::Q1 | Quartile::Q2)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Quartile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuartileAssignment {
    pub noun_id: String,
    pub count: u64,
    pub group: Quartile,
    pub uc: bool,
}

/// Sorts by `(count, noun_id)` and cuts into four contiguous groups whose
/// sizes differ by at most one, the larger groups first.
pub fn assign_quartiles(freqs: &[FrequencyRecord]) -> Result<Vec<QuartileAssignment>, EvalError> {
    let n = freqs.len();
    if n < 4 {
        return Err(EvalError::TooFewNouns(n));
    }
    let mut sorted: Vec<&FrequencyRecord> = freqs.iter().collect();
    sorted.sort_by(|a, b| {
        a.count
            .cmp(&b.count)
            .then_with(|| a.noun_id.cmp(&b.noun_id))
    });
    let (q, r) = (n / 4, n % 4);
    let mut out = Vec::with_capacity(n);
    let mut it = sorted.into_iter();
    for (g, group) in Quartile::ALL.into_iter().enumerate() {
        let size = q + usize::from(g < r);
        for rec in it.by_ref().take(size) {
            out.push(QuartileAssignment {
                noun_id: rec.noun_id.clone(),
                count: rec.count,
                group,
                uc: group.is_uc(),
            });
        }
    }
    Ok(out)
}
