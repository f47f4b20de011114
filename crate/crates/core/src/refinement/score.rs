use std::collections::BTreeMap;

use super::{CriteriaScore, Criterion};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoreError {
    #[error("score block is missing {0}")]
    MissingCriterion(Criterion),
    #[error("{criterion} score {value} is outside 0..=10")]
    OutOfRange { criterion: Criterion, value: i64 },
    #[error("no score block found")]
    Unparseable,
}

/// Splits `"**Visual Elements**: 7/10"` into its label and leading integer.
fn parse_line(line: &str) -> Option<(Criterion, Option<i64>)> {
    let line = line.replace("**", "");
    let line = line.trim().trim_start_matches(['-', '*', '#', '>', ' ']);
    let (label, value) = line.split_once([':', '='])?;
    let criterion = label.trim().parse::<Criterion>().ok()?;
    let value = value.trim();
    let digits_end = value
        .char_indices()
        .find(|&(i, c)| !(c.is_ascii_digit() || (i == 0 && (c == '-' || c == '+'))))
        .map(|(i, _)| i)
        .unwrap_or(value.len());
    Some((criterion, value[..digits_end].parse::<i64>().ok()))
}

/// Reads one `<Criterion>: <integer>` line per active criterion.
///
/// Lines for inactive criteria and any stated total are ignored; the total is
/// recomputed from the parts.
pub fn parse_score(completion: &str, criteria: &[Criterion]) -> Result<CriteriaScore, ScoreError> {
    let mut found: BTreeMap<Criterion, Option<i64>> = BTreeMap::new();
    for line in completion.lines() {
        if let Some((c, v)) = parse_line(line) {
            let slot = found.entry(c).or_insert(None);
            if slot.is_none() {
                *slot = v;
            }
        }
    }
    if found.values().all(Option::is_none) {
        return Err(ScoreError::Unparseable);
    }
    let mut scores = BTreeMap::new();
    for &c in criteria {
        let value = found
            .get(&c)
            .copied()
            .flatten()
            .ok_or(ScoreError::MissingCriterion(c))?;
        if !(0..=10).contains(&value) {
            return Err(ScoreError::OutOfRange {
                criterion: c,
                value,
            });
        }
        scores.insert(c, value as u8);
    }
    Ok(CriteriaScore::new(scores).expect("range checked above"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Criterion::*;

    const FIXTURE: &str = "Here are the scores.\n\
        Clarity: 8\n\
        Background: 6\n\
        Purpose: 9\n\
        VisualElements: 5\n\
        ComparableObjects: 7\n\
        Total: 99\n";

    #[test]
    fn all_five_summed() {
        let s = parse_score(FIXTURE, &Criterion::ALL).unwrap();
        // 8 + 6 + 9 + 5 + 7, stated total ignored
        assert_eq!(s.total, 35);
        assert_eq!(s.get(Purpose), Some(9));
    }

    #[test]
    fn inactive_criteria_dropped() {
        let s = parse_score(FIXTURE, &Criterion::CULTURAL).unwrap();
        assert_eq!(s.total, 23);
        assert_eq!(s.scores.len(), 3);
        assert_eq!(s.get(VisualElements), None);
    }

    #[test]
    fn loose_formatting() {
        let text = "- **Clarity**: 7/10\n* Background = 4 points\n## Purpose: 10";
        let s = parse_score(text, &Criterion::CULTURAL).unwrap();
        assert_eq!(s.total, 21);
        let text = "Visual Elements: 3\nComparable Objects: 2";
        assert_eq!(
            parse_score(text, &[VisualElements, ComparableObjects])
                .unwrap()
                .total,
            5
        );
    }

    #[test]
    fn out_of_range() {
        assert_eq!(
            parse_score("Clarity: 11", &[Clarity]),
            Err(ScoreError::OutOfRange {
                criterion: Clarity,
                value: 11
            })
        );
        assert_eq!(
            parse_score("Clarity: -1", &[Clarity]),
            Err(ScoreError::OutOfRange {
                criterion: Clarity,
                value: -1
            })
        );
    }

    #[test]
    fn missing_and_unparseable() {
        let text = "Clarity: 8\nBackground: 6\nVisualElements: 5\nComparableObjects: 7";
        assert_eq!(
            parse_score(text, &Criterion::ALL),
            Err(ScoreError::MissingCriterion(Purpose))
        );
        assert_eq!(
            parse_score("I think it is great!", &Criterion::ALL),
            Err(ScoreError::Unparseable)
        );
        assert_eq!(
            parse_score("Clarity: high", &Criterion::ALL),
            Err(ScoreError::Unparseable)
        );
    }
}
