use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::CultureNoun;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyRecord {
    pub noun_id: String,
    pub count: u64,
}

const BATCH: usize = 8192;

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    if phrase.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(phrase) {
        let start = from + pos;
        let end = start + phrase.len();
        let before_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Counts, per noun, the captions containing its display name as a
/// case-insensitive whole-word phrase. A caption counts at most once per noun.
pub fn count_frequencies_in<'a>(
    captions: impl IntoIterator<Item = &'a str>,
    nouns: &[CultureNoun],
) -> Vec<FrequencyRecord> {
    let phrases: Vec<String> = nouns.iter().map(|n| normalize(&n.name)).collect();
    let mut counts = vec![0u64; phrases.len()];
    for caption in captions {
        tally(&normalize(caption), &phrases, &mut counts);
    }
    records(nouns, counts)
}

fn tally(caption: &str, phrases: &[String], counts: &mut [u64]) {
    for (c, p) in counts.iter_mut().zip(phrases) {
        if contains_phrase(caption, p) {
            *c += 1;
        }
    }
}

fn records(nouns: &[CultureNoun], counts: Vec<u64>) -> Vec<FrequencyRecord> {
    nouns
        .iter()
        .zip(counts)
        .map(|(n, count)| FrequencyRecord {
            noun_id: n.id.clone(),
            count,
        })
        .collect()
}

/// Streaming variant over newline-delimited captions; batches are counted in
/// parallel and summed.
pub fn count_frequencies<R: BufRead>(
    reader: R,
    nouns: &[CultureNoun],
) -> Result<Vec<FrequencyRecord>, EvalError> {
    let phrases: Vec<String> = nouns.iter().map(|n| normalize(&n.name)).collect();
    let mut totals = vec![0u64; phrases.len()];
    let mut lines = reader.lines();
    loop {
        let mut batch = Vec::with_capacity(BATCH);
        for line in lines.by_ref().take(BATCH) {
            batch.push(line?);
        }
        if batch.is_empty() {
            break;
        }
        let partial = batch
            .par_iter()
            .fold(
                || vec![0u64; phrases.len()],
                |mut acc, caption| {
                    tally(&normalize(caption), &phrases, &mut acc);
                    acc
                },
            )
            .reduce(
                || vec![0u64; phrases.len()],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            );
        totals.iter_mut().zip(partial).for_each(|(x, y)| *x += y);
    }
    Ok(records(nouns, totals))
}

/// Opens a caption file, decompressing `.gz` files transparently.
pub fn open_captions(path: &Path) -> Result<Box<dyn BufRead>, EvalError> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}
