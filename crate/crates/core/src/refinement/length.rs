/// Number of whitespace-separated tokens.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn ends_sentence(word: &str) -> bool {
    let trimmed = word.trim_end_matches(['"', '\'', ')', ']', '\u{201d}', '\u{2019}']);
    trimmed.ends_with(['.', '!', '?'])
}

/// Caps `text` at `word_cap` words.
///
/// Text within the cap is returned unchanged. Longer text is cut after the
/// last sentence that ends within the cap, or hard-cut at the cap when the
/// first sentence alone is too long. Cuts only fall between words.
pub fn enforce_length_limit(text: &str, word_cap: usize) -> String {
    let word_cap = word_cap.max(1);
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= word_cap {
        return text.to_string();
    }
    let keep = (1..=word_cap)
        .rev()
        .find(|&k| ends_sentence(words[k - 1]))
        .unwrap_or(word_cap);
    words[..keep].join(" ")
}
