//! Tokenization shared by the embedder and every metric.

/// Lowercases `text` and splits it on whitespace and punctuation.
///
/// Any character that is not alphanumeric acts as a separator, so
/// punctuation never produces tokens of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Contiguous n-grams of `tokens`, in order. Empty when `n == 0` or the
/// sequence is shorter than `n`.
pub fn ngrams<T>(tokens: &[T], n: usize) -> impl Iterator<Item = &[T]> {
    let count = if n == 0 { 0 } else { (tokens.len() + 1).saturating_sub(n) };
    (0..count).map(move |i| &tokens[i..i + n])
}
