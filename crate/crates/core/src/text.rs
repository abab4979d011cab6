//! Small text helpers shared by chunking, embedding and reranking.

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Collapse every whitespace run to a single space and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Number of Unicode scalar values in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// First `max` chars of `text`.
pub fn truncate_chars(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

/// Split text into sentences. A sentence ends at `.`, `!`, `?` or an
/// ideographic full stop followed by whitespace (or the end of input).
/// Returned slices are trimmed; joining them with single spaces yields the
/// whitespace-normalized input.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((idx, c)) = chars.next() {
        let terminal = matches!(c, '.' | '!' | '?' | '。' | '！' | '？');
        if !terminal {
            continue;
        }
        let end = idx + c.len_utf8();
        let at_boundary = match chars.peek() {
            None => true,
            Some((_, next)) => next.is_whitespace() || matches!(c, '。' | '！' | '？'),
        };
        if at_boundary {
            let sentence = text[start..end].trim();
            if !sentence.is_empty() {
                out.push(sentence);
            }
            start = end;
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}
