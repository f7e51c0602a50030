//! Deterministic word/punctuation segmentation.
//!
//! Tokens are maximal runs of non-whitespace, non-punctuation characters;
//! every punctuation character is a token of its own. The same segmentation
//! drives chunk budgeting, prompt budgeting and the sparse (BM25) terms, so
//! all three agree on what a "token" is without shipping model files.
//!
//! Because whitespace never belongs to a token, joining two texts with any
//! whitespace separator adds their counts exactly.

/// Returns `true` for characters that form a token on their own.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}'..='\u{00BF}'
            | '\u{00D7}'
            | '\u{00F7}'
            | '\u{2010}'..='\u{205E}'
            | '\u{2190}'..='\u{23FF}'
            | '\u{3001}'..='\u{3003}'
            | '\u{3008}'..='\u{3011}'
            | '\u{FF01}'..='\u{FF0F}'
            | '\u{FF1A}'..='\u{FF20}')
}

/// Byte spans `[start, end)` of every token in `text`, in order.
pub fn token_spans(text: &str) -> TokenSpans<'_> {
    TokenSpans {
        iter: text.char_indices().peekable(),
    }
}

pub struct TokenSpans<'a> {
    iter: std::iter::Peekable<std::str::CharIndices<'a>>,
}

impl Iterator for TokenSpans<'_> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        while let Some(&(start, c)) = self.iter.peek() {
            if c.is_whitespace() {
                self.iter.next();
                continue;
            }
            self.iter.next();
            if is_punctuation(c) {
                return Some((start, start + c.len_utf8()));
            }
            let mut end = start + c.len_utf8();
            while let Some(&(i, c)) = self.iter.peek() {
                if c.is_whitespace() || is_punctuation(c) {
                    break;
                }
                end = i + c.len_utf8();
                self.iter.next();
            }
            return Some((start, end));
        }
        None
    }
}

/// Tokens of `text` as borrowed slices.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    token_spans(text).map(move |(s, e)| &text[s..e])
}

/// Number of tokens in `text`.
pub fn count_tokens(text: &str) -> usize {
    token_spans(text).count()
}

/// Lowercased tokens, as used for sparse terms and lexical overlap.
pub fn lowercase_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    tokens(text).map(str::to_lowercase)
}

/// Longest prefix of `text` holding at most `max_tokens` tokens, cut right
/// after the last kept token.
pub fn truncate_to_tokens(text: &str, max_tokens: usize) -> &str {
    if max_tokens == 0 {
        return "";
    }
    match token_spans(text).nth(max_tokens - 1) {
        Some((_, end)) => &text[..end],
        None => text,
    }
}
