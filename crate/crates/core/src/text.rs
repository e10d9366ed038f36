//! Case-insensitive whole-word matching shared by snippet retrieval, keyword
//! priors and label parsing.
//!
//! A "word character" is an alphanumeric character or `_`. A needle matches at
//! a position when the characters on either side of it are not word
//! characters. Needles may contain spaces (`"no finding"`).

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte offset of the first whole-word occurrence of `needle` in `haystack`.
/// Both arguments must already be lowercase.
pub fn find_word(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(needle) {
        let start = from + rel;
        let end = start + needle.len();
        let before_ok = haystack[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !is_word_char(c));
        if before_ok && after_ok {
            return Some(start);
        }
        // advance by one character
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Whether `needle` occurs as a whole word in `haystack`, ignoring case.
pub fn contains_word(haystack: &str, needle: &str) -> bool {
    find_word(&haystack.to_lowercase(), &needle.to_lowercase()).is_some()
}
