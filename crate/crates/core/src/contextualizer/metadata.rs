/// Substrings that mark a token as part of a hyperlink.
const LINK_MARKERS: [&str; 3] = ["http://", "https://", "www."];

/// Turns raw title/description strings into context words.
///
/// Tokens containing a hyperlink (in any letter case) are dropped. A token with any uppercase
/// character is followed by its lowercased form. Duplicates are removed,
/// keeping the first occurrence.
pub fn normalize_metadata<S: AsRef<str>>(raw: &[S]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let mut emit = |w: String, out: &mut Vec<String>| {
        if seen.insert(w.clone()) {
            out.push(w);
        }
    };
    for s in raw {
        for tok in s.as_ref().split_whitespace() {
            let lower = tok.to_lowercase();
            if LINK_MARKERS.iter().any(|m| lower.contains(m)) {
                continue;
            }
            emit(tok.to_string(), &mut out);
            if tok.chars().any(char::is_uppercase) {
                emit(lower, &mut out);
            }
        }
    }
    out
}
