//! Text canonicalization for answers and step similarity.

use std::sync::OnceLock;

use regex::Regex;

/// Canonical decimal numeral: `"24.0"` → `"24"`, `"007.50"` → `"7.5"`, `"-0"` → `"0"`.
/// Thousands separators in the integer part (`1,200`) are dropped.
pub fn canonical_number(s: &str) -> Option<String> {
    static NUM: OnceLock<Regex> = OnceLock::new();
    let re = NUM.get_or_init(|| Regex::new(r"^([+\-−]?)(\d{1,3}(?:,\d{3})+|\d+)?(?:\.(\d+))?$").unwrap());
    let caps = re.captures(s)?;
    let int_raw = caps.get(2).map_or("", |m| m.as_str());
    let frac_raw = caps.get(3).map_or("", |m| m.as_str());
    if int_raw.is_empty() && frac_raw.is_empty() {
        return None;
    }
    let int_digits: String = int_raw.chars().filter(|c| *c != ',').collect();
    let int_part = int_digits.trim_start_matches('0');
    let int_part = if int_part.is_empty() { "0" } else { int_part };
    let frac_part = frac_raw.trim_end_matches('0');
    let negative = matches!(caps.get(1).map(|m| m.as_str()), Some("-") | Some("−"));
    let is_zero = int_part == "0" && frac_part.is_empty();
    let mut out = String::new();
    if negative && !is_zero {
        out.push('-');
    }
    out.push_str(int_part);
    if !frac_part.is_empty() {
        out.push('.');
        out.push_str(frac_part);
    }
    Some(out)
}

/// Answer equality key: trimmed, lowercased, trailing punctuation stripped,
/// numerals canonicalized.
pub fn normalize_answer(raw: &str) -> String {
    let lowered = raw.trim().to_lowercase();
    let mut unwrapped = lowered.as_str();
    loop {
        let next = strip_wrappers(
            unwrapped.trim_end_matches(|c: char| c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':' | '!' | '?')),
        );
        if next == unwrapped {
            break;
        }
        unwrapped = next;
    }
    if let Some(n) = canonical_number(unwrapped) {
        return n;
    }
    unwrapped
        .split_whitespace()
        .map(|w| canonical_number(w).unwrap_or_else(|| w.to_string()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn strip_wrappers(s: &str) -> &str {
    let mut s = s;
    loop {
        let before = s;
        if let Some(inner) = s.strip_prefix("\\boxed{").and_then(|r| r.strip_suffix('}')) {
            s = inner.trim();
        }
        if let Some(inner) = s.strip_prefix('$').and_then(|r| r.strip_suffix('$')) {
            s = inner.trim();
        }
        if let Some(inner) = s.strip_prefix("**").and_then(|r| r.strip_suffix("**")) {
            s = inner.trim();
        }
        if s == before {
            return s;
        }
    }
}

/// Similarity tokens: lowercase words and canonical numerals; punctuation and
/// operators are separators.
pub fn similarity_tokens(text: &str) -> Vec<String> {
    static TOK: OnceLock<Regex> = OnceLock::new();
    let re = TOK.get_or_init(|| Regex::new(r"\p{N}+(?:\.\p{N}+)?|\p{L}+").unwrap());
    let lowered = text.to_lowercase();
    re.find_iter(&lowered)
        .map(|m| canonical_number(m.as_str()).unwrap_or_else(|| m.as_str().to_string()))
        .collect()
}
