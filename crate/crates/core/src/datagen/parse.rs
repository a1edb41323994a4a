use std::sync::OnceLock;

use regex::Regex;

const QUOTES: &[char] = &['"', '\'', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}', '\u{ab}', '\u{bb}', '`'];

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\d+\s*[.)]\s*(.*?)\s*$").expect("valid regex"))
}

/// Extracts the items of a numbered list (`1.` or `1)`), skipping any prose
/// around it. Surrounding quotes are stripped and empty items dropped.
pub fn parse_numbered_list(completion: &str) -> Vec<String> {
    completion
        .lines()
        .filter_map(|line| item_re().captures(line))
        .map(|c| c[1].trim_matches(QUOTES).trim().to_owned())
        .filter(|s| !s.is_empty())
        .collect()
}
