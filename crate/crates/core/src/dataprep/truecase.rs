//! Frequency-based truecasing.
//!
//! Training counts every surface form of every token. Application lowercases
//! a sentence-initial token exactly when the most frequent surface form of
//! that token is its all-lowercase form; ties prefer lowercase. Everything
//! else passes through unchanged.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::text::tokenize;

#[derive(Clone, Debug, Default)]
pub struct TruecaseModel {
    /// lowercased token -> (most frequent surface form, its count)
    best: BTreeMap<String, (String, u64)>,
}

impl TruecaseModel {
    pub fn train(lines: &[String]) -> TruecaseModel {
        let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for line in lines {
            for token in tokenize(line) {
                let key = token.to_lowercase();
                *counts.entry(key).or_default().entry(token).or_insert(0) += 1;
            }
        }
        let mut best = BTreeMap::new();
        for (key, surfaces) in counts {
            let max = *surfaces.values().max().expect("nonempty surface map");
            let winner = match surfaces.get(&key) {
                // Tie or outright win for the lowercase form: prefer it.
                Some(&c) if c == max => key.clone(),
                _ => surfaces
                    .iter()
                    .filter(|(_, &c)| c == max)
                    .map(|(s, _)| s.clone())
                    .min()
                    .expect("nonempty surface map"),
            };
            best.insert(key, (winner, max));
        }
        TruecaseModel { best }
    }

    /// True when the token's most frequent observed form is all-lowercase.
    pub fn prefers_lowercase(&self, token: &str) -> bool {
        let key = token.to_lowercase();
        matches!(self.best.get(&key), Some((form, _)) if *form == key)
    }

    /// Lowercase the sentence-initial token iff the model prefers its
    /// lowercase form; all other tokens are untouched.
    pub fn apply(&self, line: &str) -> String {
        let mut tokens = tokenize(line);
        if let Some(first) = tokens.first_mut() {
            if self.prefers_lowercase(first) {
                *first = first.to_lowercase();
            }
        }
        tokens.join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (form, count) in self.best.values() {
            out.push_str(&format!("{form} {count}\n"));
        }
        std::fs::write(path, out).map_err(|e| CoreError::File {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<TruecaseModel> {
        let lines = crate::text::read_lines(path)?;
        let mut best = BTreeMap::new();
        for (i, line) in lines.iter().enumerate() {
            let mut parts = line.rsplitn(2, ' ');
            let (count, form) = (parts.next(), parts.next());
            let parsed = count.and_then(|c| c.parse::<u64>().ok()).zip(form);
            match parsed {
                Some((count, form)) if !form.is_empty() => {
                    best.insert(form.to_lowercase(), (form.to_string(), count));
                }
                _ => {
                    return Err(CoreError::BadModelLine {
                        path: path.to_path_buf(),
                        line: i + 1,
                        detail: "expected \"surface count\"".to_string(),
                    })
                }
            }
        }
        Ok(TruecaseModel { best })
    }
}

/// Restore conventional sentence casing: uppercase the first character of the
/// line. The inverse of truecasing for text whose sentences start uppercased.
pub fn detruecase(line: &str) -> String {
    let mut chars = line.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(texts: &[&str]) -> Vec<String> {
        texts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tie_breaks_toward_lowercase() {
        // "Der" seen once capitalized, once lowercase: the tie goes to
        // lowercase, so an initial "Der" gets lowered.
        let model = TruecaseModel::train(&lines(&["Der Hund .", "der Mann ."]));
        assert_eq!(model.apply("Der Hund ."), "der Hund .");
    }

    #[test]
    fn consistently_uppercase_tokens_stay() {
        let model = TruecaseModel::train(&lines(&["NASA announced .", "NASA landed ."]));
        assert_eq!(model.apply("NASA announced ."), "NASA announced .");
        // Unknown initial tokens are left alone too.
        assert_eq!(model.apply("Foo bar"), "Foo bar");
        assert_eq!(model.apply(""), "");
    }

    #[test]
    fn only_the_initial_token_changes() {
        let model = TruecaseModel::train(&lines(&["die Katze", "Die die"]));
        // "die": 2 lowercase vs 1 capitalized -> prefers lowercase.
        assert_eq!(model.apply("Die Die Die"), "die Die Die");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tc.model");
        let model = TruecaseModel::train(&lines(&["Der Hund", "der Mann", "NASA"]));
        model.save(&path).unwrap();
        let loaded = TruecaseModel::load(&path).unwrap();
        assert_eq!(model.best, loaded.best);
        let again = dir.path().join("tc2.model");
        loaded.save(&again).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&again).unwrap()
        );
    }

    #[test]
    fn detruecase_uppercases_first_char() {
        assert_eq!(detruecase("der Hund ."), "Der Hund .");
        assert_eq!(detruecase("NASA fliegt"), "NASA fliegt");
        assert_eq!(detruecase(""), "");
    }
}
