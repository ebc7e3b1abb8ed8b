//! Joint subword vocabulary with fixed reserved ids.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{CoreError, Result};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

pub const RESERVED: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Bijective token <-> id map. Ids 0..=3 are PAD, BOS, EOS, UNK in that
/// order; the rest are frequency-sorted (ties alphabetical) so identical
/// corpora always produce identical ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build a joint vocabulary over all streams, keeping at most
    /// `cap - RESERVED` of the most frequent types.
    pub fn build<'a, I>(streams: I, cap: usize) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if cap <= RESERVED.len() {
            return Err(CoreError::VocabCapTooSmall { cap });
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sentence in streams {
            for token in sentence {
                *counts.entry(token.as_str()).or_insert(0) += 1;
            }
        }
        let mut by_freq: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        by_freq.truncate(cap - RESERVED.len());
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(by_freq.into_iter().map(|(t, _)| t.to_string()));
        Ok(Vocabulary::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Vocabulary {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        *self.ids.get(token).unwrap_or(&UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Map tokens to ids, counting how many fell back to UNK.
    pub fn encode(&self, tokens: &[String]) -> (Vec<u32>, usize) {
        let ids: Vec<u32> = tokens.iter().map(|t| self.id(t)).collect();
        let unks = ids.iter().filter(|&&i| i == UNK_ID).count();
        (ids, unks)
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i as usize].clone()).collect()
    }

    /// Decode, dropping PAD/BOS/EOS (UNK is kept visible).
    pub fn decode_clean(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD_ID && i != BOS_ID && i != EOS_ID)
            .map(|&i| self.tokens[i as usize].clone())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::text::write_lines(path, &self.tokens)
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let tokens = crate::text::read_lines(path)?;
        if tokens.len() <= RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(CoreError::BadModelLine {
                path: path.to_path_buf(),
                line: 1,
                detail: format!("vocabulary must start with {RESERVED:?}"),
            });
        }
        let vocab = Vocabulary::from_tokens(tokens);
        if vocab.ids.len() != vocab.tokens.len() {
            return Err(CoreError::BadModelLine {
                path: path.to_path_buf(),
                line: 1,
                detail: "duplicate token in vocabulary".to_string(),
            });
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(s: &str) -> Vec<String> {
        crate::text::tokenize(s)
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let s = sent("b a a");
        let v = Vocabulary::build([s.as_slice()], 100).unwrap();
        assert_eq!(v.id(PAD_TOKEN), PAD_ID);
        assert_eq!(v.id(BOS_TOKEN), BOS_ID);
        assert_eq!(v.id(EOS_TOKEN), EOS_ID);
        assert_eq!(v.id(UNK_TOKEN), UNK_ID);
        // "a" is more frequent than "b".
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
    }

    #[test]
    fn cap_keeps_most_frequent_and_rejects_tiny() {
        let s = sent("a a a b b c");
        assert!(matches!(
            Vocabulary::build([s.as_slice()], 4),
            Err(CoreError::VocabCapTooSmall { cap: 4 })
        ));
        let v = Vocabulary::build([s.as_slice()], 6).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.contains("a") && v.contains("b"));
        assert_eq!(v.id("c"), UNK_ID);
    }

    #[test]
    fn encode_decode_identity_in_vocab() {
        let s = sent("wort satz zeichen");
        let v = Vocabulary::build([s.as_slice()], 50).unwrap();
        let (ids, unks) = v.encode(&s);
        assert_eq!(unks, 0);
        assert_eq!(v.decode(&ids), s);
    }

    #[test]
    fn file_round_trip_is_stable() {
        let a = sent("x y z y");
        let b = sent("z z q");
        let v = Vocabulary::build([a.as_slice(), b.as_slice()], 64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
    }
}
