//! Byte-pair encoding over whitespace-tokenized text.
//!
//! Words are split into characters with the final character fused to an
//! end-of-word marker; merges learned by most-frequent-adjacent-pair counting
//! are greedily re-applied in priority order. Subwords are joined with the
//! "@@ " continuation convention, so undo is a literal marker removal.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::text::tokenize;

const END_OF_WORD: &str = "</w>";
const JOIN_MARKER: &str = "@@ ";
const VERSION_HEADER: &str = "#version: 0.2";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeCodes {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut symbols: Vec<String> = Vec::with_capacity(chars.len());
    for (i, c) in chars.iter().enumerate() {
        if i + 1 == chars.len() {
            symbols.push(format!("{c}{END_OF_WORD}"));
        } else {
            symbols.push(c.to_string());
        }
    }
    symbols
}

/// Replace every non-overlapping left-to-right occurrence of the pair.
fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeCodes {
    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Learn up to `n_merges` merges by iterative most-frequent-pair
    /// counting over the word frequency dictionary. Ties break toward the
    /// lexicographically smallest pair; learning stops when the best pair
    /// occurs fewer than twice.
    pub fn learn(lines: &[String], n_merges: usize) -> BpeCodes {
        let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
        for line in lines {
            for token in tokenize(line) {
                *word_freq.entry(token).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(Vec<String>, u64)> = word_freq
            .iter()
            .map(|(w, &f)| (word_symbols(w), f))
            .collect();
        let mut codes = BpeCodes::default();
        for _ in 0..n_merges {
            let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
            for (symbols, freq) in &words {
                for pair in symbols.windows(2) {
                    *pair_counts
                        .entry((pair[0].clone(), pair[1].clone()))
                        .or_insert(0) += freq;
                }
            }
            // Max count; BTreeMap order makes the lexicographically smallest
            // pair win ties.
            let best = pair_counts
                .into_iter()
                .fold(None::<((String, String), u64)>, |acc, (pair, count)| {
                    match &acc {
                        Some((_, best_count)) if *best_count >= count => acc,
                        _ => Some((pair, count)),
                    }
                });
            let Some(((left, right), count)) = best else {
                break;
            };
            if count < 2 {
                break;
            }
            for (symbols, _) in &mut words {
                *symbols = merge_pair(symbols, &left, &right);
            }
            codes.push_merge(left, right);
        }
        codes
    }

    fn push_merge(&mut self, left: String, right: String) {
        let rank = self.merges.len();
        self.ranks.insert((left.clone(), right.clone()), rank);
        self.merges.push((left, right));
    }

    /// Segment one word into subword units by greedily applying the
    /// highest-priority (lowest-rank) merge present until none applies.
    fn segment(&self, word: &str) -> Vec<String> {
        let mut symbols = word_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            symbols = merge_pair(&symbols, left, right);
        }
        let last = symbols.len() - 1;
        symbols[last] = symbols[last]
            .strip_suffix(END_OF_WORD)
            .unwrap_or(&symbols[last])
            .to_string();
        symbols
    }

    /// Apply BPE to a whole line; subwords of one word join with "@@ ".
    pub fn apply(&self, line: &str) -> String {
        tokenize(line)
            .iter()
            .map(|word| self.segment(word).join(JOIN_MARKER))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from(VERSION_HEADER);
        out.push('\n');
        for (l, r) in &self.merges {
            out.push_str(&format!("{l} {r}\n"));
        }
        std::fs::write(path, out).map_err(|e| CoreError::File {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<BpeCodes> {
        let lines = crate::text::read_lines(path)?;
        let mut codes = BpeCodes::default();
        for (i, line) in lines.iter().enumerate() {
            if (i == 0 && line.starts_with('#')) || line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(' ').collect();
            let bad = || CoreError::BadCodesLine {
                path: path.to_path_buf(),
                line: i + 1,
            };
            if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
                return Err(bad());
            }
            let pair = (parts[0].to_string(), parts[1].to_string());
            if codes.ranks.contains_key(&pair) {
                return Err(bad());
            }
            codes.push_merge(pair.0, pair.1);
        }
        Ok(codes)
    }
}

/// Undo BPE segmentation: remove the "@@ " continuation markers.
pub fn bpe_undo(line: &str) -> String {
    line.replace(JOIN_MARKER, "")
}
