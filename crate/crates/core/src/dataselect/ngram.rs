//! Count-based n-gram language model with interpolated Witten-Bell smoothing.
//!
//! Probabilities are defined recursively: a seen context interpolates its
//! maximum-likelihood estimate with the next-shorter context's distribution,
//! weighted by the number of distinct successor types; an unseen context
//! backs off entirely. The base of the recursion is the uniform distribution
//! over the prediction vocabulary (known types, UNK and EOS). BOS occurs only
//! in contexts and is never predicted, so every conditional distribution sums
//! to one exactly.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::text::tokenize;

/// Internal symbol ids. UNK absorbs tokens below the count threshold.
const LM_UNK: u32 = 0;
const LM_BOS: u32 = 1;
const LM_EOS: u32 = 2;
const FIRST_TYPE: u32 = 3;

/// Tokens must occur at least this often to enter the vocabulary; rarer ones
/// train the UNK probability so open-vocabulary text keeps finite scores.
const MIN_COUNT: u64 = 2;

#[derive(Clone, Debug, Default)]
struct ContextStats {
    total: u64,
    successors: HashMap<u32, u64>,
}

#[derive(Clone, Debug)]
pub struct NGramModel {
    order: usize,
    types: Vec<String>,
    ids: HashMap<String, u32>,
    /// tables[k-1]: context of length k-1 -> successor counts.
    tables: Vec<HashMap<Vec<u32>, ContextStats>>,
}

impl NGramModel {
    /// Train an order-`order` model on tokenized lines.
    pub fn train(lines: &[String], order: usize) -> Result<NGramModel> {
        if order < 1 {
            return Err(CoreError::Invalid {
                what: "lm order",
                detail: "order must be at least 1".to_string(),
            });
        }
        let corpus: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l)).collect();
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(CoreError::Empty { what: "language model corpus" });
        }
        let mut raw_counts: HashMap<&str, u64> = HashMap::new();
        for sentence in &corpus {
            for token in sentence {
                *raw_counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut types: Vec<String> = raw_counts
            .iter()
            .filter(|(_, &c)| c >= MIN_COUNT)
            .map(|(t, _)| t.to_string())
            .collect();
        types.sort();
        let ids: HashMap<String, u32> = types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), FIRST_TYPE + i as u32))
            .collect();
        let mut model = NGramModel {
            order,
            types,
            ids,
            tables: vec![HashMap::new(); order],
        };
        for sentence in &corpus {
            if sentence.is_empty() {
                continue;
            }
            let seq = model.padded_ids(sentence);
            let start = order - 1;
            for i in start..seq.len() {
                for k in 1..=order {
                    let ctx = seq[i - (k - 1)..i].to_vec();
                    let stats = model.tables[k - 1].entry(ctx).or_default();
                    stats.total += 1;
                    *stats.successors.entry(seq[i]).or_insert(0) += 1;
                }
            }
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// BOS padding + mapped tokens + EOS.
    fn padded_ids(&self, tokens: &[String]) -> Vec<u32> {
        let mut seq = vec![LM_BOS; self.order - 1];
        seq.extend(tokens.iter().map(|t| self.symbol(t)));
        seq.push(LM_EOS);
        seq
    }

    fn symbol(&self, token: &str) -> u32 {
        *self.ids.get(token).unwrap_or(&LM_UNK)
    }

    /// Everything predictable: known types plus UNK and EOS.
    pub fn prediction_vocab_size(&self) -> usize {
        self.types.len() + 2
    }

    /// Iterate all predictable symbols.
    fn prediction_symbols(&self) -> impl Iterator<Item = u32> + '_ {
        [LM_UNK, LM_EOS]
            .into_iter()
            .chain((0..self.types.len() as u32).map(|i| FIRST_TYPE + i))
    }

    fn prob_order(&self, k: usize, context: &[u32], word: u32) -> f64 {
        if k == 0 {
            return 1.0 / self.prediction_vocab_size() as f64;
        }
        let shorter = if context.is_empty() { context } else { &context[1..] };
        match self.tables[k - 1].get(context) {
            None => self.prob_order(k - 1, shorter, word),
            Some(stats) => {
                let t = stats.successors.len() as f64;
                let n = stats.total as f64;
                let c = *stats.successors.get(&word).unwrap_or(&0) as f64;
                let lower = self.prob_order(k - 1, shorter, word);
                (c + t * lower) / (n + t)
            }
        }
    }

    /// P(word | context) with the full-order context (length order-1).
    fn prob(&self, context: &[u32], word: u32) -> f64 {
        debug_assert_eq!(context.len(), self.order - 1);
        self.prob_order(self.order, context, word)
    }

    /// Cross-entropy of one tokenized sentence in bits per token. The token
    /// count includes EOS but not the BOS padding.
    pub fn cross_entropy(&self, tokens: &[String]) -> f64 {
        let seq = self.padded_ids(tokens);
        let start = self.order - 1;
        let n = (seq.len() - start) as f64;
        let mut bits = 0.0;
        for i in start..seq.len() {
            let p = self.prob(&seq[i - (self.order - 1)..i], seq[i]);
            bits -= p.log2();
        }
        bits / n
    }

    /// Sum of P(w | context) over the whole prediction vocabulary; equals 1
    /// up to rounding for any context.
    pub fn distribution_mass(&self, context_tokens: &[String]) -> f64 {
        let mut ctx: Vec<u32> = context_tokens.iter().map(|t| self.symbol(t)).collect();
        while ctx.len() < self.order - 1 {
            ctx.insert(0, LM_BOS);
        }
        let ctx = &ctx[ctx.len() - (self.order - 1)..];
        self.prediction_symbols().map(|w| self.prob(ctx, w)).sum()
    }

    // ── Serialization: versioned plain-text count tables ──
    //
    // Layout: a header line, the order, one "type" line per vocabulary entry
    // (defining ids), then one "gram" line per counted n-gram containing its
    // symbols and count. Deterministic ordering makes saves byte-stable.

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("#ngram-counts v1\n");
        out.push_str(&format!("order\t{}\n", self.order));
        for t in &self.types {
            out.push_str(&format!("type\t{t}\n"));
        }
        for k in 1..=self.order {
            let mut entries: Vec<(&Vec<u32>, &ContextStats)> = self.tables[k - 1].iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            for (ctx, stats) in entries {
                let mut succ: Vec<(&u32, &u64)> = stats.successors.iter().collect();
                succ.sort_by(|a, b| a.0.cmp(b.0));
                for (word, count) in succ {
                    let mut gram: Vec<String> =
                        ctx.iter().map(|&s| self.symbol_name(s)).collect();
                    gram.push(self.symbol_name(*word));
                    out.push_str(&format!("gram\t{}\t{}\n", gram.join(" "), count));
                }
            }
        }
        std::fs::write(path, out).map_err(|e| CoreError::File {
            path: path.to_path_buf(),
            source: e,
        })
    }

    fn symbol_name(&self, id: u32) -> String {
        match id {
            LM_UNK => "<unk>".to_string(),
            LM_BOS => "<s>".to_string(),
            LM_EOS => "</s>".to_string(),
            _ => self.types[(id - FIRST_TYPE) as usize].clone(),
        }
    }

    fn named_symbol(&self, name: &str) -> Option<u32> {
        match name {
            "<unk>" => Some(LM_UNK),
            "<s>" => Some(LM_BOS),
            "</s>" => Some(LM_EOS),
            _ => self.ids.get(name).copied(),
        }
    }

    pub fn load(path: &Path) -> Result<NGramModel> {
        let lines = crate::text::read_lines(path)?;
        let bad = |line: usize, detail: &str| CoreError::BadModelLine {
            path: path.to_path_buf(),
            line,
            detail: detail.to_string(),
        };
        if lines.first().map(String::as_str) != Some("#ngram-counts v1") {
            return Err(bad(1, "missing #ngram-counts v1 header"));
        }
        let mut order = None;
        let mut types = Vec::new();
        let mut grams: Vec<(usize, Vec<String>, u64)> = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(1) {
            let mut fields = line.split('\t');
            match (fields.next(), fields.next(), fields.next()) {
                (Some("order"), Some(v), None) => {
                    order = Some(v.parse::<usize>().map_err(|_| bad(i + 1, "bad order"))?);
                }
                (Some("type"), Some(t), None) => types.push(t.to_string()),
                (Some("gram"), Some(symbols), Some(count)) => {
                    let count = count.parse::<u64>().map_err(|_| bad(i + 1, "bad count"))?;
                    let symbols: Vec<String> =
                        symbols.split(' ').map(str::to_string).collect();
                    grams.push((i + 1, symbols, count));
                }
                _ => return Err(bad(i + 1, "unrecognized record")),
            }
        }
        let order = order.ok_or_else(|| bad(1, "missing order record"))?;
        if order < 1 {
            return Err(bad(1, "order must be at least 1"));
        }
        let ids: HashMap<String, u32> = types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), FIRST_TYPE + i as u32))
            .collect();
        let mut model = NGramModel {
            order,
            types,
            ids,
            tables: vec![HashMap::new(); order],
        };
        for (line_no, symbols, count) in grams {
            let k = symbols.len();
            if k < 1 || k > order {
                return Err(bad(line_no, "gram length exceeds order"));
            }
            let ids: Option<Vec<u32>> =
                symbols.iter().map(|s| model.named_symbol(s)).collect();
            let Some(ids) = ids else {
                return Err(bad(line_no, "unknown symbol in gram"));
            };
            let (ctx, word) = ids.split_at(k - 1);
            let stats = model.tables[k - 1].entry(ctx.to_vec()).or_default();
            stats.total += count;
            *stats.successors.entry(word[0]).or_insert(0) += count;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(texts: &[&str]) -> Vec<String> {
        texts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn unigram_counts_are_plain_frequencies() {
        let m = NGramModel::train(&lines(&["a a b"]), 1).unwrap();
        // Both "a" (count 2) and "b" (count 1 -> UNK) plus EOS are counted.
        let stats = m.tables[0].get(&vec![]).unwrap();
        assert_eq!(stats.total, 4);
        assert_eq!(stats.successors[&m.named_symbol("a").unwrap()], 2);
        assert_eq!(stats.successors[&LM_UNK], 1);
        assert_eq!(stats.successors[&LM_EOS], 1);
    }

    #[test]
    fn conditional_distributions_normalize() {
        let corpus = lines(&[
            "der Hund läuft schnell",
            "der Hund bellt laut",
            "die Katze läuft schnell weg",
            "der alte Mann geht langsam",
        ]);
        let m = NGramModel::train(&corpus, 3).unwrap();
        for ctx in [
            vec![],
            tokenize("der"),
            tokenize("der Hund"),
            tokenize("nie gesehen"),
            tokenize("Katze läuft"),
        ] {
            let mass = m.distribution_mass(&ctx);
            assert!(
                (mass - 1.0).abs() < 1e-9,
                "context {ctx:?} sums to {mass}"
            );
        }
    }

    #[test]
    fn a_thousand_random_contexts_normalize() {
        let corpus = lines(&[
            "das system speichert die datei im neuen ordner",
            "die datei wird im alten ordner gespeichert",
            "das alte system startet neu",
            "neu starten und die datei speichern",
        ]);
        let m = NGramModel::train(&corpus, 5).unwrap();
        let pool = [
            "das", "system", "datei", "ordner", "neu", "die", "im", "speichern", "zzz", "qqq",
        ];
        let mut rng = ape_tensor::SplitRng::seed(77);
        for _ in 0..1000 {
            let len = rng.below(5);
            let ctx: Vec<String> = (0..len)
                .map(|_| pool[rng.below(pool.len())].to_string())
                .collect();
            let mass = m.distribution_mass(&ctx);
            assert!((mass - 1.0).abs() < 1e-9, "context {ctx:?} sums to {mass}");
        }
    }

    #[test]
    fn uniform_case_hits_log2_vocab_exactly() {
        // Types {a, b} plus UNK and EOS give a 4-way prediction vocabulary.
        // The sentence "a a b b u" followed by "v" puts counts 2 on a, 2 on
        // b, 2 on UNK (u, v) and 2 on EOS: the unigram model is exactly
        // uniform, and Witten-Bell keeps it uniform (MLE and base agree).
        let m = NGramModel::train(&lines(&["a a b b u", "v"]), 1).unwrap();
        assert_eq!(m.prediction_vocab_size(), 4);
        let ce = m.cross_entropy(&tokenize("a b u"));
        assert!((ce - 2.0).abs() < 1e-12, "got {ce}");
    }

    #[test]
    fn memorized_sentence_beats_random_string() {
        let sentence = "das neue Modul besteht alle Tests";
        let m = NGramModel::train(&lines(&[sentence, sentence]), 5).unwrap();
        let memorized = m.cross_entropy(&tokenize(sentence));
        let random = m.cross_entropy(&tokenize("Tests alle das Modul neue besteht"));
        assert!(memorized < random, "{memorized} !< {random}");
        assert!(memorized.is_finite() && random.is_finite());
    }

    #[test]
    fn held_out_text_stays_finite() {
        let m = NGramModel::train(&lines(&["a b c d", "b c d e", "a a b b"]), 5).unwrap();
        let ce = m.cross_entropy(&tokenize("völlig unbekannte wörter hier"));
        assert!(ce.is_finite() && ce > 0.0);
    }

    #[test]
    fn save_load_preserves_scores() {
        let corpus = lines(&["ein Satz mit Worten", "ein Satz ohne Sinn", "mit Worten"]);
        let m = NGramModel::train(&corpus, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.txt");
        m.save(&path).unwrap();
        let loaded = NGramModel::load(&path).unwrap();
        for s in ["ein Satz mit Sinn", "unbekannt", "mit Worten"] {
            let a = m.cross_entropy(&tokenize(s));
            let b = loaded.cross_entropy(&tokenize(s));
            assert!((a - b).abs() < 1e-12);
        }
        // Saving the loaded model reproduces the bytes.
        let path2 = dir.path().join("lm2.txt");
        loaded.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn empty_corpus_and_zero_order_rejected() {
        assert!(NGramModel::train(&lines(&["", ""]), 2).is_err());
        assert!(NGramModel::train(&lines(&["a"]), 0).is_err());
    }
}
