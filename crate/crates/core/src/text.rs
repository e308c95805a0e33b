//! Motion text normalization, expression standardization and two-pass
//! collocation merging.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Lowercases, strips accents, replaces every non-alphanumeric character with
/// a space and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.nfd().filter(|c| !is_combining_mark(*c)) {
        if c.is_alphanumeric() && !c.is_uppercase() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
}

impl TokenizedText {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenizedText { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The underlying word sequence with merged tokens split back apart.
    pub fn words(&self) -> Vec<&str> {
        self.tokens.iter().flat_map(|t| t.split('_')).collect()
    }
}

pub const NUMBER_PLACEHOLDER: &str = "num";

/// Splits normalized text on whitespace. With `map_numbers`, all-digit tokens
/// become [`NUMBER_PLACEHOLDER`].
pub fn tokenize(normalized: &str, map_numbers: bool) -> TokenizedText {
    TokenizedText::new(
        normalized
            .split_whitespace()
            .map(|t| {
                if map_numbers && t.chars().all(|c| c.is_numeric()) {
                    NUMBER_PLACEHOLDER.to_string()
                } else {
                    t.to_string()
                }
            })
            .collect(),
    )
}

pub const DEFAULT_PHRASE_MIN_COUNT: f64 = 5.0;
pub const DEFAULT_PHRASE_THRESHOLD: f64 = 10.0;

/// One collocation pass: adjacent pairs that are merged into `a_b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhraseModel {
    pub min_count: f64,
    pub threshold: f64,
    #[serde(with = "pair_list")]
    pub merge_table: BTreeMap<(String, String), String>,
}

mod pair_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        table: &BTreeMap<(String, String), String>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<&(String, String)> = table.keys().collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<(String, String), String>, D::Error> {
        let pairs: Vec<(String, String)> = Vec::deserialize(d)?;
        Ok(pairs
            .into_iter()
            .map(|(a, b)| {
                let merged = format!("{a}_{b}");
                ((a, b), merged)
            })
            .collect())
    }
}

/// Collocation score `(count(ab) - min_count) * N / (count(a) * count(b))`,
/// with `N` the number of distinct tokens.
pub fn phrase_score(pair: f64, a: f64, b: f64, distinct: f64, min_count: f64) -> f64 {
    (pair - min_count) * distinct / (a * b)
}

pub fn learn_phrases(corpus: &[TokenizedText], min_count: f64, threshold: f64) -> Result<PhraseModel> {
    if corpus.is_empty() {
        return Err(Error::Validation("cannot learn phrases from an empty corpus".into()));
    }
    let mut unigrams: HashMap<&str, u64> = HashMap::new();
    let mut bigrams: HashMap<(&str, &str), u64> = HashMap::new();
    for doc in corpus {
        for t in &doc.tokens {
            *unigrams.entry(t.as_str()).or_default() += 1;
        }
        for w in doc.tokens.windows(2) {
            *bigrams.entry((w[0].as_str(), w[1].as_str())).or_default() += 1;
        }
    }
    let distinct = unigrams.len() as f64;
    let merge_table = bigrams
        .into_iter()
        .filter(|&((a, b), n)| {
            let n = n as f64;
            n >= min_count && phrase_score(n, unigrams[a] as f64, unigrams[b] as f64, distinct, min_count) > threshold
        })
        .map(|((a, b), _)| ((a.to_string(), b.to_string()), format!("{a}_{b}")))
        .collect();
    Ok(PhraseModel {
        min_count,
        threshold,
        merge_table,
    })
}

impl PhraseModel {
    /// Greedy left-to-right merge of non-overlapping pairs.
    pub fn apply(&self, text: &TokenizedText) -> TokenizedText {
        let tokens = &text.tokens;
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            if i + 1 < tokens.len() {
                if let Some(merged) = self.merge_table.get(&(tokens[i].clone(), tokens[i + 1].clone())) {
                    out.push(merged.clone());
                    i += 2;
                    continue;
                }
            }
            out.push(tokens[i].clone());
            i += 1;
        }
        TokenizedText::new(out)
    }
}

pub fn apply_phrases(model: &PhraseModel, text: &TokenizedText) -> TokenizedText {
    model.apply(text)
}

/// Two collocation passes; the second is learned on the output of the first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phraser {
    pub passes: [PhraseModel; 2],
}

impl Phraser {
    pub fn learn(corpus: &[TokenizedText], min_count: f64, threshold: f64) -> Result<Self> {
        let first = learn_phrases(corpus, min_count, threshold)?;
        let merged: Vec<TokenizedText> = corpus.iter().map(|t| first.apply(t)).collect();
        let second = learn_phrases(&merged, min_count, threshold)?;
        Ok(Phraser {
            passes: [first, second],
        })
    }

    pub fn apply(&self, text: &TokenizedText) -> TokenizedText {
        self.passes[1].apply(&self.passes[0].apply(text))
    }
}

/// Phrase rewrite rules, applied longest pattern first in a single pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StandardizationTable {
    rules: Vec<(Vec<String>, Vec<String>)>,
}

impl StandardizationTable {
    pub fn new<P: AsRef<str>, R: AsRef<str>>(rules: impl IntoIterator<Item = (P, R)>) -> Self {
        let mut rules: Vec<(Vec<String>, Vec<String>)> = rules
            .into_iter()
            .map(|(p, r)| {
                (
                    p.as_ref().split_whitespace().map(str::to_string).collect(),
                    r.as_ref().split_whitespace().map(str::to_string).collect(),
                )
            })
            .filter(|(p, _): &(Vec<String>, Vec<String>)| !p.is_empty())
            .collect();
        // Stable: equal-length patterns keep file order.
        rules.sort_by_key(|r| std::cmp::Reverse(r.0.len()));
        StandardizationTable { rules }
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Parses `pattern<TAB>replacement` lines. Patterns are normalized like
    /// motion text so they match tokenized input.
    pub fn parse(source: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, line) in source.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (p, r) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: "standardization table".into(),
                line: i + 1,
                message: "expected pattern<TAB>replacement".into(),
            })?;
            rules.push((normalize(p), normalize(r)));
        }
        Ok(Self::new(rules))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::parse(&source)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (p, r) in &self.rules {
            out.push_str(&p.join(" "));
            out.push('\t');
            out.push_str(&r.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn apply(&self, text: &TokenizedText) -> TokenizedText {
        if self.rules.is_empty() {
            return text.clone();
        }
        let tokens = &text.tokens;
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        'outer: while i < tokens.len() {
            for (pattern, replacement) in &self.rules {
                let end = i + pattern.len();
                if end <= tokens.len() && tokens[i..end] == pattern[..] {
                    out.extend(replacement.iter().cloned());
                    i = end;
                    continue 'outer;
                }
            }
            out.push(tokens[i].clone());
            i += 1;
        }
        TokenizedText::new(out)
    }
}

pub fn standardize(table: &StandardizationTable, text: &TokenizedText) -> TokenizedText {
    table.apply(text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub phrase_min_count: f64,
    pub phrase_threshold: f64,
    pub map_numbers: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            phrase_min_count: DEFAULT_PHRASE_MIN_COUNT,
            phrase_threshold: DEFAULT_PHRASE_THRESHOLD,
            map_numbers: false,
        }
    }
}

/// The full text pipeline: normalize, tokenize, standardize, merge phrases.
///
/// Standardization runs on plain words, before collocation merging, so that
/// multi-word patterns still match after their words have been merged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub config: PrepConfig,
    pub standardization: StandardizationTable,
    pub phraser: Phraser,
}

impl Preprocessor {
    fn words(config: &PrepConfig, table: &StandardizationTable, raw: &str) -> TokenizedText {
        table.apply(&tokenize(&normalize(raw), config.map_numbers))
    }

    /// Learns the collocation passes from a corpus of raw texts.
    pub fn fit(texts: &[String], standardization: StandardizationTable, config: PrepConfig) -> Result<Self> {
        let words: Vec<TokenizedText> = texts
            .iter()
            .map(|t| Self::words(&config, &standardization, t))
            .collect();
        let phraser = Phraser::learn(&words, config.phrase_min_count, config.phrase_threshold)?;
        Ok(Preprocessor {
            config,
            standardization,
            phraser,
        })
    }

    pub fn process(&self, raw: &str) -> TokenizedText {
        self.phraser
            .apply(&Self::words(&self.config, &self.standardization, raw))
    }
}
