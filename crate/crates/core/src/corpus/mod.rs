//! Labeled proceedings, unlabeled motions, and the train/validation/test split.

mod synth;

pub use synth::{generate_synthetic, indicator_phrase, synthetic_standardization, SyntheticCorpus, SyntheticSpec};

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Proceeding status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Archived,
    Active,
    Suspended,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Archived, Class::Active, Class::Suspended];

    pub fn from_label(label: i64) -> Option<Class> {
        match label {
            1 => Some(Class::Archived),
            2 => Some(Class::Active),
            3 => Some(Class::Suspended),
            _ => None,
        }
    }

    /// 1-based label as written in corpus files.
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn index(self) -> usize {
        match self {
            Class::Archived => 0,
            Class::Active => 1,
            Class::Suspended => 2,
        }
    }

    pub fn from_index(index: usize) -> Class {
        Class::ALL[index]
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Archived => "archived",
            Class::Active => "active",
            Class::Suspended => "suspended",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Class {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.label())
    }
}

impl<'de> Deserialize<'de> for Class {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let label = i64::deserialize(d)?;
        Class::from_label(label).ok_or_else(|| serde::de::Error::custom(format!("label {label} not in {{1,2,3}}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub order: i64,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proceeding {
    pub id: String,
    pub label: Option<Class>,
    pub motions: Vec<Motion>,
}

impl Proceeding {
    /// Sorts motions chronologically and checks the record invariants.
    pub fn validated(mut self) -> Result<Self> {
        if self.motions.is_empty() {
            return Err(Error::Validation(format!("proceeding {} has no motions", self.id)));
        }
        self.motions.sort_by_key(|m| m.order);
        for pair in self.motions.windows(2) {
            if pair[0].order == pair[1].order {
                return Err(Error::Validation(format!(
                    "proceeding {} repeats motion order {}",
                    self.id, pair[0].order
                )));
            }
        }
        if let Some(m) = self.motions.iter().find(|m| m.text.trim().is_empty()) {
            return Err(Error::Validation(format!(
                "proceeding {} has an empty motion text (order {})",
                self.id, m.order
            )));
        }
        Ok(self)
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    label: Option<i64>,
    motions: Vec<Motion>,
}

fn parse_record(line: &str) -> std::result::Result<RawRecord, String> {
    serde_json::from_str(line).map_err(|e| e.to_string())
}

/// Reads a JSONL corpus, one proceeding per line.
pub fn load_corpus(path: &Path) -> Result<Vec<Proceeding>> {
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    read_corpus(BufReader::new(file), &path.display().to_string())
}

pub fn read_corpus<R: BufRead>(reader: R, source: &str) -> Result<Vec<Proceeding>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("read {source}"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw = parse_record(&line).map_err(|message| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message,
        })?;
        let label = match raw.label {
            None => None,
            Some(l) => Some(Class::from_label(l).ok_or_else(|| {
                Error::Validation(format!("proceeding {} has label {l}, expected 1, 2 or 3", raw.id))
            })?),
        };
        if !seen.insert(raw.id.clone()) {
            return Err(Error::Validation(format!("duplicate proceeding id {}", raw.id)));
        }
        let proceeding = Proceeding {
            id: raw.id,
            label,
            motions: raw.motions,
        }
        .validated()?;
        out.push(proceeding);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, proceedings: &[Proceeding]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    for p in proceedings {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(format!("write {}", path.display()), e))?;
    }
    w.flush().map_err(|e| Error::io(format!("write {}", path.display()), e))
}

/// One raw motion text per line; blank lines are skipped.
pub fn load_unlabeled(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

pub fn write_unlabeled(path: &Path, texts: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    for t in texts {
        if t.contains('\n') {
            return Err(Error::Validation("unlabeled motion contains a newline".into()));
        }
        writeln!(w, "{t}").map_err(|e| Error::io(format!("write {}", path.display()), e))?;
    }
    w.flush().map_err(|e| Error::io(format!("write {}", path.display()), e))
}

pub const MIN_SPLIT_SIZE: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

/// Sizes for a 70/10/20 split: floor for train and validation, remainder to test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 7 / 10;
    let validation = n / 10;
    (train, validation, n - train - validation)
}

/// Shuffles with [`rng::fisher_yates`] and cuts 70/10/20.
pub fn split_corpus<T: Clone>(items: &[T], seed: u64) -> Result<CorpusSplit<T>> {
    if items.len() < MIN_SPLIT_SIZE {
        return Err(Error::Validation(format!(
            "need at least {MIN_SPLIT_SIZE} labeled proceedings to split, got {}",
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    rng::fisher_yates(&mut order, seed);
    let (n_train, n_val, _) = split_sizes(items.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(CorpusSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
        seed,
    })
}
