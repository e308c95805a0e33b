//! Planted-pattern synthetic corpus.
//!
//! Every proceeding draws a status from the class priors. With probability
//! `signal_probability` its most recent motion carries the class indicator
//! phrase, two adjacent words that survive normalization as a collocation.
//! Other words are uniform draws from a pseudo-word filler vocabulary,
//! except that in a motion carrying an indicator each remaining word comes,
//! with probability `context_affinity`, from a block of the filler vocabulary
//! reserved for that class. Without that affinity every token has the same
//! context distribution and embeddings learned from the corpus carry no
//! information about the indicators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Class, Motion, Proceeding};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_labeled: usize,
    pub n_unlabeled_motions: usize,
    pub class_priors: [f64; 3],
    pub signal_probability: f64,
    pub filler_vocab_size: usize,
    /// Size of each class's block of context words.
    pub context_vocab_size: usize,
    /// Probability that a word of an indicator motion comes from the class block.
    pub context_affinity: f64,
    pub motions_per_proceeding: (usize, usize),
    pub tokens_per_motion: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_labeled: 3000,
            n_unlabeled_motions: 3000,
            class_priors: [0.47, 0.45, 0.08],
            signal_probability: 0.9,
            filler_vocab_size: 8000,
            context_vocab_size: 200,
            context_affinity: 0.5,
            motions_per_proceeding: (1, 5),
            tokens_per_motion: (10, 70),
            seed: 2021,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.class_priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.class_priors.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Validation(format!(
                "class priors {:?} must be non-negative and sum to 1",
                self.class_priors
            )));
        }
        if !(0.0..=1.0).contains(&self.signal_probability) {
            return Err(Error::Validation(format!(
                "signal probability {} outside [0, 1]",
                self.signal_probability
            )));
        }
        let (m_lo, m_hi) = self.motions_per_proceeding;
        if m_lo == 0 || m_lo > m_hi {
            return Err(Error::Validation(format!(
                "motions per proceeding range ({m_lo}, {m_hi}) is invalid"
            )));
        }
        let (t_lo, t_hi) = self.tokens_per_motion;
        if t_lo < 2 || t_lo > t_hi {
            return Err(Error::Validation(format!(
                "tokens per motion range ({t_lo}, {t_hi}) is invalid (minimum 2)"
            )));
        }
        if !(0.0..=1.0).contains(&self.context_affinity) {
            return Err(Error::Validation(format!(
                "context affinity {} outside [0, 1]",
                self.context_affinity
            )));
        }
        if self.context_affinity > 0.0
            && (self.context_vocab_size == 0 || 3 * self.context_vocab_size > self.filler_vocab_size)
        {
            return Err(Error::Validation(format!(
                "three context blocks of {} words do not fit a filler vocabulary of {}",
                self.context_vocab_size, self.filler_vocab_size
            )));
        }
        if self.filler_vocab_size == 0 {
            return Err(Error::Validation("filler vocabulary is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub labeled: Vec<Proceeding>,
    pub unlabeled: Vec<String>,
}

/// Raw two-word indicator for a class, as it appears in generated text.
pub fn indicator_phrase(class: Class) -> (&'static str, &'static str) {
    match class {
        Class::Archived => ("Arquivamento", "Definitivo"),
        Class::Active => ("Juntada", "Petição"),
        Class::Suspended => ("Arquivamento", "Provisório"),
    }
}

/// Standardization rules matching the variants the generator emits.
pub fn synthetic_standardization() -> Vec<(String, String)> {
    vec![
        ("lei federal".to_string(), "lei".to_string()),
        ("lei estadual".to_string(), "lei".to_string()),
    ]
}

const CONSONANTS: &[u8] = b"bcdfgjlmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const LAW_VARIANTS: [(&str, &str); 2] = [("Lei", "Federal"), ("Lei", "Estadual")];
const LAW_PROBABILITY: f64 = 0.15;
const PUNCTUATION: [&str; 4] = [",", ".", ";", ":"];

/// Three-syllable pseudo-word; distinct for every `index` below 421875.
fn filler_word(index: usize) -> String {
    let n_syll = CONSONANTS.len() * VOWELS.len();
    let space = n_syll * n_syll * n_syll;
    let mut code = (index.wrapping_mul(7919) + 13) % space;
    let mut word = String::with_capacity(6);
    for _ in 0..3 {
        let s = code % n_syll;
        code /= n_syll;
        word.push(CONSONANTS[s / VOWELS.len()] as char);
        word.push(VOWELS[s % VOWELS.len()] as char);
    }
    word
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    fillers: Vec<String>,
}

impl Generator<'_> {
    fn draw_class(&self, rng: &mut ChaCha8Rng) -> Class {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for class in Class::ALL {
            acc += self.spec.class_priors[class.index()];
            if u < acc {
                return class;
            }
        }
        // Rounding at the top end of the cumulative sum.
        *Class::ALL
            .iter()
            .rev()
            .find(|c| self.spec.class_priors[c.index()] > 0.0)
            .unwrap_or(&Class::Archived)
    }

    fn motion_words(&self, context: Option<Class>, rng: &mut ChaCha8Rng) -> Vec<String> {
        let (lo, hi) = self.spec.tokens_per_motion;
        let n = rng.random_range(lo..=hi);
        let block = self.spec.context_vocab_size;
        let mut words: Vec<String> = (0..n)
            .map(|_| {
                let i = match context {
                    Some(c) if rng.random::<f64>() < self.spec.context_affinity => {
                        c.index() * block + rng.random_range(0..block)
                    }
                    _ => rng.random_range(0..self.fillers.len()),
                };
                self.fillers[i].clone()
            })
            .collect();
        if rng.random::<f64>() < LAW_PROBABILITY {
            let (a, b) = LAW_VARIANTS[rng.random_range(0..LAW_VARIANTS.len())];
            let pos = rng.random_range(0..n - 1);
            words[pos] = a.to_string();
            words[pos + 1] = b.to_string();
        }
        words
    }

    fn render(words: &[String], rng: &mut ChaCha8Rng) -> String {
        let mut out = String::new();
        for (i, w) in words.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            if i == 0 || rng.random::<f64>() < 0.1 {
                let mut chars = w.chars();
                if let Some(first) = chars.next() {
                    out.extend(first.to_uppercase());
                    out.push_str(chars.as_str());
                }
            } else {
                out.push_str(w);
            }
            if i + 1 < words.len() && rng.random::<f64>() < 0.08 {
                out.push_str(PUNCTUATION[rng.random_range(0..PUNCTUATION.len())]);
            }
        }
        out.push('.');
        out
    }

    fn proceeding(&self, id: String, rng: &mut ChaCha8Rng) -> Proceeding {
        let class = self.draw_class(rng);
        let (lo, hi) = self.spec.motions_per_proceeding;
        let n_motions = rng.random_range(lo..=hi);
        let mut motions = Vec::with_capacity(n_motions);
        for order in 0..n_motions {
            let last = order + 1 == n_motions;
            let signal = last && rng.random::<f64>() < self.spec.signal_probability;
            let mut words = self.motion_words(signal.then_some(class), rng);
            if signal {
                let (a, b) = indicator_phrase(class);
                let pos = rng.random_range(0..words.len() - 1);
                words[pos] = a.to_string();
                words[pos + 1] = b.to_string();
            }
            motions.push(Motion {
                order: order as i64 + 1,
                text: Self::render(&words, rng),
            });
        }
        Proceeding {
            id,
            label: Some(class),
            motions,
        }
    }
}

/// Generates the labeled proceedings and the unlabeled motion texts.
///
/// Unlabeled motions come from proceedings drawn by the same process with
/// their labels discarded, flattened in chronological order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let generator = Generator {
        spec,
        fillers: (0..spec.filler_vocab_size).map(filler_word).collect(),
    };

    let mut rng = rng::stream(spec.seed, streams::SYNTH_LABELED);
    let labeled = (0..spec.n_labeled)
        .map(|i| generator.proceeding(format!("synth-{i:06}"), &mut rng))
        .collect();

    let mut rng = rng::stream(spec.seed, streams::SYNTH_UNLABELED);
    let mut unlabeled = Vec::with_capacity(spec.n_unlabeled_motions);
    let mut k = 0;
    while unlabeled.len() < spec.n_unlabeled_motions {
        let p = generator.proceeding(format!("u{k}"), &mut rng);
        k += 1;
        for m in p.motions {
            if unlabeled.len() == spec.n_unlabeled_motions {
                break;
            }
            unlabeled.push(m.text);
        }
    }

    Ok(SyntheticCorpus { labeled, unlabeled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::normalize;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_labeled: 1000,
            n_unlabeled_motions: 200,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn filler_words_are_distinct() {
        let words: std::collections::HashSet<_> = (0..20_000).map(filler_word).collect();
        assert_eq!(words.len(), 20_000);
    }

    #[test]
    fn label_frequencies_near_priors() {
        let spec = SyntheticSpec {
            n_labeled: 4000,
            ..small(5)
        };
        let c = generate_synthetic(&spec).unwrap();
        let mut counts = [0usize; 3];
        for p in &c.labeled {
            counts[p.label.unwrap().index()] += 1;
        }
        for (i, &prior) in [0.47, 0.45, 0.08].iter().enumerate() {
            let freq = counts[i] as f64 / 4000.0;
            assert!((freq - prior).abs() < 0.03, "class {i}: {freq}");
        }
    }

    #[test]
    fn forced_signal_in_every_last_motion() {
        let spec = SyntheticSpec {
            signal_probability: 1.0,
            ..small(9)
        };
        for p in generate_synthetic(&spec).unwrap().labeled {
            let (a, b) = indicator_phrase(p.label.unwrap());
            let last = normalize(&p.motions.last().unwrap().text);
            assert!(last.contains(&normalize(&format!("{a} {b}"))), "{last}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(
            generate_synthetic(&small(1)).unwrap(),
            generate_synthetic(&small(1)).unwrap()
        );
        assert_ne!(
            generate_synthetic(&small(1)).unwrap().labeled,
            generate_synthetic(&small(2)).unwrap().labeled
        );
    }

    #[test]
    fn unlabeled_count_exact() {
        let c = generate_synthetic(&small(3)).unwrap();
        assert_eq!(c.unlabeled.len(), 200);
    }

    #[test]
    fn rejects_bad_priors() {
        let spec = SyntheticSpec {
            class_priors: [0.5, 0.5, 0.1],
            ..small(0)
        };
        assert!(generate_synthetic(&spec).is_err());
        let spec = SyntheticSpec {
            signal_probability: 1.5,
            ..small(0)
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn priors_chi_square_at_5000() {
        let spec = SyntheticSpec {
            n_labeled: 5000,
            n_unlabeled_motions: 1,
            ..small(77)
        };
        let c = generate_synthetic(&spec).unwrap();
        let mut counts = [0f64; 3];
        for p in &c.labeled {
            counts[p.label.unwrap().index()] += 1.0;
        }
        let chi2: f64 = counts
            .iter()
            .zip(spec.class_priors)
            .map(|(o, p)| {
                let e = p * 5000.0;
                (o - e).powi(2) / e
            })
            .sum();
        // Upper 0.001 quantile of chi-square with 2 degrees of freedom.
        assert!(chi2 < 13.8155, "chi2 = {chi2}");
    }
}
