//! Control tasks and selectivity.
//!
//! A control task gives every word type a fixed random tag drawn uniformly
//! from the linguistic task's tag count. Selectivity is linguistic accuracy
//! minus control accuracy, in points.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::probe::{self, TrainConfig};
use crate::store::{LabelSet, LabeledData, TokenCorpus};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlLabelSet {
    pub tags: Vec<u32>,
    pub mapping: BTreeMap<String, u32>,
    pub seed: u64,
    pub n_tags: usize,
    sentence_lengths: Vec<u32>,
}

/// Control tag of one word type. Depends only on `(word, n_tags, seed)`.
pub fn control_tag(word: &str, n_tags: usize, seed: u64) -> u32 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(word.as_bytes());
    let digest = hasher.finalize();
    let key = u64::from_le_bytes(digest[..8].try_into().unwrap());
    ChaCha8Rng::seed_from_u64(key).random_range(0..n_tags as u32)
}

/// Control vocabulary entry for tag id `i`.
pub fn control_tag_name(i: usize) -> String {
    format!("C{i}")
}

pub fn make_control(tokens: &TokenCorpus, linguistic: &LabelSet, seed: u64) -> Result<ControlLabelSet> {
    make_control_with_tags(tokens, linguistic, linguistic.n_tags(), seed)
}

/// Like [`make_control`] with an explicit tag count. Separately
/// stored splits share one mapping.
pub fn make_control_with_tags(
    tokens: &TokenCorpus,
    linguistic: &LabelSet,
    n_tags: usize,
    seed: u64,
) -> Result<ControlLabelSet> {
    if tokens.sentence_lengths() != linguistic.sentence_lengths() {
        let line = tokens
            .sentence_lengths()
            .iter()
            .zip(linguistic.sentence_lengths())
            .position(|(a, b)| a != b)
            .unwrap_or(tokens.sentence_lengths().len().min(linguistic.sentence_lengths().len()))
            + 1;
        return Err(Error::Alignment {
            line,
            message: "tokens and labels disagree on sentence lengths".into(),
        });
    }
    if n_tags == 0 {
        return Err(Error::Validation("linguistic task has no tags".into()));
    }
    let mut mapping = BTreeMap::new();
    let tags = tokens
        .tokens()
        .iter()
        .map(|w| {
            *mapping
                .entry(w.clone())
                .or_insert_with(|| control_tag(w, n_tags, seed))
        })
        .collect();
    Ok(ControlLabelSet {
        tags,
        mapping,
        seed,
        n_tags,
        sentence_lengths: tokens.sentence_lengths().to_vec(),
    })
}

impl ControlLabelSet {
    /// As an ordinary label set with vocabulary `C0..C{T-1}`.
    pub fn to_label_set(&self) -> LabelSet {
        LabelSet::new(
            self.tags.clone(),
            (0..self.n_tags).map(control_tag_name).collect(),
            self.sentence_lengths.clone(),
        )
        .expect("control tags are in range by construction")
    }

    /// Writes the control labels in the linguistic label text format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_label_set().save(path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectivityResult {
    pub linguistic_accuracy: f64,
    pub control_accuracy: f64,
    /// `100 * (linguistic - control)`, in accuracy points.
    pub selectivity: f64,
}

impl SelectivityResult {
    pub fn new(linguistic_accuracy: f64, control_accuracy: f64) -> Self {
        Self {
            linguistic_accuracy,
            control_accuracy,
            selectivity: 100.0 * (linguistic_accuracy - control_accuracy),
        }
    }
}

/// Trains one probe per task with the same config and compares their
/// accuracies on the evaluation split.
pub fn selectivity(
    config: &TrainConfig,
    linguistic: (&LabeledData, &LabeledData),
    control: (&LabeledData, &LabeledData),
    exec: Execution,
) -> Result<SelectivityResult> {
    let run = |(train, eval): (&LabeledData, &LabeledData)| -> Result<f64> {
        let model = probe::train(train, config)?;
        Ok(probe::evaluate_with(&model, eval, Execution::Sequential)?.accuracy)
    };
    let (ling, ctl) = par::join(exec, || run(linguistic), || run(control));
    Ok(SelectivityResult::new(ling?, ctl?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> TokenCorpus {
        TokenCorpus::new(
            lines
                .iter()
                .map(|l| l.split(' ').map(str::to_string).collect())
                .collect(),
        )
    }

    fn labels_for(tokens: &TokenCorpus, n_tags: usize) -> LabelSet {
        let tags = (0..tokens.tokens().len()).map(|i| (i % n_tags) as u32).collect();
        LabelSet::new(
            tags,
            (0..n_tags).map(|i| format!("T{i}")).collect(),
            tokens.sentence_lengths().to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn single_type_gets_single_tag() {
        let t = corpus(&["the the the", "the the"]);
        let c = make_control(&t, &labels_for(&t, 5), 11).unwrap();
        assert!(c.tags.iter().all(|&x| x == c.tags[0]));
        assert_eq!(c.mapping.len(), 1);
    }

    #[test]
    fn deterministic_and_case_sensitive() {
        let t = corpus(&["The the THE", "a b c d"]);
        let l = labels_for(&t, 44);
        let a = make_control(&t, &l, 3).unwrap();
        assert_eq!(a, make_control(&t, &l, 3).unwrap());
        assert_eq!(a.mapping.len(), 7);
        assert_eq!(a.to_label_set().n_tags(), 44);
    }

    #[test]
    fn mapping_independent_of_corpus_order() {
        let a = corpus(&["x y z", "w"]);
        let b = corpus(&["w", "z y x"]);
        let ca = make_control(&a, &labels_for(&a, 7), 5).unwrap();
        let cb = make_control(&b, &labels_for(&b, 7), 5).unwrap();
        assert_eq!(ca.mapping, cb.mapping);
    }

    #[test]
    fn uniform_within_multinomial_bounds() {
        let (v, t) = (20_000usize, 10usize);
        let mut counts = vec![0usize; t];
        for i in 0..v {
            counts[control_tag(&format!("w{i}"), t, 99) as usize] += 1;
        }
        let p = 1.0 / t as f64;
        let mean = v as f64 * p;
        let sigma = (v as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 4.0 * sigma, "{c}");
        }
    }

    #[test]
    fn misaligned_tokens() {
        let t = corpus(&["a b", "c"]);
        let other = corpus(&["a b", "c d"]);
        let err = make_control(&t, &labels_for(&other, 2), 0).unwrap_err();
        assert!(matches!(err, Error::Alignment { line: 2, .. }));
    }

    #[test]
    fn control_file_round_trip() {
        let t = corpus(&["a b a", "c"]);
        let c = make_control(&t, &labels_for(&t, 3), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("control.txt");
        c.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back = LabelSet::parse(&text, t.sentence_lengths(), &[]).unwrap();
        // same partition of tokens, possibly renumbered
        let names: Vec<&str> = back.tags().iter().map(|&i| back.vocabulary()[i as usize].as_str()).collect();
        let expected: Vec<String> = c.tags.iter().map(|&i| control_tag_name(i as usize)).collect();
        assert_eq!(names, expected);
    }

    #[test]
    fn selectivity_points() {
        let s = SelectivityResult::new(0.9, 0.6);
        assert!((s.selectivity - 30.0).abs() < 1e-9);
    }
}
