//! Activation and annotation storage.
//!
//! Activations live in `.nxa` files:
//!
//! ```text
//! "NXA1"                       magic + format version
//! u32  n_layers                little-endian
//! u32  hidden_dim
//! u64  n_tokens
//! u64  n_sentences
//! u32  sentence_len[n_sentences]
//! f32  values[n_tokens * n_layers * hidden_dim]
//! ```
//!
//! Values are row-major by token and layer-major within a token, so neuron
//! `d` of a token lives in layer `d / hidden_dim` at offset `d % hidden_dim`.
//! Layer 0 is the embedding layer.
//!
//! Labels and tokens are UTF-8 text with one sentence per line and
//! single-space separated items.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NXA1";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationDataset {
    n_layers: usize,
    hidden_dim: usize,
    sentence_lengths: Vec<u32>,
    data: Vec<f32>,
}

impl ActivationDataset {
    /// Builds a dataset from a row-major `[n_tokens, n_layers * hidden_dim]`
    /// buffer, checking every invariant.
    pub fn new(
        n_layers: usize,
        hidden_dim: usize,
        sentence_lengths: Vec<u32>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let n_tokens: usize = sentence_lengths.iter().map(|&l| l as usize).sum();
        let width = n_layers * hidden_dim;
        if data.len() != n_tokens * width {
            return Err(Error::Validation(format!(
                "expected {} values ({} tokens x {} neurons), got {}",
                n_tokens * width,
                n_tokens,
                width,
                data.len()
            )));
        }
        if width > 0 {
            if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite value at token {} (neuron {})",
                    pos / width,
                    pos % width
                )));
            }
        }
        Ok(Self {
            n_layers,
            hidden_dim,
            sentence_lengths,
            data,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.sentence_lengths.iter().map(|&l| l as usize).sum()
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Total neuron count `D = L * H`.
    pub fn n_neurons(&self) -> usize {
        self.n_layers * self.hidden_dim
    }

    pub fn n_sentences(&self) -> usize {
        self.sentence_lengths.len()
    }

    pub fn sentence_lengths(&self) -> &[u32] {
        &self.sentence_lengths
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, token: usize) -> &[f32] {
        let w = self.n_neurons();
        &self.data[token * w..(token + 1) * w]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..3] != b"NXA" {
            return Err(Error::Format("missing NXA magic bytes".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!(
                "unsupported format version {:?}",
                bytes[3] as char
            )));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corrupt(format!(
                "header truncated: {} of {} bytes",
                bytes.len(),
                HEADER_LEN
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let n_layers = u32_at(4) as usize;
        let hidden_dim = u32_at(8) as usize;
        let n_tokens = u64_at(12);
        let n_sentences = u64_at(20);

        let expected = (n_sentences as u128) * 4
            + (n_tokens as u128) * (n_layers as u128) * (hidden_dim as u128) * 4
            + HEADER_LEN as u128;
        if expected != bytes.len() as u128 {
            return Err(Error::Corrupt(format!(
                "header announces {expected} bytes but file has {}",
                bytes.len()
            )));
        }
        let n_sentences = n_sentences as usize;
        let n_tokens = n_tokens as usize;

        let mut offset = HEADER_LEN;
        let sentence_lengths: Vec<u32> = (0..n_sentences)
            .map(|i| u32_at(offset + 4 * i))
            .collect();
        offset += 4 * n_sentences;
        let total: u64 = sentence_lengths.iter().map(|&l| l as u64).sum();
        if total != n_tokens as u64 {
            return Err(Error::Corrupt(format!(
                "sentence lengths sum to {total}, header says {n_tokens} tokens"
            )));
        }

        let data: Vec<f32> = bytes[offset..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(n_layers, hidden_dim, sentence_lengths, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            HEADER_LEN + 4 * self.sentence_lengths.len() + 4 * self.data.len(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.n_layers as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_tokens() as u64).to_le_bytes());
        out.extend_from_slice(&(self.sentence_lengths.len() as u64).to_le_bytes());
        for l in &self.sentence_lengths {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Copies the selected columns, in selection order. The result has a
    /// single "layer" whose width is the selection size.
    pub fn slice_columns(&self, selection: &NeuronIndexSet) -> Result<Self> {
        let width = self.n_neurons();
        selection.check_bounds(width)?;
        let idx = selection.as_slice();
        let mut data = Vec::with_capacity(self.n_tokens() * idx.len());
        for row in self.data.chunks_exact(width.max(1)).take(self.n_tokens()) {
            data.extend(idx.iter().map(|&d| row[d]));
        }
        Ok(Self {
            n_layers: 1,
            hidden_dim: idx.len(),
            sentence_lengths: self.sentence_lengths.clone(),
            data,
        })
    }

    /// Columns of one layer, keeping `hidden_dim`.
    pub fn layer(&self, layer: usize) -> Result<Self> {
        let block = layer_block(layer, self.hidden_dim, self.n_layers)?;
        self.slice_columns(&block)
    }

    /// Keeps the given sentences (by index, in the given order).
    pub fn select_sentences(&self, sentences: &[usize]) -> Self {
        let offsets = sentence_offsets(&self.sentence_lengths);
        let w = self.n_neurons();
        let mut data = Vec::new();
        let mut lengths = Vec::with_capacity(sentences.len());
        for &s in sentences {
            let (start, len) = (offsets[s], self.sentence_lengths[s] as usize);
            data.extend_from_slice(&self.data[start * w..(start + len) * w]);
            lengths.push(self.sentence_lengths[s]);
        }
        Self {
            n_layers: self.n_layers,
            hidden_dim: self.hidden_dim,
            sentence_lengths: lengths,
            data,
        }
    }
}

fn sentence_offsets(lengths: &[u32]) -> Vec<usize> {
    lengths
        .iter()
        .scan(0usize, |acc, &l| {
            let start = *acc;
            *acc += l as usize;
            Some(start)
        })
        .collect()
}

/// Splits text into sentences of whitespace-separated items and checks each
/// line against the expected sentence lengths.
fn parse_aligned(text: &str, sentence_lengths: &[u32]) -> Result<Vec<Vec<String>>> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != sentence_lengths.len() {
        let line = lines.len().min(sentence_lengths.len()) + 1;
        return Err(Error::Alignment {
            line,
            message: format!(
                "file has {} lines but the activations have {} sentences",
                lines.len(),
                sentence_lengths.len()
            ),
        });
    }
    lines
        .iter()
        .zip(sentence_lengths)
        .enumerate()
        .map(|(i, (line, &expected))| {
            let items: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            if items.len() != expected as usize {
                return Err(Error::Alignment {
                    line: i + 1,
                    message: format!("{} items, expected {}", items.len(), expected),
                });
            }
            Ok(items)
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_sentences<'a, I>(path: &Path, sentences: I) -> Result<()>
where
    I: Iterator<Item = Vec<&'a str>>,
{
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-token categorical annotations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    tags: Vec<u32>,
    vocabulary: Vec<String>,
    sentence_lengths: Vec<u32>,
}

impl LabelSet {
    pub fn new(tags: Vec<u32>, vocabulary: Vec<String>, sentence_lengths: Vec<u32>) -> Result<Self> {
        let n: usize = sentence_lengths.iter().map(|&l| l as usize).sum();
        if tags.len() != n {
            return Err(Error::Validation(format!(
                "{} tags for {} tokens",
                tags.len(),
                n
            )));
        }
        let mut seen = HashMap::new();
        for (i, v) in vocabulary.iter().enumerate() {
            if seen.insert(v.as_str(), i).is_some() {
                return Err(Error::Validation(format!("duplicate tag {v:?} in vocabulary")));
            }
        }
        if let Some(&bad) = tags.iter().find(|&&t| t as usize >= vocabulary.len()) {
            return Err(Error::Validation(format!(
                "tag id {bad} outside vocabulary of size {}",
                vocabulary.len()
            )));
        }
        Ok(Self {
            tags,
            vocabulary,
            sentence_lengths,
        })
    }

    /// Parses label text aligned to `sentence_lengths`. The vocabulary starts
    /// from `base` and grows in first-occurrence order.
    pub fn parse(text: &str, sentence_lengths: &[u32], base: &[String]) -> Result<Self> {
        let sentences = parse_aligned(text, sentence_lengths)?;
        let mut vocabulary: Vec<String> = base.to_vec();
        let mut ids: HashMap<String, u32> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as u32))
            .collect();
        let mut tags = Vec::new();
        for tag in sentences.into_iter().flatten() {
            let id = *ids.entry(tag.clone()).or_insert_with(|| {
                vocabulary.push(tag);
                (vocabulary.len() - 1) as u32
            });
            tags.push(id);
        }
        Self::new(tags, vocabulary, sentence_lengths.to_vec())
    }

    pub fn load(path: impl AsRef<Path>, dataset: &ActivationDataset) -> Result<Self> {
        Self::load_with_vocabulary(path, dataset, &[])
    }

    pub fn load_with_vocabulary(
        path: impl AsRef<Path>,
        dataset: &ActivationDataset,
        base: &[String],
    ) -> Result<Self> {
        Self::parse(&read_text(path.as_ref())?, dataset.sentence_lengths(), base)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let offsets = sentence_offsets(&self.sentence_lengths);
        write_sentences(
            path.as_ref(),
            offsets.iter().zip(&self.sentence_lengths).map(|(&o, &l)| {
                self.tags[o..o + l as usize]
                    .iter()
                    .map(|&t| self.vocabulary[t as usize].as_str())
                    .collect()
            }),
        )
    }

    pub fn tags(&self) -> &[u32] {
        &self.tags
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn n_tags(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.tags.len()
    }

    pub fn sentence_lengths(&self) -> &[u32] {
        &self.sentence_lengths
    }

    pub fn check_aligned(&self, dataset: &ActivationDataset) -> Result<()> {
        if self.sentence_lengths != dataset.sentence_lengths() {
            let line = self
                .sentence_lengths
                .iter()
                .zip(dataset.sentence_lengths())
                .position(|(a, b)| a != b)
                .unwrap_or(self.sentence_lengths.len().min(dataset.n_sentences()))
                + 1;
            return Err(Error::Alignment {
                line,
                message: "labels and activations disagree on sentence lengths".into(),
            });
        }
        Ok(())
    }

    pub fn select_sentences(&self, sentences: &[usize]) -> Self {
        let offsets = sentence_offsets(&self.sentence_lengths);
        let mut tags = Vec::new();
        let mut lengths = Vec::with_capacity(sentences.len());
        for &s in sentences {
            let len = self.sentence_lengths[s] as usize;
            tags.extend_from_slice(&self.tags[offsets[s]..offsets[s] + len]);
            lengths.push(self.sentence_lengths[s]);
        }
        Self {
            tags,
            vocabulary: self.vocabulary.clone(),
            sentence_lengths: lengths,
        }
    }
}

/// Surface tokens of a corpus, aligned with its activations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenCorpus {
    tokens: Vec<String>,
    sentence_lengths: Vec<u32>,
}

impl TokenCorpus {
    pub fn new(sentences: Vec<Vec<String>>) -> Self {
        let sentence_lengths = sentences.iter().map(|s| s.len() as u32).collect();
        Self {
            tokens: sentences.into_iter().flatten().collect(),
            sentence_lengths,
        }
    }

    pub fn parse(text: &str, sentence_lengths: &[u32]) -> Result<Self> {
        Ok(Self::new(parse_aligned(text, sentence_lengths)?))
    }

    pub fn load(path: impl AsRef<Path>, dataset: &ActivationDataset) -> Result<Self> {
        Self::parse(&read_text(path.as_ref())?, dataset.sentence_lengths())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let offsets = sentence_offsets(&self.sentence_lengths);
        write_sentences(
            path.as_ref(),
            offsets.iter().zip(&self.sentence_lengths).map(|(&o, &l)| {
                self.tokens[o..o + l as usize]
                    .iter()
                    .map(String::as_str)
                    .collect()
            }),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn sentence_lengths(&self) -> &[u32] {
        &self.sentence_lengths
    }

    pub fn select_sentences(&self, sentences: &[usize]) -> Self {
        let offsets = sentence_offsets(&self.sentence_lengths);
        Self::new(
            sentences
                .iter()
                .map(|&s| {
                    self.tokens[offsets[s]..offsets[s] + self.sentence_lengths[s] as usize].to_vec()
                })
                .collect(),
        )
    }
}

/// Ordered, duplicate-free list of neuron ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NeuronIndexSet {
    indices: Vec<usize>,
}

impl NeuronIndexSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("duplicate neuron id {}", w[0])));
        }
        Ok(Self { indices })
    }

    /// All ids `0..n` in ascending order.
    pub fn all(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.indices.contains(&id)
    }

    pub fn check_bounds(&self, limit: usize) -> Result<()> {
        match self.indices.iter().find(|&&d| d >= limit) {
            Some(&index) => Err(Error::Bounds { index, limit }),
            None => Ok(()),
        }
    }

    /// Writes one id per line followed by a `# layer:offset` comment.
    pub fn write_ids<W: Write>(&self, mut w: W, hidden_dim: usize) -> std::io::Result<()> {
        for &d in &self.indices {
            let (layer, offset) = neuron_location(d, hidden_dim);
            writeln!(w, "{d}\t# {layer}:{offset}")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`write_ids`](Self::write_ids); comments
    /// and blank lines are ignored.
    pub fn parse_ids(text: &str) -> Result<Self> {
        let mut ids = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let id = body.parse::<usize>().map_err(|e| Error::Alignment {
                line: i + 1,
                message: format!("bad neuron id {body:?}: {e}"),
            })?;
            ids.push(id);
        }
        Self::new(ids)
    }
}

/// `(layer, offset)` of a neuron id.
pub fn neuron_location(id: usize, hidden_dim: usize) -> (usize, usize) {
    (id / hidden_dim, id % hidden_dim)
}

/// Neuron ids `[layer * H, (layer + 1) * H)`.
pub fn layer_block(layer: usize, hidden_dim: usize, n_layers: usize) -> Result<NeuronIndexSet> {
    if layer >= n_layers {
        return Err(Error::Bounds {
            index: layer,
            limit: n_layers,
        });
    }
    Ok(NeuronIndexSet {
        indices: (layer * hidden_dim..(layer + 1) * hidden_dim).collect(),
    })
}

/// Sentence-level train/dev/test assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    /// Shuffles sentence ids with `seed` and cuts them by `fractions`. Each
    /// split receives at least one sentence; ids within a split stay in
    /// corpus order.
    pub fn new(n_sentences: usize, fractions: [f64; 3], seed: u64) -> Result<Self> {
        if fractions.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::Validation(format!(
                "split fractions must be positive, got {fractions:?}"
            )));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        if n_sentences < 3 {
            return Err(Error::Split(format!(
                "need at least 3 sentences to split, have {n_sentences}"
            )));
        }

        let mut counts = [0usize; 3];
        counts[0] = ((fractions[0] * n_sentences as f64).round() as usize).max(1);
        counts[1] = ((fractions[1] * n_sentences as f64).round() as usize).max(1);
        while counts[0] + counts[1] > n_sentences - 1 {
            let big = if counts[0] >= counts[1] { 0 } else { 1 };
            counts[big] -= 1;
        }
        counts[2] = n_sentences - counts[0] - counts[1];

        let mut order: Vec<usize> = (0..n_sentences).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let take = |range: std::ops::Range<usize>| {
            let mut v = order[range].to_vec();
            v.sort_unstable();
            v
        };
        Ok(Self {
            train: take(0..counts[0]),
            dev: take(counts[0]..counts[0] + counts[1]),
            test: take(counts[0] + counts[1]..n_sentences),
        })
    }
}

/// A dataset paired with its labels.
#[derive(Clone, Debug)]
pub struct LabeledData {
    pub activations: ActivationDataset,
    pub labels: LabelSet,
}

impl LabeledData {
    pub fn new(activations: ActivationDataset, labels: LabelSet) -> Result<Self> {
        labels.check_aligned(&activations)?;
        Ok(Self {
            activations,
            labels,
        })
    }

    pub fn select_sentences(&self, sentences: &[usize]) -> Self {
        Self {
            activations: self.activations.select_sentences(sentences),
            labels: self.labels.select_sentences(sentences),
        }
    }

    pub fn with_labels(&self, labels: LabelSet) -> Result<Self> {
        Self::new(self.activations.clone(), labels)
    }

    pub fn slice_columns(&self, selection: &NeuronIndexSet) -> Result<Self> {
        Ok(Self {
            activations: self.activations.slice_columns(selection)?,
            labels: self.labels.clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: LabeledData,
    pub dev: LabeledData,
    pub test: LabeledData,
}

/// Seeded sentence-level split of an aligned dataset.
pub fn split(data: &LabeledData, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let plan = SplitPlan::new(data.activations.n_sentences(), fractions, seed)?;
    Ok(Splits {
        train: data.select_sentences(&plan.train),
        dev: data.select_sentences(&plan.dev),
        test: data.select_sentences(&plan.test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n_layers: usize, hidden: usize, lengths: Vec<u32>) -> ActivationDataset {
        let n: usize = lengths.iter().map(|&l| l as usize).sum();
        let data = (0..n * n_layers * hidden).map(|i| i as f32 * 0.5 - 3.0).collect();
        ActivationDataset::new(n_layers, hidden, lengths, data).unwrap()
    }

    #[test]
    fn header_arithmetic() {
        let ds = toy(2, 3, vec![1, 3]);
        let back = ActivationDataset::from_bytes(&ds.to_bytes()).unwrap();
        assert_eq!(back.n_neurons(), 6);
        assert_eq!(back.n_tokens(), 4);
        assert_eq!(back.data().len(), 24);
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let bytes = toy(2, 3, vec![4]).to_bytes();
        let err = ActivationDataset::from_bytes(&bytes[..bytes.len() - 6]).unwrap_err();
        assert!(matches!(err, Error::Corrupt(_)), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = toy(1, 1, vec![1]).to_bytes();
        bytes[3] = b'2';
        assert!(matches!(ActivationDataset::from_bytes(&bytes), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(ActivationDataset::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(ActivationDataset::from_bytes(b""), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_names_token() {
        let mut data = vec![0.0f32; 12];
        data[7] = f32::NAN;
        let err = ActivationDataset::new(2, 2, vec![3], data).unwrap_err();
        assert!(err.to_string().contains("token 1"), "{err}");
    }

    #[test]
    fn paper_scale_header() {
        // 13 layers of 768 dims, one token.
        let ds = ActivationDataset::new(13, 768, vec![1], vec![0.0; 9984]).unwrap();
        let back = ActivationDataset::from_bytes(&ds.to_bytes()).unwrap();
        assert_eq!(back.n_neurons(), 9984);
    }

    #[test]
    fn labels_first_occurrence_vocab() {
        let ds = toy(1, 1, vec![2, 2]);
        let labels = LabelSet::parse("NN VB\nDT NN\n", ds.sentence_lengths(), &[]).unwrap();
        assert_eq!(labels.n_tags(), 3);
        assert_eq!(labels.tags(), &[0, 1, 2, 0]);
        assert_eq!(labels.vocabulary(), &["NN", "VB", "DT"]);
    }

    #[test]
    fn empty_label_file_is_alignment_error() {
        let ds = toy(1, 1, vec![2]);
        let err = LabelSet::parse("", ds.sentence_lengths(), &[]).unwrap_err();
        assert!(matches!(err, Error::Alignment { line: 1, .. }), "{err}");
    }

    #[test]
    fn short_line_reports_line_number() {
        let ds = toy(1, 1, vec![2, 2, 1]);
        let err = LabelSet::parse("A B\nA\nC\n", ds.sentence_lengths(), &[]).unwrap_err();
        assert!(matches!(err, Error::Alignment { line: 2, .. }), "{err}");
    }

    #[test]
    fn base_vocabulary_is_extended() {
        let base = vec!["X".to_string(), "Y".to_string()];
        let labels = LabelSet::parse("Z Y", &[2], &base).unwrap();
        assert_eq!(labels.tags(), &[2, 1]);
        assert_eq!(labels.vocabulary(), &["X", "Y", "Z"]);
    }

    #[test]
    fn layer_blocks() {
        let b = layer_block(0, 768, 13).unwrap();
        assert_eq!(b.as_slice(), (0..768).collect::<Vec<_>>().as_slice());
        let b = layer_block(12, 768, 13).unwrap();
        assert_eq!(b.as_slice().first(), Some(&9216));
        assert_eq!(b.as_slice().last(), Some(&9983));
        assert!(matches!(layer_block(13, 768, 13), Err(Error::Bounds { .. })));
    }

    #[test]
    fn slicing() {
        let ds = toy(3, 4, vec![2, 1]);
        let all = ds.slice_columns(&NeuronIndexSet::all(12)).unwrap();
        assert_eq!(all.data(), ds.data());

        let l1 = ds.layer(1).unwrap();
        assert_eq!(l1.n_neurons(), 4);
        assert_eq!(l1.n_tokens(), 3);
        assert_eq!(l1.row(2), &ds.row(2)[4..8]);

        let sel = NeuronIndexSet::new(vec![11, 0, 5]).unwrap();
        let s = ds.slice_columns(&sel).unwrap();
        assert_eq!(s.row(1), &[ds.row(1)[11], ds.row(1)[0], ds.row(1)[5]]);

        let bad = NeuronIndexSet::new(vec![12]).unwrap();
        assert!(matches!(ds.slice_columns(&bad), Err(Error::Bounds { index: 12, .. })));
    }

    #[test]
    fn top_five_percent_slice_width() {
        let ds = ActivationDataset::new(13, 768, vec![2], vec![1.0; 2 * 9984]).unwrap();
        let sel = NeuronIndexSet::new((0..500).map(|i| i * 19).collect()).unwrap();
        let s = ds.slice_columns(&sel).unwrap();
        assert_eq!((s.n_tokens(), s.n_neurons()), (2, 500));
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(NeuronIndexSet::new(vec![1, 2, 1]).is_err());
    }

    #[test]
    fn ids_export_round_trip() {
        let set = NeuronIndexSet::new(vec![800, 3, 1536]).unwrap();
        let mut buf = Vec::new();
        set.write_ids(&mut buf, 768).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("800\t# 1:32"));
        assert_eq!(NeuronIndexSet::parse_ids(&text).unwrap(), set);
    }

    #[test]
    fn split_counts_and_determinism() {
        let a = SplitPlan::new(10, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((a.train.len(), a.dev.len(), a.test.len()), (8, 1, 1));
        assert_eq!(a, SplitPlan::new(10, [0.8, 0.1, 0.1], 7).unwrap());
        assert!(matches!(
            SplitPlan::new(10, [0.5, 0.5, 0.5], 7),
            Err(Error::Validation(_))
        ));
        assert!(matches!(SplitPlan::new(2, [0.4, 0.3, 0.3], 7), Err(Error::Split(_))));
        let tiny = SplitPlan::new(3, [0.98, 0.01, 0.01], 1).unwrap();
        assert_eq!((tiny.train.len(), tiny.dev.len(), tiny.test.len()), (1, 1, 1));
    }

    #[test]
    fn split_keeps_sentences_whole() {
        let ds = toy(1, 2, vec![1, 2, 3, 4, 5, 6]);
        let text = "a\nb b\nc c c\nd d d d\ne e e e e\nf f f f f f\n";
        let labels = LabelSet::parse(text, ds.sentence_lengths(), &[]).unwrap();
        let data = LabeledData::new(ds, labels).unwrap();
        let s = split(&data, [0.5, 0.25, 0.25], 3).unwrap();
        for part in [&s.train, &s.dev, &s.test] {
            let l = &part.labels;
            let mut off = 0;
            for &len in l.sentence_lengths() {
                let tags = &l.tags()[off..off + len as usize];
                // every tag in a sentence is the same letter, and the letter
                // determines the sentence length
                assert!(tags.iter().all(|&t| t == tags[0]));
                assert_eq!(tags[0] as u32 + 1, len);
                off += len as usize;
            }
            part.labels.check_aligned(&part.activations).unwrap();
        }
        assert_eq!(
            s.train.activations.n_tokens() + s.dev.activations.n_tokens() + s.test.activations.n_tokens(),
            21
        );
    }

    proptest! {
        #[test]
        fn bytes_round_trip(
            n_layers in 1usize..4,
            hidden in 1usize..5,
            lengths in proptest::collection::vec(0u32..4, 0..5),
            seed in any::<u64>(),
        ) {
            let n: usize = lengths.iter().map(|&l| l as usize).sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..n * n_layers * hidden)
                .map(|_| rand::Rng::random_range(&mut rng, -1e6f32..1e6))
                .collect();
            let ds = ActivationDataset::new(n_layers, hidden, lengths, data).unwrap();
            let bytes = ds.to_bytes();
            let back = ActivationDataset::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }

        #[test]
        fn neuron_maps_into_its_layer_block(h in 1usize..50, l in 1usize..14, frac in 0.0f64..1.0) {
            let d = ((l * h) as f64 * frac) as usize;
            let (layer, _) = neuron_location(d, h);
            prop_assert!(layer_block(layer, h, l).unwrap().contains(d));
        }

        #[test]
        fn slice_then_identity_equals_direct(layer in 0usize..3) {
            let ds = toy(3, 4, vec![2, 3]);
            let block = layer_block(layer, 4, 3).unwrap();
            let direct = ds.slice_columns(&block).unwrap();
            let twice = direct.slice_columns(&NeuronIndexSet::all(4)).unwrap();
            prop_assert_eq!(direct, twice);
        }

        #[test]
        fn split_is_a_partition(n in 3usize..60, seed in any::<u64>(), a in 0.1f64..0.8) {
            let rest = (1.0 - a) / 2.0;
            let plan = SplitPlan::new(n, [a, rest, 1.0 - a - rest], seed).unwrap();
            let mut all: Vec<usize> = plan.train.iter().chain(&plan.dev).chain(&plan.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
