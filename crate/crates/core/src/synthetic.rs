//! Seeded synthetic tasks with known structure, used to exercise the
//! pipeline end to end without a transformer checkpoint.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::store::{ActivationDataset, LabelSet, LabeledData, TokenCorpus};

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub data: LabeledData,
    pub tokens: TokenCorpus,
}

fn tag_vocabulary(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("T{i}")).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

fn assemble(
    n_layers: usize,
    hidden_dim: usize,
    sentence_len: u32,
    data: Vec<f32>,
    tags: Vec<u32>,
    n_tags: usize,
    words: Vec<String>,
) -> Result<SyntheticTask> {
    let n = tags.len();
    let lengths = vec![sentence_len; n / sentence_len as usize];
    let activations = ActivationDataset::new(n_layers, hidden_dim, lengths.clone(), data)?;
    let labels = LabelSet::new(tags, tag_vocabulary(n_tags), lengths)?;
    let tokens = TokenCorpus::new(
        words
            .chunks(sentence_len as usize)
            .map(|c| c.to_vec())
            .collect(),
    );
    Ok(SyntheticTask {
        data: LabeledData::new(activations, labels)?,
        tokens,
    })
}

fn unique_words(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

/// Gaussian activations where the tag of each token is the arg-max over a
/// few planted neurons. Tag `i` corresponds to `planted[i]`.
#[derive(Clone, Debug)]
pub struct PlantedTask {
    pub n_sentences: usize,
    pub sentence_len: u32,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub planted: Vec<usize>,
    pub seed: u64,
}

impl PlantedTask {
    pub fn generate(&self) -> Result<SyntheticTask> {
        let d = self.n_layers * self.hidden_dim;
        let n = self.n_sentences * self.sentence_len as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let data = gaussian(&mut rng, n * d);
        let tags = data
            .chunks_exact(d)
            .map(|row| {
                let mut best = 0;
                for (i, &p) in self.planted.iter().enumerate() {
                    if row[p] > row[self.planted[best]] {
                        best = i;
                    }
                }
                best as u32
            })
            .collect();
        assemble(
            self.n_layers,
            self.hidden_dim,
            self.sentence_len,
            data,
            tags,
            self.planted.len(),
            unique_words(n),
        )
    }
}

/// Gaussian activations where tags are the arg-max of a random linear map
/// of a single layer's block.
#[derive(Clone, Debug)]
pub struct LayerTask {
    pub n_sentences: usize,
    pub sentence_len: u32,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub target_layer: usize,
    pub n_tags: usize,
    pub seed: u64,
}

impl LayerTask {
    pub fn generate(&self) -> Result<SyntheticTask> {
        let d = self.n_layers * self.hidden_dim;
        let n = self.n_sentences * self.sentence_len as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let map = Array2::from_shape_fn((self.n_tags, self.hidden_dim), |_| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let data = gaussian(&mut rng, n * d);
        let lo = self.target_layer * self.hidden_dim;
        let tags = data
            .chunks_exact(d)
            .map(|row| {
                let block = &row[lo..lo + self.hidden_dim];
                let scores: Vec<f64> = map
                    .rows()
                    .into_iter()
                    .map(|w| w.iter().zip(block).map(|(a, &b)| a * b as f64).sum())
                    .collect();
                crate::probe::argmax(&scores) as u32
            })
            .collect();
        assemble(
            self.n_layers,
            self.hidden_dim,
            self.sentence_len,
            data,
            tags,
            self.n_tags,
            unique_words(n),
        )
    }
}

/// Two classes in the plane, split by a random line through a random
/// offset, with no point closer than `margin` to the line.
pub fn separable_2d(n: usize, margin: f64, seed: u64) -> Result<SyntheticTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (nx, ny) = (angle.cos(), angle.sin());
    let offset: f64 = rng.random_range(-0.5..0.5);
    let mut data = Vec::with_capacity(2 * n);
    let mut tags = Vec::with_capacity(n);
    while tags.len() < n {
        let x: f64 = rng.random_range(-3.0..3.0);
        let y: f64 = rng.random_range(-3.0..3.0);
        let side = nx * x + ny * y - offset;
        if side.abs() < margin {
            continue;
        }
        data.extend_from_slice(&[x as f32, y as f32]);
        tags.push(u32::from(side > 0.0));
    }
    assemble(1, 2, 1, data, tags, 2, unique_words(n))
}

/// Activations that encode nothing but word identity: every token is the
/// one-hot vector of its type. The linguistic tag is a fixed function of the
/// type.
#[derive(Clone, Debug)]
pub struct TypeIdentityTask {
    pub n_sentences: usize,
    pub sentence_len: u32,
    pub n_types: usize,
    pub n_tags: usize,
    pub seed: u64,
}

impl TypeIdentityTask {
    pub fn generate(&self) -> Result<SyntheticTask> {
        let n = self.n_sentences * self.sentence_len as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let type_tag: Vec<u32> = (0..self.n_types)
            .map(|_| rng.random_range(0..self.n_tags as u32))
            .collect();
        let mut data = vec![0.0f32; n * self.n_types];
        let mut tags = Vec::with_capacity(n);
        let mut words = Vec::with_capacity(n);
        for (i, row) in data.chunks_exact_mut(self.n_types).enumerate() {
            // every type occurs at least once before sampling starts
            let ty = if i < self.n_types {
                i
            } else {
                rng.random_range(0..self.n_types)
            };
            row[ty] = 1.0;
            tags.push(type_tag[ty]);
            words.push(format!("type{ty}"));
        }
        assemble(1, self.n_types, self.sentence_len, data, tags, self.n_tags, words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_tags_follow_planted_neurons() {
        let task = PlantedTask {
            n_sentences: 20,
            sentence_len: 5,
            n_layers: 3,
            hidden_dim: 10,
            planted: vec![3, 11, 25],
            seed: 1,
        }
        .generate()
        .unwrap();
        let acts = &task.data.activations;
        for (t, &tag) in task.data.labels.tags().iter().enumerate() {
            let r = acts.row(t);
            let winner = [3, 11, 25][tag as usize];
            assert!([3, 11, 25].iter().all(|&p| r[p] <= r[winner]));
        }
        assert_eq!(task.tokens.tokens().len(), 100);
    }

    #[test]
    fn separable_points_respect_margin() {
        let task = separable_2d(200, 0.3, 4).unwrap();
        assert_eq!(task.data.labels.n_tokens(), 200);
        let ones = task.data.labels.tags().iter().filter(|&&t| t == 1).count();
        assert!(ones > 0 && ones < 200);
    }

    #[test]
    fn type_identity_is_one_hot() {
        let task = TypeIdentityTask {
            n_sentences: 10,
            sentence_len: 10,
            n_types: 15,
            n_tags: 4,
            seed: 2,
        }
        .generate()
        .unwrap();
        for t in 0..100 {
            let row = task.data.activations.row(t);
            assert_eq!(row.iter().sum::<f32>(), 1.0);
            let ty = row.iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(task.tokens.tokens()[t], format!("type{ty}"));
        }
    }
}
