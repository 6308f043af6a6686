//! Synthetic preference data: prompts from a seeded "natural" token
//! distribution, completion pairs from the reference policy, and gold labels
//! with optional label noise.
//!
//! Each pair owns two counter-derived random streams, one for sampling and
//! one for labeling, so changing the noise rate never perturbs completions.

mod io;

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{GoldRewardModel, PolicyModel};
use crate::numerics::sigmoid_scalar;
use crate::rng::{self, sample_weighted};

pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset, DATASET_FORMAT_VERSION};

/// Token vocabulary, sequence lengths and the natural unigram distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub completion_len: usize,
    pub natural: Vec<f64>,
}

impl World {
    /// The natural distribution is a Dirichlet(α) draw over the vocabulary.
    pub fn new(
        vocab_size: usize,
        prompt_len: usize,
        completion_len: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        if vocab_size < 2 || prompt_len == 0 || completion_len == 0 {
            return Err(Error::input(
                "world needs vocab_size >= 2 and positive sequence lengths",
            ));
        }
        let gamma = Gamma::new(alpha, 1.0)
            .map_err(|e| Error::input(format!("dirichlet alpha {alpha}: {e}")))?;
        let mut r = rng::substream(seed, "natural", 0);
        let draws: Vec<f64> = (0..vocab_size)
            .map(|_| gamma.sample(&mut r).max(1e-300))
            .collect();
        let total: f64 = draws.iter().sum();
        Ok(Self {
            vocab_size,
            prompt_len,
            completion_len,
            natural: draws.iter().map(|g| g / total).collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preference {
    #[serde(rename = "A")]
    A,
    #[serde(rename = "B")]
    B,
}

impl Preference {
    pub fn flipped(self) -> Self {
        match self {
            Preference::A => Preference::B,
            Preference::B => Preference::A,
        }
    }

    /// +1 when A is preferred, −1 otherwise.
    pub fn sign(self) -> f64 {
        match self {
            Preference::A => 1.0,
            Preference::B => -1.0,
        }
    }
}

/// Margins this close to zero count as ties, which go to A.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Noise-free label implied by a gold margin `r_gold(a) − r_gold(b)`.
pub fn clean_label(gold_margin: f64) -> Preference {
    if gold_margin.abs() < TIE_TOLERANCE || gold_margin > 0.0 {
        Preference::A
    } else {
        Preference::B
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledPair {
    pub prompt: Vec<usize>,
    pub completion_a: Vec<usize>,
    pub completion_b: Vec<usize>,
}

impl UnlabeledPair {
    pub fn swapped(&self) -> Self {
        Self {
            prompt: self.prompt.clone(),
            completion_a: self.completion_b.clone(),
            completion_b: self.completion_a.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: Vec<usize>,
    #[serde(rename = "a")]
    pub completion_a: Vec<usize>,
    #[serde(rename = "b")]
    pub completion_b: Vec<usize>,
    pub label: Preference,
    pub flipped: bool,
    pub gold_margin: f64,
}

impl PreferencePair {
    pub fn clean_label(&self) -> Preference {
        clean_label(self.gold_margin)
    }

    pub fn full_sequences(&self) -> (Vec<usize>, Vec<usize>) {
        let mut a = self.prompt.clone();
        a.extend_from_slice(&self.completion_a);
        let mut b = self.prompt.clone();
        b.extend_from_slice(&self.completion_b);
        (a, b)
    }

    pub fn swapped(&self) -> Self {
        Self {
            prompt: self.prompt.clone(),
            completion_a: self.completion_b.clone(),
            completion_b: self.completion_a.clone(),
            label: self.label.flipped(),
            flipped: self.flipped,
            gold_margin: -self.gold_margin,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Gold argmax, then an independent flip with probability `noise_rate`.
    #[default]
    ArgmaxFlip,
    /// Label drawn from σ(gold margin); `noise_rate` is unused.
    BradleyTerry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub noise_rate: f64,
    pub label_mode: LabelMode,
    pub gold_fingerprint: String,
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub completion_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub meta: DatasetMeta,
}

impl PreferenceDataset {
    pub fn new(
        pairs: Vec<PreferencePair>,
        train: Range<usize>,
        validation: Range<usize>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if train.start != 0
            || train.is_empty()
            || validation.start < train.end
            || validation.end < validation.start
        {
            return Err(Error::input(format!(
                "splits must be disjoint and start at 0: train {train:?}, validation {validation:?}"
            )));
        }
        if validation.end > pairs.len() {
            return Err(Error::input(format!(
                "splits {train:?}/{validation:?} exceed {} pairs",
                pairs.len()
            )));
        }
        if !(0.0..0.5).contains(&meta.noise_rate) {
            return Err(Error::input(format!(
                "noise_rate {} outside [0, 0.5)",
                meta.noise_rate
            )));
        }
        Ok(Self {
            pairs,
            train,
            validation,
            meta,
        })
    }

    pub fn train_pairs(&self) -> &[PreferencePair] {
        &self.pairs[self.train.clone()]
    }

    pub fn validation_pairs(&self) -> &[PreferencePair] {
        &self.pairs[self.validation.clone()]
    }

    pub fn flipped_fraction(&self) -> f64 {
        self.pairs.iter().filter(|p| p.flipped).count() as f64 / self.pairs.len() as f64
    }
}

pub fn generate_prompts(
    world: &World,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    if count == 0 {
        return Err(Error::input("prompt count must be >= 1"));
    }
    Ok((0..count)
        .map(|_| {
            (0..world.prompt_len)
                .map(|_| sample_weighted(&world.natural, rng))
                .collect()
        })
        .collect())
}

const MAX_COLLISION_RETRIES: usize = 16;

/// Two reference-policy completions per prompt. Pair `i` samples from its own
/// stream; `completion_b` is redrawn on an exact collision.
pub fn generate_pairs(
    prompts: &[Vec<usize>],
    reference: &PolicyModel,
    seed: u64,
) -> Result<Vec<UnlabeledPair>> {
    prompts
        .iter()
        .enumerate()
        .map(|(i, prompt)| {
            let mut r = rng::substream(seed, "pair-sample", i as u64);
            let a = reference.sample_completion(prompt, &mut r, 1.0)?.completion;
            for _ in 0..=MAX_COLLISION_RETRIES {
                let b = reference.sample_completion(prompt, &mut r, 1.0)?.completion;
                if b != a {
                    return Ok(UnlabeledPair {
                        prompt: prompt.clone(),
                        completion_a: a,
                        completion_b: b,
                    });
                }
            }
            Err(Error::DegeneratePolicy(format!(
                "pair {i}: {MAX_COLLISION_RETRIES} resamples all collided with completion_a"
            )))
        })
        .collect()
}

/// Gold margins `r_gold(a) − r_gold(b)` for each pair.
pub fn gold_margins(pairs: &[UnlabeledPair], gold: &GoldRewardModel) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(512) {
        let mut seqs = Vec::with_capacity(chunk.len() * 2);
        for p in chunk {
            let mut a = p.prompt.clone();
            a.extend_from_slice(&p.completion_a);
            seqs.push(a);
        }
        for p in chunk {
            let mut b = p.prompt.clone();
            b.extend_from_slice(&p.completion_b);
            seqs.push(b);
        }
        let scores = gold.score_sequences(&seqs)?;
        let (sa, sb) = scores.split_at(chunk.len());
        out.extend(sa.iter().zip(sb).map(|(a, b)| a - b));
    }
    Ok(out)
}

/// Labels pairs with the gold model. Pair `i` draws its noise from a stream
/// keyed only by `(seed, i)`, so completion order does not affect flips.
pub fn gold_label(
    pairs: &[UnlabeledPair],
    gold: &GoldRewardModel,
    noise_rate: f64,
    mode: LabelMode,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    if !(0.0..0.5).contains(&noise_rate) {
        return Err(Error::input(format!(
            "noise_rate {noise_rate} outside [0, 0.5)"
        )));
    }
    let margins = gold_margins(pairs, gold)?;
    Ok(pairs
        .iter()
        .zip(margins)
        .enumerate()
        .map(|(i, (p, margin))| {
            let base = clean_label(margin);
            let mut r = rng::substream(seed, "pair-noise", i as u64);
            let u: f64 = r.random();
            let label = match mode {
                LabelMode::ArgmaxFlip if u < noise_rate => base.flipped(),
                LabelMode::ArgmaxFlip => base,
                LabelMode::BradleyTerry if u < sigmoid_scalar(margin) => Preference::A,
                LabelMode::BradleyTerry => Preference::B,
            };
            PreferencePair {
                prompt: p.prompt.clone(),
                completion_a: p.completion_a.clone(),
                completion_b: p.completion_b.clone(),
                label,
                flipped: label != base,
                gold_margin: margin,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub noise_rate: f64,
    pub label_mode: LabelMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_pairs: 4000,
            validation_pairs: 500,
            noise_rate: 0.25,
            label_mode: LabelMode::ArgmaxFlip,
        }
    }
}

/// Prompts → pairs → gold labels, as one pure function of its inputs.
pub fn build_dataset(
    world: &World,
    reference: &PolicyModel,
    gold: &GoldRewardModel,
    gold_fingerprint: &str,
    cfg: &DataConfig,
    seed: u64,
) -> Result<PreferenceDataset> {
    let n = cfg.train_pairs + cfg.validation_pairs;
    let prompts = generate_prompts(world, n, &mut rng::substream(seed, "prompts", 0))?;
    let unlabeled = generate_pairs(&prompts, reference, seed)?;
    let pairs = gold_label(&unlabeled, gold, cfg.noise_rate, cfg.label_mode, seed)?;
    PreferenceDataset::new(
        pairs,
        0..cfg.train_pairs,
        cfg.train_pairs..n,
        DatasetMeta {
            seed,
            noise_rate: cfg.noise_rate,
            label_mode: cfg.label_mode,
            gold_fingerprint: gold_fingerprint.to_string(),
            vocab_size: world.vocab_size,
            prompt_len: world.prompt_len,
            completion_len: world.completion_len,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_distribution_is_on_the_simplex() {
        let w = World::new(32, 8, 16, 1.0, 4).unwrap();
        assert!((w.natural.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.natural.iter().all(|&p| p > 0.0));
        assert_eq!(w, World::new(32, 8, 16, 1.0, 4).unwrap());
    }

    #[test]
    fn prompts_are_deterministic_and_in_range() {
        let w = World::new(32, 8, 16, 1.0, 4).unwrap();
        let a = generate_prompts(&w, 50, &mut rng::stream(1)).unwrap();
        let b = generate_prompts(&w, 50, &mut rng::stream(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|&t| t < 32));
        assert!(a.iter().all(|p| p.len() == 8));
        assert!(generate_prompts(&w, 0, &mut rng::stream(1)).is_err());
    }

    #[test]
    fn clean_label_ties_go_to_a() {
        assert_eq!(clean_label(0.0), Preference::A);
        assert_eq!(clean_label(-1e-13), Preference::A);
        assert_eq!(clean_label(-1e-3), Preference::B);
        assert_eq!(clean_label(2.0), Preference::A);
    }

    #[test]
    fn split_validation() {
        let meta = DatasetMeta {
            seed: 0,
            noise_rate: 0.6,
            label_mode: LabelMode::ArgmaxFlip,
            gold_fingerprint: String::new(),
            vocab_size: 2,
            prompt_len: 1,
            completion_len: 1,
        };
        assert!(PreferenceDataset::new(vec![], 0..0, 0..0, meta.clone()).is_err());
        let ok = DatasetMeta {
            noise_rate: 0.1,
            ..meta
        };
        assert!(PreferenceDataset::new(vec![], 0..1, 1..1, ok).is_err());
    }
}
