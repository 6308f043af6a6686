use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderDims};
use super::reward::RewardHead;
use super::Parameterized;
use crate::error::Result;
use crate::numerics::Tape;
use crate::rng;

/// Frozen stand-in for true preferences: a wider randomly initialized encoder
/// plus one head. There is no API that exposes its weights mutably.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldRewardModel {
    encoder: Encoder,
    head: RewardHead,
    seed: u64,
    init_gain: f64,
}

impl GoldRewardModel {
    pub fn seeded(dims: EncoderDims, seed: u64, init_gain: f64) -> Self {
        let encoder = Encoder::seeded(dims, rng::derive_seed(seed, "gold-encoder", 0), init_gain);
        let head = RewardHead::seeded(dims.feature_dim, rng::derive_seed(seed, "gold-head", 0));
        Self {
            encoder,
            head,
            seed,
            init_gain,
        }
    }

    pub fn dims(&self) -> EncoderDims {
        self.encoder.dims
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.head.param_count()
    }

    /// Gold scores for full token sequences (prompt followed by completion).
    pub fn score_sequences<S: AsRef<[usize]>>(&self, seqs: &[S]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let ev = self.encoder.bind(&tape);
        let hv = self.head.bind(&tape);
        let f = self.encoder.forward(&tape, &ev, seqs)?;
        let r = self.head.forward(&tape, &hv, f)?;
        Ok(tape.value(r).into_data())
    }

    pub fn score(&self, prompt: &[usize], completion: &[usize]) -> Result<f64> {
        let mut seq = prompt.to_vec();
        seq.extend_from_slice(completion);
        Ok(self.score_sequences(&[seq])?[0])
    }
}
