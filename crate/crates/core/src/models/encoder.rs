use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
}

impl EncoderDims {
    pub fn param_count(&self) -> usize {
        let (v, e, h, d) = (
            self.vocab_size,
            self.embed_dim,
            self.hidden_dim,
            self.feature_dim,
        );
        v * e + e * h + h + h * d + d
    }
}

/// Feature extractor: mean-pooled token embeddings followed by two tanh
/// layers, `[V, e] -> e -> h -> d`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Encoder {
    pub dims: EncoderDims,
    pub embedding: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    #[serde(skip)]
    encoded: AtomicU64,
}

impl Clone for Encoder {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims,
            embedding: self.embedding.clone(),
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
            encoded: AtomicU64::new(self.encoded.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for Encoder {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.parameters() == other.parameters()
    }
}

/// Uniform(−s, s) with `s = gain / sqrt(fan_in)`.
pub(crate) fn init_uniform(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut impl Rng,
) -> Tensor {
    let s = gain / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-s..s)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub embedding: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl EncoderVars {
    pub fn all(&self) -> Vec<Var> {
        vec![self.embedding, self.w1, self.b1, self.w2, self.b2]
    }
}

impl Encoder {
    /// Seeded initialization. The embedding table has fan-in 1 (one-hot rows).
    pub fn seeded(dims: EncoderDims, seed: u64, gain: f64) -> Self {
        let mut r = rng::stream(seed);
        let (v, e, h, d) = (
            dims.vocab_size,
            dims.embed_dim,
            dims.hidden_dim,
            dims.feature_dim,
        );
        Self {
            dims,
            embedding: init_uniform(&[v, e], 1, gain, &mut r),
            w1: init_uniform(&[e, h], e, gain, &mut r),
            b1: init_uniform(&[h], e, gain, &mut r),
            w2: init_uniform(&[h, d], h, gain, &mut r),
            b2: init_uniform(&[d], h, gain, &mut r),
            encoded: AtomicU64::new(0),
        }
    }

    pub fn zeros(dims: EncoderDims) -> Self {
        let (v, e, h, d) = (
            dims.vocab_size,
            dims.embed_dim,
            dims.hidden_dim,
            dims.feature_dim,
        );
        Self {
            dims,
            embedding: Tensor::zeros(&[v, e]),
            w1: Tensor::zeros(&[e, h]),
            b1: Tensor::zeros(&[h]),
            w2: Tensor::zeros(&[h, d]),
            b2: Tensor::zeros(&[d]),
            encoded: AtomicU64::new(0),
        }
    }

    /// Number of token sequences this encoder has processed (training and
    /// inference alike).
    pub fn sequences_encoded(&self) -> u64 {
        self.encoded.load(Ordering::Relaxed)
    }

    pub fn bind(&self, tape: &Tape) -> EncoderVars {
        EncoderVars {
            embedding: tape.leaf(self.embedding.clone()),
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }

    /// Features for a batch of sequences, `[B, d]`, recorded on `tape`.
    pub fn forward<S: AsRef<[usize]>>(
        &self,
        tape: &Tape,
        vars: &EncoderVars,
        seqs: &[S],
    ) -> Result<Var> {
        if seqs.iter().any(|s| s.as_ref().is_empty()) {
            return Err(Error::input("cannot encode an empty token sequence"));
        }
        self.encoded.fetch_add(seqs.len() as u64, Ordering::Relaxed);
        let pooled = tape.embedding_bag(vars.embedding, seqs)?;
        let z1 = tape.matmul(pooled, vars.w1)?;
        let z1 = tape.add(z1, vars.b1)?;
        let h = tape.tanh(z1)?;
        let z2 = tape.matmul(h, vars.w2)?;
        let z2 = tape.add(z2, vars.b2)?;
        tape.tanh(z2)
    }

    pub fn encode_batch<S: AsRef<[usize]>>(&self, seqs: &[S]) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.bind(&tape);
        let out = self.forward(&tape, &vars, seqs)?;
        Ok(tape.value(out))
    }

    pub fn encode(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&[tokens])?.into_data())
    }
}

impl Parameterized for Encoder {
    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.embedding, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.embedding,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}
