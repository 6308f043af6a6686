use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::init_uniform;
use super::Parameterized;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::{self, sample_weighted};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub prompt_len: usize,
    pub completion_len: usize,
}

/// Autoregressive categorical policy. The next-token logits are a tanh MLP of
/// the mean embedding of every token seen so far (prompt included).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub dims: PolicyDims,
    pub embedding: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    pub embedding: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl PolicyVars {
    pub fn all(&self) -> Vec<Var> {
        vec![self.embedding, self.w1, self.b1, self.w2, self.b2]
    }
}

/// A sampled completion and its per-token log-probabilities at temperature 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub completion: Vec<usize>,
    pub token_logprobs: Vec<f64>,
}

impl Sampled {
    pub fn logprob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }
}

impl PolicyModel {
    pub fn seeded(dims: PolicyDims, seed: u64) -> Self {
        let mut r = rng::stream(seed);
        let (v, e, h) = (dims.vocab_size, dims.embed_dim, dims.hidden_dim);
        Self {
            dims,
            embedding: init_uniform(&[v, e], 1, 1.0, &mut r),
            w1: init_uniform(&[e, h], e, 1.0, &mut r),
            b1: init_uniform(&[h], e, 1.0, &mut r),
            w2: init_uniform(&[h, v], h, 1.0, &mut r),
            b2: init_uniform(&[v], h, 1.0, &mut r),
        }
    }

    /// Context-free categorical policy with the given logits.
    pub fn with_fixed_logits(dims: PolicyDims, logits: &[f64]) -> Result<Self> {
        if logits.len() != dims.vocab_size {
            return Err(Error::dim(
                "with_fixed_logits",
                &[logits.len()],
                &[dims.vocab_size],
            ));
        }
        let (v, e, h) = (dims.vocab_size, dims.embed_dim, dims.hidden_dim);
        Ok(Self {
            dims,
            embedding: Tensor::zeros(&[v, e]),
            w1: Tensor::zeros(&[e, h]),
            b1: Tensor::zeros(&[h]),
            w2: Tensor::zeros(&[h, v]),
            b2: Tensor::vector(logits.to_vec()),
        })
    }

    pub fn uniform(dims: PolicyDims) -> Self {
        Self::with_fixed_logits(dims, &vec![0.0; dims.vocab_size]).expect("matching dims")
    }

    pub fn bind(&self, tape: &Tape) -> PolicyVars {
        PolicyVars {
            embedding: tape.leaf(self.embedding.clone()),
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }

    /// Next-token log-probabilities `[N, V]` for each context.
    pub fn context_log_probs<S: AsRef<[usize]>>(
        &self,
        tape: &Tape,
        vars: &PolicyVars,
        contexts: &[S],
    ) -> Result<Var> {
        let pooled = tape.embedding_bag(vars.embedding, contexts)?;
        let z1 = tape.matmul(pooled, vars.w1)?;
        let z1 = tape.add(z1, vars.b1)?;
        let h = tape.tanh(z1)?;
        let logits = tape.matmul(h, vars.w2)?;
        let logits = tape.add(logits, vars.b2)?;
        tape.log_softmax(logits)
    }

    /// Sequence log-probabilities `[B]` and per-token log-probabilities
    /// `[B, L]` for equal-length completions.
    pub fn sequence_log_probs(
        &self,
        tape: &Tape,
        vars: &PolicyVars,
        prompts: &[Vec<usize>],
        completions: &[Vec<usize>],
    ) -> Result<(Var, Var)> {
        if prompts.len() != completions.len() || prompts.is_empty() {
            return Err(Error::dim(
                "sequence_log_probs",
                &[prompts.len()],
                &[completions.len()],
            ));
        }
        let len = completions[0].len();
        if len == 0 {
            return Err(Error::input("completion must contain at least one token"));
        }
        if completions.iter().any(|c| c.len() != len) {
            return Err(Error::input("completions in a batch must share one length"));
        }
        if prompts.iter().any(|p| p.is_empty()) {
            return Err(Error::input("prompt must contain at least one token"));
        }
        let mut contexts = Vec::with_capacity(prompts.len() * len);
        let mut targets = Vec::with_capacity(prompts.len() * len);
        for (p, c) in prompts.iter().zip(completions) {
            let mut full = p.clone();
            full.extend_from_slice(c);
            for t in 0..len {
                contexts.push(full[..p.len() + t].to_vec());
                targets.push(c[t]);
            }
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= self.dims.vocab_size) {
            return Err(Error::input(format!(
                "token {bad} out of range for vocabulary {}",
                self.dims.vocab_size
            )));
        }
        let lp = self.context_log_probs(tape, vars, &contexts)?;
        let picked = tape.pick(lp, &targets)?;
        let per_token = tape.reshape(picked, &[prompts.len(), len])?;
        let total = tape.sum(per_token, 1)?;
        Ok((total, per_token))
    }

    /// `log π(completion | prompt)` and its per-token terms.
    pub fn logprob(&self, prompt: &[usize], completion: &[usize]) -> Result<(f64, Vec<f64>)> {
        let tape = Tape::new();
        let vars = self.bind(&tape);
        let (total, per_token) =
            self.sequence_log_probs(&tape, &vars, &[prompt.to_vec()], &[completion.to_vec()])?;
        Ok((
            tape.value(total).data()[0],
            tape.value(per_token).into_data(),
        ))
    }

    /// Per-token log-probabilities for a batch, `B` rows of `L` values.
    pub fn token_logprobs_batch(
        &self,
        prompts: &[Vec<usize>],
        completions: &[Vec<usize>],
    ) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let vars = self.bind(&tape);
        let (_, per_token) = self.sequence_log_probs(&tape, &vars, prompts, completions)?;
        let len = completions[0].len();
        Ok(tape
            .value(per_token)
            .data()
            .chunks(len)
            .map(|c| c.to_vec())
            .collect())
    }

    /// Next-token probabilities after `context`.
    pub fn next_token_probs(&self, context: &[usize]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = self.bind(&tape);
        let lp = self.context_log_probs(&tape, &vars, &[context])?;
        Ok(tape.value(lp).data().iter().map(|v| v.exp()).collect())
    }

    /// Samples one fixed-length completion per prompt. Tokens are drawn at
    /// `temperature`; recorded log-probabilities are always at temperature 1.
    pub fn sample_batch(
        &self,
        prompts: &[Vec<usize>],
        rng: &mut impl Rng,
        temperature: f64,
    ) -> Result<Vec<Sampled>> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::input(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if prompts.iter().any(|p| p.is_empty()) {
            return Err(Error::input("prompt must contain at least one token"));
        }
        let v = self.dims.vocab_size;
        let tape = Tape::new();
        let vars = self.bind(&tape);
        let mut seqs: Vec<Vec<usize>> = prompts.to_vec();
        let mut out: Vec<Sampled> = prompts
            .iter()
            .map(|_| Sampled {
                completion: Vec::with_capacity(self.dims.completion_len),
                token_logprobs: Vec::with_capacity(self.dims.completion_len),
            })
            .collect();
        let mut weights = vec![0.0; v];
        for _ in 0..self.dims.completion_len {
            let lp = tape.value(self.context_log_probs(&tape, &vars, &seqs)?);
            for (b, row) in lp.data().chunks(v).enumerate() {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for (w, &l) in weights.iter_mut().zip(row) {
                    *w = ((l - max) / temperature).exp();
                }
                let tok = sample_weighted(&weights, rng);
                seqs[b].push(tok);
                out[b].completion.push(tok);
                out[b].token_logprobs.push(row[tok]);
            }
        }
        Ok(out)
    }

    pub fn sample_completion(
        &self,
        prompt: &[usize],
        rng: &mut impl Rng,
        temperature: f64,
    ) -> Result<Sampled> {
        Ok(self
            .sample_batch(&[prompt.to_vec()], rng, temperature)?
            .remove(0))
    }

    /// Greedy decoding.
    pub fn argmax_completion(&self, prompt: &[usize]) -> Result<Vec<usize>> {
        let mut seq = prompt.to_vec();
        let mut out = Vec::with_capacity(self.dims.completion_len);
        for _ in 0..self.dims.completion_len {
            let p = self.next_token_probs(&seq)?;
            let mut best = 0;
            for (i, &pi) in p.iter().enumerate() {
                if pi > p[best] {
                    best = i;
                }
            }
            seq.push(best);
            out.push(best);
        }
        Ok(out)
    }
}

impl Parameterized for PolicyModel {
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

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> PolicyDims {
        PolicyDims {
            vocab_size: 32,
            embed_dim: 16,
            hidden_dim: 24,
            prompt_len: 8,
            completion_len: 4,
        }
    }

    #[test]
    fn uniform_policy_logprob() {
        let p = PolicyModel::uniform(dims());
        let (lp, per) = p.logprob(&[1, 2, 3], &[4, 5, 6, 7]).unwrap();
        assert!((lp - 4.0 * (1.0f64 / 32.0).ln()).abs() < 1e-12);
        assert!((lp + 13.8629).abs() < 1e-4);
        assert!(per.iter().all(|&x| x <= 0.0));
    }

    #[test]
    fn next_token_distribution_sums_to_one() {
        let p = PolicyModel::seeded(dims(), 5);
        let probs = p.next_token_probs(&[1, 9, 9, 30]).unwrap();
        let s: f64 = probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_reproducible_and_consistent_with_logprob() {
        let p = PolicyModel::seeded(dims(), 5);
        let prompt = vec![3, 1, 4, 1, 5, 9, 2, 6];
        let a = p
            .sample_completion(&prompt, &mut rng::stream(11), 1.0)
            .unwrap();
        let b = p
            .sample_completion(&prompt, &mut rng::stream(11), 1.0)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.completion.len(), 4);
        let (lp, per) = p.logprob(&prompt, &a.completion).unwrap();
        assert_eq!(per, a.token_logprobs);
        assert!(lp.is_finite() && lp <= 0.0);
    }

    #[test]
    fn batch_rows_match_single_sequence_logprobs() {
        let p = PolicyModel::seeded(dims(), 8);
        let prompts = vec![vec![1, 2], vec![3, 4, 5]];
        let comps = vec![vec![6, 7, 8, 9], vec![10, 11, 12, 13]];
        let batch = p.token_logprobs_batch(&prompts, &comps).unwrap();
        assert_eq!(batch[1], p.logprob(&prompts[1], &comps[1]).unwrap().1);
    }

    #[test]
    fn tiny_temperature_is_greedy() {
        let p = PolicyModel::seeded(dims(), 5);
        let prompt = vec![7; 8];
        let s = p
            .sample_completion(&prompt, &mut rng::stream(1), 1e-9)
            .unwrap();
        assert_eq!(s.completion, p.argmax_completion(&prompt).unwrap());
    }

    #[test]
    fn invalid_inputs() {
        let p = PolicyModel::seeded(dims(), 5);
        assert!(p.logprob(&[1], &[]).is_err());
        assert!(p.logprob(&[1], &[40]).is_err());
        assert!(p.sample_completion(&[1], &mut rng::stream(1), 0.0).is_err());
    }
}
