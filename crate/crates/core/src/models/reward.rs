use serde::{Deserialize, Serialize};

use super::encoder::{init_uniform, Encoder, EncoderDims, EncoderVars};
use super::Parameterized;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng;

/// Linear reward head `r = w · f + b` on a length-d feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardHead {
    pub weight: Tensor,
    pub bias: Tensor,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub weight: Var,
    pub bias: Var,
}

impl RewardHead {
    pub fn seeded(feature_dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed);
        Self {
            weight: init_uniform(&[feature_dim], feature_dim, 1.0, &mut r),
            bias: init_uniform(&[], feature_dim, 1.0, &mut r),
            seed,
        }
    }

    pub fn from_parts(weight: Vec<f64>, bias: f64) -> Self {
        Self {
            weight: Tensor::vector(weight),
            bias: Tensor::scalar(bias),
            seed: 0,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.numel()
    }

    pub fn bind(&self, tape: &Tape) -> HeadVars {
        HeadVars {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }

    /// Rewards `[B]` for features `[B, d]` recorded on `tape`.
    pub fn forward(&self, tape: &Tape, vars: &HeadVars, features: Var) -> Result<Var> {
        let d = self.feature_dim();
        let b = tape.shape(features)[0];
        let w = tape.reshape(vars.weight, &[d, 1])?;
        let r = tape.matmul(features, w)?;
        let r = tape.reshape(r, &[b])?;
        tape.add(r, vars.bias)
    }

    /// `weight · features + bias`, accumulated left to right.
    pub fn reward(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_dim() {
            return Err(Error::dim(
                "head_reward",
                &[features.len()],
                self.weight.shape(),
            ));
        }
        let mut acc = 0.0;
        for (f, w) in features.iter().zip(self.weight.data()) {
            acc += f * w;
        }
        Ok(acc + self.bias.data()[0])
    }
}

impl Parameterized for RewardHead {
    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// One shared encoder with `k` independently seeded linear heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadRewardModel {
    pub encoder: Encoder,
    pub heads: Vec<RewardHead>,
}

pub struct MultiHeadVars {
    pub encoder: EncoderVars,
    pub heads: Vec<HeadVars>,
}

impl MultiHeadVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.encoder.all();
        for h in &self.heads {
            v.push(h.weight);
            v.push(h.bias);
        }
        v
    }
}

impl MultiHeadRewardModel {
    /// Head `i` is seeded with `head_seed_base + i`.
    pub fn new(encoder: Encoder, k: usize, head_seed_base: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::input("a reward model needs at least one head"));
        }
        let d = encoder.dims.feature_dim;
        let heads = (0..k as u64)
            .map(|i| RewardHead::seeded(d, head_seed_base + i))
            .collect();
        Ok(Self { encoder, heads })
    }

    pub fn k(&self) -> usize {
        self.heads.len()
    }

    pub fn bind(&self, tape: &Tape) -> MultiHeadVars {
        MultiHeadVars {
            encoder: self.encoder.bind(tape),
            heads: self.heads.iter().map(|h| h.bind(tape)).collect(),
        }
    }

    /// Per-head rewards, each `[B]`. The encoder runs once for the batch.
    pub fn forward<S: AsRef<[usize]>>(
        &self,
        tape: &Tape,
        vars: &MultiHeadVars,
        seqs: &[S],
    ) -> Result<Vec<Var>> {
        let features = self.encoder.forward(tape, &vars.encoder, seqs)?;
        self.heads
            .iter()
            .zip(&vars.heads)
            .map(|(h, hv)| h.forward(tape, hv, features))
            .collect()
    }
}

impl Parameterized for MultiHeadRewardModel {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.parameters();
        for h in &self.heads {
            p.extend(h.parameters());
        }
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.parameters_mut();
        for h in &mut self.heads {
            p.extend(h.parameters_mut());
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub encoder: Encoder,
    pub head: RewardHead,
}

impl EnsembleMember {
    /// Views the member as a one-head model sharing nothing with its peers.
    pub fn as_single_head(&self) -> MultiHeadRewardModel {
        MultiHeadRewardModel {
            encoder: self.encoder.clone(),
            heads: vec![self.head.clone()],
        }
    }
}

/// `k` fully independent (encoder, head) reward models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullEnsembleRewardModel {
    pub members: Vec<EnsembleMember>,
}

impl FullEnsembleRewardModel {
    pub fn k(&self) -> usize {
        self.members.len()
    }
}

impl Parameterized for FullEnsembleRewardModel {
    fn parameters(&self) -> Vec<&Tensor> {
        self.members
            .iter()
            .flat_map(|m| {
                let mut p = m.encoder.parameters();
                p.extend(m.head.parameters());
                p
            })
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.members
            .iter_mut()
            .flat_map(|m| {
                let mut p = m.encoder.parameters_mut();
                p.extend(m.head.parameters_mut());
                p
            })
            .collect()
    }
}

/// Either reward-model regime behind one scoring interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum RewardModel {
    MultiHead(MultiHeadRewardModel),
    Ensemble(FullEnsembleRewardModel),
}

impl RewardModel {
    pub fn k(&self) -> usize {
        match self {
            RewardModel::MultiHead(m) => m.k(),
            RewardModel::Ensemble(e) => e.k(),
        }
    }

    pub fn encoder_dims(&self) -> EncoderDims {
        match self {
            RewardModel::MultiHead(m) => m.encoder.dims,
            RewardModel::Ensemble(e) => e.members[0].encoder.dims,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            RewardModel::MultiHead(m) => m.param_count(),
            RewardModel::Ensemble(e) => e.param_count(),
        }
    }

    /// Member/head rewards for a batch of full sequences: `[B, k]`, row-major.
    pub fn member_rewards_batch<S: AsRef<[usize]>>(&self, seqs: &[S]) -> Result<Tensor> {
        let columns: Vec<Tensor> = match self {
            RewardModel::MultiHead(m) => {
                let tape = Tape::new();
                let vars = m.bind(&tape);
                m.forward(&tape, &vars, seqs)?
                    .into_iter()
                    .map(|v| tape.value(v))
                    .collect()
            }
            RewardModel::Ensemble(e) => e
                .members
                .iter()
                .map(|member| {
                    let tape = Tape::new();
                    let ev = member.encoder.bind(&tape);
                    let hv = member.head.bind(&tape);
                    let f = member.encoder.forward(&tape, &ev, seqs)?;
                    let r = member.head.forward(&tape, &hv, f)?;
                    Ok(tape.value(r))
                })
                .collect::<Result<_>>()?,
        };
        let (b, k) = (seqs.len(), columns.len());
        let mut data = vec![0.0; b * k];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.data().iter().enumerate() {
                data[i * k + j] = v;
            }
        }
        Tensor::new(vec![b, k], data)
    }

    pub fn member_rewards(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        Ok(self.member_rewards_batch(&[tokens])?.into_data())
    }
}

/// All head rewards of a multi-head model on one sequence.
pub fn all_head_rewards(model: &MultiHeadRewardModel, tokens: &[usize]) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let vars = model.bind(&tape);
    let heads = model.forward(&tape, &vars, &[tokens])?;
    Ok(heads.into_iter().map(|v| tape.value(v).data()[0]).collect())
}
