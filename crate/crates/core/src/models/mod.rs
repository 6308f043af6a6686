//! Reward encoders and heads, the three reward-model regimes, the policy, and
//! the frozen gold model.

mod encoder;
mod gold;
mod io;
mod policy;
mod reference;
mod reward;

pub use encoder::{Encoder, EncoderDims, EncoderVars};
pub use gold::GoldRewardModel;
pub use io::{
    fingerprint, from_bytes, load_model, save_model, to_bytes, ModelKind, MODEL_FORMAT_VERSION,
};
pub use policy::{PolicyDims, PolicyModel, PolicyVars, Sampled};
pub use reference::{train_reference_policy, ReferenceTraining};
pub use reward::{
    all_head_rewards, EnsembleMember, FullEnsembleRewardModel, HeadVars, MultiHeadRewardModel,
    MultiHeadVars, RewardHead, RewardModel,
};

use crate::numerics::Tensor;

/// Ordered access to a model's trainable tensors.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }
}

/// Fresh encoder whose embedding table and first layer are copied from the
/// reference policy; the second layer is seeded.
pub fn encoder_from_policy(
    policy: &PolicyModel,
    feature_dim: usize,
    seed: u64,
) -> crate::Result<Encoder> {
    let dims = EncoderDims {
        vocab_size: policy.dims.vocab_size,
        embed_dim: policy.dims.embed_dim,
        hidden_dim: policy.dims.hidden_dim,
        feature_dim,
    };
    let mut enc = Encoder::seeded(dims, seed, 1.0);
    enc.embedding = policy.embedding.clone();
    enc.w1 = policy.w1.clone();
    enc.b1 = policy.b1.clone();
    Ok(enc)
}
