use serde::{Deserialize, Serialize};

use super::policy::{PolicyDims, PolicyModel};
use super::Parameterized;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Tape};
use crate::rng::{self, sample_weighted};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceTraining {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ReferenceTraining {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 5e-3,
            batch_size: 64,
        }
    }
}

/// Builds the frozen reference policy: a seeded policy fitted by maximum
/// likelihood to i.i.d. sequences from the `natural` token distribution.
pub fn train_reference_policy(
    dims: PolicyDims,
    natural: &[f64],
    cfg: &ReferenceTraining,
    seed: u64,
) -> Result<PolicyModel> {
    if natural.len() != dims.vocab_size {
        return Err(Error::dim(
            "train_reference_policy",
            &[natural.len()],
            &[dims.vocab_size],
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::input("reference batch_size must be >= 1"));
    }
    let mut policy = PolicyModel::seeded(dims, rng::derive_seed(seed, "reference-init", 0));
    let mut adam = AdamState::new(policy.parameters(), cfg.learning_rate);
    let mut data_rng = rng::substream(seed, "reference-data", 0);
    let draw = |r: &mut rng::LabRng, n: usize| -> Vec<usize> {
        (0..n).map(|_| sample_weighted(natural, r)).collect()
    };

    for step in 0..cfg.steps {
        let prompts: Vec<Vec<usize>> = (0..cfg.batch_size)
            .map(|_| draw(&mut data_rng, dims.prompt_len))
            .collect();
        let completions: Vec<Vec<usize>> = (0..cfg.batch_size)
            .map(|_| draw(&mut data_rng, dims.completion_len))
            .collect();
        let tape = Tape::new();
        let vars = policy.bind(&tape);
        let (_, per_token) = policy.sequence_log_probs(&tape, &vars, &prompts, &completions)?;
        let mean = tape.mean_all(per_token)?;
        let loss = tape.neg(mean)?;
        let grads = tape.backward(loss)?;
        let g: Vec<_> = vars.all().into_iter().map(|v| grads.get(v)).collect();
        adam.update(&mut policy.parameters_mut(), &g)
            .map_err(|e| Error::Training(format!("reference policy step {step}: {e}")))?;
    }
    Ok(policy)
}
