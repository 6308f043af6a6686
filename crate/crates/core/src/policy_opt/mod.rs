//! Sequence-level PPO against a proxy reward with KL shaping toward the
//! frozen reference policy.
//!
//! Each completion is one action. Its shaped return is the proxy reward minus
//! `β · (log π − log π_ref)` summed over tokens, and advantages are the
//! whitened returns of the rollout batch; there is no critic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::CurvePoint;
use crate::models::{GoldRewardModel, Parameterized, PolicyModel, RewardModel};
use crate::numerics::{sum_axis, AdamState, Tape, Tensor};
use crate::prefdata::{generate_prompts, World};
use crate::reward_training::{proxy_rewards, AggregationObjective, Method};
use crate::rng::{self, permutation, LabRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub kl_coefficient: f64,
    pub clip_epsilon: f64,
    pub ppo_epochs_per_batch: usize,
    pub rollout_batch_size: usize,
    pub gradient_step_batch_size: usize,
    pub learning_rate: f64,
    pub total_policy_updates: usize,
    pub eval_interval: usize,
    pub eval_prompts: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            kl_coefficient: 0.02,
            clip_epsilon: 0.2,
            ppo_epochs_per_batch: 4,
            rollout_batch_size: 128,
            gradient_step_batch_size: 64,
            learning_rate: 1e-4,
            total_policy_updates: 2000,
            eval_interval: 20,
            eval_prompts: 256,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::input(m));
        if !(self.kl_coefficient >= 0.0) || !self.kl_coefficient.is_finite() {
            return bad(format!(
                "kl_coefficient must be >= 0, got {}",
                self.kl_coefficient
            ));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!(
                "clip_epsilon must lie in (0, 1), got {}",
                self.clip_epsilon
            ));
        }
        if self.ppo_epochs_per_batch == 0
            || self.rollout_batch_size == 0
            || self.gradient_step_batch_size == 0
            || self.eval_interval == 0
            || self.eval_prompts == 0
        {
            return bad(
                "ppo epochs, batch sizes, eval_interval and eval_prompts must be >= 1".into(),
            );
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "ppo learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }
}

/// One batch of sampled completions with everything PPO needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub prompts: Vec<Vec<usize>>,
    pub completions: Vec<Vec<usize>>,
    /// Per-token log-probabilities under the sampling snapshot, `[B][L]`.
    pub behavior_logprobs: Vec<Vec<f64>>,
    pub reference_logprobs: Vec<Vec<f64>>,
    /// Token sums of the two rows above.
    pub behavior_logprob_sum: Vec<f64>,
    pub reference_logprob_sum: Vec<f64>,
    pub proxy_rewards: Vec<f64>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    pub kl_coefficient: f64,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// Row sums through the same kernel the tape uses, so stored sums match
/// recomputed ones bit for bit.
fn row_sums(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let l = rows[0].len();
    let t = Tensor::new(vec![rows.len(), l], rows.concat())?;
    Ok(sum_axis(&t, 1)?.into_data())
}

/// Shaped return `proxy − β · (Σ log π − Σ log π_ref)`.
pub fn shaped_return(proxy: f64, beta: f64, logprob_sum: f64, ref_logprob_sum: f64) -> f64 {
    proxy - beta * (logprob_sum - ref_logprob_sum)
}

/// `(x − mean) / std` with the population std. A batch with (near) zero
/// spread carries no ranking signal and gets all-zero advantages.
pub fn whiten(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Samples one completion per prompt from `policy` and scores it.
pub fn collect_rollouts(
    policy: &PolicyModel,
    reference: &PolicyModel,
    reward_model: &RewardModel,
    objective: AggregationObjective,
    prompts: &[Vec<usize>],
    kl_coefficient: f64,
    rng: &mut LabRng,
) -> Result<RolloutBatch> {
    if prompts.is_empty() {
        return Err(Error::input("rollout needs at least one prompt"));
    }
    let sampled = policy.sample_batch(prompts, rng, 1.0)?;
    let completions: Vec<Vec<usize>> = sampled.iter().map(|s| s.completion.clone()).collect();
    let behavior_logprobs: Vec<Vec<f64>> = sampled.into_iter().map(|s| s.token_logprobs).collect();
    if behavior_logprobs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Training(
            "non-finite log-probability while sampling".into(),
        ));
    }
    let reference_logprobs = reference.token_logprobs_batch(prompts, &completions)?;
    let behavior_logprob_sum = row_sums(&behavior_logprobs)?;
    let reference_logprob_sum = row_sums(&reference_logprobs)?;
    let proxy = proxy_rewards(reward_model, objective, prompts, &completions)?;
    let returns: Vec<f64> = (0..prompts.len())
        .map(|i| {
            shaped_return(
                proxy[i],
                kl_coefficient,
                behavior_logprob_sum[i],
                reference_logprob_sum[i],
            )
        })
        .collect();
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Training("non-finite shaped return".into()));
    }
    let advantages = whiten(&returns);
    Ok(RolloutBatch {
        prompts: prompts.to_vec(),
        completions,
        behavior_logprobs,
        reference_logprobs,
        behavior_logprob_sum,
        reference_logprob_sum,
        proxy_rewards: proxy,
        returns,
        advantages,
        kl_coefficient,
    })
}

/// Diagnostics of one PPO minibatch step, measured before the step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinibatchStats {
    pub epoch: usize,
    pub size: usize,
    pub mean_ratio: f64,
    pub max_abs_log_ratio: f64,
    pub clip_fraction: f64,
    /// `mean(log π_behavior − log π_new)`.
    pub approx_kl: f64,
    pub clipped_objective: f64,
    pub unclipped_objective: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub minibatches: Vec<MinibatchStats>,
}

impl UpdateStats {
    fn mean_of(&self, f: impl Fn(&MinibatchStats) -> f64) -> f64 {
        self.minibatches.iter().map(f).sum::<f64>() / self.minibatches.len().max(1) as f64
    }

    pub fn mean_ratio(&self) -> f64 {
        self.mean_of(|m| m.mean_ratio)
    }

    pub fn clip_fraction(&self) -> f64 {
        self.mean_of(|m| m.clip_fraction)
    }

    pub fn approx_kl(&self) -> f64 {
        self.mean_of(|m| m.approx_kl)
    }
}

/// `ppo_epochs_per_batch` passes of clipped-surrogate minibatch steps over
/// one rollout batch. `rng` drives the minibatch shuffles.
pub fn ppo_update(
    policy: &mut PolicyModel,
    adam: &mut AdamState,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut LabRng,
) -> Result<UpdateStats> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::input("empty rollout batch"));
    }
    let eps = cfg.clip_epsilon;
    let mut stats = UpdateStats::default();
    for epoch in 0..cfg.ppo_epochs_per_batch {
        let order = permutation(n, rng);
        for idx in order.chunks(cfg.gradient_step_batch_size) {
            let prompts: Vec<Vec<usize>> = idx.iter().map(|&i| batch.prompts[i].clone()).collect();
            let completions: Vec<Vec<usize>> =
                idx.iter().map(|&i| batch.completions[i].clone()).collect();
            let old: Vec<f64> = idx.iter().map(|&i| batch.behavior_logprob_sum[i]).collect();
            let adv: Vec<f64> = idx.iter().map(|&i| batch.advantages[i]).collect();

            let tape = Tape::new();
            let vars = policy.bind(&tape);
            let (new_lp, _) = policy.sequence_log_probs(&tape, &vars, &prompts, &completions)?;
            let old_v = tape.leaf(Tensor::vector(old.clone()));
            let adv_v = tape.leaf(Tensor::vector(adv.clone()));
            let log_ratio = tape.sub(new_lp, old_v)?;
            let ratio = tape.exp(log_ratio)?;
            let unclipped = tape.mul(ratio, adv_v)?;
            let clipped_ratio = tape.clamp(ratio, 1.0 - eps, 1.0 + eps)?;
            let clipped = tape.mul(clipped_ratio, adv_v)?;
            let surrogate = tape.minimum(unclipped, clipped)?;
            let objective = tape.mean_all(surrogate)?;
            let loss = tape.neg(objective)?;

            let lr = tape.value(log_ratio).into_data();
            let r = tape.value(ratio).into_data();
            let m = idx.len() as f64;
            let loss_value = tape.value(loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::Training(format!(
                    "PPO loss {loss_value} at epoch {epoch}; minibatch indices {idx:?}, log-ratios {lr:?}, advantages {adv:?}"
                )));
            }
            stats.minibatches.push(MinibatchStats {
                epoch,
                size: idx.len(),
                mean_ratio: r.iter().sum::<f64>() / m,
                max_abs_log_ratio: lr.iter().fold(0.0, |a, v| a.max(v.abs())),
                clip_fraction: r.iter().filter(|&&x| (x - 1.0).abs() > eps).count() as f64 / m,
                approx_kl: -lr.iter().sum::<f64>() / m,
                clipped_objective: -loss_value,
                unclipped_objective: tape.value(unclipped).data().iter().sum::<f64>() / m,
            });

            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars.all().into_iter().map(|v| grads.get(v)).collect();
            adam.update(&mut policy.parameters_mut(), &g)
                .map_err(|e| Error::Training(format!("PPO epoch {epoch}: {e}")))?;
        }
    }
    Ok(stats)
}

/// Monte Carlo estimate of `KL(π ‖ π_ref)` with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error of a sample.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-sequence `Σ_t (log π_t − log π_ref,t)` for sampled completions.
fn kl_terms(
    reference: &PolicyModel,
    prompts: &[Vec<usize>],
    completions: &[Vec<usize>],
    lp: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let ref_lp = reference.token_logprobs_batch(prompts, completions)?;
    Ok(lp
        .iter()
        .zip(&ref_lp)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).sum())
        .collect())
}

/// Draws `n_samples` completions from `policy`, cycling through `prompts`.
pub fn measure_kl(
    policy: &PolicyModel,
    reference: &PolicyModel,
    prompts: &[Vec<usize>],
    n_samples: usize,
    rng: &mut LabRng,
) -> Result<KlEstimate> {
    if n_samples == 0 || prompts.is_empty() {
        return Err(Error::input(
            "measure_kl needs n_samples >= 1 and at least one prompt",
        ));
    }
    let mut terms = Vec::with_capacity(n_samples);
    let chunk = 1024;
    let mut done = 0;
    while done < n_samples {
        let m = chunk.min(n_samples - done);
        let ps: Vec<Vec<usize>> = (done..done + m)
            .map(|i| prompts[i % prompts.len()].clone())
            .collect();
        let sampled = policy.sample_batch(&ps, rng, 1.0)?;
        let comps: Vec<Vec<usize>> = sampled.iter().map(|s| s.completion.clone()).collect();
        let lp: Vec<Vec<f64>> = sampled.into_iter().map(|s| s.token_logprobs).collect();
        terms.extend(kl_terms(reference, &ps, &comps, &lp)?);
        done += m;
    }
    let (estimate, stderr) = mean_stderr(&terms);
    Ok(KlEstimate {
        estimate,
        stderr,
        n: n_samples,
    })
}

/// The frozen pieces a PPO run reads from.
pub struct PpoEnv<'a> {
    pub world: &'a World,
    pub reference: &'a PolicyModel,
    pub reward_model: &'a RewardModel,
    pub objective: AggregationObjective,
    pub gold: &'a GoldRewardModel,
    pub method: Method,
}

#[derive(Clone, Debug)]
pub struct PpoRun {
    pub policy: PolicyModel,
    pub curve: Vec<CurvePoint>,
    pub updates: Vec<UpdateStats>,
}

/// Held-out evaluation prompts, fixed for a given run seed.
pub fn eval_prompts(world: &World, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    generate_prompts(world, count, &mut rng::substream(seed, "eval-prompts", 0))
}

/// One evaluation snapshot: a fresh completion per evaluation prompt, scored
/// by the proxy (training objective) and gold models, plus the KL estimate
/// from the same samples.
pub fn evaluate_policy(
    env: &PpoEnv,
    policy: &PolicyModel,
    prompts: &[Vec<usize>],
    rng: &mut LabRng,
) -> Result<(KlEstimate, f64, f64)> {
    let sampled = policy.sample_batch(prompts, rng, 1.0)?;
    let comps: Vec<Vec<usize>> = sampled.iter().map(|s| s.completion.clone()).collect();
    let lp: Vec<Vec<f64>> = sampled.into_iter().map(|s| s.token_logprobs).collect();
    let (kl, se) = mean_stderr(&kl_terms(env.reference, prompts, &comps, &lp)?);
    let proxy = proxy_rewards(env.reward_model, env.objective, prompts, &comps)?;
    let full: Vec<Vec<usize>> = prompts
        .iter()
        .zip(&comps)
        .map(|(p, c)| p.iter().chain(c).copied().collect())
        .collect();
    let gold = env.gold.score_sequences(&full)?;
    let n = prompts.len() as f64;
    Ok((
        KlEstimate {
            estimate: kl,
            stderr: se,
            n: prompts.len(),
        },
        proxy.iter().sum::<f64>() / n,
        gold.iter().sum::<f64>() / n,
    ))
}

/// Full PPO run from `init`. Every `eval_interval` updates (and at step 0 and
/// at the final step) a curve point is passed to `sink` before the run
/// continues, so points survive a later failure.
pub fn run_ppo(
    env: &PpoEnv,
    init: &PolicyModel,
    cfg: &PpoConfig,
    mut sink: impl FnMut(&CurvePoint) -> Result<()>,
) -> Result<PpoRun> {
    cfg.validate()?;
    env.objective.validate(env.reward_model.k())?;
    let seed = cfg.seed;
    let eval_set = eval_prompts(env.world, cfg.eval_prompts, seed)?;
    let mut policy = init.clone();
    let mut adam = AdamState::new(policy.parameters(), cfg.learning_rate);
    let mut curve = Vec::new();
    let mut updates = Vec::with_capacity(cfg.total_policy_updates);

    let mut emit = |step: usize, policy: &PolicyModel, curve: &mut Vec<CurvePoint>| -> Result<()> {
        let mut r = rng::substream(seed, "eval", step as u64);
        let (kl, proxy, gold) = evaluate_policy(env, policy, &eval_set, &mut r)?;
        let point = CurvePoint {
            step: step as u64,
            kl: kl.estimate,
            kl_stderr: kl.stderr,
            proxy_reward: proxy,
            gold_reward: gold,
            seed,
            method: env.method,
            objective: env.objective,
        };
        sink(&point)?;
        curve.push(point);
        Ok(())
    };

    emit(0, &policy, &mut curve)?;
    for step in 1..=cfg.total_policy_updates {
        let mut r = rng::substream(seed, "rollout", step as u64);
        let prompts = generate_prompts(env.world, cfg.rollout_batch_size, &mut r)?;
        let batch = collect_rollouts(
            &policy,
            env.reference,
            env.reward_model,
            env.objective,
            &prompts,
            cfg.kl_coefficient,
            &mut r,
        )
        .map_err(|e| Error::Training(format!("update {step}: {e}")))?;
        let mut mb = rng::substream(seed, "minibatch", step as u64);
        let stats = ppo_update(&mut policy, &mut adam, &batch, cfg, &mut mb)
            .map_err(|e| Error::Training(format!("update {step}: {e}")))?;
        updates.push(stats);
        if step % cfg.eval_interval == 0 || step == cfg.total_policy_updates {
            emit(step, &policy, &mut curve)?;
        }
    }
    Ok(PpoRun {
        policy,
        curve,
        updates,
    })
}
