//! Bradley-Terry reward-model training for the three regimes, plus ensemble
//! aggregation and proxy scoring.
//!
//! A multi-head model is trained jointly: each batch runs the shared encoder
//! once, every head contributes its own BT loss, and the summed loss is
//! backpropagated in one pass. A full ensemble trains each member as an
//! independent one-head model with its own shuffle stream.

mod aggregate;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    encoder_from_policy, Encoder, EncoderDims, EnsembleMember, FullEnsembleRewardModel,
    MultiHeadRewardModel, Parameterized, PolicyModel, RewardModel,
};
use crate::numerics::{sigmoid_scalar, softplus_scalar, AdamState, Tape, Tensor, Var};
use crate::prefdata::{Preference, PreferenceDataset, PreferencePair};
use crate::rng::{self, derive_seed, permutation};

pub use aggregate::{aggregate, aggregate_with_index, Aggregate, AggregationObjective};

/// `−log σ(r_preferred − r_dispreferred)` in the stable softplus form.
pub fn bt_loss(r_preferred: f64, r_dispreferred: f64) -> Result<f64> {
    if !r_preferred.is_finite() || !r_dispreferred.is_finite() {
        return Err(Error::Numeric { op: "bt_loss" });
    }
    Ok(softplus_scalar(-(r_preferred - r_dispreferred)))
}

/// Partial derivatives of [`bt_loss`] with respect to both rewards.
pub fn bt_loss_grad(r_preferred: f64, r_dispreferred: f64) -> (f64, f64) {
    let g = -sigmoid_scalar(-(r_preferred - r_dispreferred));
    (g, -g)
}

/// Which reward-model regime a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Single,
    Multihead,
    Ensemble,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Single, Method::Multihead, Method::Ensemble];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Single => "single",
            Method::Multihead => "multihead",
            Method::Ensemble => "ensemble",
        }
    }

    /// The PPO objective paired with each method.
    pub fn default_objective(self) -> AggregationObjective {
        match self {
            Method::Single => AggregationObjective::Single(0),
            Method::Multihead | Method::Ensemble => AggregationObjective::Min,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(Method::Single),
            "multihead" | "multi-head" => Ok(Method::Multihead),
            "ensemble" => Ok(Method::Ensemble),
            _ => Err(Error::input(format!(
                "unknown method `{s}` (single, multihead, ensemble)"
            ))),
        }
    }
}

/// Fresh reward model. Shared encoder / member `i` uses encoder seed
/// `derive(seed, "encoder", i)`; head `i` uses `derive(seed, "heads", 0) + i`,
/// so a one-head model and a one-member ensemble start from identical weights.
/// When `reference` is given, encoders copy its embedding and first layer.
pub fn init_reward_model(
    method: Method,
    k: usize,
    dims: EncoderDims,
    reference: Option<&PolicyModel>,
    seed: u64,
) -> Result<RewardModel> {
    if k == 0 {
        return Err(Error::input("k must be >= 1"));
    }
    if let Some(p) = reference {
        if (p.dims.vocab_size, p.dims.embed_dim, p.dims.hidden_dim)
            != (dims.vocab_size, dims.embed_dim, dims.hidden_dim)
        {
            return Err(Error::input(
                "encoder initialized from the reference policy must share its vocab, embed and hidden sizes",
            ));
        }
    }
    let encoder = |i: usize| -> Result<Encoder> {
        let s = derive_seed(seed, "encoder", i as u64);
        match reference {
            Some(p) => encoder_from_policy(p, dims.feature_dim, s),
            None => Ok(Encoder::seeded(dims, s, 1.0)),
        }
    };
    let head_base = derive_seed(seed, "heads", 0);
    Ok(match method {
        Method::Single => {
            RewardModel::MultiHead(MultiHeadRewardModel::new(encoder(0)?, 1, head_base)?)
        }
        Method::Multihead => {
            RewardModel::MultiHead(MultiHeadRewardModel::new(encoder(0)?, k, head_base)?)
        }
        Method::Ensemble => RewardModel::Ensemble(FullEnsembleRewardModel {
            members: (0..k)
                .map(|i| {
                    let m = MultiHeadRewardModel::new(
                        encoder(i)?,
                        1,
                        head_base.wrapping_add(i as u64),
                    )?;
                    let MultiHeadRewardModel { encoder, mut heads } = m;
                    Ok(EnsembleMember {
                        encoder,
                        head: heads.remove(0),
                    })
                })
                .collect::<Result<_>>()?,
        }),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub per_head_bootstrap: bool,
}

impl Default for RmTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 1,
            batch_size: 64,
            seed: 0,
            per_head_bootstrap: false,
        }
    }
}

impl RmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::input("rm epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("rm batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::input(format!(
                "rm learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Validation accuracy of a model after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-head BT loss over the epoch's batches.
    pub train_loss: f64,
    /// Accuracy of the MEAN-aggregated reward against noisy labels.
    pub val_acc_noisy: f64,
    /// Accuracy of the MEAN-aggregated reward against clean gold labels.
    pub val_acc_clean: f64,
    pub head_acc_noisy: Vec<f64>,
    pub head_acc_clean: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    /// Comma-separated table, one row per epoch.
    pub fn to_csv(&self) -> String {
        let k = self.epochs.first().map_or(0, |e| e.head_acc_noisy.len());
        let mut out = String::from("epoch,train_loss,val_acc_noisy,val_acc_clean");
        for i in 0..k {
            out.push_str(&format!(",head{i}_acc_noisy,head{i}_acc_clean"));
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}",
                e.epoch, e.train_loss, e.val_acc_noisy, e.val_acc_clean
            ));
            for (n, c) in e.head_acc_noisy.iter().zip(&e.head_acc_clean) {
                out.push_str(&format!(",{n},{c}"));
            }
            out.push('\n');
        }
        out
    }
}

const BOOTSTRAP_KEEP: f64 = 0.632;

fn full_sequences(pairs: &[&PreferencePair]) -> Vec<Vec<usize>> {
    let (mut a, mut b): (Vec<_>, Vec<_>) = pairs.iter().map(|p| p.full_sequences()).unzip();
    a.append(&mut b);
    a
}

/// Trains `model` in place on the dataset's train split and returns the
/// per-epoch validation log. Deterministic for a fixed config seed.
pub fn train_reward_model(
    ds: &PreferenceDataset,
    model: &mut RewardModel,
    cfg: &RmTrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if ds.train_pairs().is_empty() {
        return Err(Error::input("cannot train on an empty dataset"));
    }
    let mut log = TrainLog::default();
    match model {
        RewardModel::MultiHead(m) => {
            let mut trainer = HeadTrainer::new(m.clone(), cfg, 0, ds.train_pairs().len());
            for epoch in 1..=cfg.epochs {
                let loss = trainer.run_epoch(ds.train_pairs(), epoch)?;
                *m = trainer.model.clone();
                log.epochs.push(epoch_metrics(
                    epoch,
                    loss,
                    &RewardModel::MultiHead(m.clone()),
                    ds,
                )?);
            }
        }
        RewardModel::Ensemble(e) => {
            let n = ds.train_pairs().len();
            let mut trainers: Vec<HeadTrainer> = e
                .members
                .iter()
                .enumerate()
                .map(|(i, member)| HeadTrainer::new(member.as_single_head(), cfg, i as u64, n))
                .collect();
            for epoch in 1..=cfg.epochs {
                let mut loss = 0.0;
                for (t, member) in trainers.iter_mut().zip(e.members.iter_mut()) {
                    loss += t.run_epoch(ds.train_pairs(), epoch)?;
                    member.encoder = t.model.encoder.clone();
                    member.head = t.model.heads[0].clone();
                }
                let snapshot = RewardModel::Ensemble(e.clone());
                log.epochs.push(epoch_metrics(
                    epoch,
                    loss / trainers.len() as f64,
                    &snapshot,
                    ds,
                )?);
            }
        }
    }
    Ok(log)
}

/// Joint training state for every head on one shared encoder. `stream`
/// selects the shuffle and bootstrap streams, so ensemble member `i` and a
/// one-head model with `stream = i` see identical orderings.
struct HeadTrainer {
    model: MultiHeadRewardModel,
    adam: AdamState,
    masks: Option<Vec<Vec<f64>>>,
    shuffle_seed: u64,
    batch_size: usize,
}

impl HeadTrainer {
    fn new(model: MultiHeadRewardModel, cfg: &RmTrainConfig, stream: u64, n: usize) -> Self {
        let masks = cfg.per_head_bootstrap.then(|| {
            (0..model.k())
                .map(|j| {
                    let mut r = rng::substream(
                        derive_seed(cfg.seed, "bootstrap", stream),
                        "head",
                        j as u64,
                    );
                    (0..n)
                        .map(|_| {
                            if r.random::<f64>() < BOOTSTRAP_KEEP {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        });
        Self {
            adam: AdamState::new(model.parameters(), cfg.learning_rate),
            model,
            masks,
            shuffle_seed: derive_seed(cfg.seed, "shuffle", stream),
            batch_size: cfg.batch_size,
        }
    }

    /// One reshuffled pass over `train`; returns the mean per-head loss.
    fn run_epoch(&mut self, train: &[PreferencePair], epoch: usize) -> Result<f64> {
        let k = self.model.k();
        let order = permutation(
            train.len(),
            &mut rng::substream(self.shuffle_seed, "epoch", epoch as u64),
        );
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(self.batch_size).enumerate() {
            let pairs: Vec<&PreferencePair> = idx.iter().map(|&i| &train[i]).collect();
            let seqs = full_sequences(&pairs);
            let bsz = pairs.len();
            let tape = Tape::new();
            let vars = self.model.bind(&tape);
            let heads = self.model.forward(&tape, &vars, &seqs)?;
            let signs = tape.leaf(Tensor::vector(
                pairs.iter().map(|p| p.label.sign()).collect(),
            ));
            let mut total: Option<Var> = None;
            for (j, &r) in heads.iter().enumerate() {
                let ra = tape.rows(r, 0, bsz)?;
                let rb = tape.rows(r, bsz, 2 * bsz)?;
                let diff = tape.sub(ra, rb)?;
                let oriented = tape.mul(diff, signs)?;
                let per_example = tape.softplus(tape.neg(oriented)?)?;
                let per_example = match &self.masks {
                    Some(m) => {
                        let mask =
                            tape.leaf(Tensor::vector(idx.iter().map(|&i| m[j][i]).collect()));
                        tape.mul(per_example, mask)?
                    }
                    None => per_example,
                };
                let head_loss = tape.mean_all(per_example)?;
                total = Some(match total {
                    Some(t) => tape.add(t, head_loss)?,
                    None => head_loss,
                });
            }
            let total = total.expect("k >= 1");
            let value = tape.value(total).item()?;
            if !value.is_finite() {
                return Err(Error::Training(format!(
                    "reward model loss is {value} at epoch {epoch}, batch {b}"
                )));
            }
            let grads = tape.backward(total)?;
            let g: Vec<Tensor> = vars.all().into_iter().map(|v| grads.get(v)).collect();
            self.adam
                .update(&mut self.model.parameters_mut(), &g)
                .map_err(|e| {
                    Error::Training(format!("reward model epoch {epoch}, batch {b}: {e}"))
                })?;
            loss_sum += value / k as f64;
            batches += 1;
        }
        Ok(loss_sum / batches as f64)
    }
}

/// Member rewards `[k]` for both completions of every pair, in chunks.
pub fn pair_member_rewards(
    model: &RewardModel,
    pairs: &[PreferencePair],
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let k = model.k();
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(256) {
        let refs: Vec<&PreferencePair> = chunk.iter().collect();
        let r = model.member_rewards_batch(&full_sequences(&refs))?;
        let rows: Vec<&[f64]> = r.data().chunks(k).collect();
        for i in 0..chunk.len() {
            out.push((rows[i].to_vec(), rows[chunk.len() + i].to_vec()));
        }
    }
    Ok(out)
}

fn predicts_a(ra: f64, rb: f64) -> Preference {
    if ra >= rb {
        Preference::A
    } else {
        Preference::B
    }
}

fn epoch_metrics(
    epoch: usize,
    train_loss: f64,
    model: &RewardModel,
    ds: &PreferenceDataset,
) -> Result<EpochMetrics> {
    let val = ds.validation_pairs();
    let k = model.k();
    if val.is_empty() {
        return Ok(EpochMetrics {
            epoch,
            train_loss,
            val_acc_noisy: f64::NAN,
            val_acc_clean: f64::NAN,
            head_acc_noisy: vec![f64::NAN; k],
            head_acc_clean: vec![f64::NAN; k],
        });
    }
    let acc = accuracies(model, val)?;
    Ok(EpochMetrics {
        epoch,
        train_loss,
        val_acc_noisy: acc.noisy,
        val_acc_clean: acc.clean,
        head_acc_noisy: acc.head_noisy,
        head_acc_clean: acc.head_clean,
    })
}

/// Label accuracies of a model on a set of pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Accuracies {
    pub noisy: f64,
    pub clean: f64,
    pub head_noisy: Vec<f64>,
    pub head_clean: Vec<f64>,
}

/// Accuracy against the stored (noisy) labels and against the clean labels
/// implied by the gold margin, for the MEAN aggregate and for each head.
pub fn accuracies(model: &RewardModel, pairs: &[PreferencePair]) -> Result<Accuracies> {
    if pairs.is_empty() {
        return Err(Error::input("accuracy needs at least one pair"));
    }
    let k = model.k();
    let rewards = pair_member_rewards(model, pairs)?;
    let (mut noisy, mut clean) = (0usize, 0usize);
    let mut hn = vec![0usize; k];
    let mut hc = vec![0usize; k];
    for (p, (ra, rb)) in pairs.iter().zip(&rewards) {
        let pred = predicts_a(
            aggregate(ra, AggregationObjective::Mean)?,
            aggregate(rb, AggregationObjective::Mean)?,
        );
        noisy += (pred == p.label) as usize;
        clean += (pred == p.clean_label()) as usize;
        for j in 0..k {
            let pj = predicts_a(ra[j], rb[j]);
            hn[j] += (pj == p.label) as usize;
            hc[j] += (pj == p.clean_label()) as usize;
        }
    }
    let n = pairs.len() as f64;
    Ok(Accuracies {
        noisy: noisy as f64 / n,
        clean: clean as f64 / n,
        head_noisy: hn.iter().map(|&c| c as f64 / n).collect(),
        head_clean: hc.iter().map(|&c| c as f64 / n).collect(),
    })
}

/// Mean pairwise disagreement rate between distinct heads' predicted labels.
pub fn head_disagreement(model: &RewardModel, pairs: &[PreferencePair]) -> Result<f64> {
    let k = model.k();
    if k < 2 || pairs.is_empty() {
        return Ok(0.0);
    }
    let rewards = pair_member_rewards(model, pairs)?;
    let mut disagree = 0usize;
    let mut total = 0usize;
    for (ra, rb) in &rewards {
        for i in 0..k {
            for j in i + 1..k {
                disagree += (predicts_a(ra[i], rb[i]) != predicts_a(ra[j], rb[j])) as usize;
                total += 1;
            }
        }
    }
    Ok(disagree as f64 / total as f64)
}

fn concat(prompt: &[usize], completion: &[usize]) -> Vec<usize> {
    let mut s = prompt.to_vec();
    s.extend_from_slice(completion);
    s
}

/// Aggregated proxy reward of one completion (inference path).
pub fn proxy_reward(
    model: &RewardModel,
    objective: AggregationObjective,
    prompt: &[usize],
    completion: &[usize],
) -> Result<f64> {
    objective.validate(model.k())?;
    aggregate(
        &model.member_rewards(&concat(prompt, completion))?,
        objective,
    )
}

/// Aggregated proxy rewards for a batch of completions.
pub fn proxy_rewards(
    model: &RewardModel,
    objective: AggregationObjective,
    prompts: &[Vec<usize>],
    completions: &[Vec<usize>],
) -> Result<Vec<f64>> {
    objective.validate(model.k())?;
    if prompts.len() != completions.len() {
        return Err(Error::dim(
            "proxy_rewards",
            &[prompts.len()],
            &[completions.len()],
        ));
    }
    let seqs: Vec<Vec<usize>> = prompts
        .iter()
        .zip(completions)
        .map(|(p, c)| concat(p, c))
        .collect();
    let r = model.member_rewards_batch(&seqs)?;
    r.data()
        .chunks(model.k())
        .map(|row| aggregate(row, objective))
        .collect()
}
