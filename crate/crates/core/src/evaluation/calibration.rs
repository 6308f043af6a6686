use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::RewardModel;
use crate::numerics::sigmoid_scalar;
use crate::prefdata::{Preference, PreferencePair};
use crate::reward_training::{aggregate, pair_member_rewards, AggregationObjective};

/// `σ(r̂(prompt, a) − r̂(prompt, b))`, aggregating per completion first.
pub fn predicted_preference(
    model: &RewardModel,
    objective: AggregationObjective,
    pair: &PreferencePair,
) -> Result<f64> {
    Ok(predicted_preferences(model, objective, std::slice::from_ref(pair))?[0])
}

pub fn predicted_preferences(
    model: &RewardModel,
    objective: AggregationObjective,
    pairs: &[PreferencePair],
) -> Result<Vec<f64>> {
    objective.validate(model.k())?;
    pair_member_rewards(model, pairs)?
        .iter()
        .map(|(ra, rb)| {
            Ok(sigmoid_scalar(
                aggregate(ra, objective)? - aggregate(rb, objective)?,
            ))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub low: f64,
    pub high: f64,
    /// Mean folded confidence; `None` for an empty bin.
    pub confidence: Option<f64>,
    pub accuracy: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub objective: Option<AggregationObjective>,
    pub n_bins: usize,
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

pub const DEFAULT_BINS: usize = 10;

/// Bin of a folded confidence in `[0.5, 1]`; 1.0 lands in the top bin.
pub fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let b = ((confidence - 0.5) / 0.5 * n_bins as f64).floor();
    (b.max(0.0) as usize).min(n_bins - 1)
}

/// Reliability bins and ECE for predicted probabilities that A is preferred
/// against boolean outcomes. Within a bin, confidences are summed in sorted
/// order so the result does not depend on input order.
pub fn calibration_from_predictions(
    p_a: &[f64],
    a_preferred: &[bool],
    n_bins: usize,
) -> Result<CalibrationReport> {
    if p_a.is_empty() {
        return Err(Error::input("calibration needs at least one prediction"));
    }
    if p_a.len() != a_preferred.len() {
        return Err(Error::dim(
            "calibration",
            &[p_a.len()],
            &[a_preferred.len()],
        ));
    }
    if n_bins == 0 {
        return Err(Error::input("n_bins must be >= 1"));
    }
    if let Some(bad) = p_a.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::input(format!(
            "predicted probability {bad} outside [0, 1]"
        )));
    }
    let mut confs: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    let mut correct = vec![0usize; n_bins];
    for (&p, &y) in p_a.iter().zip(a_preferred) {
        let conf = p.max(1.0 - p);
        let predicted_a = p >= 0.5;
        let b = bin_index(conf, n_bins);
        confs[b].push(conf);
        correct[b] += (predicted_a == y) as usize;
    }
    let n = p_a.len() as f64;
    let width = 0.5 / n_bins as f64;
    let mut ece = 0.0;
    let mut bins = Vec::with_capacity(n_bins);
    for (b, mut c) in confs.into_iter().enumerate() {
        let count = c.len();
        let (confidence, accuracy) = if count == 0 {
            (None, None)
        } else {
            c.sort_by(f64::total_cmp);
            let conf = c.iter().sum::<f64>() / count as f64;
            let acc = correct[b] as f64 / count as f64;
            ece += (count as f64 / n) * (acc - conf).abs();
            (Some(conf), Some(acc))
        };
        bins.push(CalibrationBin {
            low: 0.5 + width * b as f64,
            high: if b + 1 == n_bins {
                1.0
            } else {
                0.5 + width * (b + 1) as f64
            },
            confidence,
            accuracy,
            count,
        });
    }
    let mut all: Vec<f64> = p_a.iter().map(|p| p.max(1.0 - p)).collect();
    all.sort_by(f64::total_cmp);
    Ok(CalibrationReport {
        objective: None,
        n_bins,
        bins,
        ece: ece.clamp(0.0, 1.0),
        mean_confidence: all.iter().sum::<f64>() / n,
        accuracy: correct.iter().sum::<usize>() as f64 / n,
    })
}

/// Calibration of a reward model's preference probabilities against the
/// clean labels implied by each pair's gold margin. Stored labels and
/// `flipped` flags are ignored.
pub fn calibration_report(
    model: &RewardModel,
    objective: AggregationObjective,
    pairs: &[PreferencePair],
    n_bins: usize,
) -> Result<CalibrationReport> {
    if pairs.is_empty() {
        return Err(Error::input("calibration needs a nonempty evaluation set"));
    }
    let p = predicted_preferences(model, objective, pairs)?;
    let clean: Vec<bool> = pairs
        .iter()
        .map(|q| q.clean_label() == Preference::A)
        .collect();
    let mut report = calibration_from_predictions(&p, &clean, n_bins)?;
    report.objective = Some(objective);
    Ok(report)
}

impl CalibrationReport {
    /// Table of bins followed by a summary comment line.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = String::from("bin_low,bin_high,confidence,accuracy,count\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.low,
                b.high,
                fmt(b.confidence),
                fmt(b.accuracy),
                b.count
            ));
        }
        let obj = self.objective.map_or("-".to_string(), |o| o.to_string());
        out.push_str(&format!(
            "# objective={obj} ece={} mean_confidence={} accuracy={}\n",
            self.ece, self.mean_confidence, self.accuracy
        ));
        out
    }
}
