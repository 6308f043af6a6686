use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the k member rewards collapse to one scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AggregationObjective {
    Min,
    Mean,
    Max,
    Single(usize),
}

impl AggregationObjective {
    pub fn validate(self, k: usize) -> Result<Self> {
        match self {
            AggregationObjective::Single(i) if i >= k => Err(Error::input(format!(
                "objective single:{i} needs index < k = {k}"
            ))),
            _ => Ok(self),
        }
    }
}

impl fmt::Display for AggregationObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregationObjective::Min => f.write_str("min"),
            AggregationObjective::Mean => f.write_str("mean"),
            AggregationObjective::Max => f.write_str("max"),
            AggregationObjective::Single(i) => write!(f, "single:{i}"),
        }
    }
}

impl FromStr for AggregationObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" => Ok(AggregationObjective::Min),
            "mean" => Ok(AggregationObjective::Mean),
            "max" => Ok(AggregationObjective::Max),
            "single" => Ok(AggregationObjective::Single(0)),
            other => other
                .strip_prefix("single:")
                .and_then(|i| i.parse().ok())
                .map(AggregationObjective::Single)
                .ok_or_else(|| {
                    Error::input(format!(
                        "unknown objective `{s}` (min, mean, max, single:<i>)"
                    ))
                }),
        }
    }
}

impl TryFrom<String> for AggregationObjective {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AggregationObjective> for String {
    fn from(o: AggregationObjective) -> String {
        o.to_string()
    }
}

/// Aggregated value and, for MIN/MAX/SINGLE, the member that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub value: f64,
    pub index: Option<usize>,
}

/// MIN and MAX report the lowest index among ties. MEAN is clamped into
/// `[min, max]` so rounding can never break the order statistics.
pub fn aggregate_with_index(rewards: &[f64], objective: AggregationObjective) -> Result<Aggregate> {
    if rewards.is_empty() {
        return Err(Error::input("cannot aggregate an empty reward vector"));
    }
    let argmin = (0..rewards.len()).fold(0, |b, i| if rewards[i] < rewards[b] { i } else { b });
    let argmax = (0..rewards.len()).fold(0, |b, i| if rewards[i] > rewards[b] { i } else { b });
    Ok(match objective {
        AggregationObjective::Min => Aggregate {
            value: rewards[argmin],
            index: Some(argmin),
        },
        AggregationObjective::Max => Aggregate {
            value: rewards[argmax],
            index: Some(argmax),
        },
        AggregationObjective::Mean => {
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            Aggregate {
                value: mean.clamp(rewards[argmin], rewards[argmax]),
                index: None,
            }
        }
        AggregationObjective::Single(i) => {
            let value = *rewards.get(i).ok_or_else(|| {
                Error::input(format!(
                    "objective single:{i} needs index < k = {}",
                    rewards.len()
                ))
            })?;
            Aggregate {
                value,
                index: Some(i),
            }
        }
    })
}

pub fn aggregate(rewards: &[f64], objective: AggregationObjective) -> Result<f64> {
    Ok(aggregate_with_index(rewards, objective)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use AggregationObjective::*;

    #[test]
    fn documented_examples() {
        let r = [1.0, -0.5, 2.0];
        assert_eq!(aggregate(&r, Min).unwrap(), -0.5);
        assert!((aggregate(&r, Mean).unwrap() - 2.5 / 3.0).abs() < 1e-15);
        assert_eq!(aggregate(&r, Max).unwrap(), 2.0);
        assert_eq!(aggregate(&r, Single(2)).unwrap(), 2.0);
        assert!(aggregate(&[], Min).is_err());
        assert!(aggregate(&r, Single(3)).is_err());
    }

    #[test]
    fn min_ties_take_lowest_index() {
        let a = aggregate_with_index(&[3.0, 1.0, 1.0], Min).unwrap();
        assert_eq!(a.index, Some(1));
    }

    #[test]
    fn objective_round_trips_through_text() {
        for o in [Min, Mean, Max, Single(0), Single(4)] {
            assert_eq!(o.to_string().parse::<AggregationObjective>().unwrap(), o);
            let json = serde_json::to_string(&o).unwrap();
            assert_eq!(
                serde_json::from_str::<AggregationObjective>(&json).unwrap(),
                o
            );
        }
        assert_eq!("SINGLE".parse::<AggregationObjective>().unwrap(), Single(0));
        assert!("median".parse::<AggregationObjective>().is_err());
    }
}
