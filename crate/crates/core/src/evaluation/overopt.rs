use serde::{Deserialize, Serialize};

use super::CurvePoint;
use crate::error::{Error, Result};
use crate::reward_training::Method;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OveroptStats {
    pub peak_gold: f64,
    pub peak_step: u64,
    pub final_gold: f64,
    /// `peak_gold − final_gold`, both on the smoothed curve.
    pub decline: f64,
    pub kl_at_peak: f64,
}

/// Centered 3-point moving average; the two endpoints average over the two
/// values available. Written as `g_i + mean(g_j − g_i)` so a constant curve
/// stays exactly constant.
pub fn smooth3(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            let offsets: f64 = (lo..=hi).map(|j| values[j] - values[i]).sum();
            values[i] + offsets / (hi - lo + 1) as f64
        })
        .collect()
}

/// Peak and decline of the smoothed gold curve of one run. The peak is the
/// first maximum.
pub fn overopt_stats(curve: &[CurvePoint]) -> Result<OveroptStats> {
    if curve.is_empty() {
        return Err(Error::input("overopt_stats needs a nonempty curve"));
    }
    let gold: Vec<f64> = curve.iter().map(|p| p.gold_reward).collect();
    let smooth = smooth3(&gold);
    let mut peak = 0;
    for (i, &g) in smooth.iter().enumerate() {
        if g > smooth[peak] {
            peak = i;
        }
    }
    let final_gold = *smooth.last().expect("nonempty");
    Ok(OveroptStats {
        peak_gold: smooth[peak],
        peak_step: curve[peak].step,
        final_gold,
        decline: smooth[peak] - final_gold,
        kl_at_peak: curve[peak].kl,
    })
}

/// `max − min` of the smoothed gold curve.
pub fn smoothed_gold_range(curve: &[CurvePoint]) -> f64 {
    let s = smooth3(&curve.iter().map(|p| p.gold_reward).collect::<Vec<_>>());
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Mean and sample standard deviation across runs on a shared KL grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedCurve {
    pub method: Method,
    pub n_runs: usize,
    pub kl: Vec<f64>,
    pub gold_mean: Vec<f64>,
    pub gold_std: Vec<f64>,
    pub proxy_mean: Vec<f64>,
    pub proxy_std: Vec<f64>,
}

impl AggregatedCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,n_runs,kl,gold_mean,gold_std,proxy_mean,proxy_std\n");
        for i in 0..self.kl.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.method,
                self.n_runs,
                self.kl[i],
                self.gold_mean[i],
                self.gold_std[i],
                self.proxy_mean[i],
                self.proxy_std[i]
            ));
        }
        out
    }
}

/// Piecewise-linear interpolation through points sorted by `x`. Returns the
/// stored `y` exactly when `x` hits a sample.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let hi = xs.partition_point(|&v| v <= x);
    let lo = hi - 1;
    if xs[lo] == x {
        return ys[lo];
    }
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

/// A run's (kl, gold, proxy) samples ordered by KL. Estimated KL is not
/// monotone in the step, so samples are sorted (stably) before interpolating.
fn sorted_by_kl(run: &[CurvePoint]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..run.len()).collect();
    idx.sort_by(|&a, &b| run[a].kl.total_cmp(&run[b].kl));
    (
        idx.iter().map(|&i| run[i].kl).collect(),
        idx.iter().map(|&i| run[i].gold_reward).collect(),
        idx.iter().map(|&i| run[i].proxy_reward).collect(),
    )
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// The common KL range of a set of runs: from the largest per-run minimum to
/// the smallest per-run maximum, split into `n_points` uniform points.
pub fn common_kl_grid(runs: &[Vec<CurvePoint>], n_points: usize) -> Result<Vec<f64>> {
    if runs.is_empty() || n_points == 0 {
        return Err(Error::input("need at least one run and one grid point"));
    }
    let lo = runs
        .iter()
        .map(|r| r.iter().map(|p| p.kl).fold(f64::INFINITY, f64::min))
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = runs
        .iter()
        .map(|r| r.iter().map(|p| p.kl).fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min);
    if !(hi >= lo) {
        return Err(Error::input(format!(
            "runs share no KL range (lo {lo}, hi {hi})"
        )));
    }
    if n_points == 1 {
        return Ok(vec![hi]);
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| {
            if i == n_points - 1 {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect())
}

/// Interpolates every run onto `grid` and reduces pointwise.
pub fn aggregate_runs_on_grid(
    method: Method,
    runs: &[Vec<CurvePoint>],
    grid: &[f64],
) -> Result<AggregatedCurve> {
    if runs.is_empty() {
        return Err(Error::input(format!("no runs for method {method}")));
    }
    if let Some(r) = runs.iter().find(|r| r.len() < 2) {
        return Err(Error::input(format!(
            "run with {} point(s) cannot be interpolated (method {method})",
            r.len()
        )));
    }
    let sorted: Vec<_> = runs.iter().map(|r| sorted_by_kl(r)).collect();
    let mut out = AggregatedCurve {
        method,
        n_runs: runs.len(),
        kl: grid.to_vec(),
        gold_mean: Vec::with_capacity(grid.len()),
        gold_std: Vec::with_capacity(grid.len()),
        proxy_mean: Vec::with_capacity(grid.len()),
        proxy_std: Vec::with_capacity(grid.len()),
    };
    for &x in grid {
        let gold: Vec<f64> = sorted
            .iter()
            .map(|(k, g, _)| interpolate(k, g, x))
            .collect();
        let proxy: Vec<f64> = sorted
            .iter()
            .map(|(k, _, p)| interpolate(k, p, x))
            .collect();
        let (gm, gs) = mean_std(&gold);
        let (pm, ps) = mean_std(&proxy);
        out.gold_mean.push(gm);
        out.gold_std.push(gs);
        out.proxy_mean.push(pm);
        out.proxy_std.push(ps);
    }
    Ok(out)
}

pub const DEFAULT_GRID_POINTS: usize = 50;

/// Groups runs by method and averages each group on its common KL grid.
pub fn aggregate_runs(runs: &[Vec<CurvePoint>]) -> Result<Vec<AggregatedCurve>> {
    let mut methods: Vec<Method> = runs
        .iter()
        .filter_map(|r| r.first().map(|p| p.method))
        .collect();
    methods.sort();
    methods.dedup();
    if methods.is_empty() {
        return Err(Error::input(
            "aggregate_runs needs at least one nonempty run",
        ));
    }
    methods
        .into_iter()
        .map(|m| {
            let group: Vec<Vec<CurvePoint>> = runs
                .iter()
                .filter(|r| r.first().is_some_and(|p| p.method == m))
                .cloned()
                .collect();
            let grid = common_kl_grid(&group, DEFAULT_GRID_POINTS)?;
            aggregate_runs_on_grid(m, &group, &grid)
        })
        .collect()
}
