use crate::par::{self, Execution};
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    /// Rounds whose statistic was defined.
    pub rounds: usize,
    /// No stratum had two or more units to resample.
    pub degenerate: bool,
}

impl Interval {
    pub fn exact(point: f64) -> Self {
        Interval { point, lo: point, hi: point, rounds: 0, degenerate: true }
    }
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - i as f64) * (sorted[j] - sorted[i])
}

/// Resamples units with replacement independently within each stratum
/// (`strata[s]` units in stratum `s`) and reports the 16th and 84th
/// percentiles of `statistic` over `rounds` rounds. The statistic receives,
/// per stratum, the indices of the drawn units; the point estimate uses the
/// identity draw. Round `r` uses a seed derived from `(seed, r)`.
pub fn bootstrap<F>(strata: &[usize], rounds: usize, seed: u64, exec: Execution, statistic: F) -> Option<Interval>
where
    F: Fn(&[Vec<usize>]) -> Option<f64> + Sync + Send,
{
    bootstrap_many(strata, rounds, seed, exec, |draw| vec![statistic(draw)]).pop().flatten()
}

/// As `bootstrap`, for a statistic returning several components computed
/// from the same draw. The point draw fixes the number of components.
pub fn bootstrap_many<F>(
    strata: &[usize],
    rounds: usize,
    seed: u64,
    exec: Execution,
    statistic: F,
) -> Vec<Option<Interval>>
where
    F: Fn(&[Vec<usize>]) -> Vec<Option<f64>> + Sync + Send,
{
    let identity: Vec<Vec<usize>> = strata.iter().map(|&n| (0..n).collect()).collect();
    let points = statistic(&identity);
    let degenerate = strata.iter().all(|&n| n < 2);
    let draws: Vec<Vec<Option<f64>>> = par::map_range(exec, rounds, |r| {
        let mut rng = seed::stream_rng(seed, r as u64);
        let draw: Vec<Vec<usize>> = strata.iter().map(|&n| (0..n).map(|_| rng.random_range(0..n)).collect()).collect();
        statistic(&draw)
    });
    points
        .iter()
        .enumerate()
        .map(|(c, point)| {
            let point = (*point)?;
            let mut values: Vec<f64> =
                draws.iter().filter_map(|d| d.get(c).copied().flatten()).filter(|v| v.is_finite()).collect();
            if values.is_empty() {
                return Some(Interval { point, lo: point, hi: point, rounds: 0, degenerate: true });
            }
            values.sort_by(f64::total_cmp);
            Some(Interval {
                point,
                lo: percentile(&values, 0.16),
                hi: percentile(&values, 0.84),
                rounds: values.len(),
                degenerate,
            })
        })
        .collect()
}
