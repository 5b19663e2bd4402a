//! Derivative-free minimization: Nelder–Mead simplex search with Latin
//! hypercube multi-start.

use crate::par::{self, Execution};
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    pub max_evals: usize,
    /// Converged once the simplex diameter (max-norm) drops below this.
    pub x_tol: f64,
    /// Converged once the spread of simplex values drops below this.
    pub f_tol: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig { max_evals: 2000, x_tol: 1e-8, f_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Minimizes `f` from `x0` with an axis-aligned initial simplex of the given
/// per-coordinate `steps`. Non-finite objective values count as +inf.
pub fn nelder_mead<F>(f: F, x0: &[f64], steps: &[f64], cfg: &NelderMeadConfig) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        finite_or_inf(f(x))
    };
    if n == 0 {
        let v = eval(x0);
        return Minimum { x: vec![], f: v, evals: 1, converged: true };
    }

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let spread = simplex[n].1 - simplex[0].1;
        if diameter < cfg.x_tol || (spread.is_finite() && spread <= cfg.f_tol) {
            converged = true;
            break;
        }
        if evals.get() >= cfg.max_evals {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < fr.min(worst.1) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = x_best.iter().zip(&item.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
            let v = eval(&x);
            *item = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum { x, f, evals: evals.get(), converged }
}

/// `n` points in the unit hypercube `[0, 1)^dims`, one per stratum per axis.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dims]; n];
    for d in 0..dims {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, s) in strata.into_iter().enumerate() {
            pts[i][d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiStartConfig {
    pub restarts: usize,
    pub seed: u64,
    pub nelder_mead: NelderMeadConfig,
    /// Relative size of the initial simplex, as a fraction of each box width.
    pub initial_step: f64,
    /// Re-run the simplex once from the best restart's optimum.
    pub polish: bool,
    pub exec: Execution,
}

impl Default for MultiStartConfig {
    fn default() -> Self {
        MultiStartConfig {
            restarts: 20,
            seed: 0,
            nelder_mead: NelderMeadConfig::default(),
            initial_step: 0.1,
            polish: true,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStartResult {
    pub best: Minimum,
    pub restart_values: Vec<f64>,
    pub total_evals: usize,
}

impl MultiStartResult {
    pub fn finite_restarts(&self) -> usize {
        self.restart_values.iter().filter(|v| v.is_finite()).count()
    }
}

/// Runs Nelder–Mead from Latin-hypercube starting points drawn in `boxes`
/// (one `(lo, hi)` per coordinate) and from any `extra_starts`; returns the
/// lowest minimum (ties go to the earliest start).
pub fn multi_start<F>(f: F, boxes: &[(f64, f64)], extra_starts: &[Vec<f64>], cfg: &MultiStartConfig) -> MultiStartResult
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut rng = seed::rng(cfg.seed);
    let mut starts: Vec<Vec<f64>> = latin_hypercube(cfg.restarts, boxes.len(), &mut rng)
        .into_iter()
        .map(|u| u.iter().zip(boxes).map(|(t, (lo, hi))| lo + t * (hi - lo)).collect())
        .collect();
    starts.extend(extra_starts.iter().cloned());
    let steps: Vec<f64> = boxes.iter().map(|(lo, hi)| (cfg.initial_step * (hi - lo)).abs().max(1e-3)).collect();

    let results = par::map(cfg.exec, &starts, |x0| nelder_mead(&f, x0, &steps, &cfg.nelder_mead));
    let restart_values: Vec<f64> = results.iter().map(|m| m.f).collect();
    let mut total_evals: usize = results.iter().map(|m| m.evals).sum();
    let mut best = results.into_iter().reduce(|a, b| if b.f < a.f { b } else { a }).unwrap_or(Minimum {
        x: vec![],
        f: f64::INFINITY,
        evals: 0,
        converged: false,
    });

    if cfg.polish && best.f.is_finite() && !best.x.is_empty() {
        let polished = nelder_mead(&f, &best.x, &steps, &cfg.nelder_mead);
        total_evals += polished.evals;
        if polished.f <= best.f {
            best = polished;
        }
    }
    MultiStartResult { best, restart_values, total_evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let cfg = NelderMeadConfig { max_evals: 5000, x_tol: 1e-10, f_tol: 0.0 };
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], &[0.1, 0.1], &cfg);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn quadratic_in_five_dims() {
        let target = [1.0, -2.0, 3.0, 0.5, -0.25];
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let m = nelder_mead(f, &[0.0; 5], &[0.5; 5], &NelderMeadConfig { max_evals: 20_000, ..Default::default() });
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn respects_evaluation_budget() {
        let cfg = NelderMeadConfig { max_evals: 50, x_tol: 0.0, f_tol: 0.0 };
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], &[0.1, 0.1], &cfg);
        assert!(!m.converged);
        assert!(m.evals <= 50 + 3);
    }

    #[test]
    fn nonfinite_values_are_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let m = nelder_mead(f, &[0.5], &[0.1], &NelderMeadConfig::default());
        assert!((m.x[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn lhs_strata() {
        let mut rng = seed::rng(3);
        let pts = latin_hypercube(10, 3, &mut rng);
        for d in 0..3 {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[d] * 10.0) as usize).collect();
            bins.sort();
            assert_eq!(bins, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn multi_start_escapes_local_minimum() {
        // Double well with the global minimum at x = 2.
        let f = |x: &[f64]| (x[0] * x[0] - 4.0).powi(2) + (x[0] - 2.0).powi(2) * 0.1 + x[1] * x[1];
        let cfg = MultiStartConfig { restarts: 8, seed: 1, ..Default::default() };
        let r = multi_start(f, &[(-3.0, 3.0), (-1.0, 1.0)], &[], &cfg);
        assert!((r.best.x[0] - 2.0).abs() < 1e-3);
        assert_eq!(r.restart_values.len(), 8);
        let seq =
            multi_start(f, &[(-3.0, 3.0), (-1.0, 1.0)], &[], &MultiStartConfig { exec: Execution::Sequential, ..cfg });
        assert_eq!(seq.best, r.best);
    }
}
