use super::model::nll_unchecked;
use super::{Affine, Family, FamilyParams, ModelError, ObserverParams, ObserverVariant, DEFAULT_EPSILON};
use crate::optim::{multi_start, MultiStartConfig};
use crate::par;
use crate::seed;
use serde::{Deserialize, Serialize};

/// Stimuli and (possibly unparsed) responses of one session, in trial order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSeries {
    pub stimuli: Vec<f64>,
    pub responses: Vec<Option<f64>>,
}

impl SessionSeries {
    pub fn complete(stimuli: Vec<f64>, responses: Vec<f64>) -> Self {
        SessionSeries { stimuli, responses: responses.into_iter().map(Some).collect() }
    }

    pub fn n_parsed(&self) -> usize {
        self.responses.iter().filter(|r| r.is_some()).count()
    }
}

/// Sessions fitted jointly with shared parameters. Sequential state restarts
/// at each session boundary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitData {
    pub sessions: Vec<SessionSeries>,
}

impl FitData {
    pub fn new(sessions: Vec<SessionSeries>) -> Self {
        FitData { sessions }
    }

    pub fn n_observations(&self) -> usize {
        self.sessions.iter().map(SessionSeries::n_parsed).sum()
    }

    fn stimulus_range(&self) -> Option<(f64, f64)> {
        let mut it = self.sessions.iter().flat_map(|s| s.stimuli.iter().copied());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub multi_start: MultiStartConfig,
    pub epsilon: f64,
    /// Stimulus domain used to scale bounds; defaults to the observed range.
    pub domain: Option<(f64, f64)>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { multi_start: MultiStartConfig::default(), epsilon: DEFAULT_EPSILON, domain: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Transform {
    Identity,
    /// `floor + exp(u)`
    Positive {
        floor: f64,
    },
    /// Logistic onto `(lo, hi)`.
    Bounded {
        lo: f64,
        hi: f64,
    },
}

impl Transform {
    fn decode(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Positive { floor } => floor + u.exp(),
            Transform::Bounded { lo, hi } => lo + (hi - lo) / (1.0 + (-u).exp()),
        }
    }

    fn encode(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Positive { floor } => (v - floor).max(1e-300).ln(),
            Transform::Bounded { lo, hi } => {
                let t = ((v - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
                (t / (1.0 - t)).ln()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    name: &'static str,
    transform: Transform,
    /// Starting box in natural units.
    start: (f64, f64),
}

/// Maps a variant's free parameters to and from an unconstrained vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    variant: ObserverVariant,
    slots: Vec<Slot>,
    measurement_var: f64,
    epsilon: f64,
}

impl ParamLayout {
    /// `domain` is the stimulus range in task units. Family parameters live in
    /// working space (log space for log variants); the affine stage and the
    /// weber coefficient act on task units.
    pub fn new(variant: &ObserverVariant, domain: (f64, f64), epsilon: f64) -> Self {
        let (nlo, nhi) = domain;
        let nw = (nhi - nlo).abs().max(1e-9);
        let (lo, hi) = if variant.log_transform {
            ((nlo.max(0.0) + epsilon).ln(), (nhi.max(0.0) + epsilon).ln())
        } else {
            (nlo, nhi)
        };
        let w = (hi - lo).abs().max(1e-9);
        let slot = |name, transform, start| Slot { name, transform, start };
        let mut slots = Vec::new();
        match variant.family {
            Family::Linear => {
                slots.push(slot("slope", Transform::Identity, (0.0, 1.5)));
                slots.push(slot("intercept", Transform::Identity, (lo - 0.5 * w, hi)));
            }
            Family::StaticBayes => {
                slots.push(slot("prior_mean", Transform::Bounded { lo: lo - 0.5 * w, hi: hi + 0.5 * w }, (lo, hi)));
                slots.push(slot("prior_weight", Transform::Bounded { lo: 0.0, hi: 1.0 }, (0.02, 0.98)));
            }
            Family::Kalman => {
                slots.push(slot("process_var", Transform::Positive { floor: 0.0 }, (1e-4 * w * w, w * w)));
                slots.push(slot("initial_mean", Transform::Bounded { lo: lo - 0.5 * w, hi: hi + 0.5 * w }, (lo, hi)));
                slots.push(slot(
                    "initial_var",
                    Transform::Bounded { lo: 1e-6, hi: w * w },
                    (1e-4 * w * w, 0.99 * w * w),
                ));
            }
        }
        if variant.affine {
            slots.push(slot("gain", Transform::Positive { floor: 0.0 }, (0.5, 2.0)));
            slots.push(slot("offset", Transform::Identity, (-0.25 * nw, 0.25 * nw)));
        }
        if variant.weber {
            slots.push(slot("weber_k", Transform::Positive { floor: 0.0 }, (1e-3 / nw, 10.0 / nw)));
        }
        let floor = 1e-6 * w;
        slots.push(slot("sigma_dec", Transform::Positive { floor }, (0.005 * w, 0.5 * w)));
        ParamLayout { variant: *variant, slots, measurement_var: w * w, epsilon }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.slots.iter().map(|s| s.name).collect()
    }

    /// The Kalman measurement variance held fixed during fitting.
    pub fn measurement_var(&self) -> f64 {
        self.measurement_var
    }

    pub fn decode(&self, u: &[f64]) -> ObserverParams {
        let v: Vec<f64> = self.slots.iter().zip(u).map(|(s, &x)| s.transform.decode(x)).collect();
        let mut i = 0;
        let mut next = || {
            i += 1;
            v[i - 1]
        };
        let family = match self.variant.family {
            Family::Linear => FamilyParams::Linear { slope: next(), intercept: next() },
            Family::StaticBayes => FamilyParams::StaticBayes { prior_mean: next(), prior_weight: next() },
            Family::Kalman => FamilyParams::Kalman {
                measurement_var: self.measurement_var,
                process_var: next(),
                initial_mean: next(),
                initial_var: next(),
            },
        };
        let affine = self.variant.affine.then(|| Affine { gain: next(), offset: next() });
        let weber = self.variant.weber.then(&mut next);
        let sigma_dec = next();
        ObserverParams { family, affine, weber, sigma_dec, epsilon: self.epsilon }
    }

    /// Inverse of `decode`. Kalman variances are rescaled to the fixed
    /// measurement variance; the filter mean depends only on their ratios.
    pub fn encode(&self, p: &ObserverParams) -> Vec<f64> {
        let p = p.conformed_to(&self.variant);
        let mut v = match p.family {
            FamilyParams::Linear { slope, intercept } => vec![slope, intercept],
            FamilyParams::StaticBayes { prior_mean, prior_weight } => vec![prior_mean, prior_weight],
            FamilyParams::Kalman { measurement_var, process_var, initial_mean, initial_var } => {
                let scale = self.measurement_var / measurement_var;
                vec![process_var * scale, initial_mean, initial_var * scale]
            }
        };
        if let Some(a) = p.affine {
            v.push(a.gain);
            v.push(a.offset);
        }
        if let Some(k) = p.weber {
            v.push(k.max(1e-12));
        }
        v.push(p.sigma_dec);
        self.slots.iter().zip(v).map(|(s, x)| s.transform.encode(x)).collect()
    }

    fn start_boxes(&self) -> Vec<(f64, f64)> {
        self.slots.iter().map(|s| (s.transform.encode(s.start.0), s.transform.encode(s.start.1))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: ObserverVariant,
    pub params: ObserverParams,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub aic: f64,
    pub n_observations: usize,
    pub restarts: usize,
    pub finite_restarts: usize,
    pub converged: bool,
    pub evaluations: usize,
}

fn domain_of(data: &FitData, opts: &FitOptions) -> (f64, f64) {
    opts.domain.or_else(|| data.stimulus_range()).unwrap_or((0.0, 1.0))
}

/// Maximum-likelihood fit of one variant.
pub fn fit(variant: &ObserverVariant, data: &FitData, opts: &FitOptions) -> Result<FitResult, ModelError> {
    fit_from(variant, data, opts, &[])
}

/// As `fit`, also starting the simplex from each of `starts` (conformed to
/// the variant's layout).
pub fn fit_from(
    variant: &ObserverVariant,
    data: &FitData,
    opts: &FitOptions,
    starts: &[ObserverParams],
) -> Result<FitResult, ModelError> {
    let k = variant.n_params();
    let n = data.n_observations();
    if n < k + 2 {
        return Err(ModelError::InsufficientData { variant: variant.name(), needed: k + 2, got: n });
    }
    let layout = ParamLayout::new(variant, domain_of(data, opts), opts.epsilon);
    let objective = |u: &[f64]| {
        let p = layout.decode(u);
        nll_unchecked(variant, &p, data).unwrap_or(f64::INFINITY)
    };
    let extra: Vec<Vec<f64>> = starts.iter().map(|p| layout.encode(p)).collect();
    let cfg = MultiStartConfig {
        seed: seed::derive(opts.multi_start.seed, seed::label(&variant.name())),
        ..opts.multi_start
    };
    let r = multi_start(objective, &layout.start_boxes(), &extra, &cfg);
    let finite_restarts = r.finite_restarts();
    if !r.best.f.is_finite() {
        return Err(ModelError::FitFailed(variant.name()));
    }
    let params = layout.decode(&r.best.x);
    let log_likelihood = -r.best.f;
    Ok(FitResult {
        variant: *variant,
        params,
        log_likelihood,
        n_params: k,
        aic: 2.0 * k as f64 - 2.0 * log_likelihood,
        n_observations: n,
        restarts: r.restart_values.len(),
        finite_restarts,
        converged: r.best.converged,
        evaluations: r.total_evals,
    })
}

fn nests(inner: &ObserverVariant, outer: &ObserverVariant) -> bool {
    inner != outer
        && inner.family == outer.family
        && inner.log_transform == outer.log_transform
        && (!inner.weber || outer.weber)
        && (!inner.affine || outer.affine)
}

/// Fits every variant. Variants are fitted in order of extension depth so that
/// each richer variant also starts from the optima of the variants it nests;
/// a richer variant therefore never fits worse than a nested one.
pub fn fit_grid(variants: &[ObserverVariant], data: &FitData, opts: &FitOptions) -> Vec<Result<FitResult, ModelError>> {
    let mut out: Vec<Option<Result<FitResult, ModelError>>> = vec![None; variants.len()];
    for depth in 0..=2usize {
        let idx: Vec<usize> = (0..variants.len())
            .filter(|&i| variants[i].weber as usize + variants[i].affine as usize == depth)
            .collect();
        let done = &out;
        let fitted = par::map(opts.multi_start.exec, &idx, |&i| {
            let starts: Vec<ObserverParams> = done
                .iter()
                .flatten()
                .filter_map(|r| r.as_ref().ok())
                .filter(|r| nests(&r.variant, &variants[i]))
                .map(|r| r.params)
                .collect();
            fit_from(&variants[i], data, opts, &starts)
        });
        for (i, r) in idx.into_iter().zip(fitted) {
            out[i] = Some(r);
        }
    }
    out.into_iter().map(|r| r.expect("every depth is visited")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::{enumerate_variants, nll, predict_mean};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn sample(variant: &ObserverVariant, p: &ObserverParams, n: usize, seed_: u64) -> FitData {
        let mut rng = seed::rng(seed_);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
        let mu = predict_mean(variant, p, &xs).unwrap();
        let noise = Normal::new(0.0, p.sigma_dec).unwrap();
        let ys = mu.iter().map(|m| m + noise.sample(&mut rng)).collect();
        FitData::new(vec![SessionSeries::complete(xs, ys)])
    }

    #[test]
    fn transforms_round_trip() {
        for t in [Transform::Identity, Transform::Positive { floor: 0.01 }, Transform::Bounded { lo: -1.0, hi: 3.0 }] {
            for u in [-3.0, -0.2, 0.0, 1.7] {
                assert!((t.encode(t.decode(u)) - u).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn layout_encode_decode() {
        let v = ObserverVariant::new(Family::Kalman, false, true, true).unwrap();
        let layout = ParamLayout::new(&v, (0.0, 1.0), 1e-6);
        assert_eq!(layout.len(), v.n_params());
        let p = ObserverParams::kalman(1.0, 0.05, 0.4, 0.2, 0.03).with_affine(1.1, -0.02).with_weber(0.5);
        let back = layout.decode(&layout.encode(&p));
        let (a, b) = (back.named(), p.named());
        for ((na, va), (nb, vb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            assert!((va - vb).abs() < 1e-9, "{na}: {va} vs {vb}");
        }
    }

    #[test]
    fn identity_data_linear_fit() {
        let xs: Vec<f64> = (0..30).map(|i| 0.1 + 0.025 * i as f64).collect();
        let data = FitData::new(vec![SessionSeries::complete(xs.clone(), xs)]);
        let r = fit(&ObserverVariant::plain(Family::Linear), &data, &FitOptions::default()).unwrap();
        let FamilyParams::Linear { slope, intercept } = r.params.family else { panic!() };
        assert!((slope - 1.0).abs() < 1e-6, "{slope}");
        assert!(intercept.abs() < 1e-6, "{intercept}");
        assert!(r.params.sigma_dec < 1e-4, "{}", r.params.sigma_dec);
    }

    #[test]
    fn static_bayes_recovery_and_grid_cross_check() {
        let v = ObserverVariant::plain(Family::StaticBayes);
        let truth = ObserverParams::static_bayes(0.5, 0.3, 0.03);
        let data = sample(&v, &truth, 90, 11);
        let r = fit(&v, &data, &FitOptions::default()).unwrap();
        let w = r.params.prior_weight().unwrap();
        assert!((0.25..=0.35).contains(&w), "{w}");
        assert!((r.aic - (2.0 * 3.0 - 2.0 * r.log_likelihood)).abs() < 1e-12);
        // Coarse grid around the optimum never beats it.
        let FamilyParams::StaticBayes { prior_mean, prior_weight } = r.params.family else { panic!() };
        for i in 0..20 {
            for j in 0..20 {
                let pm = prior_mean + (i as f64 - 9.5) * 0.01;
                let pw = (prior_weight + (j as f64 - 9.5) * 0.005).clamp(0.0, 1.0);
                let p = ObserverParams::static_bayes(pm, pw, r.params.sigma_dec);
                assert!(nll(&v, &p, &data).unwrap() >= -r.log_likelihood - 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let v = ObserverVariant::plain(Family::Kalman);
        let truth = ObserverParams::kalman(1.0, 0.2, 0.5, 0.5, 0.03);
        let data = sample(&v, &truth, 60, 2);
        let opts = FitOptions::default();
        assert_eq!(fit(&v, &data, &opts).unwrap(), fit(&v, &data, &opts).unwrap());
    }

    #[test]
    fn insufficient_data() {
        let data = FitData::new(vec![SessionSeries::complete(vec![0.1, 0.2], vec![0.1, 0.2])]);
        assert!(matches!(
            fit(&ObserverVariant::plain(Family::Linear), &data, &FitOptions::default()),
            Err(ModelError::InsufficientData { .. })
        ));
    }

    #[test]
    fn grid_respects_nesting() {
        let v = ObserverVariant::plain(Family::StaticBayes);
        let truth = ObserverParams::static_bayes(0.45, 0.4, 0.04);
        let data = sample(&v, &truth, 90, 5);
        let variants = enumerate_variants();
        let fits = fit_grid(&variants, &data, &FitOptions::default());
        let ok: Vec<&FitResult> = fits.iter().filter_map(|r| r.as_ref().ok()).collect();
        assert_eq!(ok.len(), 20);
        for outer in &ok {
            for inner in &ok {
                if nests(&inner.variant, &outer.variant) {
                    assert!(
                        outer.log_likelihood >= inner.log_likelihood - 1e-6,
                        "{} {} vs {} {}",
                        outer.variant,
                        outer.log_likelihood,
                        inner.variant,
                        inner.log_likelihood
                    );
                }
            }
        }
    }
}
