//! Reference cue-combination models for text/image/multimodal responses.

mod forest;

pub use forest::{ForestConfig, RandomForest};

use crate::metrics::{nrmse, rre, MetricsError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("{combiner} needs at least {needed} aligned trials, got {got}")]
    TooFew { combiner: &'static str, needed: usize, got: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One trial with all three responses present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionTrial {
    pub text: f64,
    pub image: f64,
    pub comb: f64,
    pub truth: f64,
    /// Midpoint of the session range the trial was drawn from.
    pub mid: f64,
}

/// Keeps the trials where every stream parsed.
pub fn align(
    text: &[Option<f64>],
    image: &[Option<f64>],
    comb: &[Option<f64>],
    truth: &[f64],
    mid: &[f64],
) -> Vec<FusionTrial> {
    (0..truth.len())
        .filter_map(|i| {
            Some(FusionTrial {
                text: (*text.get(i)?)?,
                image: (*image.get(i)?)?,
                comb: (*comb.get(i)?)?,
                truth: truth[i],
                mid: mid[i],
            })
        })
        .collect()
}

fn need(combiner: &'static str, needed: usize, got: usize) -> Result<(), FusionError> {
    if got < needed {
        Err(FusionError::TooFew { combiner, needed, got })
    } else {
        Ok(())
    }
}

pub fn fuse_equal(text: f64, image: f64) -> f64 {
    (text + image) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearAlpha {
    pub alpha: f64,
    /// The streams never differ, so alpha is unidentified and 0.5 is used.
    pub fallback: bool,
}

impl LinearAlpha {
    pub fn predict(&self, text: f64, image: f64) -> f64 {
        self.alpha * text + (1.0 - self.alpha) * image
    }
}

/// Least-squares weight of the text stream in predicting the multimodal
/// response, clipped to [0, 1].
pub fn fit_linear_alpha(trials: &[FusionTrial]) -> Result<LinearAlpha, FusionError> {
    need("linear_alpha", 3, trials.len())?;
    let (mut num, mut den) = (0.0, 0.0);
    for t in trials {
        let d = t.text - t.image;
        num += (t.comb - t.image) * d;
        den += d * d;
    }
    if den <= 1e-300 {
        return Ok(LinearAlpha { alpha: 0.5, fallback: true });
    }
    Ok(LinearAlpha { alpha: (num / den).clamp(0.0, 1.0), fallback: false })
}

/// How the non-oracle combiner estimates each stream's noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceCentering {
    /// Mean squared error of the raw (uncalibrated) responses about the stimulus.
    #[default]
    Truth,
    /// Spread of the responses about their own mean; includes stimulus spread.
    StreamMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseVariance {
    pub w_text: f64,
    pub var_text: f64,
    pub var_image: f64,
    /// A stream had zero variance and received all the weight.
    pub degenerate: bool,
}

impl InverseVariance {
    pub fn predict(&self, text: f64, image: f64) -> f64 {
        self.w_text * text + (1.0 - self.w_text) * image
    }
}

/// Weight of the first stream under inverse-variance weighting.
pub fn inverse_variance_weight(var_text: f64, var_image: f64) -> (f64, bool) {
    match (var_text > 0.0, var_image > 0.0) {
        (true, true) => {
            let (pt, pi) = (1.0 / var_text, 1.0 / var_image);
            (pt / (pt + pi), false)
        }
        (false, true) => (1.0, true),
        (true, false) => (0.0, true),
        (false, false) => (0.5, true),
    }
}

pub fn fuse_bayes_non_oracle(
    trials: &[FusionTrial],
    centering: VarianceCentering,
) -> Result<InverseVariance, FusionError> {
    need("bayes_non_oracle", 2, trials.len())?;
    let n = trials.len() as f64;
    let spread = |get: fn(&FusionTrial) -> f64| match centering {
        VarianceCentering::Truth => trials.iter().map(|t| (get(t) - t.truth).powi(2)).sum::<f64>() / n,
        VarianceCentering::StreamMean => {
            let m = trials.iter().map(get).sum::<f64>() / n;
            trials.iter().map(|t| (get(t) - m).powi(2)).sum::<f64>() / (n - 1.0)
        }
    };
    let var_text = spread(|t| t.text);
    let var_image = spread(|t| t.image);
    let (w_text, degenerate) = inverse_variance_weight(var_text, var_image);
    Ok(InverseVariance { w_text, var_text, var_image, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gain: f64,
    pub offset: f64,
}

impl Calibration {
    pub fn apply(&self, y: f64) -> f64 {
        self.gain * y + self.offset
    }
}

/// Least-squares map from responses to the stimulus.
fn calibrate(y: &[f64], x: &[f64]) -> Calibration {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mx = x.iter().sum::<f64>() / n;
    let sxy: f64 = y.iter().zip(x).map(|(a, b)| (a - my) * (b - mx)).sum();
    let syy: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
    let gain = if syy > 0.0 { sxy / syy } else { 0.0 };
    Calibration { gain, offset: mx - gain * my }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlsWeights {
    pub weights: [f64; 2],
    pub ridge: bool,
}

/// Weights `S⁻¹1 / (1ᵀS⁻¹1)` for a 2×2 residual covariance; a singular
/// matrix gets a ridge of 1e-8·trace on the diagonal.
pub fn gls_weights(cov: [[f64; 2]; 2]) -> GlsWeights {
    let mut c = cov;
    let trace = c[0][0] + c[1][1];
    let det = |c: &[[f64; 2]; 2]| c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let mut ridge = false;
    if det(&c).abs() <= 1e-14 * trace * trace {
        let lambda = 1e-8 * trace.max(f64::MIN_POSITIVE);
        c[0][0] += lambda;
        c[1][1] += lambda;
        ridge = true;
    }
    // S⁻¹1 up to the common 1/det factor, which cancels.
    let a = c[1][1] - c[0][1];
    let b = c[0][0] - c[1][0];
    let s = a + b;
    let weights = if s.abs() > 0.0 && s.is_finite() { [a / s, b / s] } else { [0.5, 0.5] };
    GlsWeights { weights, ridge }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleFusion {
    pub text: Calibration,
    pub image: Calibration,
    pub covariance: [[f64; 2]; 2],
    pub weights: [f64; 2],
    pub ridge: bool,
    /// A weight fell outside [0, 1] (anti-correlated residuals).
    pub outside_simplex: bool,
}

impl OracleFusion {
    pub fn predict(&self, text: f64, image: f64) -> f64 {
        self.weights[0] * self.text.apply(text) + self.weights[1] * self.image.apply(image)
    }
}

pub fn fuse_bayes_oracle(trials: &[FusionTrial]) -> Result<OracleFusion, FusionError> {
    need("bayes_oracle", 4, trials.len())?;
    let x: Vec<f64> = trials.iter().map(|t| t.truth).collect();
    let yt: Vec<f64> = trials.iter().map(|t| t.text).collect();
    let yi: Vec<f64> = trials.iter().map(|t| t.image).collect();
    let (ct, ci) = (calibrate(&yt, &x), calibrate(&yi, &x));
    let rt: Vec<f64> = yt.iter().zip(&x).map(|(y, x)| x - ct.apply(*y)).collect();
    let ri: Vec<f64> = yi.iter().zip(&x).map(|(y, x)| x - ci.apply(*y)).collect();
    let n = trials.len() as f64;
    let cov = |a: &[f64], b: &[f64]| {
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n
    };
    let c01 = cov(&rt, &ri);
    let covariance = [[cov(&rt, &rt), c01], [c01, cov(&ri, &ri)]];
    let g = gls_weights(covariance);
    Ok(OracleFusion {
        text: ct,
        image: ci,
        covariance,
        weights: g.weights,
        ridge: g.ridge,
        outside_simplex: g.weights.iter().any(|w| !(0.0..=1.0).contains(w)),
    })
}

pub fn fit_random_forest(trials: &[FusionTrial], cfg: &ForestConfig) -> Result<RandomForest, FusionError> {
    need("random_forest", 20, trials.len())?;
    let x: Vec<Vec<f64>> = trials.iter().map(|t| vec![t.text, t.image]).collect();
    let y: Vec<f64> = trials.iter().map(|t| t.comb).collect();
    Ok(RandomForest::fit(&x, &y, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerResult {
    pub combiner: String,
    pub params: String,
    pub nrmse: f64,
    /// Reference NRMSE over the observer's multimodal NRMSE.
    pub rre: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub n_trials: usize,
    pub observer_nrmse: f64,
    pub text_nrmse: f64,
    pub image_nrmse: f64,
    pub combiners: Vec<CombinerResult>,
    pub linear_alpha: Option<LinearAlpha>,
    pub non_oracle: Option<InverseVariance>,
    pub oracle: Option<OracleFusion>,
    pub forest_oob_rmse: Option<f64>,
    pub linear_alpha_rmse: Option<f64>,
    /// Combiners skipped for lack of data, with the reason.
    pub skipped: Vec<String>,
}

impl FusionReport {
    pub fn rre(&self, combiner: &str) -> Option<f64> {
        self.combiners.iter().find(|c| c.combiner == combiner).map(|c| c.rre)
    }
}

/// Fits every reference combiner and compares it with the observer's own
/// multimodal responses.
pub fn evaluate(
    trials: &[FusionTrial],
    centering: VarianceCentering,
    forest: Option<&ForestConfig>,
) -> Result<FusionReport, FusionError> {
    if trials.is_empty() {
        return Err(MetricsError::Empty.into());
    }
    let truth: Vec<f64> = trials.iter().map(|t| t.truth).collect();
    let mids: Vec<f64> = trials.iter().map(|t| t.mid).collect();
    let score = |f: &dyn Fn(&FusionTrial) -> f64| -> Result<f64, FusionError> {
        let p: Vec<f64> = trials.iter().map(f).collect();
        Ok(nrmse(&p, &truth, &mids)?)
    };
    let observer_nrmse = score(&|t| t.comb)?;
    let mut report = FusionReport {
        n_trials: trials.len(),
        observer_nrmse,
        text_nrmse: score(&|t| t.text)?,
        image_nrmse: score(&|t| t.image)?,
        combiners: vec![],
        linear_alpha: None,
        non_oracle: None,
        oracle: None,
        forest_oob_rmse: None,
        linear_alpha_rmse: None,
        skipped: vec![],
    };
    let push = |report: &mut FusionReport, name: &str, params: String, n: f64| {
        report.combiners.push(CombinerResult { combiner: name.into(), params, nrmse: n, rre: rre(n, observer_nrmse) });
    };

    let n = score(&|t| fuse_equal(t.text, t.image))?;
    push(&mut report, "equal", String::new(), n);

    match fit_linear_alpha(trials) {
        Ok(la) => {
            let n = score(&|t| la.predict(t.text, t.image))?;
            let sse: f64 = trials.iter().map(|t| (t.comb - la.predict(t.text, t.image)).powi(2)).sum();
            report.linear_alpha_rmse = Some((sse / trials.len() as f64).sqrt());
            push(&mut report, "linear_alpha", format!("alpha={}", la.alpha), n);
            report.linear_alpha = Some(la);
        }
        Err(e) => report.skipped.push(e.to_string()),
    }
    match fuse_bayes_non_oracle(trials, centering) {
        Ok(iv) => {
            let n = score(&|t| iv.predict(t.text, t.image))?;
            push(&mut report, "bayes_non_oracle", format!("w_text={}", iv.w_text), n);
            report.non_oracle = Some(iv);
        }
        Err(e) => report.skipped.push(e.to_string()),
    }
    match fuse_bayes_oracle(trials) {
        Ok(o) => {
            let n = score(&|t| o.predict(t.text, t.image))?;
            push(&mut report, "bayes_oracle", format!("w_text={};w_image={}", o.weights[0], o.weights[1]), n);
            report.oracle = Some(o);
        }
        Err(e) => report.skipped.push(e.to_string()),
    }
    if let Some(cfg) = forest {
        match fit_random_forest(trials, cfg) {
            Ok(rf) => {
                let n = score(&|t| rf.predict(&[t.text, t.image]))?;
                push(&mut report, "random_forest", format!("oob_rmse={}", rf.oob_rmse), n);
                report.forest_oob_rmse = Some(rf.oob_rmse);
            }
            Err(e) => report.skipped.push(e.to_string()),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRow {
    pub model: String,
    pub task: String,
    pub combiner: String,
    pub params: String,
    pub nrmse: f64,
    pub rre: f64,
}

pub fn write_fusion_csv<W: std::io::Write>(rows: &[FusionRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
