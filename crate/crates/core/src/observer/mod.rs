//! Behavioral observer models: linear, static Bayesian and sequential
//! (Kalman) observers, each with optional log-transform, Weber (scalar)
//! response noise and, for the Bayesian families, an affine output stage.

mod fit;
mod model;

pub use fit::{fit, fit_from, fit_grid, FitData, FitOptions, FitResult, ParamLayout, SessionSeries};
pub use model::{nll, predict_mean};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Log-transform stability constant, in task units.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("parameters do not match variant {0}")]
    ParamMismatch(String),
    #[error("variant {variant} needs at least {needed} observations, got {got}")]
    InsufficientData { variant: String, needed: usize, got: usize },
    #[error("fit failed for {0}: no restart reached a finite likelihood")]
    FitFailed(String),
    #[error("illegal variant: {0}")]
    IllegalVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    StaticBayes,
    Kalman,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::StaticBayes => "static_bayes",
            Family::Kalman => "kalman",
        }
    }

    pub fn is_bayesian(self) -> bool {
        self != Family::Linear
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObserverVariant {
    pub family: Family,
    pub log_transform: bool,
    pub weber: bool,
    pub affine: bool,
}

impl ObserverVariant {
    pub fn new(family: Family, log_transform: bool, weber: bool, affine: bool) -> Result<Self, ModelError> {
        let v = ObserverVariant { family, log_transform, weber, affine };
        if affine && family == Family::Linear {
            return Err(ModelError::IllegalVariant(
                "the linear family already has slope and intercept; affine output is not defined".into(),
            ));
        }
        Ok(v)
    }

    pub const fn plain(family: Family) -> Self {
        ObserverVariant { family, log_transform: false, weber: false, affine: false }
    }

    pub fn name(&self) -> String {
        let mut s = self.family.as_str().to_string();
        if self.log_transform {
            s.push_str("+log");
        }
        if self.weber {
            s.push_str("+weber");
        }
        if self.affine {
            s.push_str("+affine");
        }
        s
    }

    /// Number of free parameters. The Kalman measurement variance is held
    /// fixed during fitting (only variance ratios affect the filter mean),
    /// so it is not counted.
    pub fn n_params(&self) -> usize {
        let family = match self.family {
            Family::Linear => 2,
            Family::StaticBayes => 2,
            Family::Kalman => 3,
        };
        family + 1 + self.weber as usize + 2 * self.affine as usize
    }
}

impl fmt::Display for ObserverVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Every legal combination: 4 linear, 8 static Bayes, 8 Kalman.
pub fn enumerate_variants() -> Vec<ObserverVariant> {
    let mut out = Vec::with_capacity(20);
    for family in [Family::Linear, Family::StaticBayes, Family::Kalman] {
        for log_transform in [false, true] {
            for weber in [false, true] {
                for affine in [false, true] {
                    if let Ok(v) = ObserverVariant::new(family, log_transform, weber, affine) {
                        out.push(v);
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyParams {
    Linear { slope: f64, intercept: f64 },
    StaticBayes { prior_mean: f64, prior_weight: f64 },
    Kalman { measurement_var: f64, process_var: f64, initial_mean: f64, initial_var: f64 },
}

impl FamilyParams {
    pub fn family(&self) -> Family {
        match self {
            FamilyParams::Linear { .. } => Family::Linear,
            FamilyParams::StaticBayes { .. } => Family::StaticBayes,
            FamilyParams::Kalman { .. } => Family::Kalman,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub gain: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverParams {
    pub family: FamilyParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<Affine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weber: Option<f64>,
    pub sigma_dec: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl ObserverParams {
    pub fn new(family: FamilyParams, sigma_dec: f64) -> Self {
        ObserverParams { family, affine: None, weber: None, sigma_dec, epsilon: DEFAULT_EPSILON }
    }

    pub fn linear(slope: f64, intercept: f64, sigma_dec: f64) -> Self {
        Self::new(FamilyParams::Linear { slope, intercept }, sigma_dec)
    }

    pub fn static_bayes(prior_mean: f64, prior_weight: f64, sigma_dec: f64) -> Self {
        Self::new(FamilyParams::StaticBayes { prior_mean, prior_weight }, sigma_dec)
    }

    pub fn kalman(measurement_var: f64, process_var: f64, initial_mean: f64, initial_var: f64, sigma_dec: f64) -> Self {
        Self::new(FamilyParams::Kalman { measurement_var, process_var, initial_mean, initial_var }, sigma_dec)
    }

    pub fn with_affine(mut self, gain: f64, offset: f64) -> Self {
        self.affine = Some(Affine { gain, offset });
        self
    }

    pub fn with_weber(mut self, k: f64) -> Self {
        self.weber = Some(k);
        self
    }

    /// Parameters in the layout of `variant`; the weber coefficient and affine
    /// stage default to their nesting values (k = 0, g = 1, d = 0).
    pub fn conformed_to(mut self, variant: &ObserverVariant) -> Self {
        self.weber = variant.weber.then(|| self.weber.unwrap_or(0.0));
        self.affine = variant.affine.then(|| self.affine.unwrap_or(Affine { gain: 1.0, offset: 0.0 }));
        self
    }

    pub fn prior_weight(&self) -> Option<f64> {
        match self.family {
            FamilyParams::StaticBayes { prior_weight, .. } => Some(prior_weight),
            _ => None,
        }
    }

    pub fn check(&self, variant: &ObserverVariant) -> Result<(), ModelError> {
        let ok = self.family.family() == variant.family
            && self.affine.is_some() == variant.affine
            && self.weber.is_some() == variant.weber;
        if !ok {
            return Err(ModelError::ParamMismatch(variant.name()));
        }
        let bad = |m: &str| Err(ModelError::Evaluation(m.to_string()));
        if !(self.sigma_dec > 0.0) {
            return bad("sigma_dec must be > 0");
        }
        match self.family {
            FamilyParams::StaticBayes { prior_weight, .. } if !(0.0..=1.0).contains(&prior_weight) => {
                return bad("prior_weight must lie in [0, 1]")
            }
            FamilyParams::Kalman { measurement_var, process_var, initial_var, .. }
                if !(measurement_var > 0.0 && process_var >= 0.0 && initial_var > 0.0) =>
            {
                return bad("kalman variances out of bounds")
            }
            _ => {}
        }
        if let Some(k) = self.weber {
            if !(k >= 0.0) {
                return bad("weber coefficient must be >= 0");
            }
        }
        if let Some(a) = self.affine {
            if !(a.gain > 0.0) {
                return bad("affine gain must be > 0");
            }
        }
        Ok(())
    }

    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let mut v = match self.family {
            FamilyParams::Linear { slope, intercept } => vec![("slope", slope), ("intercept", intercept)],
            FamilyParams::StaticBayes { prior_mean, prior_weight } => {
                vec![("prior_mean", prior_mean), ("prior_weight", prior_weight)]
            }
            FamilyParams::Kalman { measurement_var, process_var, initial_mean, initial_var } => vec![
                ("measurement_var", measurement_var),
                ("process_var", process_var),
                ("initial_mean", initial_mean),
                ("initial_var", initial_var),
            ],
        };
        if let Some(a) = self.affine {
            v.push(("gain", a.gain));
            v.push(("offset", a.offset));
        }
        if let Some(k) = self.weber {
            v.push(("weber_k", k));
        }
        v.push(("sigma_dec", self.sigma_dec));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn grid_has_twenty_unique_legal_variants() {
        let g = enumerate_variants();
        assert_eq!(g.len(), 20);
        assert!(!g.iter().any(|v| v.family == Family::Linear && v.affine));
        let unique: HashSet<_> = g.iter().collect();
        assert_eq!(unique.len(), 20);
        // Oracle: count legal flag combinations directly.
        let mut count = 0;
        for fam in 0..3 {
            for bits in 0..8u8 {
                let affine = bits & 4 != 0;
                if !(fam == 0 && affine) {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 20);
    }

    #[test]
    fn affine_linear_is_illegal() {
        assert!(ObserverVariant::new(Family::Linear, false, false, true).is_err());
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(ObserverVariant::plain(Family::Linear).n_params(), 3);
        assert_eq!(ObserverVariant::plain(Family::StaticBayes).n_params(), 3);
        assert_eq!(ObserverVariant::plain(Family::Kalman).n_params(), 4);
        let v = ObserverVariant::new(Family::Kalman, true, true, true).unwrap();
        assert_eq!(v.n_params(), 7);
        assert_eq!(v.name(), "kalman+log+weber+affine");
    }

    #[test]
    fn param_checks() {
        let v = ObserverVariant::plain(Family::StaticBayes);
        assert!(ObserverParams::static_bayes(0.5, 0.3, 0.1).check(&v).is_ok());
        assert!(ObserverParams::static_bayes(0.5, 1.3, 0.1).check(&v).is_err());
        assert!(ObserverParams::static_bayes(0.5, 0.3, 0.0).check(&v).is_err());
        assert!(ObserverParams::linear(1.0, 0.0, 0.1).check(&v).is_err());
    }
}
