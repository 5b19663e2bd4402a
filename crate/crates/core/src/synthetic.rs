//! Agents with known observer parameters that answer like a real observer.
//! Their output is the ground truth for fitting, factor, fusion and
//! consistency checks.

use crate::observer::{predict_mean, FamilyParams, ModelError, ObserverParams, ObserverVariant};
use crate::seed;
use crate::session::{AblationKind, Modality};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const RESPONSE_STREAM: u64 = 0x5245_5350;
const PERCEPT_STREAM: u64 = 0x5045_5243;

/// How an ablation changes the agent's prior weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum WeightRule {
    Shift(f64),
    Set(f64),
}

impl WeightRule {
    pub fn apply(self, w: f64) -> f64 {
        match self {
            WeightRule::Shift(d) => (w + d).clamp(0.0, 1.0),
            WeightRule::Set(v) => v.clamp(0.0, 1.0),
        }
    }
}

/// Gaussian jitter added to the stimulus before the agent sees it, per stream.
/// Multimodal trials see the precision-weighted blend of both percepts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Perception {
    pub text_sd: f64,
    pub image_sd: f64,
}

impl Perception {
    pub const FUSION_DEFAULT: Perception = Perception { text_sd: 0.02, image_sd: 0.06 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAgent {
    pub variant: ObserverVariant,
    pub params: ObserverParams,
    #[serde(default)]
    pub ablation_rule: BTreeMap<AblationKind, WeightRule>,
    #[serde(default)]
    pub perception: Perception,
}

impl SyntheticAgent {
    pub fn new(variant: ObserverVariant, params: ObserverParams) -> Result<Self, ModelError> {
        params.check(&variant)?;
        Ok(SyntheticAgent { variant, params, ablation_rule: BTreeMap::new(), perception: Perception::default() })
    }

    /// Answers with the stimulus itself.
    pub fn identity() -> Self {
        let variant = ObserverVariant::plain(crate::observer::Family::Linear);
        let params = ObserverParams::linear(1.0, 0.0, 1e-300);
        SyntheticAgent { variant, params, ablation_rule: BTreeMap::new(), perception: Perception::default() }
    }

    pub fn with_rule(mut self, ablations: &[AblationKind], rule: WeightRule) -> Self {
        for &a in ablations {
            self.ablation_rule.insert(a, rule);
        }
        self
    }

    pub fn with_perception(mut self, perception: Perception) -> Self {
        self.perception = perception;
        self
    }

    /// Parameters in force under `ablation`. Rules only touch the static
    /// prior weight.
    pub fn params_for(&self, ablation: AblationKind) -> ObserverParams {
        let mut p = self.params;
        if let (Some(rule), FamilyParams::StaticBayes { prior_mean, prior_weight }) =
            (self.ablation_rule.get(&ablation), p.family)
        {
            p.family = FamilyParams::StaticBayes { prior_mean, prior_weight: rule.apply(prior_weight) };
        }
        p
    }

    fn percept(&self, x: f64, seed_: u64, t: usize, modality: Modality) -> f64 {
        let draw = |stream: u64, sd: f64| {
            if sd > 0.0 {
                let z: f64 = StandardNormal
                    .sample(&mut seed::stream_rng(seed::derive2(seed_, PERCEPT_STREAM, stream), t as u64));
                x + sd * z
            } else {
                x
            }
        };
        let Perception { text_sd, image_sd } = self.perception;
        match modality {
            Modality::Text => draw(0, text_sd),
            Modality::Image => draw(1, image_sd),
            Modality::Multimodal => {
                let (a, b) = (draw(0, text_sd), draw(1, image_sd));
                match (text_sd > 0.0, image_sd > 0.0) {
                    (true, true) => {
                        let (pa, pb) = (text_sd.powi(-2), image_sd.powi(-2));
                        (pa * a + pb * b) / (pa + pb)
                    }
                    (false, _) => a,
                    (true, false) => b,
                }
            }
        }
    }

    /// Responses to one session's stimuli (in presentation order) under an
    /// ablation and modality. Trial `t`'s noise depends only on `(seed, t)`.
    pub fn respond(
        &self,
        xs: &[f64],
        seed_: u64,
        ablation: AblationKind,
        modality: Modality,
    ) -> Result<Vec<f64>, ModelError> {
        let params = self.params_for(ablation);
        let seen: Vec<f64> = xs.iter().enumerate().map(|(t, &x)| self.percept(x, seed_, t, modality)).collect();
        let mu = predict_mean(&self.variant, &params, &seen)?;
        let k = params.weber.unwrap_or(0.0);
        let eps = params.epsilon;
        Ok(mu
            .iter()
            .enumerate()
            .map(|(t, &m)| {
                let z: f64 =
                    StandardNormal.sample(&mut seed::stream_rng(seed::derive(seed_, RESPONSE_STREAM), t as u64));
                let sd = params.sigma_dec * (1.0 + k * m.abs());
                if self.variant.log_transform {
                    ((m + eps).max(f64::MIN_POSITIVE).ln() + sd * z).exp() - eps
                } else {
                    m + sd * z
                }
            })
            .collect())
    }
}

/// Draws responses from the agent's own response distribution.
pub fn simulate(agent: &SyntheticAgent, xs: &[f64], seed: u64) -> Result<Vec<f64>, ModelError> {
    agent.respond(xs, seed, AblationKind::None, Modality::Text)
}
