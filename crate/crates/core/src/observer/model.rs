use super::{FamilyParams, ModelError, ObserverParams, ObserverVariant};
use crate::observer::fit::FitData;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

fn to_working(v: f64, log: bool, eps: f64) -> Result<f64, ModelError> {
    if !v.is_finite() {
        return Err(ModelError::Evaluation(format!("non-finite stimulus {v}")));
    }
    if !log {
        return Ok(v);
    }
    if v + eps <= 0.0 {
        return Err(ModelError::Evaluation(format!("log of non-positive value {v} + {eps}")));
    }
    Ok((v + eps).ln())
}

/// Family rule in working space (log space for log variants). The Kalman
/// state starts at `(initial_mean, initial_var)` before the first trial.
fn family_means(family: &FamilyParams, xs: &[f64]) -> Vec<f64> {
    match *family {
        FamilyParams::Linear { slope, intercept } => xs.iter().map(|x| slope * x + intercept).collect(),
        FamilyParams::StaticBayes { prior_mean, prior_weight } => {
            xs.iter().map(|x| (1.0 - prior_weight) * x + prior_weight * prior_mean).collect()
        }
        FamilyParams::Kalman { measurement_var, process_var, initial_mean, initial_var } => {
            let mut mean = initial_mean;
            let mut var = initial_var;
            xs.iter()
                .map(|x| {
                    let prior_var = var + process_var;
                    let gain = prior_var / (prior_var + measurement_var);
                    mean += gain * (x - mean);
                    var = (1.0 - gain) * prior_var;
                    mean
                })
                .collect()
        }
    }
}

pub(crate) fn predict_unchecked(
    variant: &ObserverVariant,
    params: &ObserverParams,
    xs: &[f64],
) -> Result<Vec<f64>, ModelError> {
    let eps = params.epsilon;
    let working = xs.iter().map(|&x| to_working(x, variant.log_transform, eps)).collect::<Result<Vec<_>, _>>()?;
    let mut mu = family_means(&params.family, &working);
    if variant.log_transform {
        for m in &mut mu {
            *m = m.exp() - eps;
        }
    }
    if let Some(a) = params.affine {
        for m in &mut mu {
            *m = a.gain * *m + a.offset;
        }
    }
    Ok(mu)
}

/// Mean response for each stimulus of one session, in task units.
pub fn predict_mean(variant: &ObserverVariant, params: &ObserverParams, xs: &[f64]) -> Result<Vec<f64>, ModelError> {
    params.check(variant)?;
    predict_unchecked(variant, params, xs)
}

pub(crate) fn nll_unchecked(
    variant: &ObserverVariant,
    params: &ObserverParams,
    data: &FitData,
) -> Result<f64, ModelError> {
    let eps = params.epsilon;
    let k = params.weber.unwrap_or(0.0);
    let mut total = 0.0;
    let mut used = 0usize;
    for s in &data.sessions {
        let mu = predict_unchecked(variant, params, &s.stimuli)?;
        for (m, y) in mu.iter().zip(&s.responses) {
            let Some(y) = *y else { continue };
            let sd = params.sigma_dec * (1.0 + k * m.abs());
            let (resid, jac) = if variant.log_transform {
                let yw = to_working(y, true, eps)?;
                let mw = to_working(*m, true, eps)?;
                (yw - mw, yw)
            } else {
                (y - m, 0.0)
            };
            let z = resid / sd;
            total += HALF_LN_2PI + sd.ln() + 0.5 * z * z + jac;
            used += 1;
        }
    }
    if used == 0 {
        return Err(ModelError::InsufficientData { variant: variant.name(), needed: 1, got: 0 });
    }
    if !total.is_finite() {
        return Err(ModelError::Evaluation(format!("non-finite likelihood for {}", variant.name())));
    }
    Ok(total)
}

/// Gaussian negative log-likelihood of the parsed responses. Log variants are
/// scored on log responses with the change-of-variables term, so values are
/// comparable with the untransformed variants.
pub fn nll(variant: &ObserverVariant, params: &ObserverParams, data: &FitData) -> Result<f64, ModelError> {
    params.check(variant)?;
    nll_unchecked(variant, params, data)
}
