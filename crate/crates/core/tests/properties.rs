use bayesbench::client::parse_numeric;
use bayesbench::factor::{factor_evidence, Factor, FactorQuery};
use bayesbench::metrics::{ablation_score, bcs, nrmse, PriorShift, BCS_ABLATIONS};
use bayesbench::observer::{enumerate_variants, FitResult, ObserverParams};
use bayesbench::stimulus::TaskKind;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn fits_with(aics: &[f64]) -> Vec<FitResult> {
    enumerate_variants()
        .into_iter()
        .zip(aics)
        .map(|(variant, &aic)| FitResult {
            variant,
            params: ObserverParams::linear(1.0, 0.0, 0.1),
            log_likelihood: -aic / 2.0,
            n_params: 3,
            aic,
            n_observations: 90,
            restarts: 1,
            finite_restarts: 1,
            converged: true,
            evaluations: 1,
        })
        .collect()
}

fn aics() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-40.0f64..40.0, enumerate_variants().len())
}

fn factors() -> impl Strategy<Value = Factor> {
    prop_oneof![Just(Factor::Bayesian), Just(Factor::Sequential), Just(Factor::Weber)]
}

fn p_true(fits: &[FitResult], f: Factor) -> f64 {
    factor_evidence(fits, &FactorQuery::standard(f)).unwrap().p_true
}

proptest! {
    #[test]
    fn evidence_ignores_a_common_aic_offset(a in aics(), shift in -1e3f64..1e3, f in factors()) {
        let moved: Vec<f64> = a.iter().map(|x| x + shift).collect();
        prop_assert!((p_true(&fits_with(&a), f) - p_true(&fits_with(&moved), f)).abs() < 1e-9);
    }

    #[test]
    fn evidence_ignores_fit_order(a in aics(), f in factors(), rot in 0usize..20) {
        let fits = fits_with(&a);
        let mut shuffled = fits.clone();
        shuffled.rotate_left(rot);
        shuffled.reverse();
        prop_assert!((p_true(&fits, f) - p_true(&shuffled, f)).abs() < 1e-12);
    }

    #[test]
    fn a_weaker_duplicate_changes_nothing(a in aics(), f in factors(), which in 0usize..20, worse in 0.0f64..30.0) {
        let mut fits = fits_with(&a);
        let before = p_true(&fits, f);
        let mut extra = fits[which % fits.len()].clone();
        extra.aic += worse;
        fits.push(extra);
        prop_assert!((p_true(&fits, f) - before).abs() < 1e-12);
    }

    #[test]
    fn evidence_is_a_probability(a in aics(), f in factors()) {
        let e = factor_evidence(&fits_with(&a), &FactorQuery::standard(f)).unwrap();
        prop_assert!((0.0..=1.0).contains(&e.p_true));
        prop_assert!((e.p_true + e.p_false - 1.0).abs() < 1e-12);
    }

    #[test]
    fn consistency_score_is_bounded(ws in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 15)) {
        let mut shifts = BTreeMap::new();
        let cells = TaskKind::MULTIMODAL.iter().flat_map(|&t| BCS_ABLATIONS.iter().map(move |&a| (t, a)));
        for (key, (w_base, w_ablation)) in cells.zip(ws) {
            prop_assert!([-1, 0, 1].contains(&ablation_score(w_base, w_ablation)));
            shifts.insert(key, PriorShift { w_base, w_ablation });
        }
        let r = bcs(&shifts);
        prop_assert!((-15..=15).contains(&r.total));
        prop_assert!(r.per_task.values().all(|s| (-5..=5).contains(s)));
        prop_assert!(r.missing.is_empty());
    }

    #[test]
    fn midpoint_predictor_scores_one(lo in -50.0f64..50.0, width in 0.5f64..100.0, u in prop::collection::vec(0.0f64..1.0, 2..60)) {
        let truth: Vec<f64> = u.iter().map(|v| lo + v * width).collect();
        prop_assume!(truth.iter().any(|&t| (t - (lo + width / 2.0)).abs() > 1e-6));
        let mids = vec![lo + width / 2.0; truth.len()];
        prop_assert!((nrmse(&mids, &truth, &mids).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parsing_is_total(raw in ".{0,40}", lo in -100.0f64..100.0, width in 0.1f64..100.0) {
        let hi = lo + width;
        if let Some(v) = parse_numeric(&raw, (lo, hi)) {
            prop_assert!(v >= lo - width / 2.0 && v <= hi + width / 2.0);
        }
    }

    #[test]
    fn a_lone_number_in_range_parses(u in 0.0f64..1.0, lo in -100.0f64..100.0, width in 0.1f64..100.0) {
        let v = ((lo + u * width) * 1e4).round() / 1e4;
        prop_assume!(v >= lo && v <= lo + width);
        prop_assert_eq!(parse_numeric(&format!("About {v} units."), (lo, lo + width)), Some(v));
    }
}
