//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any criterion fails.

use bayesbench::factor::{factor_evidence, Factor, FactorQuery};
use bayesbench::fusion::{
    fuse_bayes_non_oracle, fuse_bayes_oracle, inverse_variance_weight, FusionTrial, VarianceCentering,
};
use bayesbench::harness::{
    analyze, generate, run, score, ChannelSpec, ExperimentManifest, ObserverSpec, PipelineConfig, RunOptions,
    ScoreSummary, TranscriptSource, Workspace,
};
use bayesbench::metrics::{
    accuracy_factor, bayesbench as composite, bootstrap, consistency_factor, nrmse, BCS_ABLATIONS,
};
use bayesbench::observer::{
    enumerate_variants, fit, fit_grid, Family, FamilyParams, FitData, FitOptions, FitResult, ObserverParams,
    ObserverVariant, SessionSeries,
};
use bayesbench::par::Execution;
use bayesbench::seed;
use bayesbench::session::{AblationConfig, AblationKind, Modality};
use bayesbench::stimulus::{
    decode_line_ratio_ascii, decode_line_ratio_image, decode_marker_ascii, decode_marker_image, gen_line_ratio,
    gen_marker, gen_maze, path_distance, sample_session_values, MazeConfig, RenderConfig, SessionKind, SessionRange,
    TaskKind,
};
use bayesbench::synthetic::{simulate, SyntheticAgent, WeightRule};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

const SEEDS: u64 = 10;
const N_TRIALS: usize = 90;
const SIGMA: f64 = 0.03;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Stimuli for one 90-trial session spread over the whole unit interval.
fn unit_stimuli(s: u64) -> Vec<f64> {
    let range = SessionRange { kind: SessionKind::Medium, lo: 0.0, hi: 1.0 };
    sample_session_values(&range, N_TRIALS, seed::derive(0xACCE, s)).unwrap()
}

fn data_from(agent: &SyntheticAgent, s: u64) -> FitData {
    let xs = unit_stimuli(s);
    let ys = simulate(agent, &xs, seed::derive(0x5EED, s)).unwrap();
    FitData::new(vec![SessionSeries::complete(xs, ys)])
}

fn unit_options() -> FitOptions {
    FitOptions { domain: Some((0.0, 1.0)), ..FitOptions::default() }
}

fn linear_truth() -> SyntheticAgent {
    SyntheticAgent::new(ObserverVariant::plain(Family::Linear), ObserverParams::linear(0.8, 0.2, SIGMA)).unwrap()
}

fn static_truth() -> SyntheticAgent {
    SyntheticAgent::new(ObserverVariant::plain(Family::StaticBayes), ObserverParams::static_bayes(0.5, 0.3, SIGMA))
        .unwrap()
}

/// Measurement and process variance equal (unit signal-to-noise per step).
fn kalman_truth() -> SyntheticAgent {
    SyntheticAgent::new(ObserverVariant::plain(Family::Kalman), ObserverParams::kalman(1.0, 1.0, 0.5, 0.5, SIGMA))
        .unwrap()
}

fn weber_truth() -> SyntheticAgent {
    let v = ObserverVariant::new(Family::Linear, false, true, false).unwrap();
    SyntheticAgent::new(v, ObserverParams::linear(1.0, 0.0, SIGMA).with_weber(2.0)).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn kalman_ratio(p: &ObserverParams) -> f64 {
    match p.family {
        FamilyParams::Kalman { measurement_var, process_var, .. } => process_var / measurement_var,
        _ => f64::NAN,
    }
}

fn parameter_recovery() -> Outcome {
    let opts = unit_options();
    let mut lines = Vec::new();
    let mut pass = true;
    type Check = (&'static str, SyntheticAgent, fn(&ObserverParams) -> bool);
    let checks: [Check; 3] = [
        ("linear", linear_truth(), |p| match p.family {
            FamilyParams::Linear { slope, intercept } => rel(slope, 0.8) <= 0.1 && rel(intercept, 0.2) <= 0.1,
            _ => false,
        }),
        ("static_bayes", static_truth(), |p| match p.family {
            FamilyParams::StaticBayes { prior_mean, prior_weight } => {
                (prior_weight - 0.3).abs() <= 0.05 && rel(prior_mean, 0.5) <= 0.1
            }
            _ => false,
        }),
        ("kalman", kalman_truth(), |p| rel(kalman_ratio(p), 1.0) <= 0.1),
    ];
    for (name, agent, ok) in checks {
        let mut hits = 0;
        let mut worst = String::new();
        for s in 0..SEEDS {
            let r = fit(&agent.variant, &data_from(&agent, s), &opts).unwrap();
            if ok(&r.params) {
                hits += 1;
            } else {
                worst = format!(" (seed {s} missed: {:?})", r.params.named());
            }
        }
        pass &= hits >= 9;
        lines.push(format!("{name} {hits}/{SEEDS}{worst}"));
    }
    outcome(pass, lines.join("; "))
}

fn grid_fits(data: &FitData) -> Vec<FitResult> {
    fit_grid(&enumerate_variants(), data, &unit_options()).into_iter().filter_map(Result::ok).collect()
}

fn factor_discrimination() -> Outcome {
    let p = |agent: &SyntheticAgent, factor: Factor| -> Vec<f64> {
        (0..SEEDS)
            .map(|s| factor_evidence(&grid_fits(&data_from(agent, s)), &FactorQuery::standard(factor)).unwrap().p_true)
            .collect()
    };
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    let kalman = p(&kalman_truth(), Factor::Sequential);
    let stat = p(&static_truth(), Factor::Sequential);
    let weber = p(&weber_truth(), Factor::Weber);
    // Same seed rule as parameter recovery: at least 9 of 10 draws meet each bound.
    let hits = |v: &[f64], ok: fn(f64) -> bool| v.iter().filter(|&&x| ok(x)).count();
    let counts = [hits(&kalman, |x| x > 0.7), hits(&stat, |x| x < 0.6), hits(&weber, |x| x > 0.7)];
    let pass = counts.iter().all(|&c| c as u64 >= SEEDS - 1);
    outcome(
        pass,
        format!(
            "sequential|kalman >0.7 {}/{SEEDS} [{}]; sequential|static <0.6 {}/{SEEDS} [{}]; weber|k=2 >0.7 {}/{SEEDS} [{}]",
            counts[0],
            fmt(&kalman),
            counts[1],
            fmt(&stat),
            counts[2],
            fmt(&weber)
        ),
    )
}

fn fusion_optimality() -> Outcome {
    let n = 10_000;
    let mut rng = seed::rng(3);
    let trials: Vec<FusionTrial> = (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.0..1.0);
            let zt: f64 = StandardNormal.sample(&mut rng);
            let zi: f64 = StandardNormal.sample(&mut rng);
            FusionTrial { text: x + 0.02 * zt, image: x + 0.06 * zi, comb: x, truth: x, mid: 0.5 }
        })
        .collect();
    // RMSE and its Monte Carlo standard error (delta method on the MSE).
    let rmse = |f: &dyn Fn(&FusionTrial) -> f64| {
        let sq: Vec<f64> = trials.iter().map(|t| (f(t) - t.truth).powi(2)).collect();
        let mse = sq.iter().sum::<f64>() / n as f64;
        let var = sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (mse.sqrt(), (var / n as f64).sqrt() / (2.0 * mse.sqrt()))
    };
    let (text, se_t) = rmse(&|t| t.text);
    let (image, se_i) = rmse(&|t| t.image);
    let iv = fuse_bayes_non_oracle(&trials, VarianceCentering::Truth).unwrap();
    let (fused, _) = rmse(&|t| iv.predict(t.text, t.image));
    let oracle = fuse_bayes_oracle(&trials).unwrap();
    let (orc, _) = rmse(&|t| oracle.predict(t.text, t.image));
    let (best, se) = if text <= image { (text, se_t) } else { (image, se_i) };
    let w = inverse_variance_weight(1.0, 3.0).0;
    let exact: Vec<FusionTrial> = (0..400)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            FusionTrial { text: s, image: s * 3f64.sqrt(), comb: 0.0, truth: 0.0, mid: 0.0 }
        })
        .collect();
    let w_emp = fuse_bayes_non_oracle(&exact, VarianceCentering::Truth).unwrap().w_text;
    let pass = fused <= best + 3.0 * se && orc <= fused && (w - 0.75).abs() < 1e-12 && (w_emp - 0.75).abs() < 1e-12;
    outcome(
        pass,
        format!(
            "rmse text {text:.5} image {image:.5} non-oracle {fused:.5} oracle {orc:.5} (bound {:.5}); w_text {w} / {w_emp}",
            best + 3.0 * se
        ),
    )
}

fn metrics_exactness() -> Outcome {
    let mut rng = seed::rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (lo, hi) = (rng.random_range(0.0..10.0), rng.random_range(10.5..30.0));
        let mid = (lo + hi) / 2.0;
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(lo..hi)).collect();
        worst = worst.max((nrmse(&vec![mid; 50], &x, &vec![mid; 50]).unwrap() - 1.0).abs());
    }
    let a0 = accuracy_factor(&[2.0; 4]);
    let (c_hi, c_lo) = (consistency_factor(15.0), consistency_factor(-15.0));
    let f = composite(&[0.3, 0.1, 0.7, 1.1], &[(1.2, 0.9), (0.8, 0.7), (1.0, 1.4)], 7.0);
    let s_err = (f.score - (f.accuracy + f.efficiency + f.consistency) / 3.0).abs();
    let pass = worst <= 1e-12 && a0 == 0.0 && c_hi == 1.0 && c_lo == 0.0 && s_err <= 1e-12;
    outcome(
        pass,
        format!("baseline |nrmse-1| max {worst:e}; A(2)={a0}; C(15)={c_hi}; C(-15)={c_lo}; |S-mean| {s_err:e}"),
    )
}

fn suite_agent(task: TaskKind, rule: WeightRule) -> SyntheticAgent {
    let (lo, hi) = (task.default_range(SessionKind::Short).lo, task.default_range(SessionKind::Long).hi);
    let params = ObserverParams::static_bayes((lo + hi) / 2.0, 0.3, SIGMA * (hi - lo));
    SyntheticAgent::new(ObserverVariant::plain(Family::StaticBayes), params).unwrap().with_rule(&BCS_ABLATIONS, rule)
}

fn suite_manifests(name: &str, rule: WeightRule) -> Vec<ExperimentManifest> {
    let mut out = Vec::new();
    let base = |task: TaskKind, ablation: AblationKind, modalities: Vec<Modality>| ExperimentManifest {
        id: format!("{name}-{}-{}", task.as_str(), ablation.as_str()),
        task,
        sessions: SessionKind::ALL.to_vec(),
        ranges: BTreeMap::new(),
        n_trials: 30,
        ablation: AblationConfig::new(ablation),
        modalities,
        observer: ObserverSpec {
            name: name.into(),
            channel: ChannelSpec::Synthetic { agent: suite_agent(task, rule) },
        },
        seed: 2024,
        render: RenderConfig::default(),
        maze: MazeConfig::default(),
        transcript: (task == TaskKind::TranscriptDuration)
            .then_some(TranscriptSource::Synthetic { utterances: 600, seed: 5 }),
        rate_limit_rps: None,
    };
    for task in TaskKind::MULTIMODAL {
        out.push(base(task, AblationKind::None, Modality::ALL.to_vec()));
        for a in BCS_ABLATIONS {
            let m = if a.is_noise() { Modality::Image } else { Modality::Multimodal };
            out.push(base(task, a, vec![m]));
        }
    }
    out.push(base(TaskKind::TranscriptDuration, AblationKind::None, vec![Modality::Text]));
    out
}

const SUITE: [(&str, WeightRule); 3] = [
    ("consistent", WeightRule::Shift(0.1)),
    ("inverted", WeightRule::Shift(-0.1)),
    ("prior-dominant", WeightRule::Set(0.95)),
];

fn run_suite(ws: &Workspace, exec: Execution) -> ScoreSummary {
    for (name, rule) in SUITE {
        for m in suite_manifests(name, rule) {
            generate(ws, &m, exec).unwrap();
            run(ws, &m.id, &RunOptions::default()).unwrap();
        }
    }
    let cfg = PipelineConfig { exec, ..PipelineConfig::default() };
    analyze(ws, &[], &cfg).unwrap();
    score(ws, &[], &cfg).unwrap()
}

fn bcs_end_to_end(ws: &Workspace) -> Outcome {
    let summary = run_suite(ws, Execution::Parallel);
    let expected = [("consistent", 15.0), ("inverted", -15.0), ("prior-dominant", 0.0)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, want) in expected {
        let m = summary.model(name).unwrap();
        let got = m.bcs_total.map(|i| i.point);
        pass &= got == Some(want);
        let c = m.consistency.map(|i| i.point).unwrap_or(f64::NAN);
        parts.push(format!("{name} BCS {got:?} (C {c})"));
    }
    outcome(pass, parts.join("; "))
}

fn stimulus_fidelity() -> Outcome {
    let cfg = RenderConfig::default();
    let mut rng = seed::rng(6);
    let marker_step = (0.5 / (cfg.ascii_width as f64 - 1.0), 0.5 / (cfg.image_width as f64 - 1.0));
    let long_cols = (cfg.ascii_width - 1) as f64;
    let long_px = (cfg.image_width - 2 * 32) as f64;
    let mut bad = Vec::new();
    for i in 0..1000 {
        let v: f64 = rng.random_range(0.0..=1.0);
        let s = gen_marker(v, &cfg).unwrap();
        let a = decode_marker_ascii(s.ascii.as_ref().unwrap(), cfg.marker_glyph).unwrap();
        let im = decode_marker_image(s.image.as_ref().unwrap(), cfg.marker_color).unwrap();
        if (a - v).abs() > marker_step.0 + 1e-12 || (im - v).abs() > marker_step.1 + 1e-12 {
            bad.push(format!("marker {i}"));
        }
        let r: f64 = rng.random_range(0.05..=1.0);
        let s = gen_line_ratio(r, &cfg, &mut rng).unwrap();
        let a = decode_line_ratio_ascii(s.ascii.as_ref().unwrap()).unwrap();
        let im = decode_line_ratio_image(s.image.as_ref().unwrap(), cfg.line_color).unwrap();
        if (a - r).abs() > 0.5 / long_cols + 1e-12 || (im - r).abs() > 0.5 / long_px + 1e-12 {
            bad.push(format!("line {i}"));
        }
    }
    let maze_cfg = MazeConfig::default();
    for i in 0..1000u64 {
        let target: f64 = rng.random_range(3.0..22.0);
        let s = gen_maze(target, &maze_cfg, &cfg, seed::derive(8, i)).unwrap();
        let path = s.maze_path.as_ref().unwrap();
        let distinct: HashSet<_> = path.iter().collect();
        let connected = path.windows(2).all(|w| (w[0].0 - w[1].0).abs() + (w[0].1 - w[1].1).abs() == 1);
        if distinct.len() != path.len() || !connected || s.true_value != path_distance(path) {
            bad.push(format!("maze {i}"));
        }
    }
    // Kolmogorov-Smirnov against the uniform law on each session range.
    let crit = 1.628 / (1000f64).sqrt();
    let mut worst_ks: f64 = 0.0;
    for task in [TaskKind::MarkerLocation, TaskKind::MazeDistance, TaskKind::TranscriptDuration] {
        for kind in SessionKind::ALL {
            let r = task.default_range(kind);
            let mut v = sample_session_values(&r, 1000, seed::label(task.as_str()) ^ kind as u64).unwrap();
            v.sort_by(f64::total_cmp);
            let d = v
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let f = (x - r.lo) / r.width();
                    (f - i as f64 / 1000.0).abs().max(((i + 1) as f64 / 1000.0 - f).abs())
                })
                .fold(0.0, f64::max);
            worst_ks = worst_ks.max(d);
        }
    }
    let pass = bad.is_empty() && worst_ks < crit;
    outcome(
        pass,
        format!(
            "{} decode/maze failures {:?}; max KS D {worst_ks:.4} (critical {crit:.4})",
            bad.len(),
            bad.iter().take(5).collect::<Vec<_>>()
        ),
    )
}

fn determinism(first: &Workspace) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let second = Workspace::new(dir.path());
    run_suite(&second, Execution::Sequential);
    let a = std::fs::read(first.scores_dir().join("scorecard.csv")).unwrap();
    let b = std::fs::read(second.scores_dir().join("scorecard.csv")).unwrap();
    let report_same = std::fs::read(first.scores_dir().join("report.md")).unwrap()
        == std::fs::read(second.scores_dir().join("report.md")).unwrap();
    outcome(
        a == b && report_same,
        format!("scorecard {} bytes, identical: {}; report identical: {report_same}", a.len(), a == b),
    )
}

fn bootstrap_reproducible() -> Outcome {
    // Per-session mean response error of a noisy observer, three sessions.
    let agent = static_truth();
    let sessions: Vec<Vec<f64>> = SessionKind::ALL
        .iter()
        .map(|&k| {
            let xs = sample_session_values(&TaskKind::MarkerLocation.default_range(k), 30, k as u64).unwrap();
            let ys = simulate(&agent, &xs, 1 + k as u64).unwrap();
            xs.iter().zip(&ys).map(|(x, y)| y - x).collect()
        })
        .collect();
    let stat = |d: &[Vec<usize>]| {
        let v: Vec<f64> = d[0].iter().flat_map(|&s| sessions[s].iter().copied()).collect();
        Some(v.iter().sum::<f64>() / v.len() as f64)
    };
    let a = bootstrap(&[3], 30, 17, Execution::Parallel, stat).unwrap();
    let b = bootstrap(&[3], 30, 17, Execution::Sequential, stat).unwrap();
    let c = bootstrap(&[3], 30, 17, Execution::Parallel, |_| Some(0.25)).unwrap();
    let pass = a == b && a.rounds == 30 && a.lo <= a.point && a.point <= a.hi && c.lo == c.hi && c.lo == 0.25;
    outcome(pass, format!("interval [{:.5}, {:.5}] twice; constant statistic width {}", a.lo, a.hi, c.hi - c.lo))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        let dt = t0.elapsed();
        let in_time = limit.is_none_or(|l| dt <= l);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map(|l| format!(", limit {}s", l.as_secs())).unwrap_or_default();
        println!(
            "criterion {n} {}: {name}: {} [{:.1}s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            dt.as_secs_f64()
        );
    };
    report(1, "parameter recovery", Some(Duration::from_secs(120)), &mut parameter_recovery);
    report(2, "factor discrimination", Some(Duration::from_secs(300)), &mut factor_discrimination);
    report(3, "fusion optimality", None, &mut fusion_optimality);
    report(4, "metrics exactness", None, &mut metrics_exactness);
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path());
    report(5, "consistency score end to end", Some(Duration::from_secs(600)), &mut || bcs_end_to_end(&ws));
    report(6, "stimulus fidelity", None, &mut stimulus_fidelity);
    report(7, "determinism", None, &mut || determinism(&ws));
    report(8, "bootstrap", None, &mut bootstrap_reproducible);
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
