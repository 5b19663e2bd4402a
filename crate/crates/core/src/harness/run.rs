use super::manifest::{ChannelSpec, ExperimentManifest};
use super::store::{image_rel_path, PlanFile, PlanSession, PlanTrial, RecordLog, Workspace};
use super::HarnessError;
use crate::client::{run_session, HttpChannel, ObserverChannel, RateLimiter, SessionContext, SyntheticChannel};
use crate::par::{self, Execution};
use crate::seed;
use crate::session::{build_session_plan, Modality, SessionPlan, TrialRecord};
use crate::stimulus::SessionKind;
use std::collections::BTreeMap;
use std::fs;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub id: String,
    pub manifest_hash: String,
    pub sessions: usize,
    pub stimuli: usize,
    pub images: usize,
}

/// Renders every session's stimuli and persists manifest, plan and PNGs
/// under `experiments/<id>`. Refuses an id that already exists.
pub fn generate(
    ws: &Workspace,
    manifest: &ExperimentManifest,
    exec: Execution,
) -> Result<GenerateSummary, HarnessError> {
    manifest.validate()?;
    let final_dir = ws.experiment_dir(&manifest.id);
    if final_dir.exists() {
        return Err(HarnessError::Duplicate(manifest.id.clone()));
    }
    let factory = manifest.factory()?;
    let plans = par::map(exec, &manifest.sessions, |&kind| {
        build_session_plan(
            &factory,
            manifest.task,
            &manifest.range(kind),
            manifest.n_trials,
            &manifest.ablation,
            manifest.session_seed(kind),
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    // Written aside and renamed so a failed generate leaves no experiment.
    let tmp = ws.experiments_dir().join(format!(".{}.partial", manifest.id));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    }
    let hash = manifest.hash();
    let mut sessions = Vec::new();
    let mut images = 0;
    for plan in &plans {
        let kind = plan.range.kind;
        let mut trials = Vec::with_capacity(plan.trials.len());
        for t in &plan.trials {
            let image = match &t.image_png {
                Some(png) => {
                    let rel = image_rel_path(kind, &t.stimulus_id());
                    let p = tmp.join(&rel);
                    if let Some(parent) = p.parent() {
                        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
                    }
                    fs::write(&p, png.as_slice()).map_err(|e| HarnessError::io(&p, e))?;
                    images += 1;
                    Some(rel)
                }
                None => None,
            };
            trials.push(PlanTrial {
                index: t.index,
                source_index: t.source_index,
                stimulus_id: t.stimulus_id(),
                true_value: t.stimulus.true_value,
                blur_sigma: t.blur_sigma,
                text: t.stimulus.text_payload(),
                image,
            });
        }
        sessions.push(PlanSession { kind, lo: plan.range.lo, hi: plan.range.hi, seed: plan.seed, trials });
    }
    fs::create_dir_all(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    let plan_file = PlanFile { manifest_hash: hash.clone(), sessions };
    let plan_json = serde_json::to_string_pretty(&plan_file).expect("plan serializes");
    let write = |name: &str, body: &str| {
        let p = tmp.join(name);
        fs::write(&p, body).map_err(|e| HarnessError::io(&p, e))
    };
    write("manifest.toml", &manifest.to_toml()?)?;
    write("plan.json", &plan_json)?;
    fs::rename(&tmp, &final_dir).map_err(|e| HarnessError::io(&final_dir, e))?;
    Ok(GenerateSummary {
        id: manifest.id.clone(),
        manifest_hash: hash,
        sessions: plans.len(),
        stimuli: plans.iter().map(|p| p.trials.len()).sum(),
        images,
    })
}

#[derive(Default)]
pub struct RunOptions {
    /// Replaces the manifest's channel for every session.
    pub channel: Option<Arc<dyn ObserverChannel>>,
    /// Log raw HTTP exchanges next to the records.
    pub log_exchanges: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRun {
    pub session: SessionKind,
    pub modality: Modality,
    pub completed: usize,
    pub issued: usize,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub id: String,
    pub sessions: Vec<SessionRun>,
}

/// Seed of a synthetic observer's responses in one session and modality.
pub(crate) fn response_seed(plan: &SessionPlan, modality: Modality) -> u64 {
    seed::derive2(plan.seed, seed::label(plan.ablation.kind.as_str()), seed::label(modality.as_str()))
}

/// Runs every (session, modality) pair of an experiment, concurrently across
/// pairs. Trials already in the record log are skipped, so an interrupted
/// run resumes where it stopped.
pub fn run(ws: &Workspace, id: &str, opts: &RunOptions) -> Result<RunSummary, HarnessError> {
    let manifest = ws.load_manifest(id)?;
    if matches!(manifest.observer.channel, ChannelSpec::Human) && opts.channel.is_none() {
        return Err(HarnessError::HumanChannel(id.to_string()));
    }
    let plans = ws.load_plans(&manifest)?;
    let hash = manifest.hash();
    let log = RecordLog::open(&ws.records_path(id))?;
    let existing = log.read_all()?;
    if existing.iter().any(|r| r.manifest_hash != hash) {
        return Err(HarnessError::ManifestChanged(id.to_string()));
    }
    let mut by_unit: BTreeMap<(SessionKind, Modality), Vec<TrialRecord>> = BTreeMap::new();
    for r in existing {
        by_unit.entry((r.session, r.modality)).or_default().push(r);
    }

    let http: Option<Arc<dyn ObserverChannel>> = match (&opts.channel, &manifest.observer.channel) {
        (Some(c), _) => Some(c.clone()),
        (None, ChannelSpec::Http { endpoint }) => {
            let mut ch = HttpChannel::new(endpoint.clone())?;
            if let Some(rps) = manifest.rate_limit_rps {
                ch = ch.with_limiter(Arc::new(RateLimiter::per_second(rps)));
            }
            if opts.log_exchanges {
                let p = ws.experiment_dir(id).join("exchanges.jsonl");
                ch = ch.with_exchange_log(&p).map_err(|e| HarnessError::io(&p, e))?;
            }
            Some(Arc::new(ch))
        }
        _ => None,
    };

    let units: Vec<(&SessionPlan, Modality)> =
        plans.iter().flat_map(|p| manifest.modalities.iter().map(move |&m| (p, m))).collect();
    let window = manifest.ablation.context_window();
    let results: Vec<Result<SessionRun, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = units
            .iter()
            .map(|&(plan, modality)| {
                let (manifest, hash, log, http, by_unit) = (&manifest, &hash, &log, &http, &by_unit);
                scope.spawn(move || -> Result<SessionRun, HarnessError> {
                    let channel: Arc<dyn ObserverChannel> = match (http, &manifest.observer.channel) {
                        (Some(c), _) => c.clone(),
                        (None, ChannelSpec::Synthetic { agent }) => {
                            Arc::new(SyntheticChannel::for_plan(agent, plan, modality, response_seed(plan, modality))?)
                        }
                        _ => unreachable!("http and human channels are resolved above"),
                    };
                    let ctx = SessionContext {
                        experiment_id: manifest.id.clone(),
                        manifest_hash: hash.clone(),
                        observer: manifest.observer.name.clone(),
                        modality,
                        window,
                    };
                    let prior = by_unit.get(&(plan.range.kind, modality)).map_or(&[][..], |v| v.as_slice());
                    let out = run_session(plan, channel.as_ref(), &ctx, prior, &mut |r| log.append(r))
                        .map_err(|e| HarnessError::io(log.path(), e))?;
                    Ok(SessionRun {
                        session: plan.range.kind,
                        modality,
                        completed: out.records.len(),
                        issued: out.issued,
                        aborted: out.aborted,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("session thread panicked")).collect()
    });
    Ok(RunSummary { id: id.to_string(), sessions: results.into_iter().collect::<Result<_, _>>()? })
}
