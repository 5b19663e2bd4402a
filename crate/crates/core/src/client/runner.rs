use super::{parse_numeric, ObserverChannel};
use crate::session::{assemble_prompt, Modality, SessionPlan, TrialRecord};
use std::io;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// A session stops after this many failed trials in a row.
pub const MAX_CONSECUTIVE_FAILURES: usize = 5;

/// Global request spacing shared by every session using it.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_second(rps: f64) -> Self {
        RateLimiter { interval: Duration::from_secs_f64(1.0 / rps.max(1e-9)), next: Mutex::new(None) }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks until this caller's slot.
    pub fn acquire(&self) {
        let slot = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionContext {
    pub experiment_id: String,
    pub manifest_hash: String,
    pub observer: String,
    pub modality: Modality,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    /// Every record of the session, earlier runs included.
    pub records: Vec<TrialRecord>,
    pub aborted: bool,
    /// Requests issued during this call.
    pub issued: usize,
}

fn trailing_failures(records: &[TrialRecord]) -> usize {
    records.iter().rev().take_while(|r| r.parsed_value.is_none()).count()
}

/// Runs the remaining trials of a session in order, handing each record to
/// `sink` before the next request is issued. `existing` holds records from an
/// interrupted run; those trials are not asked again.
pub fn run_session(
    plan: &SessionPlan,
    channel: &dyn ObserverChannel,
    ctx: &SessionContext,
    existing: &[TrialRecord],
    sink: &mut dyn FnMut(&TrialRecord) -> io::Result<()>,
) -> io::Result<SessionOutcome> {
    let mut records: Vec<TrialRecord> = existing.to_vec();
    records.sort_by_key(|r| r.trial_index);
    for (i, r) in records.iter().enumerate() {
        if r.trial_index != i {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("record log has a gap before trial {}", r.trial_index),
            ));
        }
    }
    let range = (plan.range.lo, plan.range.hi);
    let mut issued = 0;
    let mut aborted = trailing_failures(&records) >= MAX_CONSECUTIVE_FAILURES;
    let mut t = records.len();
    while !aborted && t < plan.trials.len() {
        let bundle = assemble_prompt(plan, t, ctx.window, ctx.modality, &records);
        let started = Instant::now();
        let outcome = channel.ask(&bundle);
        issued += 1;
        let latency_ms = started.elapsed().as_millis() as u64;
        let trial = &plan.trials[t];
        let (raw_response, parsed_value, attempt_count, error) = match outcome {
            Ok(reply) => {
                let parsed = parse_numeric(&reply.text, range);
                let err = parsed.is_none().then(|| "unparseable response".to_string());
                (Some(reply.text), parsed, reply.attempts, err)
            }
            Err(f) => (None, None, f.attempts, Some(f.error.to_string())),
        };
        let rec = TrialRecord {
            experiment_id: ctx.experiment_id.clone(),
            manifest_hash: ctx.manifest_hash.clone(),
            observer: ctx.observer.clone(),
            channel: channel.kind().to_string(),
            task: plan.task,
            session: plan.range.kind,
            modality: ctx.modality,
            ablation: plan.ablation.kind,
            trial_index: t,
            stimulus_id: trial.stimulus_id(),
            true_value: trial.stimulus.true_value,
            blur_sigma: trial.blur_sigma,
            raw_response,
            parsed_value,
            latency_ms,
            attempt_count,
            error,
        };
        sink(&rec)?;
        records.push(rec);
        aborted = trailing_failures(&records) >= MAX_CONSECUTIVE_FAILURES;
        t += 1;
    }
    Ok(SessionOutcome { records, aborted, issued })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{ChannelFailure, Reply, SyntheticChannel};
    use crate::session::{build_session_plan, AblationConfig, AblationKind, PromptBundle, StimulusFactory};
    use crate::stimulus::{MazeConfig, RenderConfig, SessionKind, TaskKind};
    use crate::synthetic::SyntheticAgent;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn plan(n: usize) -> SessionPlan {
        let f = StimulusFactory::new(RenderConfig::default(), MazeConfig::default());
        let r = TaskKind::MarkerLocation.default_range(SessionKind::Medium);
        build_session_plan(&f, TaskKind::MarkerLocation, &r, n, &AblationConfig::new(AblationKind::None), 3).unwrap()
    }

    fn ctx() -> SessionContext {
        SessionContext {
            experiment_id: "e".into(),
            manifest_hash: "h".into(),
            observer: "identity".into(),
            modality: Modality::Text,
            window: 10,
        }
    }

    struct Fixed(&'static str, AtomicUsize);

    impl ObserverChannel for Fixed {
        fn kind(&self) -> &'static str {
            "test"
        }
        fn ask(&self, _: &PromptBundle) -> Result<Reply, ChannelFailure> {
            self.1.fetch_add(1, Ordering::SeqCst);
            Ok(Reply { text: self.0.into(), attempts: 1 })
        }
    }

    #[test]
    fn identity_loopback() {
        let p = plan(30);
        let ch = SyntheticChannel::for_plan(&SyntheticAgent::identity(), &p, Modality::Text, 1).unwrap();
        let mut sunk = 0;
        let out = run_session(&p, &ch, &ctx(), &[], &mut |_| {
            sunk += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(out.records.len(), 30);
        assert_eq!(sunk, 30);
        for r in &out.records {
            assert_eq!(r.parsed_value, Some(r.true_value));
        }
    }

    #[test]
    fn aborts_after_five_failures() {
        let p = plan(30);
        let ch = Fixed("n/a", AtomicUsize::new(0));
        let out = run_session(&p, &ch, &ctx(), &[], &mut |_| Ok(())).unwrap();
        assert!(out.aborted);
        assert_eq!(out.records.len(), 5);
        // Resuming an aborted session issues nothing.
        let again = run_session(&p, &ch, &ctx(), &out.records, &mut |_| Ok(())).unwrap();
        assert_eq!(again.issued, 0);
        assert_eq!(ch.1.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn resume_skips_completed_trials() {
        let p = plan(30);
        let ch = SyntheticChannel::for_plan(&SyntheticAgent::identity(), &p, Modality::Text, 1).unwrap();
        let full = run_session(&p, &ch, &ctx(), &[], &mut |_| Ok(())).unwrap();
        let resumed = run_session(&p, &ch, &ctx(), &full.records[..12], &mut |_| Ok(())).unwrap();
        assert_eq!(resumed.issued, 18);
        let strip = |rs: &[TrialRecord]| rs.iter().map(|r| (r.trial_index, r.parsed_value)).collect::<Vec<_>>();
        assert_eq!(strip(&resumed.records), strip(&full.records));
    }

    #[test]
    fn limiter_spacing() {
        let l = RateLimiter::per_second(50.0);
        let t0 = Instant::now();
        for _ in 0..6 {
            l.acquire();
        }
        assert!(t0.elapsed() >= Duration::from_millis(100));
    }
}
