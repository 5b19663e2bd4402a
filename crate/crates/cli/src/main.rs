use anyhow::{bail, Context, Result};
use bayesbench::fusion::VarianceCentering;
use bayesbench::harness::{
    analyze, generate, run, score, ChannelSpec, ExperimentManifest, HarnessError, HumanRegistry, PipelineConfig,
    RunOptions, Workspace,
};
use bayesbench::par::Execution;
use bayesbench_cli::server::router;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "bayesbench", version, about = "Magnitude-estimation psychophysics harness")]
struct Cli {
    /// Workspace directory holding experiments, analysis and scores.
    #[arg(long, short = 'w', global = true, default_value = ".")]
    workspace: PathBuf,
    /// Run every loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan and render the stimuli of one or more manifests.
    Generate {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
    /// Collect responses; resumes interrupted experiments.
    Run {
        /// Experiment ids (default: every non-human experiment).
        ids: Vec<String>,
        /// Keep raw request/response pairs next to the records.
        #[arg(long)]
        log_exchanges: bool,
    },
    /// Fit observer models and combiners to the collected records.
    Analyze {
        ids: Vec<String>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Bootstrap the scorecard from the analysis.
    Score {
        ids: Vec<String>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Serve human-channel experiments over HTTP.
    Serve {
        ids: Vec<String>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Centering {
    Truth,
    StreamMean,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 30)]
    rounds: usize,
    #[arg(long, default_value_t = 0)]
    bootstrap_seed: u64,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    fit_seed: u64,
    /// Noise estimate used by the non-oracle combiner.
    #[arg(long, value_enum, default_value_t = Centering::Truth)]
    centering: Centering,
}

impl PipelineArgs {
    fn config(&self, exec: Execution) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            exec,
            bootstrap_rounds: self.rounds,
            bootstrap_seed: self.bootstrap_seed,
            fit_restarts: self.restarts,
            fit_seed: self.fit_seed,
            centering: match self.centering {
                Centering::Truth => VarianceCentering::Truth,
                Centering::StreamMean => VarianceCentering::StreamMean,
            },
            ..PipelineConfig::default()
        };
        cfg.forest.exec = exec;
        cfg
    }
}

fn run_targets(ws: &Workspace, ids: Vec<String>) -> Result<Vec<String>> {
    if !ids.is_empty() {
        return Ok(ids);
    }
    let mut out = Vec::new();
    for id in ws.experiment_ids()? {
        if !matches!(ws.load_manifest(&id)?.observer.channel, ChannelSpec::Human) {
            out.push(id);
        }
    }
    Ok(out)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let ws = Workspace::new(&cli.workspace);
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Generate { manifests } => {
            for path in manifests {
                let m = ExperimentManifest::load(&path).with_context(|| format!("loading {}", path.display()))?;
                let s = generate(&ws, &m, exec)?;
                println!("{}: {} sessions, {} stimuli, {} images", s.id, s.sessions, s.stimuli, s.images);
            }
        }
        Command::Run { ids, log_exchanges } => {
            let opts = RunOptions { channel: None, log_exchanges };
            let mut incomplete = false;
            for id in run_targets(&ws, ids)? {
                let s = match run(&ws, &id, &opts) {
                    Err(HarnessError::HumanChannel(id)) => {
                        eprintln!("{id}: human channel, use `serve`");
                        continue;
                    }
                    r => r?,
                };
                for r in &s.sessions {
                    let state = if r.aborted { " (aborted)" } else { "" };
                    println!("{id} {} {}: {} done, {} requests{state}", r.session, r.modality, r.completed, r.issued);
                    incomplete |= r.aborted;
                }
            }
            if incomplete {
                bail!("some sessions stopped after repeated failures; rerun to resume");
            }
        }
        Command::Analyze { ids, pipeline } => {
            let s = analyze(&ws, &ids, &pipeline.config(exec))?;
            println!("{} cells, {} fits, {} failures", s.cells, s.fits, s.failures.len());
            for f in &s.failures {
                eprintln!("{} {} {} {} {}: {}", f.model, f.task, f.modality, f.ablation, f.stage, f.message);
            }
        }
        Command::Score { ids, pipeline } => {
            let s = score(&ws, &ids, &pipeline.config(exec))?;
            for m in &s.models {
                let fmt = |i: &Option<bayesbench::metrics::Interval>| {
                    i.map_or("n/a".to_string(), |i| format!("{:.3} [{:.3}, {:.3}]", i.point, i.lo, i.hi))
                };
                println!(
                    "{}: A {} E {} C {} S {}",
                    m.model,
                    fmt(&m.accuracy),
                    fmt(&m.efficiency),
                    fmt(&m.consistency),
                    fmt(&m.score)
                );
            }
            println!("wrote {}", ws.scores_dir().display());
        }
        Command::Serve { ids, addr } => {
            let registry = Arc::new(HumanRegistry::open(&ws, &ids)?);
            if registry.experiment_ids().is_empty() {
                bail!("no human-channel experiments in {}", cli.workspace.display());
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("serving {} on http://{addr}", registry.experiment_ids().join(", "));
                axum::serve(listener, router(registry)).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}
