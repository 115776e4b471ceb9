use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use genqa::assemble::RebalancePlan;
use genqa::diversity::Side;
use genqa::pipeline::{
    cmd_analyze, cmd_dedup, cmd_generate, cmd_parse, cmd_rebalance, cmd_run, cmd_stats, AnalyzeOptions,
    GenerateOptions, Pipeline, PipelineError, RunOptions,
};

#[derive(Parser)]
#[command(name = "genqa", version, about = "Generator-prompt dataset pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed for every random choice in the job.
    #[arg(long)]
    seed: u64,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Issue prompts and persist raw completions, resuming where a previous run stopped.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Only this split; all configured splits otherwise.
        #[arg(long)]
        split: Option<String>,
        /// Override the configured item count.
        #[arg(long)]
        count: Option<u64>,
        /// Stop after persisting this many records.
        #[arg(long, hide = true)]
        stop_after: Option<u64>,
    },
    /// Parse raw completions into conversations.
    Parse {
        #[command(flatten)]
        common: Common,
    },
    /// Drop repeated questions within each split.
    Dedup {
        #[command(flatten)]
        common: Common,
    },
    /// Nearest-neighbour similarity reports and their comparison.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Conversation files to compare instead of the job's splits.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        side: Option<Side>,
        /// Items sampled per dataset.
        #[arg(long)]
        sample: Option<usize>,
        /// Contrast booster and no-booster items within each dataset.
        #[arg(long)]
        booster_contrast: bool,
    },
    /// Sample the splits to the plan's proportions.
    Rebalance {
        #[command(flatten)]
        common: Common,
        /// Plan file overriding the configured one.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Target dataset size.
        #[arg(long)]
        total: Option<u64>,
    },
    /// Whitespace-token statistics.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Conversation file; the job's dataset otherwise.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Every stage in order, then a summary.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        stop_after: Option<u64>,
    },
}

fn print<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn open(common: &Common) -> Result<(Pipeline, PathBuf), PipelineError> {
    let p = Pipeline::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| p.default_out());
    Ok((p, out))
}

fn execute(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Generate {
            common,
            split,
            count,
            stop_after,
        } => {
            let (p, out) = open(&common)?;
            let splits: Vec<String> = match split {
                Some(s) => vec![s],
                None => p.config.splits.keys().cloned().collect(),
            };
            let mut budget = stop_after;
            let mut outcomes = Vec::new();
            for s in splits {
                let n = count.or(p.config.splits.get(&s).map(|c| c.count)).unwrap_or(0);
                let opts = GenerateOptions {
                    stop_after: budget,
                    clock: None,
                };
                let o = cmd_generate(&p, &out, &s, n, common.seed, &opts)?;
                budget = budget.map(|b| b - o.written);
                let stopped = !o.complete;
                outcomes.push(o);
                if stopped {
                    print(&outcomes);
                    let last = outcomes.last().expect("just pushed");
                    return Err(PipelineError::Interrupted {
                        split: last.split.clone(),
                        count: last.count,
                        remaining: last.count - last.resumed - last.written,
                    });
                }
            }
            print(&outcomes);
        }
        Command::Parse { common } => {
            let (p, out) = open(&common)?;
            print(&cmd_parse(&p, &out, common.seed)?);
        }
        Command::Dedup { common } => {
            let (p, out) = open(&common)?;
            print(&cmd_dedup(&p, &out, common.seed)?);
        }
        Command::Analyze {
            common,
            inputs,
            side,
            sample,
            booster_contrast,
        } => {
            let (p, out) = open(&common)?;
            let opts = AnalyzeOptions {
                inputs,
                side,
                sample,
                booster_contrast: booster_contrast.then_some(true),
            };
            let a = cmd_analyze(&p, &out, common.seed, &opts)?;
            print(&serde_json::json!({
                "comparison": a.comparison,
                "booster": a.booster,
            }));
        }
        Command::Rebalance { common, plan, total } => {
            let (p, out) = open(&common)?;
            let mut plan = match plan {
                Some(path) => Some(RebalancePlan::load(&path)?),
                None => p.plan.clone(),
            };
            if let (Some(pl), Some(t)) = (plan.as_mut(), total) {
                pl.total_target = Some(t);
            }
            print(&cmd_rebalance(&p, &out, common.seed, plan.as_ref())?);
        }
        Command::Stats { common, input } => {
            let (p, out) = open(&common)?;
            let s = cmd_stats(&p, &out, common.seed, input.as_deref())?;
            print(&serde_json::json!({
                "conversations": s.conversations,
                "turns": s.turns,
                "words": s.words,
                "question_mean_tokens": s.questions.mean(),
                "answer_mean_tokens": s.answers.mean(),
                "answers_over_6000_tokens": s.answers.overflow,
            }));
        }
        Command::Run { common, stop_after } => {
            let (p, out) = open(&common)?;
            let opts = RunOptions {
                generate: GenerateOptions {
                    stop_after,
                    clock: None,
                },
            };
            print(&cmd_run(&p, &out, common.seed, &opts)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
