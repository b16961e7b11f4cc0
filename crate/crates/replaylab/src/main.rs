use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use replaylab::checks;
use replaylab::config::{parse_list, pick, ConfigFile};
use replaylab::core::rnn::Activation;
use replaylab::pipeline::{self, ReplayOptions, ReplaySource, TrainOptions};
use replaylab::tasks::TaskName;
use replaylab::{Error, Result};

#[derive(Parser)]
#[command(name = "replaylab", version, about = "Train path-integrating RNNs and study their quiescent replay")]
struct Cli {
    /// Config file with `[section]` headers and `key = value` lines. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true, env = "REPLAYLAB_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write awake trajectories for a task.
    Generate(GenerateArgs),
    /// Train a network and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Run a replay sweep over (b_a, lambda_v).
    Replay(ReplayArgs),
    /// Compute metric tables and figures for a replay sweep.
    Report(ReportArgs),
    /// Run the fast oracle and property checks.
    Verify,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    task: Option<String>,
    /// Paths per direction for mazes, paths in total otherwise.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Multiplier on the full epoch counts.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    sigma_r: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Train without the leak term (kappa fixed at 0).
    #[arg(long)]
    no_leak: bool,
    /// Final mask period of the curriculum.
    #[arg(long)]
    mask_k: Option<usize>,
    /// relu, leaky_relu[:slope], tanh or linear.
    #[arg(long)]
    activation: Option<String>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Checkpoint to replay from. Defaults to `<out>/model.ckpt`.
    #[arg(long, conflicts_with = "analytic_ou")]
    ckpt: Option<PathBuf>,
    /// Use the exact score of the 1D OU task instead of a trained network.
    #[arg(long)]
    analytic_ou: bool,
    /// Comma-separated adaptation strengths.
    #[arg(long)]
    ba: Option<String>,
    /// Comma-separated friction values.
    #[arg(long)]
    lv: Option<String>,
    /// Replay length in steps.
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// Replays per cell and seed.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated replay seeds. Defaults to the global seed.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    tau_a: Option<f64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Replay directory. Defaults to `<out>/replay`.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Awake trajectory directory. Defaults to `<out>/awake`.
    #[arg(long)]
    awake: Option<PathBuf>,
}

fn list_flag<T: std::str::FromStr>(flag: &Option<String>, name: &str) -> Result<Option<Vec<T>>> {
    flag.as_deref().map(|s| parse_list(s).map_err(|e| Error::Config(format!("--{name}: {e}")))).transpose()
}

fn task(flag: &Option<String>, cfg: &ConfigFile) -> Result<TaskName> {
    flag.as_deref()
        .or(cfg.raw("", "task"))
        .ok_or_else(|| Error::Config("no task given (use --task or `task = ...`)".into()))?
        .parse()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let out = cli.out.clone().or_else(|| cfg.raw("", "out").map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let seed = pick(cli.seed, cfg.get("", "seed")?, 0);
    match cli.cmd {
        Command::Generate(a) => {
            let task = task(&a.task, &cfg)?;
            let n = pick(a.n, cfg.get("generate", "n")?, 100);
            let written = pipeline::generate(task, n, seed, &out)?;
            println!("wrote {written} trajectories to {}", out.join("awake").display());
        }
        Command::Train(a) => {
            let task = task(&a.task, &cfg)?;
            let mut o = TrainOptions::new(task, seed);
            o.hidden = pick(a.hidden, cfg.get("train", "hidden")?, o.hidden);
            o.scale = pick(a.scale, cfg.get("train", "scale")?, o.scale);
            o.learning_rate = pick(a.learning_rate, cfg.get("train", "learning_rate")?, o.learning_rate);
            o.batch_size = pick(a.batch_size, cfg.get("train", "batch_size")?, o.batch_size);
            o.sigma_r = pick(a.sigma_r, cfg.get("train", "sigma_r")?, o.sigma_r);
            o.grad_clip = pick(a.grad_clip, cfg.get("train", "grad_clip")?, o.grad_clip);
            o.leak = if a.no_leak { false } else { cfg.get("train", "leak")?.unwrap_or(true) };
            o.mask_k = a.mask_k.or(cfg.get("train", "mask_k")?);
            if let Some(s) = a.activation.as_deref().or(cfg.raw("train", "activation")) {
                o.activation = Activation::parse(s)?;
            }
            let (_, log) = pipeline::train_to_dir(&o, &out)?;
            let last = log.entries.last().map(|e| e.loss).unwrap_or(f64::NAN);
            println!("trained {} epochs, final loss {last:.6e}, checkpoint {}", log.entries.len(), out.join("model.ckpt").display());
        }
        Command::Replay(a) => {
            let seeds = match list_flag(&a.seeds, "seeds")? {
                Some(s) => s,
                None => cfg.list("replay", "seeds")?.or(cfg.list("", "seeds")?).unwrap_or_else(|| vec![seed]),
            };
            let mut o = ReplayOptions::maze_defaults(seeds);
            o.b_a = pick(list_flag(&a.ba, "ba")?, cfg.list("replay", "b_a")?, o.b_a);
            o.lambda_v = pick(list_flag(&a.lv, "lv")?, cfg.list("replay", "lambda_v")?, o.lambda_v);
            o.horizon = pick(a.horizon, cfg.get("replay", "horizon")?, o.horizon);
            o.n = pick(a.n, cfg.get("replay", "n")?, o.n);
            o.tau_a = pick(a.tau_a, cfg.get("replay", "tau_a")?, o.tau_a);
            o.jobs = pick(a.jobs, cfg.get("replay", "jobs")?, o.jobs);
            let (source, id) = if a.analytic_ou {
                if a.ba.is_none() && cfg.raw("replay", "b_a").is_none() {
                    o.b_a = vec![0.0];
                }
                if a.n.is_none() && cfg.raw("replay", "n").is_none() {
                    o.n = 1000;
                }
                (ReplaySource::AnalyticOu, "analytic-ou".to_string())
            } else {
                let ckpt = a.ckpt.clone().unwrap_or_else(|| out.join("model.ckpt"));
                (ReplaySource::Model(pipeline::load_model(&ckpt)?), replaylab::checkpoint::checkpoint_id(&ckpt)?)
            };
            let dir = out.join("replay");
            let (cells, failed) = pipeline::replay_to_dir(&source, &id, &o, &dir)?;
            println!("wrote {cells} cells ({failed} failed) to {}", dir.display());
        }
        Command::Report(a) => {
            let replay = a.replay.unwrap_or_else(|| out.join("replay"));
            let awake = a.awake.unwrap_or_else(|| out.join("awake"));
            let dir = out.join("report");
            let files = pipeline::report_to_dir(&replay, &awake, &dir)?;
            println!("wrote {} files to {}", files.len(), dir.display());
        }
        Command::Verify => {
            let results = checks::run_fast();
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(Error::Failed(format!("{failed} check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
