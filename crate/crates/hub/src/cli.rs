use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use graphmimic::demos::{self, blockworld_corpus, record};
use graphmimic::explain::{explain_state, feature_profile, ExplainConfig, ExplainTarget};
use graphmimic::learn::{
    episode_seed, evaluate, read_metrics, summarize, train_il_logged, train_ppo_logged, EvalReport, IlConfig, MetricsLog,
    RlConfig, RlVariant,
};
use graphmimic::persist::{load_weights, save_weights};
use graphmimic::policy::{policy_forward, select_action, Architecture, PolicyParams, SelectMode};
use graphmimic::scenegraph::encode_scene;
use graphmimic::worlds::{reset, step};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{resolve, Settings};
use crate::error::{HubError, HubResult};
use crate::service;
use crate::world::WorldArgs;

#[derive(Parser, Debug)]
#[command(name = "graphmimic", version, about = "Graph-network manipulation policies from a few demonstrations")]
pub struct Cli {
    /// Flat key = value defaults; flags override them.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Record scripted expert demonstrations to a JSONL demo file.
    CollectDemos(CollectArgs),
    /// Train a policy by imitation on a demo file.
    TrainIl(TrainIlArgs),
    /// Train a policy with PPO over a K-block curriculum.
    TrainRl(TrainRlArgs),
    /// Evaluate weights on a world and print mean ± std goals fraction.
    Eval(EvalArgs),
    /// Explain the greedy decisions of a policy along one episode.
    Explain(ExplainArgs),
    /// Histogram of the most important feature over many decisions.
    ProfileFeatures(ProfileArgs),
    /// Serve the demonstration-collection API.
    Serve(ServeArgs),
    /// Replay a demo file and check every stored snapshot.
    Replay(ReplayArgs),
    /// Summarize a training metrics log.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct CollectArgs {
    /// Without a world, the 20-trajectory pack/unpack blockworld corpus is recorded.
    #[command(flatten)]
    pub world: WorldArgs,
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// World seed of the first trajectory; later ones count up.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainIlArgs {
    #[arg(long)]
    pub demos: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<Architecture>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub augmentation: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Append per-epoch metrics to this JSONL file.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainRlArgs {
    /// mlp, gnn, gnn-seq or gnn-demo.
    #[arg(long)]
    pub variant: RlVariant,
    #[arg(long)]
    pub arch: Option<Architecture>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Environment interactions per stack size.
    #[arg(long)]
    pub interactions: Option<usize>,
    #[arg(long)]
    pub k_base: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub clip: Option<f32>,
    #[arg(long)]
    pub gamma: Option<f32>,
    #[arg(long)]
    pub lambda: Option<f32>,
    #[arg(long)]
    pub entropy: Option<f32>,
    #[arg(long)]
    pub lambda_il: Option<f32>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    /// Demonstrations for the imitation term of gnn-demo.
    #[arg(long)]
    pub demos: Option<PathBuf>,
    /// Weights after the last stage.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write `k<K>.gmim` for every stage here.
    #[arg(long)]
    pub stage_dir: Option<PathBuf>,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Refuse weights of another architecture.
    #[arg(long)]
    pub arch: Option<Architecture>,
    #[command(flatten)]
    pub world: WorldArgs,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Number of evaluation seeds, starting at 0.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Print the full report as JSON instead of a table row.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ExplainOptions {
    /// action, object or goal.
    #[arg(long)]
    pub target: Option<ExplainTarget>,
    #[arg(long)]
    pub c_e: Option<usize>,
    #[arg(long)]
    pub c_f: Option<usize>,
    /// Mask optimisation steps.
    #[arg(long)]
    pub explain_steps: Option<usize>,
}

impl ExplainOptions {
    fn config(&self, settings: &Settings) -> HubResult<ExplainConfig> {
        let d = ExplainConfig::default();
        Ok(ExplainConfig {
            target: settings.pick(self.target, "target", d.target)?,
            c_e: settings.pick(self.c_e, "c-e", d.c_e)?,
            c_f: settings.pick(self.c_f, "c-f", d.c_f)?,
            steps: settings.pick(self.explain_steps, "explain-steps", d.steps)?,
            ..d
        })
    }
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub world: WorldArgs,
    /// World seed of the explained episode.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop after this many decisions.
    #[arg(long)]
    pub decisions: Option<usize>,
    #[command(flatten)]
    pub options: ExplainOptions,
    /// Emit one JSON record per decision.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub world: WorldArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub decisions: Option<usize>,
    #[command(flatten)]
    pub options: ExplainOptions,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Demo file that finished sessions are appended to.
    #[arg(long)]
    pub demos: Option<PathBuf>,
    /// Directory for per-session JSON snapshots.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    pub file: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Metrics JSONL written by train-il or train-rl.
    pub metrics: PathBuf,
}

pub const DEFAULT_PORT: u16 = 8321;
pub const DEFAULT_DEMOS: &str = "demos.jsonl";

fn required(flag: Option<PathBuf>, settings: &Settings, key: &str) -> HubResult<PathBuf> {
    settings
        .pick_opt(flag, key)?
        .map(|p| resolve(&p))
        .ok_or_else(|| HubError::Usage(format!("--{key} is required")))
}

fn metrics_log(path: &Option<PathBuf>) -> HubResult<MetricsLog> {
    Ok(match path {
        Some(p) => MetricsLog::to_file(&resolve(p))?,
        None => MetricsLog::disabled(),
    })
}

/// Runs one subcommand, writing human output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> HubResult<()> {
    let settings = Settings::discover(cli.config.as_deref())?;
    match cli.command {
        Command::CollectDemos(a) => collect(a, &settings, out),
        Command::TrainIl(a) => train_il_cmd(a, &settings, out),
        Command::TrainRl(a) => train_rl_cmd(a, &settings, out),
        Command::Eval(a) => eval_cmd(a, &settings, out),
        Command::Explain(a) => explain_cmd(a, &settings, out),
        Command::ProfileFeatures(a) => profile_cmd(a, &settings, out),
        Command::Serve(a) => serve_cmd(a, &settings, out),
        Command::Replay(a) => replay_cmd(&resolve(&a.file), out),
        Command::Report(a) => {
            let records = read_metrics(&resolve(&a.metrics))?;
            out.write_all(summarize(&records).as_bytes())?;
            Ok(())
        }
    }
}

fn collect(a: CollectArgs, s: &Settings, out: &mut dyn Write) -> HubResult<()> {
    let seed = s.pick(a.seed, "seed", 0)?;
    let data = if a.world.is_set(s) {
        let spec = a.world.spec(s, seed)?;
        record(&[spec], s.pick(a.trajectories, "trajectories", 20)?, seed)?
    } else {
        blockworld_corpus(seed)?
    };
    let path = resolve(&a.out);
    demos::file::save(&data, &path)?;
    writeln!(out, "wrote {} trajectories ({} pairs) to {}", data.trajectories.len(), data.n_pairs(), path.display())?;
    Ok(())
}

fn train_il_cmd(a: TrainIlArgs, s: &Settings, out: &mut dyn Write) -> HubResult<()> {
    let demos_path = required(a.demos, s, "demos")?;
    let data = demos::file::load(&demos_path)?;
    let d = IlConfig::new(s.pick(a.arch, "arch", Architecture::Sage)?);
    let config = IlConfig {
        seed: s.pick(a.seed, "seed", d.seed)?,
        epochs: s.pick(a.epochs, "epochs", d.epochs)?,
        batch_size: s.pick(a.batch_size, "batch-size", d.batch_size)?,
        lr: s.pick(a.lr, "lr", d.lr)?,
        augmentation: s.pick(a.augmentation, "augmentation", d.augmentation)?,
        hidden_layers: s.pick(a.hidden_layers, "hidden-layers", d.hidden_layers)?,
        hidden_width: s.pick(a.hidden_width, "hidden-width", d.hidden_width)?,
        ..d
    };
    let mut log = metrics_log(&a.metrics)?;
    let (params, report) = train_il_logged(&data, &config, &mut log)?;
    let path = resolve(&a.out);
    save_weights(&params, &path)?;
    writeln!(
        out,
        "trained {} on {} samples for {} epochs; best loss {:.4}; wrote {}",
        config.architecture,
        report.samples,
        config.epochs,
        report.best_loss,
        path.display()
    )?;
    Ok(())
}

fn train_rl_cmd(a: TrainRlArgs, s: &Settings, out: &mut dyn Write) -> HubResult<()> {
    let d = RlConfig::default();
    let config = RlConfig {
        architecture: s.pick(a.arch, "arch", d.architecture)?,
        seed: s.pick(a.seed, "seed", d.seed)?,
        interactions_per_stack: s.pick(a.interactions, "interactions", d.interactions_per_stack)?,
        k_base: s.pick(a.k_base, "k-base", d.k_base)?,
        k_max: s.pick(a.k_max, "k-max", d.k_max)?,
        lr: s.pick(a.lr, "lr", d.lr)?,
        clip: s.pick(a.clip, "clip", d.clip)?,
        gamma: s.pick(a.gamma, "gamma", d.gamma)?,
        lambda: s.pick(a.lambda, "lambda", d.lambda)?,
        entropy: s.pick(a.entropy, "entropy", d.entropy)?,
        lambda_il: s.pick(a.lambda_il, "lambda-il", if a.variant == RlVariant::GnnDemo { 1.0 } else { 0.0 })?,
        hidden_layers: s.pick(a.hidden_layers, "hidden-layers", d.hidden_layers)?,
        hidden_width: s.pick(a.hidden_width, "hidden-width", d.hidden_width)?,
        ..d
    };
    let demos = match s.pick_opt(a.demos, "demos")? {
        Some(p) => Some(demos::file::load(&resolve(&p))?),
        None if a.variant == RlVariant::GnnDemo => return Err(HubError::Usage("gnn-demo needs --demos".into())),
        None => None,
    };
    let mut log = metrics_log(&a.metrics)?;
    let run = train_ppo_logged(&config.kblock_ladder(), &config, a.variant, demos.as_ref(), &mut log)?;
    if let Some(dir) = &a.stage_dir {
        let dir = resolve(dir);
        std::fs::create_dir_all(&dir)?;
        for stage in &run.stages {
            save_weights(&stage.trained, &dir.join(format!("k{}.gmim", stage.k)))?;
        }
    }
    for stage in &run.stages {
        let n = stage.episode_returns.len();
        let mean = stage.episode_returns.iter().sum::<f32>() / n.max(1) as f32;
        writeln!(out, "K={:<3} interactions {:>6}  episodes {:>4}  mean return {:.3}", stage.k, stage.interactions, n, mean)?;
    }
    let path = resolve(&a.out);
    let last = run.final_params().ok_or_else(|| HubError::Usage("empty curriculum".into()))?;
    save_weights(last, &path)?;
    writeln!(out, "{} finished after {} interactions; wrote {}", a.variant, run.total_interactions(), path.display())?;
    Ok(())
}

fn load_checked(path: &Path, arch: Option<Architecture>) -> HubResult<PolicyParams> {
    let params = load_weights(path)?;
    match arch {
        Some(a) if a != params.architecture() => {
            Err(HubError::Usage(format!("{} holds {} weights, not {}", path.display(), params.architecture(), a)))
        }
        _ => Ok(params),
    }
}

pub fn table_header() -> String {
    format!("{:<12} {:>4} {:<10} {:>8} {:>5}  {:<15} {:>7}", "world", "k", "arch", "episodes", "seeds", "goals fraction", "success")
}

pub fn table_row(world: &str, arch: Architecture, episodes: usize, r: &EvalReport) -> String {
    format!(
        "{:<12} {:>4} {:<10} {:>8} {:>5}  {:<15} {:>7.3}",
        world,
        r.spec.k,
        arch.name(),
        episodes,
        r.seed_means.len(),
        format!("{:.3} ± {:.3}", r.mean, r.std),
        r.success_rate
    )
}

fn eval_cmd(a: EvalArgs, s: &Settings, out: &mut dyn Write) -> HubResult<()> {
    let weights = required(a.weights, s, "weights")?;
    let params = load_checked(&weights, s.pick_opt(a.arch, "arch")?)?;
    let spec = a.world.spec(s, 0)?;
    let episodes = s.pick(a.episodes, "episodes", 50)?;
    let n_seeds = s.pick(a.seeds, "seeds", 3usize)?;
    let seeds: Vec<u64> = (0..n_seeds as u64).collect();
    let report = evaluate(&params, &spec, episodes, &seeds)?;
    if a.json {
        let mut summary = report.clone();
        summary.episodes.clear();
        writeln!(out, "{}", serde_json::to_string_pretty(&summary).map_err(graphmimic::Error::from)?)?;
    } else {
        let world = s.pick_opt(a.world.world, "world")?.map(|w| w.to_string()).unwrap_or_default();
        writeln!(out, "{}", table_header())?;
        writeln!(out, "{}", table_row(&world, params.architecture(), episodes, &report))?;
    }
    Ok(())
}

fn explain_cmd(a: ExplainArgs, s: &Settings, out: &mut dyn Write) -> HubResult<()> {
    let params = load_weights(&required(a.weights, s, "weights")?)?;
    let seed = s.pick(a.seed, "seed", episode_seed(0, 0))?;
    let mut state = reset(&a.world.spec(s, seed)?)?;
    let config = a.options.config(s)?;
    let limit = s.pick(a.decisions, "decisions", usize::MAX)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = 0;
    while !state.is_done() && t < limit {
        let record = explain_state(&params, &state, &config, &format!("seed {seed} step {t}"))?;
        if a.json {
            writeln!(out, "{}", serde_json::to_string(&record).map_err(graphmimic::Error::from)?)?;
        } else {
            let edges: Vec<String> = record.top_edges.iter().map(|(u, v)| format!("{u}->{v}")).collect();
            writeln!(
                out,
                "step {t}: object {} -> goal {}  edges [{}]  features [{}]{}",
                record.object,
                record.goal,
                edges.join(", "),
                record.top_features.join(", "),
                if record.converged { "" } else { "  (not converged)" }
            )?;
        }
        let dist = policy_forward(&encode_scene(&state)?, &params)?;
        state = step(&state, &select_action(&dist, SelectMode::Argmax, &mut rng)).state;
        t += 1;
    }
    Ok(())
}

fn profile_cmd(a: ProfileArgs, s: &Settings, out: &mut dyn Write) -> HubResult<()> {
    let params = load_weights(&required(a.weights, s, "weights")?)?;
    let spec = a.world.spec(s, s.pick(a.seed, "seed", 0)?)?;
    let config = a.options.config(s)?;
    let profile = feature_profile(&params, &spec, s.pick(a.decisions, "decisions", 100)?, &config)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string(&profile).map_err(graphmimic::Error::from)?)?;
        return Ok(());
    }
    let mut text = String::new();
    for (name, count) in profile.names.iter().zip(&profile.counts) {
        let _ = writeln!(text, "{name:<12} {count:>5}");
    }
    let _ = writeln!(text, "decisions {}  top two [{}]  entropy {:.3} nats", profile.decisions, profile.top(2).join(", "), profile.entropy());
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn serve_cmd(a: ServeArgs, s: &Settings, out: &mut dyn Write) -> HubResult<()> {
    let port = s.pick(a.port, "port", DEFAULT_PORT)?;
    let demos = resolve(&s.pick(a.demos, "demos", PathBuf::from(DEFAULT_DEMOS))?);
    let snapshots = a.snapshots.map(|p| resolve(&p)).or_else(|| crate::config::data_dir().map(|d| d.join("sessions")));
    let state = service::AppState::new(demos.clone(), snapshots);
    let addr = format!("{}:{}", a.host, port);
    writeln!(out, "listening on http://{addr}; finished sessions append to {}", demos.display())?;
    out.flush()?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        axum::serve(listener, service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}

fn replay_cmd(path: &Path, out: &mut dyn Write) -> HubResult<()> {
    let data = demos::file::load(path)?;
    if let Err((trajectory, d)) = demos::file::validate(&data) {
        return Err(HubError::Divergence { trajectory, step: d.t, detail: d.detail });
    }
    writeln!(out, "ok: {} trajectories, {} steps replay exactly", data.trajectories.len(), data.n_pairs())?;
    Ok(())
}
