use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use rode_core::config::{Encounter, MessageInit, Rescale};
use rode_core::data::{chronological_split, load_cascades, load_graph, Cascade, SocialGraph};
use rode_core::dynamics::{predict_infection_time, TimeScale};
use rode_core::harness::{self, evaluate, next_user_rankings, SynthConfig};
use rode_core::model::{DropoutCtx, ModelVars};
use rode_core::numerics::{ParamStore, Tape};
use rode_core::objective::{GraphInputs, Prepared};
use rode_core::{encoder::CascadeRunner, RunConfig};

#[derive(Parser)]
#[command(name = "rode", version, about = "Curvature-regulated neural ODE for information diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the train/validation part of a chronological split.
    Train(TrainArgs),
    /// Ranking and infection-time metrics on the test part of the split.
    Eval(EvalArgs),
    /// Rank candidate next users after each given cascade prefix.
    PredictNext(PredictNextArgs),
    /// Predict when a user meets the message of a cascade prefix.
    PredictTime(PredictTimeArgs),
    /// Write a synthetic teacher-model dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Defaults to the checkpoint's user count, or one past the largest id seen.
    #[arg(long)]
    num_users: Option<usize>,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; individual flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    time_dim: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    solver_steps: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    lambda_ode: Option<f64>,
    /// `root` or `mean`.
    #[arg(long)]
    m0: Option<MessageInit>,
    /// `max` or `offset`.
    #[arg(long)]
    rescale: Option<Rescale>,
    /// `argmin` or `threshold:<r>`.
    #[arg(long)]
    encounter: Option<Encounter>,
    /// Clamp negative transport estimates to zero.
    #[arg(long)]
    clamp: Option<bool>,
    #[arg(long)]
    val_every: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => base,
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })* };
        }
        set!(dim, time_dim, alpha, dropout, lr, epochs, solver_steps, grid, seed, train_frac, val_frac, lambda_ode, m0, rescale, encounter, val_every);
        if let Some(v) = self.clamp {
            c.clamp_negative_w = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    cascades: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write the per-epoch log as JSON.
    #[arg(long)]
    log_json: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    cascades: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
    ks: Vec<usize>,
    /// Evaluate every cascade in the file instead of the test split.
    #[arg(long)]
    all: bool,
    /// Report RMSE in seconds using each cascade's true time scale.
    #[arg(long)]
    rmse_wallclock: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct PredictNextArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    graph: GraphArgs,
    /// One cascade prefix per line.
    #[arg(long)]
    cascades: PathBuf,
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Rank after every prefix step instead of only after the last one.
    #[arg(long)]
    every_step: bool,
}

#[derive(Args)]
struct PredictTimeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    graph: GraphArgs,
    /// File holding a single cascade line.
    #[arg(long)]
    cascade_prefix: PathBuf,
    #[arg(long)]
    target_user: usize,
    /// Wall-clock time (seconds) that system time 1 maps to.
    #[arg(long)]
    horizon: f64,
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    users: usize,
    #[arg(long)]
    cascades: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    mean_length: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
}

/// Model configuration stored next to a checkpoint as `<ckpt>.json`.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    num_users: usize,
    config: RunConfig,
}

fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn load_model(ckpt: &Path) -> Result<(ParamStore, Sidecar)> {
    let params = ParamStore::read_checkpoint(BufReader::new(
        File::open(ckpt).with_context(|| format!("opening {}", ckpt.display()))?,
    ))?;
    let side = sidecar_path(ckpt);
    let meta: Sidecar = serde_json::from_str(&fs::read_to_string(&side).with_context(|| format!("reading {}", side.display()))?)
        .with_context(|| format!("parsing {}", side.display()))?;
    Ok((params, meta))
}

fn read_cascades(path: &Path) -> Result<Vec<Cascade>> {
    let loaded = load_cascades(path)?;
    if loaded.dropped > 0 {
        log::warn!("{}: dropped {} cascades shorter than 2 events", path.display(), loaded.dropped);
    }
    Ok(loaded.cascades)
}

fn read_graph(args: &GraphArgs, known: Option<usize>, cascades: &[Cascade]) -> Result<SocialGraph> {
    let n = match args.num_users.or(known) {
        Some(n) => n,
        None => {
            let from_edges = rode_core::data::read_edges(&args.graph)?.iter().map(|e| e.1.max(e.2) + 1).max().unwrap_or(0);
            let from_cascades = cascades.iter().filter_map(Cascade::max_user).map(|u| u + 1).max().unwrap_or(0);
            from_edges.max(from_cascades)
        }
    };
    if n == 0 {
        bail!("cannot infer the number of users; pass --num-users");
    }
    let graph = load_graph(&args.graph, n, args.features.as_deref())?;
    for c in cascades {
        c.check_users(n)?;
    }
    Ok(graph)
}

fn run_train(a: TrainArgs) -> Result<()> {
    let config = a.config.resolve(RunConfig::default())?;
    let cascades = read_cascades(&a.cascades)?;
    let graph = read_graph(&a.graph, None, &cascades)?;
    let split = chronological_split(&cascades, config.train_frac, config.val_frac);
    log::info!("{} train / {} val / {} test cascades", split.train.len(), split.val.len(), split.test.len());
    let out = harness::train(&config, &graph, &split.train, &split.val, None)?;
    out.params.write_checkpoint(BufWriter::new(File::create(&a.out)?))?;
    let side = Sidecar { num_users: graph.num_users(), config };
    fs::write(sidecar_path(&a.out), serde_json::to_string_pretty(&side)?)?;
    if let Some(p) = a.log_json {
        fs::write(p, serde_json::to_string_pretty(&out.log)?)?;
    }
    if let Some(e) = out.best_epoch {
        log::info!("kept parameters from epoch {e}");
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let (params, meta) = load_model(&a.ckpt)?;
    let mut config = meta.config;
    if let Some(g) = a.grid {
        config.grid = g;
    }
    let cascades = read_cascades(&a.cascades)?;
    let graph = read_graph(&a.graph, Some(meta.num_users), &cascades)?;
    let test = if a.all { cascades } else { chronological_split(&cascades, config.train_frac, config.val_frac).test };
    if test.is_empty() {
        bail!("no cascades to evaluate");
    }
    let report = evaluate(&params, &graph, &test, &a.ks, &config, a.rmse_wallclock)?;
    eprint!("{report}");
    match a.json {
        Some(p) => fs::write(p, report.to_json())?,
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn run_predict_next(a: PredictNextArgs) -> Result<()> {
    let (params, meta) = load_model(&a.ckpt)?;
    let config = meta.config;
    let cascades = read_cascades(&a.cascades)?;
    let graph = read_graph(&a.graph, Some(meta.num_users), &cascades)?;
    let inputs = GraphInputs::new(&graph);
    let tape = Tape::no_grad();
    let model = ModelVars::bind(&tape, &params)?;
    let prep = Prepared::new(&model, &inputs);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for c in &cascades {
        let steps = next_user_rankings(&prep, c, &config, true)?;
        let chosen: Vec<_> = if a.every_step { steps.iter().collect() } else { steps.last().into_iter().collect() };
        for s in chosen {
            let top: Vec<String> = s.ranked.iter().take(a.top).map(|(u, v)| format!("{u}:{v:.6}")).collect();
            writeln!(out, "{}\t{}\t{}", c.message_id(), s.step, top.join(","))?;
        }
    }
    Ok(())
}

fn run_predict_time(a: PredictTimeArgs) -> Result<()> {
    let (params, meta) = load_model(&a.ckpt)?;
    let mut config = meta.config;
    if let Some(g) = a.grid {
        config.grid = g;
    }
    let text = fs::read_to_string(&a.cascade_prefix).with_context(|| format!("reading {}", a.cascade_prefix.display()))?;
    let lines: Vec<(usize, &str)> =
        text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#')).collect();
    let [(line, l)] = lines.as_slice() else {
        bail!("{}: expected exactly one cascade line, found {}", a.cascade_prefix.display(), lines.len());
    };
    let prefix = rode_core::data::parse_cascade_line(l.trim(), &a.cascade_prefix, line + 1)?;
    let graph = read_graph(&a.graph, Some(meta.num_users), std::slice::from_ref(&prefix))?;
    if a.target_user >= graph.num_users() {
        return Err(rode_core::Error::Validation(format!("target user {} is out of range", a.target_user)).into());
    }
    if prefix.contains_user(a.target_user) {
        return Err(rode_core::Error::Contract(format!("target user {} is already infected", a.target_user)).into());
    }
    let scale = TimeScale::with_end(&prefix, a.horizon, config.rescale)?;
    let inputs = GraphInputs::new(&graph);
    let tape = Tape::no_grad();
    let model = ModelVars::bind(&tape, &params)?;
    let prep = Prepared::new(&model, &inputs);
    let events = prefix.events();
    let mut runner = CascadeRunner::new(&model, prep.h0, events[0], config.m0);
    let mut drop = DropoutCtx::eval();
    for &e in events {
        runner.advance(e, &mut drop)?;
    }
    let message = runner.state.message.to_tensor();
    let initial = runner.initial_position(a.target_user).expect("prefix has events");
    let t_now = scale.to_sys(prefix.max_time());
    let p = predict_infection_time(
        &prep.net,
        a.target_user,
        initial,
        message.data(),
        t_now,
        scale,
        config.grid,
        config.solver_steps,
        config.encounter,
    )?;
    println!("{}\t{:.6}\t{:.6}\t{:.6}", a.target_user, p.t_sys, p.wall_clock, p.min_distance);
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        num_users: a.users,
        num_cascades: a.cascades,
        seed: a.seed,
        mean_length: a.mean_length.unwrap_or(d.mean_length),
        temperature: a.temperature.unwrap_or(d.temperature),
        dim: a.dim.unwrap_or(d.dim),
        feature_dim: a.feature_dim.unwrap_or(d.feature_dim),
        ..d
    };
    let data = harness::generate_synthetic(&cfg)?;
    harness::write_dataset(&a.out_dir, &data)?;
    log::info!("wrote {} cascades over {} users to {}", data.cascades.len(), a.users, a.out_dir.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<rode_core::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::PredictNext(a) => run_predict_next(a),
        Command::PredictTime(a) => run_predict_time(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
