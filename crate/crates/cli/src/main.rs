//! `vbp`: solve persuasion instances, run PSRO, play repeated episodes and summarize runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vbp_core::backend::{build_backend, Backend, BackendKind};
use vbp_core::env::{EnvId, EnvSpec, LaeParams};
use vbp_core::multistage::{run_batch, stage_metrics, trajectory_file_name, Trajectory};
use vbp_core::oracles::receiver_catalog;
use vbp_core::playout::{Arena, Setting};
use vbp_core::prompt::{rel_listing_rules, PromptAction, PromptFunction, PromptStrategy};
use vbp_core::psro::{run_psro, FixedSender, MetaSolverKind, OracleKind, PsroResult};
use vbp_core::runs::{self, RunConfig, RunManifest};
use vbp_core::solver::{binary_search_optimal, solve_direct_lp};
use vbp_core::{Error, Result};

#[derive(Parser)]
#[command(name = "vbp", version, about = "Bayesian persuasion solvers and verbalized signaling games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the commitment LP of an environment and cross-check it by bisection.
    Solve(Common),
    /// Run the PSRO loop and persist the run directory.
    Psro(PsroArgs),
    /// Play repeated episodes over a batch of seeds.
    Multistage(MultistageArgs),
    /// Summarize every run directory under a root.
    Report {
        #[arg(default_value = "runs")]
        root: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// rel, cor or lae
    #[arg(long)]
    env: Option<String>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    miles: Option<u32>,
    #[arg(long)]
    officers: Option<u32>,
    #[arg(long)]
    speed_value: Option<f64>,
    #[arg(long)]
    fine: Option<f64>,
}

#[derive(Args, Clone)]
struct PlayArgs {
    /// mock or live
    #[arg(long)]
    backend: Option<String>,
    /// Playouts per payoff cell (episodes per cell in s3).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    no_commitment: bool,
    #[arg(long)]
    no_obedience: bool,
    #[arg(long)]
    no_obfuscation: bool,
}

#[derive(Args)]
struct PsroArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    play: PlayArgs,
    /// s1, s2 or s3
    #[arg(long)]
    setting: Option<String>,
    /// exact or search
    #[arg(long)]
    oracle: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    /// uniform, stackelberg or lagrangian
    #[arg(long)]
    meta: Option<String>,
    /// Freeze the sender: fixed:no-signal or fixed:honest
    #[arg(long)]
    sender: Option<String>,
}

#[derive(Args)]
struct MultistageArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    play: PlayArgs,
    #[arg(long)]
    episodes: Option<usize>,
    /// A style "Category: content" or a listing rule id such as rel_sender_trend.
    #[arg(long)]
    sender_strategy: Option<String>,
    #[arg(long)]
    receiver_strategy: Option<String>,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

fn config_err(e: Error) -> Failure {
    Failure::Config(e)
}

fn runtime_err(e: Error) -> Failure {
    Failure::Runtime(e)
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_json(
            &fs::read_to_string(p).map_err(|e| Error::domain(format!("cannot read {}: {e}", p.display())))?,
        )?,
        None => RunConfig::default(),
    };
    if let Some(env) = &common.env {
        let id: EnvId = env.parse()?;
        if id != cfg.env.id {
            cfg.env = EnvSpec::new(id);
        }
    }
    if common.miles.is_some() || common.officers.is_some() || common.speed_value.is_some() || common.fine.is_some() {
        if cfg.env.id != EnvId::Lae {
            return Err(Error::domain("road parameters apply only to the lae environment"));
        }
        let mut p = cfg.env.lae.unwrap_or_default();
        p.miles = common.miles.unwrap_or(p.miles);
        p.officers = common.officers.unwrap_or(p.officers);
        p.speed_value = common.speed_value.unwrap_or(p.speed_value);
        p.fine = common.fine.unwrap_or(p.fine);
        cfg.env.lae = Some(LaeParams { ..p });
    }
    if let Some(s) = common.seed {
        cfg.play.seed = s;
    }
    Ok(cfg)
}

fn apply_play(cfg: &mut RunConfig, play: &PlayArgs) -> Result<()> {
    if let Some(b) = &play.backend {
        cfg.backend = b.parse::<BackendKind>()?;
    }
    if let Some(n) = play.samples {
        cfg.play.samples = n;
    }
    if let Some(h) = play.horizon {
        cfg.play.horizon = h;
    }
    if play.no_commitment {
        cfg.play.commitment = false;
    }
    if play.no_obedience {
        cfg.play.obedience = false;
    }
    if play.no_obfuscation {
        cfg.play.obfuscation = false;
    }
    Ok(())
}

fn out_dir(common: &Common, name: String) -> PathBuf {
    common.out.clone().unwrap_or_else(|| Path::new("runs").join(name))
}

fn setting_name(s: Setting) -> &'static str {
    match s {
        Setting::S1 => "s1",
        Setting::S2 => "s2",
        Setting::S3 => "s3",
    }
}

fn manifest(command: &str, backend: &dyn Backend, config: &RunConfig) -> RunManifest {
    RunManifest { command: command.into(), backend: backend.identity(), config: config.clone() }
}

fn cmd_solve(common: Common) -> std::result::Result<(), Failure> {
    let cfg = load_config(&common).map_err(config_err)?;
    cfg.validate().map_err(config_err)?;
    let env = cfg.env.build().map_err(config_err)?;
    let dir = out_dir(&common, format!("solve_{}", env.id));
    let lp = solve_direct_lp(&env.base).map_err(runtime_err)?;
    let bisection = binary_search_optimal(&env.base, 1e-6).map_err(runtime_err)?;
    let inst = &env.base;
    println!("environment {}", env.id);
    println!("sender value {:.4}", lp.sender_value);
    println!("receiver value {:.4}", lp.receiver_value);
    println!("bisection sender value {:.4}", bisection.sender_value);
    println!("scheme (state -> recommendation probabilities):");
    for (w, row) in lp.scheme.matrix().iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&inst.signals).map(|(p, s)| format!("{s}={p:.4}")).collect();
        println!("  {}: {}", inst.states[w], cells.join(" "));
    }
    let out = serde_json::json!({
        "env": env.id,
        "lp": lp.to_json(),
        "bisection": bisection.to_json(),
    });
    let text = serde_json::to_string_pretty(&out).map_err(|e| runtime_err(e.into()))?;
    runs::write_atomic(&dir.join("solution.json"), format!("{text}\n").as_bytes()).map_err(runtime_err)?;
    println!("wrote {}", dir.join("solution.json").display());
    Ok(())
}

fn cmd_psro(args: PsroArgs) -> std::result::Result<(), Failure> {
    let mut cfg = load_config(&args.common).map_err(config_err)?;
    apply_play(&mut cfg, &args.play).map_err(config_err)?;
    let parsed = (|| -> Result<()> {
        if let Some(s) = &args.setting {
            cfg.play.setting = s.parse()?;
        }
        if let Some(o) = &args.oracle {
            cfg.psro.oracle = o.parse::<OracleKind>()?;
        }
        if let Some(m) = &args.meta {
            cfg.psro.meta = m.parse::<MetaSolverKind>()?;
        }
        if let Some(n) = args.iters {
            cfg.psro.iterations = n;
        }
        if let Some(s) = &args.sender {
            if !s.starts_with("fixed:") {
                return Err(Error::domain(format!("--sender expects fixed:no-signal or fixed:honest, got {s:?}")));
            }
            cfg.psro.fixed_sender = Some(s.parse::<FixedSender>()?);
        }
        if cfg.play.setting == Setting::S3 && cfg.psro.oracle == OracleKind::Exact {
            return Err(Error::domain("the repeated setting needs --oracle search"));
        }
        cfg.validate()
    })();
    parsed.map_err(config_err)?;
    let env = cfg.env.build().map_err(config_err)?;
    let backend = build_backend(cfg.backend, &cfg.live).map_err(config_err)?;
    let dir = out_dir(
        &args.common,
        format!("psro_{}_{}_seed{}", env.id, setting_name(cfg.play.setting), cfg.play.seed),
    );
    runs::write_manifest(&dir, &manifest("psro", backend.as_ref(), &cfg)).map_err(runtime_err)?;
    let arena = Arena::new(env, backend, cfg.play.clone()).map_err(config_err)?;
    let mut persist = |partial: &PsroResult| runs::write_psro_outputs(&dir, partial);
    let result = run_psro(&arena, &cfg.psro, &mut persist).map_err(runtime_err)?;
    runs::write_psro_outputs(&dir, &result).map_err(runtime_err)?;
    let last = result.iterations.last();
    println!(
        "{} iterations, {}, pools {}x{}",
        result.iterations.len(),
        match result.termination {
            Some(vbp_core::psro::Termination::Converged) => "converged",
            _ => "budget exhausted",
        },
        result.sender_pool.len(),
        result.receiver_pool.len()
    );
    if let Some(r) = last {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.4}"));
        println!(
            "exploitability {:.4}, sender {:.4}, receiver {:.4}, lie {}, honest {}",
            r.exploitability,
            r.sender_value,
            r.receiver_value,
            fmt(r.lie_prob),
            fmt(r.honest_prob)
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn parse_strategy(text: &str) -> Result<PromptStrategy> {
    if let Some(rule) = rel_listing_rules().into_iter().find(|r| r.rule_id == text) {
        return Ok(PromptStrategy::Function(rule));
    }
    let (cat, content) = text
        .split_once(':')
        .ok_or_else(|| Error::domain(format!("strategy {text:?} is neither \"Category: content\" nor a rule id")))?;
    Ok(PromptStrategy::Function(PromptFunction::constant(PromptAction::new(cat.trim(), content.trim())?)))
}

fn cmd_multistage(args: MultistageArgs) -> std::result::Result<(), Failure> {
    let mut cfg = load_config(&args.common).map_err(config_err)?;
    apply_play(&mut cfg, &args.play).map_err(config_err)?;
    cfg.play.setting = Setting::S3;
    if let Some(n) = args.episodes {
        cfg.episodes = n;
    }
    cfg.validate().map_err(config_err)?;
    let env = cfg.env.build().map_err(config_err)?;
    let strategies = (|| -> Result<(PromptStrategy, PromptStrategy)> {
        let sender = match &args.sender_strategy {
            Some(s) => parse_strategy(s)?,
            None => parse_strategy("Tone: neutral")?,
        };
        let receiver = match &args.receiver_strategy {
            Some(s) => parse_strategy(s)?,
            None => PromptStrategy::Function(PromptFunction::constant(
                receiver_catalog(&env).into_iter().next().ok_or_else(|| Error::domain("no receiver styles"))?,
            )),
        };
        Ok((sender, receiver))
    })();
    let (sender, receiver) = strategies.map_err(config_err)?;
    let backend = build_backend(cfg.backend, &cfg.live).map_err(config_err)?;
    let dir = out_dir(&args.common, format!("multistage_{}_seed{}", env.id, cfg.play.seed));
    runs::write_manifest(&dir, &manifest("multistage", backend.as_ref(), &cfg)).map_err(runtime_err)?;
    let horizon = cfg.play.horizon;
    let arena = Arena::new(env, backend, cfg.play.clone()).map_err(config_err)?;
    let trajectories = match run_batch(&arena, &sender, &receiver, horizon, cfg.episodes, cfg.play.seed) {
        Ok(t) => t,
        Err(Error::Episode { episode, stage, completed, source }) => {
            let partial = Trajectory { episode, seed: 0, horizon, records: completed };
            let path = dir.join("trajectories").join(format!("partial_{}", trajectory_file_name(&partial)));
            if let Ok(text) = vbp_core::multistage::to_jsonl(&partial) {
                let _ = runs::write_atomic(&path, text.as_bytes());
            }
            return Err(Failure::Runtime(Error::Episode { episode, stage, completed: partial.records, source }));
        }
        Err(e) => return Err(Failure::Runtime(e)),
    };
    let records: Vec<_> = trajectories.iter().map(|t| t.records.clone()).collect();
    let metrics = stage_metrics(&records, &arena.env);
    runs::write_multistage_outputs(&dir, &trajectories, &metrics).map_err(runtime_err)?;
    for row in &metrics {
        println!("{}", row.csv_line());
    }
    println!("wrote {} episodes to {}", trajectories.len(), dir.display());
    Ok(())
}

fn cmd_report(root: &Path) -> std::result::Result<(), Failure> {
    if !root.is_dir() {
        return Err(Failure::Config(Error::domain(format!("no runs found: {} is not a directory", root.display()))));
    }
    let text = runs::report(root).map_err(config_err)?;
    runs::write_atomic(&root.join("report.csv"), text.as_bytes()).map_err(runtime_err)?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let display_only = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if display_only { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let outcome = match cli.command {
        Command::Solve(c) => cmd_solve(c),
        Command::Psro(a) => cmd_psro(a),
        Command::Multistage(a) => cmd_multistage(a),
        Command::Report { root } => cmd_report(&root),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
