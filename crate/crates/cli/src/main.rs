use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use shoprank::featurize::{FeatureMask, Target};
use shoprank::pipeline::{self, ExperimentConfig, ModelSpec, Scope, Stage, CONFIG};
use shoprank::rank::ModelKind;

#[derive(Parser)]
#[command(name = "shoprank", version, about = "Learning-to-rank pipeline for e-commerce search")]
struct Cli {
    /// Experiment config (TOML). Defaults to `<out>/config.toml` when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment directory.
    #[arg(long, global = true, default_value = "experiment")]
    out: PathBuf,
    /// Start from the small smoke-test config instead of the defaults.
    #[arg(long, global = true)]
    smoke: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic data or import the configured files.
    Generate,
    /// Count impressions and funnel events per window.
    Aggregate,
    /// Train matrix-factorization and skip-gram embeddings.
    Embed,
    /// Coherency scoring and the broad/narrow classifier.
    Segment {
        #[command(subcommand)]
        step: SegmentStep,
    },
    /// Build the LETOR feature matrix.
    Featurize,
    /// Train the configured models, or a single one.
    Train(TrainArgs),
    /// Alias tree for single-model training: `rank train --model ...`.
    Rank {
        #[command(subcommand)]
        step: RankStep,
    },
    /// Score the test split and compute NDCG.
    Evaluate,
    /// Build the comparison tables.
    Report,
    /// Run every stage in order.
    Run,
    /// Draw the ablation chart as SVG.
    Plot {
        #[arg(long, default_value = "ablation.svg")]
        output: PathBuf,
    },
    /// Print the effective config as TOML.
    Config,
}

#[derive(Subcommand)]
enum SegmentStep {
    Score,
    Train,
    Predict,
}

#[derive(Subcommand)]
enum RankStep {
    Train(TrainArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Model kind: rf, gbm, ranknet or lambdamart.
    #[arg(long)]
    model: Option<String>,
    /// Feature mask over Q, QP, POP, PHYS, e.g. YYYN.
    #[arg(long, default_value = "YYYY")]
    mask: String,
    #[arg(long, default_value = "log_ctr")]
    target: String,
    #[arg(long, default_value = "all")]
    segment: String,
}

impl TrainArgs {
    fn spec(&self) -> Result<Option<ModelSpec>> {
        let Some(kind) = &self.model else {
            return Ok(None);
        };
        Ok(Some(ModelSpec {
            kind: kind.parse::<ModelKind>()?,
            mask: self.mask.parse::<FeatureMask>()?,
            target: self.target.parse::<Target>()?,
            segment: self.segment.parse::<Scope>()?,
        }))
    }
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "level={} target={} {}",
                record.level().as_str().to_lowercase(),
                record.target(),
                record.args()
            )
        })
        .init();
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let stored = cli.out.join(CONFIG);
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None if stored.exists() => ExperimentConfig::load(&stored)?,
        None if cli.smoke => ExperimentConfig::smoke(),
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage(cfg: &ExperimentConfig, dir: &Path, stage: Stage) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(CONFIG), cfg.to_toml()?)?;
    pipeline::run_stage(cfg, dir, stage)?;
    Ok(())
}

fn train(cfg: &ExperimentConfig, dir: &Path, args: &TrainArgs) -> Result<()> {
    match args.spec()? {
        Some(spec) => {
            pipeline::train_stage(cfg, dir, &spec)?;
            Ok(())
        }
        None => stage(cfg, dir, Stage::Train),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let dir = cli.out.as_path();
    let started = Instant::now();
    log::info!("command=start seed={} out={}", cfg.seed, dir.display());
    match &cli.command {
        Command::Generate => stage(&cfg, dir, Stage::Generate)?,
        Command::Aggregate => stage(&cfg, dir, Stage::Aggregate)?,
        Command::Embed => stage(&cfg, dir, Stage::Embed)?,
        Command::Segment { step } => {
            let s = match step {
                SegmentStep::Score => Stage::SegmentScore,
                SegmentStep::Train => Stage::SegmentTrain,
                SegmentStep::Predict => Stage::SegmentPredict,
            };
            stage(&cfg, dir, s)?
        }
        Command::Featurize => stage(&cfg, dir, Stage::Featurize)?,
        Command::Train(args) => train(&cfg, dir, args)?,
        Command::Rank {
            step: RankStep::Train(args),
        } => train(&cfg, dir, args)?,
        Command::Evaluate => stage(&cfg, dir, Stage::Evaluate)?,
        Command::Report => {
            stage(&cfg, dir, Stage::Report)?;
            print!("{}", std::fs::read_to_string(dir.join("reports.txt"))?);
        }
        Command::Run => {
            let manifest = pipeline::run_pipeline(&cfg, dir)?;
            log::info!("command=run artifacts={} stages={}", manifest.artifacts.len(), manifest.stages.len());
        }
        Command::Plot { output } => pipeline::plot(&cfg, dir, output)?,
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    log::info!("command=done duration_ms={}", started.elapsed().as_millis());
    Ok(())
}

/// Joins the error chain, dropping causes already spelled out by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}
