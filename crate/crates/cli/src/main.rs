use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ranld_cli::{
    cmd_analyze, cmd_collect, cmd_render, cmd_train, load_model, model_path, run_pipeline,
    CliError, RenderKind, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "ranld",
    version,
    about = "Robustness diagnostics for Q-network policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a Q-network; writes model.bin and train.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Collect an encountered state set under one perturbation tag.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Perturbation tag: `none`, an attack tag or a transform tag.
        #[arg(long, default_value = "none")]
        which: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Collection seed; defaults to the base seed for `none` and the
        /// probe seed otherwise.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Analyze a baseline set against an independent set and probes.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        hat: PathBuf,
        #[arg(long = "probe")]
        probes: Vec<PathBuf>,
    },
    /// Render a report's principal direction, spectrum or gradient trace.
    Render {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum)]
        which: RenderKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train, collect every state set, analyze and render in one go.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn setup(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let cfg = RunConfig::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn model_or_default(model: Option<PathBuf>, out: &Path) -> PathBuf {
    model.unwrap_or_else(|| model_path(out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common, seed } => {
            let (mut cfg, out) = setup(&common)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let o = cmd_train(&cfg, &out)?;
            println!("{}\n{}", o.model.display(), o.csv.display());
        }
        Command::Collect {
            common,
            which,
            model,
            episodes,
            seed,
        } => {
            let (cfg, out) = setup(&common)?;
            if !cfg.tags().contains(&which) {
                return Err(CliError::Config(format!(
                    "unknown perturbation tag '{which}'; valid tags: {}",
                    cfg.tags().join(", ")
                )));
            }
            let episodes = episodes.unwrap_or(cfg.analysis.episodes);
            if episodes == 0 {
                return Err(CliError::Config("episodes must be at least 1".into()));
            }
            let net = load_model(&model_or_default(model, &out))?;
            let default_seed = if which == "none" {
                cfg.analysis.base_seed
            } else {
                cfg.analysis.probe_seed
            };
            let path = cmd_collect(
                &cfg,
                &net,
                &which,
                episodes,
                seed.unwrap_or(default_seed),
                &out,
            )?;
            println!("{}", path.display());
        }
        Command::Analyze {
            common,
            model,
            base,
            hat,
            probes,
        } => {
            let (cfg, out) = setup(&common)?;
            let net = load_model(&model_or_default(model, &out))?;
            let o = cmd_analyze(&cfg, &net, &base, &hat, &probes, &out)?;
            println!("{}", o.report_path.display());
            for row in &o.report.correlation.rows {
                println!("{:<20} {:.4} ± {:.4}", row.tag, row.mean, row.spread);
            }
        }
        Command::Render {
            report,
            which,
            config,
            out,
        } => {
            let out = match (out, config) {
                (Some(o), _) => o,
                (None, Some(c)) => RunConfig::load(&c)?.output_dir,
                (None, None) => report.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            println!("{}", cmd_render(&report, which, &out)?.display());
        }
        Command::Pipeline { common, seed } => {
            let (mut cfg, out) = setup(&common)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let o = run_pipeline(&cfg, &out)?;
            println!("{}", o.analysis.report_path.display());
            for row in &o.analysis.report.correlation.rows {
                println!("{:<20} {:.4} ± {:.4}", row.tag, row.mean, row.spread);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ranld: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
