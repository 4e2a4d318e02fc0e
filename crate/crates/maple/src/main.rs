use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maple_core::episodes::EpisodeSampler;
use maple_core::trainer::sampler_seed;
use maple_core::{Corpus, ScoreScale, SyntheticSpec};

use maple::config::RunConfig;
use maple::error::{MapleError, Result};
use maple::manifest::write_corpus;
use maple::{metric, report, runner, sample};

/// Cross-prompt trait scoring with episodic prototypical networks.
///
/// Exit status: 0 success, 1 other failure, 2 configuration error,
/// 3 data error, 4 training diverged.
#[derive(Parser)]
#[command(name = "maple", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path override, e.g. `regime.classification=binary`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed; takes precedence over the config file and MAPLE_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides, self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train one head per fold and meta-test it on the fold's test prompts.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Folds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Report directory; defaults to the output directory.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write every training episode as JSON lines.
        #[arg(long)]
        dump_episodes: Option<PathBuf>,
    },
    /// Meta-test stored checkpoints.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint file, or a training output directory with one per fold.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Quadratic weighted kappa between a predictions CSV and a gold CSV.
    Qwk {
        /// CSV with `essay_id,predicted_score`.
        #[arg(long)]
        pred: PathBuf,
        /// CSV with `essay_id` and a score column.
        #[arg(long)]
        gold: PathBuf,
        /// Gold score column; defaults to the second column.
        #[arg(long)]
        gold_column: Option<String>,
        /// Level grid as `min:max:step`; inferred from the data otherwise.
        #[arg(long)]
        scale: Option<String>,
    },
    /// Draw training episodes for one fold and print stream statistics.
    Sample {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        count: usize,
        /// JSON-lines episode dump.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Write a synthetic level-clustered corpus (manifest, CSV, EMB1).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        prompts: usize,
        #[arg(long, default_value_t = 40)]
        essays_per_prompt: usize,
        #[arg(long, default_value_t = 2)]
        traits: usize,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        d_u: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_scale(s: &str) -> Result<ScoreScale> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| MapleError::Config(format!("scale {s:?} is not min:max:step")))?;
    match parts[..] {
        [min, max, step] => ScoreScale::stepped(min, max, step).map_err(|e| MapleError::Config(e.to_string())),
        _ => Err(MapleError::Config(format!("scale {s:?} is not min:max:step"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    let out_err = |e| MapleError::io(std::path::Path::new("<stdout>"), e);
    match cli.command {
        Command::Train { config, jobs, report, dump_episodes } => {
            let cfg = config.load()?;
            let outcome = runner::train(&cfg, jobs, report.as_deref(), dump_episodes.as_deref())?;
            stdout.write_all(report::render_text(&outcome.report).as_bytes()).map_err(out_err)?;
        }
        Command::Eval { config, checkpoint, jobs, report } => {
            let cfg = config.load()?;
            let outcome = runner::eval(&cfg, &checkpoint, jobs, report.as_deref())?;
            stdout.write_all(report::render_text(&outcome.report).as_bytes()).map_err(out_err)?;
        }
        Command::Qwk { pred, gold, gold_column, scale } => {
            let scale = scale.as_deref().map(parse_scale).transpose()?;
            let p = metric::read_scores(&pred, None)?;
            let g = metric::read_scores(&gold, gold_column.as_deref())?;
            let k = metric::qwk_from_pairs(&p, &g, scale.as_ref())?;
            writeln!(stdout, "{k:?}").map_err(out_err)?;
        }
        Command::Sample { config, count, out, fold } => {
            let cfg = config.load()?;
            let prepared = runner::prepare(&cfg)?;
            let spec = prepared
                .folds
                .get(fold)
                .ok_or_else(|| MapleError::Config(format!("fold {fold} out of range ({} folds)", prepared.folds.len())))?;
            let corpus = &prepared.corpus;
            let split = spec.resolve(corpus)?;
            let mut sampler = EpisodeSampler::new(
                corpus,
                &split.train_essays(),
                cfg.regime,
                cfg.train.episode_config(),
                sampler_seed(cfg.train.seed),
            )?;
            let file = File::create(&out).map_err(|e| MapleError::io(&out, e))?;
            let mut w = BufWriter::new(file);
            let mut io_err = None;
            let stats = sample::draw(&mut sampler, count, |i, e| {
                if io_err.is_none() {
                    let line = report::episode_json(corpus, fold, i, e).to_string();
                    if let Err(err) = writeln!(w, "{line}") {
                        io_err = Some(err);
                    }
                }
            })?;
            if let Some(e) = io_err {
                return Err(MapleError::io(&out, e));
            }
            w.flush().map_err(|e| MapleError::io(&out, e))?;
            writeln!(stdout, "{}", serde_json::to_string(&stats).expect("stats serialize")).map_err(out_err)?;
        }
        Command::Synth { out, prompts, essays_per_prompt, traits, levels, d, d_u, seed } => {
            let spec = SyntheticSpec { prompts, essays_per_prompt, traits, levels, d, d_u, seed, ..SyntheticSpec::default() };
            let corpus = Corpus::build(spec.generate().map_err(|e| MapleError::Config(e.to_string()))?)?;
            let manifest = write_corpus(&corpus, &out)?;
            writeln!(stdout, "{}", manifest.display()).map_err(out_err)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("maple: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
