//! Cross-validation driver: folds in parallel, artifacts on disk.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use maple_core::eval::{assemble, check_disjoint, run_fold, CvOutcome, FoldOutcome};
use maple_core::{Checkpoint, Corpus, SplitSpec};
use rayon::prelude::*;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Sidecar};
use crate::config::{FoldFile, RunConfig};
use crate::error::{MapleError, Result};
use crate::manifest::load_corpus;
use crate::report;

pub fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold-{fold:02}"))
}

pub fn checkpoint_file(out: &Path, fold: usize) -> PathBuf {
    fold_dir(out, fold).join("checkpoint.mhd1")
}

pub struct Prepared {
    pub corpus: Corpus,
    pub folds: Vec<SplitSpec>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let corpus = load_corpus(&cfg.manifest)?;
    let file = match &cfg.folds {
        Some(p) => FoldFile::read(p)?,
        None => FoldFile::lopo(),
    };
    let folds = file.resolve(&corpus, cfg.train.seed)?;
    check_disjoint(&folds).map_err(|e| MapleError::Config(e.to_string()))?;
    Ok(Prepared { corpus, folds })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| MapleError::Config(format!("thread pool: {e}")))
}

/// Fold results plus, when requested, each fold's episode dump lines.
pub struct CvRun {
    pub outcome: CvOutcome,
    pub episode_lines: Vec<Vec<String>>,
}

/// Runs every fold; `checkpoints[i]` replaces training for fold `i`.
/// Results do not depend on `jobs`.
pub fn run_folds(
    prepared: &Prepared,
    cfg: &RunConfig,
    checkpoints: Option<&[Checkpoint]>,
    jobs: usize,
    dump_episodes: bool,
) -> Result<CvRun> {
    let experiment = cfg.experiment();
    let corpus = &prepared.corpus;
    let results: Vec<Result<(FoldOutcome, Vec<String>)>> = pool(jobs)?.install(|| {
        prepared
            .folds
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut lines = Vec::new();
                let mut count = 0usize;
                let ckpt = checkpoints.map(|c| &c[i]);
                let outcome = run_fold(corpus, i, spec, &experiment, ckpt, &mut |ep| {
                    if dump_episodes {
                        lines.push(report::episode_json(corpus, i, count, ep).to_string());
                    }
                    count += 1;
                })?;
                eprintln!("fold {i} ({}): {} tasks scored", spec.test_prompts.join(","), outcome.scores.len());
                Ok((outcome, lines))
            })
            .collect()
    });
    let mut folds = Vec::with_capacity(results.len());
    let mut episode_lines = Vec::with_capacity(results.len());
    for r in results {
        let (f, l) = r?;
        folds.push(f);
        episode_lines.push(l);
    }
    let outcome = assemble(corpus, folds, &experiment)?;
    Ok(CvRun { outcome, episode_lines })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| MapleError::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| MapleError::io(path, e))
}

/// `report.csv`, `report.txt` and `audit.jsonl` under `dir`.
pub fn write_report(dir: &Path, outcome: &CvOutcome) -> Result<()> {
    mkdir(dir)?;
    let p = dir.join("report.csv");
    report::write_report_csv(&outcome.report, create(&p)?).map_err(|e| MapleError::io(&p, e))?;
    let p = dir.join("report.txt");
    fs::write(&p, report::render_text(&outcome.report)).map_err(|e| MapleError::io(&p, e))?;
    let p = dir.join("audit.jsonl");
    report::write_audit_jsonl(outcome.folds.iter().map(|f| &f.audit), create(&p)?).map_err(|e| MapleError::io(&p, e))
}

/// Per-fold checkpoint, sidecar, training log and predictions.
pub fn write_fold_artifacts(out: &Path, corpus: &Corpus, cfg: &RunConfig, outcome: &CvOutcome) -> Result<()> {
    for (i, f) in outcome.folds.iter().enumerate() {
        let dir = fold_dir(out, i);
        mkdir(&dir)?;
        if let Some(training) = &f.training {
            let sidecar = Sidecar {
                fold: i,
                test_prompts: f.audit.test_prompts.clone(),
                regime: cfg.regime.label().to_string(),
                dev_qwk: training.best.dev_qwk,
                tasks_seen: training.best.tasks_seen,
                config_hash: format!("{:016x}", training.best.config_hash),
            };
            save_checkpoint(&dir.join("checkpoint.mhd1"), &training.best, &sidecar)?;
            let p = dir.join("train_log.csv");
            report::write_train_log(&training.log, create(&p)?).map_err(|e| MapleError::io(&p, e))?;
        }
        let p = dir.join("predictions.csv");
        report::write_predictions_csv(corpus, &f.scores, create(&p)?).map_err(|e| MapleError::io(&p, e))?;
    }
    Ok(())
}

pub fn write_episode_dump(path: &Path, lines: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    let mut text = String::new();
    for l in lines.iter().flatten() {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| MapleError::io(path, e))
}

/// Trains every fold and writes all artifacts; returns the outcome.
pub fn train(cfg: &RunConfig, jobs: usize, report_dir: Option<&Path>, dump: Option<&Path>) -> Result<CvOutcome> {
    let prepared = prepare(cfg)?;
    let out = &cfg.output_dir;
    mkdir(out)?;
    let p = out.join("resolved_config.json");
    fs::write(&p, cfg.to_json()).map_err(|e| MapleError::io(&p, e))?;
    let run = run_folds(&prepared, cfg, None, jobs, dump.is_some())?;
    write_fold_artifacts(out, &prepared.corpus, cfg, &run.outcome)?;
    write_report(report_dir.unwrap_or(out), &run.outcome)?;
    if let Some(d) = dump {
        write_episode_dump(d, &run.episode_lines)?;
    }
    Ok(run.outcome)
}

/// Loads one checkpoint per fold: `path` is a file used for every fold or a
/// training output directory holding `fold-NN/checkpoint.mhd1`.
pub fn load_fold_checkpoints(path: &Path, n_folds: usize) -> Result<Vec<Checkpoint>> {
    if path.is_dir() {
        (0..n_folds).map(|i| load_checkpoint(&checkpoint_file(path, i)).map(|(c, _)| c)).collect()
    } else {
        let (c, _) = load_checkpoint(path)?;
        Ok(vec![c; n_folds])
    }
}

/// Meta-tests stored checkpoints without training.
pub fn eval(cfg: &RunConfig, checkpoint: &Path, jobs: usize, report_dir: Option<&Path>) -> Result<CvOutcome> {
    let prepared = prepare(cfg)?;
    let ckpts = load_fold_checkpoints(checkpoint, prepared.folds.len())?;
    let run = run_folds(&prepared, cfg, Some(&ckpts), jobs, false)?;
    if let Some(dir) = report_dir {
        write_report(dir, &run.outcome)?;
    }
    Ok(run.outcome)
}
