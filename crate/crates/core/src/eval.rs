//! Meta-testing on held-out prompts, quadratic weighted kappa, and
//! leave-one-prompt-out orchestration.

use alloc::collections::{btree_map, BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FeatureNormalizer};
use crate::episodes::{build_meta_test, Episode, MetaTestTask, Regime};
use crate::error::{Error, Result};
use crate::fusion::{HeadConfig, HeadParams};
use crate::proto::{compute_prototypes, predict};
use crate::split::{QuerySpec, Split, SplitSpec};
use crate::trainer::{train, Checkpoint, InputTable, TrainConfig, TrainOutcome};

/// Quadratic weighted kappa between two level sequences over `n_levels` levels.
///
/// Degenerate inputs (zero expected disagreement) give 1 when every pair
/// agrees and 0 otherwise. The result is exactly symmetric in its arguments.
pub fn qwk(gold: &[usize], pred: &[usize], n_levels: usize) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch(gold.len(), pred.len()));
    }
    if gold.is_empty() {
        return Err(Error::Empty("qwk input"));
    }
    for &l in gold.iter().chain(pred) {
        if l >= n_levels {
            return Err(Error::LevelOutOfRange { level: l, n_levels });
        }
    }
    let n = n_levels;
    let mut observed = vec![0u64; n * n];
    let mut hist_g = vec![0u64; n];
    let mut hist_p = vec![0u64; n];
    for (&g, &p) in gold.iter().zip(pred) {
        observed[g * n + p] += 1;
        hist_g[g] += 1;
        hist_p[p] += 1;
    }
    // The 1/(N-1)^2 weight normalisation cancels in the ratio, so integer
    // weights (i-j)^2 keep both sums exact. Summing each unordered pair
    // once makes the result invariant under swapping gold and pred.
    let mut disagreement: u128 = 0;
    let mut expected: u128 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let w = ((j - i) * (j - i)) as u128;
            disagreement += w * u128::from(observed[i * n + j] + observed[j * n + i]);
            expected += w * (u128::from(hist_g[i]) * u128::from(hist_p[j]) + u128::from(hist_g[j]) * u128::from(hist_p[i]));
        }
    }
    if expected == 0 {
        return Ok(if disagreement == 0 { 1.0 } else { 0.0 });
    }
    let total = gold.len() as f64;
    let kappa = 1.0 - total * disagreement as f64 / expected as f64;
    Ok(kappa.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskScore {
    pub trait_idx: usize,
    pub query_prompt: usize,
    pub essays: Vec<usize>,
    pub gold_levels: Vec<usize>,
    pub predicted_levels: Vec<usize>,
    /// Predictions in original score units.
    pub predicted_scores: Vec<f64>,
    pub qwk: f64,
    pub support_prompts: Vec<usize>,
    pub support_essays: Vec<usize>,
}

/// Scores one task with representations already computed per support class.
fn score_encoded(
    corpus: &Corpus,
    task: &MetaTestTask,
    support: &[Vec<&[f64]>],
    query: &[Vec<f64>],
) -> Result<TaskScore> {
    let protos = compute_prototypes(support)?;
    let tr = &corpus.traits[task.trait_idx];
    let mut predicted_levels = Vec::with_capacity(query.len());
    for q in query {
        let c = predict(q, &protos).ok_or(Error::NoPrototypes)?;
        predicted_levels.push(task.levels[c]);
    }
    let gold_levels: Vec<usize> = task
        .query
        .iter()
        .map(|&e| corpus.essays[e].level(task.trait_idx).expect("query essays are labeled"))
        .collect();
    let qwk = qwk(&gold_levels, &predicted_levels, task.n_levels)?;
    let predicted_scores = predicted_levels.iter().map(|&l| tr.reported_value(task.query_prompt, l)).collect();
    let mut support_essays: Vec<usize> = task.support.iter().flatten().copied().collect();
    support_essays.sort_unstable();
    Ok(TaskScore {
        trait_idx: task.trait_idx,
        query_prompt: task.query_prompt,
        essays: task.query.clone(),
        gold_levels,
        predicted_levels,
        predicted_scores,
        qwk,
        support_prompts: task.support_prompts(corpus),
        support_essays,
    })
}

/// Meta-tests one task: eval-mode encoding, prototypes over the full support
/// pools, nearest-prototype prediction.
pub fn score_task(params: &HeadParams, inputs: &InputTable<'_>, task: &MetaTestTask) -> Result<TaskScore> {
    if task.support.is_empty() {
        return Err(Error::NoPrototypes);
    }
    let t = task.trait_idx;
    let support: Vec<Vec<Vec<f64>>> = task
        .support
        .iter()
        .map(|c| c.iter().map(|&e| inputs.encode(params, e, t)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let support_refs: Vec<Vec<&[f64]>> = support.iter().map(|c| c.iter().map(Vec::as_slice).collect()).collect();
    let query: Vec<Vec<f64>> = task.query.iter().map(|&e| inputs.encode(params, e, t)).collect::<Result<_>>()?;
    score_encoded(inputs.corpus(), task, &support_refs, &query)
}

/// Scores every query, drawing support from `support_candidates`. Queries
/// whose trait has no labeled candidate outside their prompt are skipped.
pub fn score_queries(
    params: &HeadParams,
    inputs: &InputTable<'_>,
    queries: &[QuerySpec],
    support_candidates: &[usize],
) -> Result<Vec<TaskScore>> {
    let corpus = inputs.corpus();
    // representations are per (essay, trait); encode each support essay once
    let mut cache: BTreeMap<usize, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let task = match build_meta_test(corpus, q.trait_idx, q.prompt, &q.essays, support_candidates) {
            Ok(task) => task,
            Err(Error::NoTrainingEssays { .. }) => continue,
            Err(e) => return Err(e),
        };
        let reps = cache.entry(q.trait_idx).or_default();
        for &e in task.support.iter().flatten() {
            if let btree_map::Entry::Vacant(slot) = reps.entry(e) {
                slot.insert(inputs.encode(params, e, q.trait_idx)?);
            }
        }
        let support: Vec<Vec<&[f64]>> =
            task.support.iter().map(|c| c.iter().map(|e| reps[e].as_slice()).collect()).collect();
        let query: Vec<Vec<f64>> =
            task.query.iter().map(|&e| inputs.encode(params, e, q.trait_idx)).collect::<Result<_>>()?;
        out.push(score_encoded(corpus, &task, &support, &query)?);
    }
    Ok(out)
}

pub fn mean_qwk(scores: &[TaskScore]) -> Option<f64> {
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().map(|s| s.qwk).sum::<f64>() / scores.len() as f64)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// QWK matrix over prompts and traits. Unannotated cells are `None` and
/// never enter an average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub prompts: Vec<String>,
    pub traits: Vec<String>,
    /// `cells[prompt][trait]`.
    pub cells: Vec<Vec<Option<f64>>>,
    pub holistic: Option<usize>,
}

impl EvalReport {
    pub fn empty(corpus: &Corpus, holistic: Option<&str>) -> Result<Self> {
        let holistic = holistic
            .map(|h| corpus.trait_index(h).ok_or_else(|| Error::UnknownTrait(h.into())))
            .transpose()?;
        Ok(EvalReport {
            prompts: corpus.prompts.iter().map(|p| p.id.clone()).collect(),
            traits: corpus.traits.iter().map(|t| t.id.clone()).collect(),
            cells: vec![vec![None; corpus.traits.len()]; corpus.prompts.len()],
            holistic,
        })
    }

    pub fn from_scores(corpus: &Corpus, scores: &[TaskScore], holistic: Option<&str>) -> Result<Self> {
        let mut r = Self::empty(corpus, holistic)?;
        for s in scores {
            r.cells[s.query_prompt][s.trait_idx] = Some(s.qwk);
        }
        Ok(r)
    }

    /// Keeps only prompts that have at least one cell.
    pub fn tested_prompts(&self) -> Vec<usize> {
        (0..self.prompts.len()).filter(|&p| self.cells[p].iter().any(Option::is_some)).collect()
    }

    pub fn trait_average(&self, t: usize) -> Option<f64> {
        mean(self.cells.iter().filter_map(|row| row[t]))
    }

    pub fn prompt_average(&self, p: usize) -> Option<f64> {
        mean(self.cells[p].iter().filter_map(|&c| c))
    }

    pub fn grand_average(&self) -> Option<f64> {
        mean(self.cells.iter().flatten().filter_map(|&c| c))
    }

    /// Grand average without the holistic trait's column.
    pub fn average_without_holistic(&self) -> Option<f64> {
        let h = self.holistic?;
        mean(self.cells.iter().flat_map(|row| row.iter().enumerate().filter(move |(t, _)| *t != h).filter_map(|(_, &c)| c)))
    }
}

/// One experiment arm: regime, ablation flags and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub regime: Regime,
    /// Concatenate prompt and rubric embeddings.
    pub use_context: bool,
    /// Concatenate the normalised feature vector.
    pub use_features: bool,
    pub dropout_rate: f64,
    /// Trait excluded from the second grand average.
    pub holistic_trait: Option<String>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            regime: Regime::default(),
            use_context: true,
            use_features: false,
            dropout_rate: 0.5,
            holistic_trait: None,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn head_config(&self, corpus: &Corpus) -> HeadConfig {
        HeadConfig {
            d: corpus.d,
            d_u: if self.use_features { corpus.d_u } else { 0 },
            use_context: self.use_context,
            dropout_rate: self.dropout_rate,
        }
    }
}

/// What one fold touched, by id, for leakage audits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub fold: usize,
    pub test_prompts: Vec<String>,
    pub dev_prompts: Vec<String>,
    pub train_prompts: Vec<String>,
    pub episodes: usize,
    pub episode_prompts: Vec<String>,
    pub episode_essays: Vec<String>,
    pub support_prompts: Vec<String>,
    pub support_essays: Vec<String>,
    /// Test-prompt essays found in an episode or a support pool.
    pub leaked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub split: Split,
    pub scores: Vec<TaskScore>,
    pub audit: FoldAudit,
    /// `None` when a checkpoint was supplied.
    pub training: Option<TrainOutcome>,
    pub checkpoint: Checkpoint,
}

fn prompt_ids(corpus: &Corpus, ps: impl IntoIterator<Item = usize>) -> Vec<String> {
    ps.into_iter().map(|p| corpus.prompts[p].id.clone()).collect()
}

/// Trains (or reuses `checkpoint`) and meta-tests one fold.
pub fn run_fold(
    corpus: &Corpus,
    fold: usize,
    spec: &SplitSpec,
    experiment: &ExperimentConfig,
    checkpoint: Option<&Checkpoint>,
    observer: &mut dyn FnMut(&Episode),
) -> Result<FoldOutcome> {
    let split = spec.resolve(corpus)?;
    let train_essays = split.train_essays();
    let normalizer = if experiment.use_features {
        Some(FeatureNormalizer::fit(corpus, &train_essays)?)
    } else {
        None
    };
    let head = experiment.head_config(corpus);
    let inputs = InputTable::new(corpus, head, normalizer.as_ref())?;

    let mut episodes = 0usize;
    let mut episode_prompts = BTreeSet::new();
    let mut episode_essays = BTreeSet::new();
    let (checkpoint, training) = match checkpoint {
        Some(c) => {
            if c.head != head || !c.params.matches(&head) {
                return Err(Error::InvalidConfig("checkpoint head does not match the experiment".into()));
            }
            (c.clone(), None)
        }
        None => {
            let outcome = train(&inputs, &split, experiment.regime, &experiment.train, &mut |ep| {
                episodes += 1;
                for e in ep.essays() {
                    episode_essays.insert(e);
                    episode_prompts.insert(corpus.essays[e].prompt);
                }
                observer(ep);
            })?;
            (outcome.best.clone(), Some(outcome))
        }
    };
    let scores = score_queries(&checkpoint.params, &inputs, &split.test_queries(corpus), &train_essays)?;

    let support_essays: BTreeSet<usize> = scores.iter().flat_map(|s| s.support_essays.iter().copied()).collect();
    let support_prompts: BTreeSet<usize> = support_essays.iter().map(|&e| corpus.essays[e].prompt).collect();
    let is_test = |e: &&usize| split.test_prompts.contains(&corpus.essays[**e].prompt);
    let leaked = episode_essays.iter().filter(is_test).count() + support_essays.iter().filter(is_test).count();
    let essay_ids = |s: &BTreeSet<usize>| s.iter().map(|&e| corpus.essays[e].id.clone()).collect();
    let audit = FoldAudit {
        fold,
        test_prompts: prompt_ids(corpus, split.test_prompts.iter().copied()),
        dev_prompts: prompt_ids(corpus, split.dev_prompts.iter().copied()),
        train_prompts: prompt_ids(corpus, split.train_prompts.iter().copied()),
        episodes,
        episode_prompts: prompt_ids(corpus, episode_prompts.iter().copied()),
        episode_essays: essay_ids(&episode_essays),
        support_prompts: prompt_ids(corpus, support_prompts.iter().copied()),
        support_essays: essay_ids(&support_essays),
        leaked,
    };
    Ok(FoldOutcome { split, scores, audit, training, checkpoint })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub report: EvalReport,
    pub folds: Vec<FoldOutcome>,
}

/// Checks that no prompt is tested by two folds.
pub fn check_disjoint(folds: &[SplitSpec]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for f in folds {
        for p in &f.test_prompts {
            if !seen.insert(p.as_str()) {
                return Err(Error::InvalidSplit(alloc::format!("prompt {p} is tested by more than one fold")));
            }
        }
    }
    Ok(())
}

/// Folds in order, one trained head per fold.
pub fn run_cv(corpus: &Corpus, folds: &[SplitSpec], experiment: &ExperimentConfig) -> Result<CvOutcome> {
    check_disjoint(folds)?;
    let folds = folds
        .iter()
        .enumerate()
        .map(|(i, spec)| run_fold(corpus, i, spec, experiment, None, &mut |_| {}))
        .collect::<Result<Vec<_>>>()?;
    assemble(corpus, folds, experiment)
}

/// Builds the report from finished folds.
pub fn assemble(corpus: &Corpus, folds: Vec<FoldOutcome>, experiment: &ExperimentConfig) -> Result<CvOutcome> {
    let scores: Vec<TaskScore> = folds.iter().flat_map(|f| f.scores.iter().cloned()).collect();
    let report = EvalReport::from_scores(corpus, &scores, experiment.holistic_trait.as_deref())?;
    Ok(CvOutcome { report, folds })
}
