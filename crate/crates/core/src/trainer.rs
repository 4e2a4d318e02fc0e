//! Meta-training loop: batched episodes, Adam on the fusion head, periodic
//! dev meta-testing and dev-best checkpoint selection.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FeatureNormalizer};
use crate::episodes::{Episode, EpisodeConfig, EpisodeSampler, NegativeClass, Regime};
use crate::error::{Error, Result};
use crate::eval::{self, TaskScore};
use crate::fusion::{self, backward_into, forward, HeadConfig, HeadInput, HeadParams, Mode};
use crate::math::Fnv;
use crate::optim::{AdamConfig, AdamState};
use crate::proto::{episode_loss, EpisodeLossResult};
use crate::split::{QuerySpec, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub k: usize,
    pub m: usize,
    pub max_classes: usize,
    /// Episodes to train on; rounded up to whole batches.
    pub total_tasks: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Tasks between dev evaluations.
    pub dev_every: usize,
    pub seed: u64,
    pub negative_class: NegativeClass,
    /// Global gradient-norm clip; off when `None`.
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 5,
            m: 5,
            max_classes: 5,
            total_tasks: 30_000,
            batch_size: 12,
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dev_every: 1000,
            seed: 0,
            negative_class: NegativeClass::Pooled,
            clip_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("adam constants out of range");
        }
        if self.dev_every == 0 {
            return bad("dev_every must be at least 1");
        }
        if matches!(self.clip_grad_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_grad_norm must be positive");
        }
        if self.k == 0 || self.m == 0 || self.max_classes < 2 {
            return bad("k, m must be positive and max_classes at least 2");
        }
        Ok(())
    }

    /// Number of optimizer steps, `ceil(total_tasks / batch_size)`.
    pub fn steps(&self) -> usize {
        self.total_tasks.div_ceil(self.batch_size)
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig { k: self.k, m: self.m, max_classes: self.max_classes, negative: self.negative_class }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }

    pub fn fingerprint(&self, head: &HeadConfig, regime: &Regime) -> u64 {
        let mut h = Fnv::new();
        for v in [self.k, self.m, self.max_classes, self.total_tasks, self.batch_size, self.dev_every] {
            h.write_u64(v as u64);
        }
        for v in [self.learning_rate, self.beta1, self.beta2, self.epsilon, self.clip_grad_norm.unwrap_or(-1.0)] {
            h.write_f64(v);
        }
        h.write_u64(self.seed);
        h.write_u64(self.negative_class as u64);
        h.write_u64(head.d as u64);
        h.write_u64(head.d_u as u64);
        h.write_u64(u64::from(head.use_context));
        h.write_f64(head.dropout_rate);
        h.write_u64(regime.classification as u64);
        h.write_u64(regime.support as u64);
        h.finish()
    }
}

/// Independent sub-seed for one purpose (init, sampling, dropout).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the episode sampler used by training with `seed`.
pub fn sampler_seed(seed: u64) -> u64 {
    derive_seed(seed, SAMPLER_STREAM)
}

const INIT_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

/// Head inputs per essay for one fold: embeddings plus normalised features.
pub struct InputTable<'c> {
    corpus: &'c Corpus,
    config: HeadConfig,
    features: Vec<Option<Vec<f64>>>,
}

impl<'c> InputTable<'c> {
    pub fn new(corpus: &'c Corpus, config: HeadConfig, normalizer: Option<&FeatureNormalizer>) -> Result<Self> {
        config.validate()?;
        if config.d != corpus.d {
            return Err(Error::DimensionMismatch { what: "head d vs corpus d".into(), expected: corpus.d, found: config.d });
        }
        if config.use_context {
            corpus.require_context()?;
        }
        let features = if config.d_u > 0 {
            if config.d_u != corpus.d_u {
                return Err(Error::DimensionMismatch { what: "head d_u vs corpus d_u".into(), expected: corpus.d_u, found: config.d_u });
            }
            corpus
                .essays
                .iter()
                .map(|e| {
                    let f = e.features.as_deref().ok_or_else(|| Error::MissingFeatures(e.id.clone()))?;
                    Ok(Some(match normalizer {
                        Some(n) => n.apply(f),
                        None => f.to_vec(),
                    }))
                })
                .collect::<Result<_>>()?
        } else {
            vec![None; corpus.essays.len()]
        };
        Ok(InputTable { corpus, config, features })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn corpus(&self) -> &'c Corpus {
        self.corpus
    }

    pub fn input(&self, essay: usize, trait_idx: usize) -> HeadInput<'_> {
        let e = &self.corpus.essays[essay];
        let (prompt, rubric) = if self.config.use_context {
            (
                self.corpus.prompts[e.prompt].embedding.as_deref(),
                self.corpus.traits[trait_idx].rubric_embedding.as_deref(),
            )
        } else {
            (None, None)
        };
        HeadInput { essay: &e.embedding, prompt, rubric, features: self.features[essay].as_deref() }
    }

    /// Eval-mode representation.
    pub fn encode(&self, params: &HeadParams, essay: usize, trait_idx: usize) -> Result<Vec<f64>> {
        forward(params, &self.config, &self.input(essay, trait_idx), Mode::Eval).map(|(out, _)| out)
    }
}

/// Loss of one episode given its shots' head inputs; parameter gradients
/// scaled by `scale` are added into `grads`.
///
/// With `dropout` set, every shot (support and query) runs in train mode.
pub fn shot_loss_and_grad(
    params: &HeadParams,
    config: &HeadConfig,
    support: &[Vec<HeadInput<'_>>],
    queries: &[(HeadInput<'_>, usize)],
    mut dropout: Option<&mut dyn RngCore>,
    grads: &mut HeadParams,
    scale: f64,
) -> Result<EpisodeLossResult> {
    let mut run = |input: &HeadInput<'_>| {
        let mode = match dropout.as_mut() {
            Some(r) => Mode::Train(&mut **r),
            None => Mode::Eval,
        };
        forward(params, config, input, mode)
    };
    let mut support_out = Vec::with_capacity(support.len());
    let mut support_traces = Vec::with_capacity(support.len());
    for class in support {
        let mut outs = Vec::with_capacity(class.len());
        let mut traces = Vec::with_capacity(class.len());
        for input in class {
            let (o, t) = run(input)?;
            outs.push(o);
            traces.push(t);
        }
        support_out.push(outs);
        support_traces.push(traces);
    }
    let mut query_out = Vec::with_capacity(queries.len());
    let mut query_traces = Vec::with_capacity(queries.len());
    for (input, label) in queries {
        let (o, t) = run(input)?;
        query_out.push((o, *label));
        query_traces.push(t);
    }
    let result = episode_loss(&query_out, &support_out)?;
    let mut upstream = vec![0.0; config.d];
    for (trace, g) in query_traces.iter().zip(&result.query_grads) {
        upstream.iter_mut().zip(g).for_each(|(u, x)| *u = x * scale);
        backward_into(trace, params, &upstream, grads)?;
    }
    for (traces, gs) in support_traces.iter().zip(&result.support_grads) {
        for (trace, g) in traces.iter().zip(gs) {
            upstream.iter_mut().zip(g).for_each(|(u, x)| *u = x * scale);
            backward_into(trace, params, &upstream, grads)?;
        }
    }
    Ok(result)
}

/// [`shot_loss_and_grad`] for a sampled episode.
pub fn episode_loss_and_grad(
    params: &HeadParams,
    inputs: &InputTable<'_>,
    episode: &Episode,
    dropout: Option<&mut dyn RngCore>,
    grads: &mut HeadParams,
    scale: f64,
) -> Result<EpisodeLossResult> {
    let t = episode.trait_idx;
    let support: Vec<Vec<HeadInput<'_>>> =
        episode.support.iter().map(|c| c.iter().map(|&e| inputs.input(e, t)).collect()).collect();
    let queries: Vec<(HeadInput<'_>, usize)> = episode
        .query
        .iter()
        .enumerate()
        .flat_map(|(c, es)| es.iter().map(move |&e| (c, e)))
        .map(|(c, e)| (inputs.input(e, t), c))
        .collect();
    shot_loss_and_grad(params, inputs.config(), &support, &queries, dropout, grads, scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: HeadParams,
    pub head: HeadConfig,
    /// Dev QWK average at the time of the snapshot.
    pub dev_qwk: Option<f64>,
    pub tasks_seen: usize,
    pub config_hash: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub tasks_seen: usize,
    pub batch_loss: Option<f64>,
    pub dev_qwk_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub final_params: HeadParams,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn dev_series(&self) -> impl Iterator<Item = f64> + '_ {
        self.log.iter().filter_map(|r| r.dev_qwk_avg)
    }
}

/// Mean QWK over the dev queries of `split`; `None` when there are none.
pub fn dev_score(
    params: &HeadParams,
    inputs: &InputTable<'_>,
    split: &Split,
    dev_queries: &[QuerySpec],
) -> Result<Option<f64>> {
    let scores = eval::score_queries(params, inputs, dev_queries, &split.train_essays())?;
    Ok(eval::mean_qwk(&scores))
}

/// Trains a fresh head on the train-role essays of `split`.
///
/// `observer` sees every sampled episode in order.
pub fn train(
    inputs: &InputTable<'_>,
    split: &Split,
    regime: Regime,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&Episode),
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train_prompts.len() < 2 {
        return Err(Error::InvalidSplit("meta-training needs at least 2 training prompts".into()));
    }
    let head = *inputs.config();
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, INIT_STREAM));
    let params = fusion::init_params(&head, &mut init_rng);
    train_from(inputs, split, regime, config, params, observer)
}

/// As [`train`], starting from the given parameters.
pub fn train_from(
    inputs: &InputTable<'_>,
    split: &Split,
    regime: Regime,
    config: &TrainConfig,
    mut params: HeadParams,
    observer: &mut dyn FnMut(&Episode),
) -> Result<TrainOutcome> {
    config.validate()?;
    let corpus = inputs.corpus();
    let head = *inputs.config();
    let train_essays = split.train_essays();
    let mut sampler = EpisodeSampler::new(
        corpus,
        &train_essays,
        regime,
        config.episode_config(),
        sampler_seed(config.seed),
    )?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, DROPOUT_STREAM));
    let adam = config.adam();
    let mut state = AdamState::new(params.as_slice().len());
    let mut grads = HeadParams::zeros(&head);
    let dev_queries = split.dev_queries(corpus);
    let hash = config.fingerprint(&head, &regime);

    let mut log = Vec::with_capacity(config.steps() + 1);
    let initial = dev_score(&params, inputs, split, &dev_queries)?;
    log.push(LogRow { step: 0, tasks_seen: 0, batch_loss: None, dev_qwk_avg: initial });
    let mut best = Checkpoint { params: params.clone(), head, dev_qwk: initial, tasks_seen: 0, config_hash: hash };

    let scale = 1.0 / config.batch_size as f64;
    let steps = config.steps();
    let mut tasks_seen = 0;
    for step in 1..=steps {
        grads.fill(0.0);
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            let episode = sampler.sample()?;
            observer(&episode);
            let r = episode_loss_and_grad(&params, inputs, &episode, Some(&mut dropout_rng), &mut grads, scale)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { step },
                    other => other,
                })?;
            batch_loss += r.loss * scale;
        }
        if !batch_loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        if let Some(max) = config.clip_grad_norm {
            let norm = grads.norm();
            if norm > max {
                grads.scale(max / norm);
            }
        }
        state
            .step(params.as_mut_slice(), grads.as_slice(), &adam)
            .map_err(|_| Error::Diverged { step })?;
        let before = tasks_seen;
        tasks_seen += config.batch_size;
        let due = tasks_seen / config.dev_every > before / config.dev_every || step == steps;
        let dev = if due { dev_score(&params, inputs, split, &dev_queries)? } else { None };
        if let (Some(q), Some(b)) = (dev, best.dev_qwk) {
            if q > b {
                best = Checkpoint { params: params.clone(), head, dev_qwk: Some(q), tasks_seen, config_hash: hash };
            }
        } else if initial.is_none() && step == steps {
            best = Checkpoint { params: params.clone(), head, dev_qwk: None, tasks_seen, config_hash: hash };
        }
        log.push(LogRow { step, tasks_seen, batch_loss: Some(batch_loss), dev_qwk_avg: dev });
    }
    Ok(TrainOutcome { best, final_params: params, log })
}

/// Dev/test scores of a fixed head over `queries`.
pub fn score(params: &HeadParams, inputs: &InputTable<'_>, queries: &[QuerySpec], support: &[usize]) -> Result<Vec<TaskScore>> {
    eval::score_queries(params, inputs, queries, support)
}
