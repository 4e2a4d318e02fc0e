//! Corpus data model: prompts, traits, score scales, essays and their vectors.
//!
//! A [`Corpus`] is built once from a [`CorpusSpec`] (the raw, unvalidated
//! ingest produced by the IO layer) and is immutable afterwards. Labels are
//! stored as level indices into the trait's cross-prompt level space: the
//! sorted union of every prompt's (possibly shifted) scale values.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when matching a decimal score to a scale value.
pub const SCORE_TOLERANCE: f64 = 1e-9;

/// Standard deviations below this are treated as constant features.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Ordered list of admissible score values; level `i` is `values[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreScale {
    values: Vec<f64>,
}

impl ScoreScale {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidScale(format!(
                "need at least 2 levels, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScale("non-finite scale value".into()));
        }
        if values.windows(2).any(|w| w[1] - w[0] <= 2.0 * SCORE_TOLERANCE) {
            return Err(Error::InvalidScale(
                "scale values must be strictly increasing".into(),
            ));
        }
        Ok(ScoreScale { values })
    }

    /// Evenly spaced scale `min, min + step, …, max`.
    pub fn stepped(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !min.is_finite() || !max.is_finite() || max <= min {
            return Err(Error::InvalidScale(format!(
                "bad range {min}..{max} step {step}"
            )));
        }
        let n = libm::round((max - min) / step);
        if libm::fabs(min + n * step - max) > SCORE_TOLERANCE {
            return Err(Error::InvalidScale(format!(
                "{max} is not reachable from {min} in steps of {step}"
            )));
        }
        let n = n as usize;
        ScoreScale::new((0..=n).map(|i| min + i as f64 * step).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, level: usize) -> f64 {
        self.values[level]
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn level_of(&self, score: f64) -> Result<usize> {
        level_of(score, self)
    }

    /// Same scale with `offset` subtracted from every value.
    pub fn shifted(&self, offset: f64) -> ScoreScale {
        ScoreScale {
            values: self.values.iter().map(|v| v - offset).collect(),
        }
    }

    fn union<'a>(scales: impl IntoIterator<Item = &'a ScoreScale>) -> Option<ScoreScale> {
        let mut all: Vec<f64> = scales.into_iter().flat_map(|s| s.values.iter().copied()).collect();
        all.sort_by(f64::total_cmp);
        let mut merged: Vec<f64> = Vec::with_capacity(all.len());
        for v in all {
            match merged.last() {
                Some(&last) if v - last <= SCORE_TOLERANCE => {}
                _ => merged.push(v),
            }
        }
        (merged.len() >= 2).then_some(ScoreScale { values: merged })
    }
}

impl TryFrom<Vec<f64>> for ScoreScale {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ScoreScale::new(values)
    }
}

impl From<ScoreScale> for Vec<f64> {
    fn from(s: ScoreScale) -> Self {
        s.values
    }
}

/// Index of the scale value within [`SCORE_TOLERANCE`] of `score`.
pub fn level_of(score: f64, scale: &ScoreScale) -> Result<usize> {
    let off = || Error::OffScale {
        score,
        context: format!("scale {:?}", scale.values),
    };
    if !score.is_finite() {
        return Err(off());
    }
    let values = &scale.values;
    let idx = values.partition_point(|&v| v < score);
    let candidates = [idx.checked_sub(1), Some(idx)];
    candidates
        .into_iter()
        .flatten()
        .filter(|&i| i < values.len())
        .find(|&i| libm::fabs(values[i] - score) <= SCORE_TOLERANCE)
        .ok_or_else(off)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftPolicy {
    #[default]
    None,
    ShiftToZero,
}

/// Raw trait declaration prior to validation.
#[derive(Debug, Clone, Default)]
pub struct RawTrait {
    pub id: String,
    pub rubric_embedding: Option<Vec<f64>>,
    /// Scale applied to every prompt without an explicit override.
    pub scale: Option<ScoreScale>,
    pub prompt_scales: Vec<(String, ScoreScale)>,
}

#[derive(Debug, Clone, Default)]
pub struct RawPrompt {
    pub id: String,
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct RawEssay {
    pub id: String,
    pub prompt_id: String,
    pub embedding: Vec<f64>,
    pub features: Option<Vec<f64>>,
    /// `(trait_id, score)` in the original (unshifted) units.
    pub labels: Vec<(String, f64)>,
}

/// Unvalidated corpus contents, as assembled by an ingestion layer.
#[derive(Debug, Clone, Default)]
pub struct CorpusSpec {
    pub name: String,
    pub d: usize,
    pub d_u: usize,
    pub shift: ShiftPolicy,
    pub traits: Vec<RawTrait>,
    pub prompts: Vec<RawPrompt>,
    pub essays: Vec<RawEssay>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trait {
    pub id: String,
    pub rubric_embedding: Option<Vec<f64>>,
    /// Stored (post-shift) scale per prompt; `None` where undeclared.
    pub scales: Vec<Option<ScoreScale>>,
    /// Value added back to stored scores for reporting, per prompt.
    pub offsets: Vec<f64>,
    /// Cross-prompt level space.
    pub levels: ScoreScale,
    /// Prompts with at least one essay labeled on this trait, ascending.
    pub prompts: Vec<usize>,
}

impl Trait {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn annotates(&self, prompt: usize) -> bool {
        self.prompts.binary_search(&prompt).is_ok()
    }

    /// Score in original units for a level predicted on `prompt`.
    pub fn reported_value(&self, prompt: usize, level: usize) -> f64 {
        self.levels.value(level) + self.offsets[prompt]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub id: String,
    pub embedding: Option<Vec<f64>>,
    pub essays: Vec<usize>,
    pub traits: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    /// Stored value (after shift).
    pub value: f64,
    /// Index into the trait's level space.
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Essay {
    pub id: String,
    pub prompt: usize,
    pub embedding: Vec<f64>,
    pub features: Option<Vec<f64>>,
    /// Indexed by trait; `None` where unannotated.
    pub labels: Vec<Option<Label>>,
}

impl Essay {
    pub fn level(&self, trait_idx: usize) -> Option<usize> {
        self.labels[trait_idx].map(|l| l.level)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub name: String,
    pub d: usize,
    pub d_u: usize,
    pub shift: ShiftPolicy,
    pub traits: Vec<Trait>,
    pub prompts: Vec<Prompt>,
    pub essays: Vec<Essay>,
    essay_ids: BTreeMap<String, usize>,
    pools: PoolIndex,
}

fn check_dim(what: impl FnOnce() -> String, expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            what: what(),
            expected,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("embedding or feature vector"));
    }
    Ok(())
}

impl Corpus {
    /// Validates `spec` and builds the immutable corpus.
    pub fn build(spec: CorpusSpec) -> Result<Corpus> {
        let CorpusSpec {
            name,
            d,
            d_u,
            shift,
            traits: raw_traits,
            prompts: raw_prompts,
            essays: raw_essays,
        } = spec;
        if d == 0 {
            return Err(Error::InvalidConfig("embedding dimension d must be > 0".into()));
        }

        let mut prompt_ids = BTreeMap::new();
        for (i, p) in raw_prompts.iter().enumerate() {
            if prompt_ids.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId { kind: "prompt", id: p.id.clone() });
            }
            if let Some(e) = &p.embedding {
                check_dim(|| format!("prompt:{}", p.id), d, e)?;
            }
        }
        let mut trait_ids = BTreeMap::new();
        for (i, t) in raw_traits.iter().enumerate() {
            if trait_ids.insert(t.id.clone(), i).is_some() {
                return Err(Error::DuplicateId { kind: "trait", id: t.id.clone() });
            }
            if let Some(e) = &t.rubric_embedding {
                check_dim(|| format!("rubric:{}", t.id), d, e)?;
            }
        }

        let n_prompts = raw_prompts.len();
        // Original (unshifted) declared scales, [trait][prompt].
        let mut declared: Vec<Vec<Option<ScoreScale>>> = Vec::with_capacity(raw_traits.len());
        for t in &raw_traits {
            let mut per_prompt = vec![t.scale.clone(); n_prompts];
            for (pid, s) in &t.prompt_scales {
                let p = *prompt_ids
                    .get(pid)
                    .ok_or_else(|| Error::UnknownPrompt(pid.clone()))?;
                per_prompt[p] = Some(s.clone());
            }
            declared.push(per_prompt);
        }

        let mut traits: Vec<Trait> = Vec::with_capacity(raw_traits.len());
        for (t, raw) in raw_traits.into_iter().enumerate() {
            let offsets: Vec<f64> = declared[t]
                .iter()
                .map(|s| match (shift, s) {
                    (ShiftPolicy::ShiftToZero, Some(s)) => s.min(),
                    _ => 0.0,
                })
                .collect();
            let scales: Vec<Option<ScoreScale>> = declared[t]
                .iter()
                .zip(&offsets)
                .map(|(s, &off)| s.as_ref().map(|s| s.shifted(off)))
                .collect();
            let levels = ScoreScale::union(scales.iter().flatten()).ok_or_else(|| {
                Error::InvalidScale(format!("trait {} declares no usable scale", raw.id))
            })?;
            traits.push(Trait {
                id: raw.id,
                rubric_embedding: raw.rubric_embedding,
                scales,
                offsets,
                levels,
                prompts: Vec::new(),
            });
        }

        let mut prompts: Vec<Prompt> = raw_prompts
            .into_iter()
            .map(|p| Prompt {
                id: p.id,
                embedding: p.embedding,
                essays: Vec::new(),
                traits: Vec::new(),
            })
            .collect();

        let with_features = raw_essays.iter().filter(|e| e.features.is_some()).count();
        if with_features != 0 && with_features != raw_essays.len() {
            let first = raw_essays.iter().find(|e| e.features.is_none()).unwrap();
            return Err(Error::MixedFeatures(first.id.clone()));
        }

        let mut essay_ids = BTreeMap::new();
        let mut essays = Vec::with_capacity(raw_essays.len());
        for (idx, raw) in raw_essays.into_iter().enumerate() {
            if essay_ids.insert(raw.id.clone(), idx).is_some() {
                return Err(Error::DuplicateEssay(raw.id));
            }
            let p = *prompt_ids
                .get(&raw.prompt_id)
                .ok_or_else(|| Error::UnknownPrompt(format!("{} (essay {})", raw.prompt_id, raw.id)))?;
            check_dim(|| format!("essay:{}", raw.id), d, &raw.embedding)?;
            if let Some(f) = &raw.features {
                check_dim(|| format!("features of essay {}", raw.id), d_u, f)?;
            }
            let mut labels = vec![None; traits.len()];
            for (tid, score) in &raw.labels {
                let t = *trait_ids
                    .get(tid)
                    .ok_or_else(|| Error::UnknownTrait(tid.clone()))?;
                let original = declared[t][p].as_ref().ok_or_else(|| Error::MissingScale {
                    trait_id: tid.clone(),
                    prompt_id: raw.prompt_id.clone(),
                })?;
                original.level_of(*score).map_err(|_| Error::OffScale {
                    score: *score,
                    context: format!("essay {} trait {} prompt {}", raw.id, tid, raw.prompt_id),
                })?;
                let tr = &traits[t];
                let stored = *score - tr.offsets[p];
                let level = tr.levels.level_of(stored)?;
                // Snap to the canonical scale value so serialisation is exact.
                let local = tr.scales[p].as_ref().unwrap();
                let value = local.value(local.level_of(stored)?);
                labels[t] = Some(Label { value, level });
            }
            prompts[p].essays.push(idx);
            essays.push(Essay {
                id: raw.id,
                prompt: p,
                embedding: raw.embedding,
                features: raw.features,
                labels,
            });
        }

        for p in &prompts {
            if p.essays.is_empty() {
                return Err(Error::EmptyPrompt(p.id.clone()));
            }
        }
        for (t, tr) in traits.iter_mut().enumerate() {
            for (p, prompt) in prompts.iter_mut().enumerate() {
                if prompt.essays.iter().any(|&e| essays[e].labels[t].is_some()) {
                    tr.prompts.push(p);
                    prompt.traits.push(t);
                }
            }
        }

        let mut corpus = Corpus {
            name,
            d,
            d_u: if with_features > 0 { d_u } else { 0 },
            shift,
            traits,
            prompts,
            essays,
            essay_ids,
            pools: PoolIndex::default(),
        };
        corpus.pools = PoolIndex::new(&corpus, |_| true);
        Ok(corpus)
    }

    pub fn essay_index(&self, id: &str) -> Option<usize> {
        self.essay_ids.get(id).copied()
    }

    pub fn prompt_index(&self, id: &str) -> Option<usize> {
        self.prompts.iter().position(|p| p.id == id)
    }

    pub fn trait_index(&self, id: &str) -> Option<usize> {
        self.traits.iter().position(|t| t.id == id)
    }

    pub fn has_features(&self) -> bool {
        self.d_u > 0
    }

    /// True when every prompt and rubric embedding is present.
    pub fn has_context(&self) -> bool {
        self.prompts.iter().all(|p| p.embedding.is_some())
            && self.traits.iter().all(|t| t.rubric_embedding.is_some())
    }

    pub fn require_context(&self) -> Result<()> {
        if let Some(p) = self.prompts.iter().find(|p| p.embedding.is_none()) {
            return Err(Error::MissingContext(format!("prompt:{}", p.id)));
        }
        if let Some(t) = self.traits.iter().find(|t| t.rubric_embedding.is_none()) {
            return Err(Error::MissingContext(format!("rubric:{}", t.id)));
        }
        Ok(())
    }

    /// Essays labeled `level` on `trait_idx`, restricted by `filter`, in corpus order.
    pub fn pool(&self, trait_idx: usize, level: usize, filter: &PromptFilter) -> Vec<usize> {
        self.pools.pool(trait_idx, level, filter)
    }

    pub fn pools(&self) -> &PoolIndex {
        &self.pools
    }

    /// Original-unit score recorded for an essay, undoing any shift.
    pub fn original_label(&self, essay: usize, trait_idx: usize) -> Option<f64> {
        let e = &self.essays[essay];
        e.labels[trait_idx].map(|l| l.value + self.traits[trait_idx].offsets[e.prompt])
    }

    /// Declared scale for `(trait, prompt)` in original units.
    pub fn original_scale(&self, trait_idx: usize, prompt: usize) -> Option<ScoreScale> {
        let t = &self.traits[trait_idx];
        t.scales[prompt].as_ref().map(|s| s.shifted(-t.offsets[prompt]))
    }
}

/// Which prompts a pool query may draw from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptFilter {
    All,
    Include(Vec<usize>),
    Exclude(Vec<usize>),
}

impl PromptFilter {
    pub fn admits(&self, prompt: usize) -> bool {
        match self {
            PromptFilter::All => true,
            PromptFilter::Include(ps) => ps.contains(&prompt),
            PromptFilter::Exclude(ps) => !ps.contains(&prompt),
        }
    }
}

/// Essay lists bucketed by `[trait][prompt][level]` over an essay subset.
#[derive(Debug, Clone, Default)]
pub struct PoolIndex {
    buckets: Vec<Vec<Vec<Vec<usize>>>>,
}

impl PoolIndex {
    pub fn new(corpus: &Corpus, include: impl Fn(usize) -> bool) -> Self {
        let mut buckets: Vec<Vec<Vec<Vec<usize>>>> = corpus
            .traits
            .iter()
            .map(|t| vec![vec![Vec::new(); t.n_levels()]; corpus.prompts.len()])
            .collect();
        for (i, e) in corpus.essays.iter().enumerate() {
            if !include(i) {
                continue;
            }
            for (t, label) in e.labels.iter().enumerate() {
                if let Some(l) = label {
                    buckets[t][e.prompt][l.level].push(i);
                }
            }
        }
        PoolIndex { buckets }
    }

    pub fn prompt_pool(&self, trait_idx: usize, prompt: usize, level: usize) -> &[usize] {
        &self.buckets[trait_idx][prompt][level]
    }

    pub fn count(&self, trait_idx: usize, prompt: usize, level: usize) -> usize {
        self.buckets[trait_idx][prompt][level].len()
    }

    pub fn n_levels(&self, trait_idx: usize) -> usize {
        self.buckets[trait_idx].first().map_or(0, Vec::len)
    }

    pub fn n_prompts(&self) -> usize {
        self.buckets.first().map_or(0, Vec::len)
    }

    pub fn pool(&self, trait_idx: usize, level: usize, filter: &PromptFilter) -> Vec<usize> {
        let mut out: Vec<usize> = self.buckets[trait_idx]
            .iter()
            .enumerate()
            .filter(|(p, _)| filter.admits(*p))
            .flat_map(|(_, levels)| levels[level].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Total essays in the subset labeled on `trait_idx` for `prompt`.
    pub fn prompt_total(&self, trait_idx: usize, prompt: usize) -> usize {
        self.buckets[trait_idx][prompt].iter().map(Vec::len).sum()
    }
}

/// Per-dimension z-score fitted on training essays only.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn fit(corpus: &Corpus, train: &[usize]) -> Result<Self> {
        let mut ids: Vec<usize> = train.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::Empty("feature normalizer training set"));
        }
        let rows: Vec<&[f64]> = ids
            .iter()
            .map(|&i| {
                corpus.essays[i]
                    .features
                    .as_deref()
                    .ok_or_else(|| Error::MissingFeatures(corpus.essays[i].id.clone()))
            })
            .collect::<Result<_>>()?;
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| libm::sqrt(v / n)).collect();
        Ok(FeatureNormalizer { mean, std })
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| {
                if *s < DEGENERATE_STD {
                    x - m
                } else {
                    (x - m) / s
                }
            })
            .collect()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}

pub fn normalize_features(corpus: &Corpus, train_essay_ids: &[usize]) -> Result<FeatureNormalizer> {
    FeatureNormalizer::fit(corpus, train_essay_ids)
}
