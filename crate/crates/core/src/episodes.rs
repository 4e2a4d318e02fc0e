//! Meta-training episode samplers and meta-testing task construction.
//!
//! Every training episode is cross-prompt: a query prompt is drawn first,
//! then the support shots come from other prompts, either a single one
//! (`OnePrompt`) or the union of all of them (`MultiPrompt`). A (prompt,
//! level) combination is only usable when the support source holds at least
//! `k` essays and the query prompt at least `m`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PoolIndex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Binary,
    Multiclass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportSource {
    OnePrompt,
    MultiPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Regime {
    pub classification: Classification,
    pub support: SupportSource,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime { classification: Classification::Binary, support: SupportSource::OnePrompt },
        Regime { classification: Classification::Binary, support: SupportSource::MultiPrompt },
        Regime { classification: Classification::Multiclass, support: SupportSource::OnePrompt },
        Regime { classification: Classification::Multiclass, support: SupportSource::MultiPrompt },
    ];

    pub fn label(&self) -> &'static str {
        match (self.classification, self.support) {
            (Classification::Binary, SupportSource::OnePrompt) => "binary-1P",
            (Classification::Binary, SupportSource::MultiPrompt) => "binary-mP",
            (Classification::Multiclass, SupportSource::OnePrompt) => "multiclass-1P",
            (Classification::Multiclass, SupportSource::MultiPrompt) => "multiclass-mP",
        }
    }
}

impl Default for Regime {
    fn default() -> Self {
        Regime { classification: Classification::Multiclass, support: SupportSource::MultiPrompt }
    }
}

/// How the negative class of a binary episode is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeClass {
    /// Shots drawn from the union of every level other than the positive one.
    #[default]
    Pooled,
    /// Shots drawn from one other level, chosen uniformly per episode.
    SingleLevel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub k: usize,
    pub m: usize,
    pub max_classes: usize,
    pub negative: NegativeClass,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { k: 5, m: 5, max_classes: 5, negative: NegativeClass::Pooled }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassDescriptor {
    Level(usize),
    /// Negative class pooling every level except the given one.
    AllExcept(usize),
}

/// One meta-training task. Essays are corpus indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub regime: Regime,
    pub trait_idx: usize,
    pub query_prompt: usize,
    /// The single support prompt under `OnePrompt`.
    pub support_prompt: Option<usize>,
    pub classes: Vec<ClassDescriptor>,
    pub support: Vec<Vec<usize>>,
    pub query: Vec<Vec<usize>>,
}

impl Episode {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Distinct prompts of all support shots, ascending.
    pub fn support_prompts(&self, corpus: &Corpus) -> Vec<usize> {
        let mut ps: Vec<usize> =
            self.support.iter().flatten().map(|&e| corpus.essays[e].prompt).collect();
        ps.sort_unstable();
        ps.dedup();
        ps
    }

    pub fn essays(&self) -> impl Iterator<Item = usize> + '_ {
        self.support.iter().flatten().chain(self.query.iter().flatten()).copied()
    }

    /// Positive level for binary episodes.
    pub fn positive_level(&self) -> Option<usize> {
        match (self.regime.classification, self.classes.first()) {
            (Classification::Binary, Some(ClassDescriptor::Level(l))) => Some(*l),
            _ => None,
        }
    }
}

// Sampling plans, precomputed per trait: every stage draws uniformly from
// the options listed for it.
#[derive(Debug, Clone)]
enum QueryPlan {
    /// Valid positive levels; support from the pooled other prompts.
    BinaryMulti(Vec<usize>),
    /// Valid positive levels, each with its admissible support prompts.
    BinaryOne(Vec<(usize, Vec<usize>)>),
    /// Eligible levels (≥ 2).
    MultiMulti(Vec<usize>),
    /// Support prompts, each with its eligible levels (≥ 2).
    MultiOne(Vec<(usize, Vec<usize>)>),
}

#[derive(Debug, Clone, Default)]
struct TraitPlan {
    queries: Vec<(usize, QueryPlan)>,
}

/// Deterministic episode stream over a fixed essay subset.
pub struct EpisodeSampler<'c> {
    corpus: &'c Corpus,
    pools: PoolIndex,
    prompts: Vec<usize>,
    regime: Regime,
    config: EpisodeConfig,
    binary: Vec<TraitPlan>,
    multiclass: Vec<TraitPlan>,
    rng: ChaCha8Rng,
}

impl<'c> EpisodeSampler<'c> {
    /// Sampler drawing only from `essays` (typically the train-role essays of a split).
    pub fn new(
        corpus: &'c Corpus,
        essays: &[usize],
        regime: Regime,
        config: EpisodeConfig,
        seed: u64,
    ) -> Result<Self> {
        if config.k == 0 || config.m == 0 {
            return Err(Error::InvalidConfig("k and m must be positive".into()));
        }
        if config.max_classes < 2 {
            return Err(Error::InvalidConfig("max_classes must be at least 2".into()));
        }
        let mut allowed = vec![false; corpus.essays.len()];
        for &e in essays {
            allowed[e] = true;
        }
        let pools = PoolIndex::new(corpus, |e| allowed[e]);
        let mut prompts: Vec<usize> = essays.iter().map(|&e| corpus.essays[e].prompt).collect();
        prompts.sort_unstable();
        prompts.dedup();
        let mut sampler = EpisodeSampler {
            corpus,
            pools,
            prompts,
            regime,
            config,
            binary: Vec::new(),
            multiclass: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        sampler.binary = (0..corpus.traits.len()).map(|t| sampler.plan(t, Classification::Binary)).collect();
        sampler.multiclass =
            (0..corpus.traits.len()).map(|t| sampler.plan(t, Classification::Multiclass)).collect();
        Ok(sampler)
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn pools(&self) -> &PoolIndex {
        &self.pools
    }

    fn support_count(&self, t: usize, query: usize, level: usize) -> usize {
        self.prompts
            .iter()
            .filter(|&&p| p != query)
            .map(|&p| self.pools.count(t, p, level))
            .sum()
    }

    /// Levels with ≥ m query-prompt essays and ≥ k essays in the regime's support source.
    pub fn eligible_levels(&self, trait_idx: usize, query_prompt: usize) -> Vec<usize> {
        let (k, m) = (self.config.k, self.config.m);
        (0..self.pools.n_levels(trait_idx))
            .filter(|&l| self.pools.count(trait_idx, query_prompt, l) >= m)
            .filter(|&l| match self.regime.support {
                SupportSource::MultiPrompt => self.support_count(trait_idx, query_prompt, l) >= k,
                SupportSource::OnePrompt => self
                    .prompts
                    .iter()
                    .any(|&p| p != query_prompt && self.pools.count(trait_idx, p, l) >= k),
            })
            .collect()
    }

    // Positive-level validity for a binary episode given support counts per level.
    fn binary_valid(&self, query_counts: &[usize], support_counts: &[usize], pos: usize) -> bool {
        let (k, m) = (self.config.k, self.config.m);
        if query_counts[pos] < m || support_counts[pos] < k {
            return false;
        }
        match self.config.negative {
            NegativeClass::Pooled => {
                let q: usize = query_counts.iter().sum::<usize>() - query_counts[pos];
                let s: usize = support_counts.iter().sum::<usize>() - support_counts[pos];
                q >= m && s >= k
            }
            NegativeClass::SingleLevel => (0..query_counts.len())
                .any(|l| l != pos && query_counts[l] >= m && support_counts[l] >= k),
        }
    }

    fn plan(&self, t: usize, classification: Classification) -> TraitPlan {
        let n_levels = self.pools.n_levels(t);
        let (k, m) = (self.config.k, self.config.m);
        let mut queries = Vec::new();
        for &q in &self.prompts {
            let qc: Vec<usize> = (0..n_levels).map(|l| self.pools.count(t, q, l)).collect();
            if qc.iter().all(|&c| c == 0) {
                continue;
            }
            let others: Vec<usize> = self.prompts.iter().copied().filter(|&p| p != q).collect();
            let per_prompt = |p: usize| -> Vec<usize> {
                (0..n_levels).map(|l| self.pools.count(t, p, l)).collect()
            };
            let plan = match (classification, self.regime.support) {
                (Classification::Binary, SupportSource::MultiPrompt) => {
                    let sc: Vec<usize> = (0..n_levels).map(|l| self.support_count(t, q, l)).collect();
                    let levels: Vec<usize> =
                        (0..n_levels).filter(|&l| self.binary_valid(&qc, &sc, l)).collect();
                    (!levels.is_empty()).then_some(QueryPlan::BinaryMulti(levels))
                }
                (Classification::Binary, SupportSource::OnePrompt) => {
                    let counts: Vec<(usize, Vec<usize>)> =
                        others.iter().map(|&p| (p, per_prompt(p))).collect();
                    let levels: Vec<(usize, Vec<usize>)> = (0..n_levels)
                        .filter_map(|l| {
                            let ps: Vec<usize> = counts
                                .iter()
                                .filter(|(_, sc)| self.binary_valid(&qc, sc, l))
                                .map(|(p, _)| *p)
                                .collect();
                            (!ps.is_empty()).then_some((l, ps))
                        })
                        .collect();
                    (!levels.is_empty()).then_some(QueryPlan::BinaryOne(levels))
                }
                (Classification::Multiclass, SupportSource::MultiPrompt) => {
                    let levels = self.eligible_levels(t, q);
                    (levels.len() >= 2).then_some(QueryPlan::MultiMulti(levels))
                }
                (Classification::Multiclass, SupportSource::OnePrompt) => {
                    let supports: Vec<(usize, Vec<usize>)> = others
                        .iter()
                        .filter_map(|&p| {
                            let levels: Vec<usize> = (0..n_levels)
                                .filter(|&l| qc[l] >= m && self.pools.count(t, p, l) >= k)
                                .collect();
                            (levels.len() >= 2).then_some((p, levels))
                        })
                        .collect();
                    (!supports.is_empty()).then_some(QueryPlan::MultiOne(supports))
                }
            };
            if let Some(plan) = plan {
                queries.push((q, plan));
            }
        }
        TraitPlan { queries }
    }

    fn plans(&self, classification: Classification) -> &[TraitPlan] {
        match classification {
            Classification::Binary => &self.binary,
            Classification::Multiclass => &self.multiclass,
        }
    }

    /// Traits able to yield at least one episode under the sampler's regime.
    pub fn available_traits(&self) -> Vec<usize> {
        self.plans(self.regime.classification)
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.queries.is_empty())
            .map(|(t, _)| t)
            .collect()
    }

    /// Draws a trait uniformly among available ones, then an episode for it.
    pub fn sample(&mut self) -> Result<Episode> {
        let traits = self.available_traits();
        if traits.is_empty() {
            return Err(Error::EpisodeUnavailable(format!(
                "no trait supports a {} episode with k={} m={}",
                self.regime.label(),
                self.config.k,
                self.config.m
            )));
        }
        let t = traits[self.rng.gen_range(0..traits.len())];
        match self.regime.classification {
            Classification::Binary => self.sample_binary(t),
            Classification::Multiclass => self.sample_multiclass(t),
        }
    }

    fn unavailable(&self, t: usize, what: &str) -> Error {
        Error::EpisodeUnavailable(format!(
            "trait {} has no eligible {what} task",
            self.corpus.traits[t].id
        ))
    }

    fn draw(&mut self, pool: &[usize], n: usize) -> Vec<usize> {
        index::sample(&mut self.rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
    }

    fn gather(&self, t: usize, prompts: &[usize], levels: impl Fn(usize) -> bool) -> Vec<usize> {
        let mut out = Vec::new();
        for &p in prompts {
            for l in 0..self.pools.n_levels(t) {
                if levels(l) {
                    out.extend_from_slice(self.pools.prompt_pool(t, p, l));
                }
            }
        }
        out
    }

    pub fn sample_binary(&mut self, trait_idx: usize) -> Result<Episode> {
        let n = self.binary[trait_idx].queries.len();
        if n == 0 {
            return Err(self.unavailable(trait_idx, "binary"));
        }
        let pick = self.rng.gen_range(0..n);
        let (q, qp) = self.binary[trait_idx].queries[pick].clone();
        let (pos, support_prompts, support_prompt) = match qp {
            QueryPlan::BinaryMulti(levels) => {
                let l = levels[self.rng.gen_range(0..levels.len())];
                let ps: Vec<usize> = self.prompts.iter().copied().filter(|&p| p != q).collect();
                (l, ps, None)
            }
            QueryPlan::BinaryOne(levels) => {
                let (l, ps) = &levels[self.rng.gen_range(0..levels.len())];
                let p = ps[self.rng.gen_range(0..ps.len())];
                (*l, vec![p], Some(p))
            }
            _ => unreachable!("binary plan"),
        };
        let (k, m) = (self.config.k, self.config.m);
        let negative = match self.config.negative {
            NegativeClass::Pooled => ClassDescriptor::AllExcept(pos),
            NegativeClass::SingleLevel => {
                let options: Vec<usize> = (0..self.pools.n_levels(trait_idx))
                    .filter(|&l| {
                        l != pos
                            && self.pools.count(trait_idx, q, l) >= m
                            && support_prompts.iter().map(|&p| self.pools.count(trait_idx, p, l)).sum::<usize>()
                                >= k
                    })
                    .collect();
                ClassDescriptor::Level(options[self.rng.gen_range(0..options.len())])
            }
        };
        let classes = vec![ClassDescriptor::Level(pos), negative];
        let mut support = Vec::with_capacity(2);
        let mut query = Vec::with_capacity(2);
        for class in &classes {
            let member = |l: usize| match *class {
                ClassDescriptor::Level(c) => l == c,
                ClassDescriptor::AllExcept(c) => l != c,
            };
            let s_pool = self.gather(trait_idx, &support_prompts, member);
            let q_pool = self.gather(trait_idx, &[q], member);
            support.push(self.draw(&s_pool, k));
            query.push(self.draw(&q_pool, m));
        }
        Ok(Episode {
            regime: Regime { classification: Classification::Binary, support: self.regime.support },
            trait_idx,
            query_prompt: q,
            support_prompt,
            classes,
            support,
            query,
        })
    }

    pub fn sample_multiclass(&mut self, trait_idx: usize) -> Result<Episode> {
        let n = self.multiclass[trait_idx].queries.len();
        if n == 0 {
            return Err(self.unavailable(trait_idx, "multiclass"));
        }
        let pick = self.rng.gen_range(0..n);
        let (q, qp) = self.multiclass[trait_idx].queries[pick].clone();
        let (levels, support_prompts, support_prompt) = match qp {
            QueryPlan::MultiMulti(levels) => {
                let ps: Vec<usize> = self.prompts.iter().copied().filter(|&p| p != q).collect();
                (levels, ps, None)
            }
            QueryPlan::MultiOne(options) => {
                let (p, levels) = options[self.rng.gen_range(0..options.len())].clone();
                (levels, vec![p], Some(p))
            }
            _ => unreachable!("multiclass plan"),
        };
        let chosen: Vec<usize> = if levels.len() > self.config.max_classes {
            let mut idx = index::sample(&mut self.rng, levels.len(), self.config.max_classes).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| levels[i]).collect()
        } else {
            levels
        };
        let (k, m) = (self.config.k, self.config.m);
        let mut support = Vec::with_capacity(chosen.len());
        let mut query = Vec::with_capacity(chosen.len());
        for &l in &chosen {
            let s_pool = self.gather(trait_idx, &support_prompts, |x| x == l);
            let q_pool = self.pools.prompt_pool(trait_idx, q, l).to_vec();
            support.push(self.draw(&s_pool, k));
            query.push(self.draw(&q_pool, m));
        }
        Ok(Episode {
            regime: Regime { classification: Classification::Multiclass, support: self.regime.support },
            trait_idx,
            query_prompt: q,
            support_prompt,
            classes: chosen.into_iter().map(ClassDescriptor::Level).collect(),
            support,
            query,
        })
    }
}

/// N-way meta-testing task on one held-out prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaTestTask {
    pub trait_idx: usize,
    pub query_prompt: usize,
    /// Size of the trait's level space (N).
    pub n_levels: usize,
    /// Levels that have a prototype, ascending.
    pub levels: Vec<usize>,
    /// Full training pool per entry of `levels`.
    pub support: Vec<Vec<usize>>,
    pub query: Vec<usize>,
}

impl MetaTestTask {
    pub fn support_prompts(&self, corpus: &Corpus) -> Vec<usize> {
        let mut ps: Vec<usize> =
            self.support.iter().flatten().map(|&e| corpus.essays[e].prompt).collect();
        ps.sort_unstable();
        ps.dedup();
        ps
    }
}

/// Builds the task for `trait_idx` on `query_prompt`.
///
/// `query_essays` is filtered to essays of the query prompt labeled on the
/// trait; support is every candidate labeled on the trait from any other
/// prompt, grouped by level. Levels without training essays get no prototype.
pub fn build_meta_test(
    corpus: &Corpus,
    trait_idx: usize,
    query_prompt: usize,
    query_essays: &[usize],
    support_candidates: &[usize],
) -> Result<MetaTestTask> {
    let tr = &corpus.traits[trait_idx];
    let n_levels = tr.n_levels();
    let query: Vec<usize> = query_essays
        .iter()
        .copied()
        .filter(|&e| corpus.essays[e].prompt == query_prompt && corpus.essays[e].labels[trait_idx].is_some())
        .collect();
    if query.is_empty() {
        return Err(Error::Empty("meta-test query set"));
    }
    let mut candidates = support_candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); n_levels];
    for e in candidates {
        let essay = &corpus.essays[e];
        if essay.prompt == query_prompt {
            continue;
        }
        if let Some(l) = essay.level(trait_idx) {
            by_level[l].push(e);
        }
    }
    let (levels, support): (Vec<usize>, Vec<Vec<usize>>) =
        by_level.into_iter().enumerate().filter(|(_, pool)| !pool.is_empty()).unzip();
    if levels.is_empty() {
        return Err(Error::NoTrainingEssays {
            trait_id: tr.id.clone(),
            prompt_id: corpus.prompts[query_prompt].id.clone(),
        });
    }
    Ok(MetaTestTask { trait_idx, query_prompt, n_levels, levels, support, query })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{CorpusSpec, RawEssay, RawPrompt, RawTrait, ScoreScale, ShiftPolicy};
    use alloc::string::String;

    /// `counts[p][l]` essays at level `l` of prompt `p`, one trait, scale 0..n.
    pub fn grid_corpus(counts: &[Vec<usize>]) -> Corpus {
        let n_levels = counts[0].len();
        let mut essays = Vec::new();
        for (p, row) in counts.iter().enumerate() {
            for (l, &c) in row.iter().enumerate() {
                for i in 0..c {
                    essays.push(RawEssay {
                        id: format!("p{p}l{l}i{i}"),
                        prompt_id: format!("P{p}"),
                        embedding: vec![l as f64, p as f64],
                        features: None,
                        labels: vec![(String::from("T"), l as f64)],
                    });
                }
            }
        }
        Corpus::build(CorpusSpec {
            name: "grid".into(),
            d: 2,
            d_u: 0,
            shift: ShiftPolicy::None,
            traits: vec![RawTrait {
                id: "T".into(),
                rubric_embedding: None,
                scale: Some(ScoreScale::stepped(0.0, (n_levels - 1) as f64, 1.0).unwrap()),
                prompt_scales: vec![],
            }],
            prompts: (0..counts.len())
                .map(|p| RawPrompt { id: format!("P{p}"), embedding: None })
                .collect(),
            essays,
        })
        .unwrap()
    }

    fn all(c: &Corpus) -> Vec<usize> {
        (0..c.essays.len()).collect()
    }

    fn regime(c: Classification, s: SupportSource) -> Regime {
        Regime { classification: c, support: s }
    }

    #[test]
    fn eligible_levels_per_side() {
        // level 0: query prompt has only 4 essays -> excluded for m=5
        let c = grid_corpus(&[vec![4, 6, 5], vec![9, 9, 4], vec![0, 1, 0]]);
        let mp = EpisodeSampler::new(&c, &all(&c), regime(Classification::Multiclass, SupportSource::MultiPrompt), EpisodeConfig::default(), 0).unwrap();
        assert_eq!(mp.eligible_levels(0, 0), vec![1]);
        // level 2 support: 4 + 0 < 5 under mP
        let op = EpisodeSampler::new(&c, &all(&c), regime(Classification::Multiclass, SupportSource::OnePrompt), EpisodeConfig::default(), 0).unwrap();
        assert_eq!(op.eligible_levels(0, 0), vec![1]);
        let c = grid_corpus(&[vec![5, 5, 5], vec![3, 3, 0], vec![3, 3, 9]]);
        let mp = EpisodeSampler::new(&c, &all(&c), regime(Classification::Multiclass, SupportSource::MultiPrompt), EpisodeConfig::default(), 0).unwrap();
        let op = EpisodeSampler::new(&c, &all(&c), regime(Classification::Multiclass, SupportSource::OnePrompt), EpisodeConfig::default(), 0).unwrap();
        assert_eq!(mp.eligible_levels(0, 0), vec![0, 1, 2]);
        // no single other prompt reaches 5 at levels 0 and 1
        assert_eq!(op.eligible_levels(0, 0), vec![2]);
    }

    #[test]
    fn eligible_levels_match_exhaustive_check() {
        let counts = vec![vec![5, 2, 7, 0], vec![6, 5, 1, 5], vec![0, 9, 5, 3]];
        let c = grid_corpus(&counts);
        for support in [SupportSource::OnePrompt, SupportSource::MultiPrompt] {
            let s = EpisodeSampler::new(&c, &all(&c), regime(Classification::Multiclass, support), EpisodeConfig::default(), 0).unwrap();
            for q in 0..3 {
                let mut expect = Vec::new();
                for l in 0..4 {
                    let qok = counts[q][l] >= 5;
                    let sok = match support {
                        SupportSource::MultiPrompt => (0..3).filter(|&p| p != q).map(|p| counts[p][l]).sum::<usize>() >= 5,
                        SupportSource::OnePrompt => (0..3).any(|p| p != q && counts[p][l] >= 5),
                    };
                    if qok && sok {
                        expect.push(l);
                    }
                }
                assert_eq!(s.eligible_levels(0, q), expect, "{support:?} q={q}");
            }
        }
    }

    #[test]
    fn binary_two_levels_forces_negative() {
        let c = grid_corpus(&[vec![6, 6], vec![6, 6], vec![6, 6]]);
        let mut s = EpisodeSampler::new(&c, &all(&c), regime(Classification::Binary, SupportSource::MultiPrompt), EpisodeConfig::default(), 5).unwrap();
        for _ in 0..50 {
            let ep = s.sample().unwrap();
            let pos = ep.positive_level().unwrap();
            let other = 1 - pos;
            for &e in ep.support[1].iter().chain(&ep.query[1]) {
                assert_eq!(c.essays[e].level(0), Some(other));
            }
        }
    }

    #[test]
    fn two_prompts_one_prompt_support_is_the_other() {
        let c = grid_corpus(&[vec![6, 6, 6], vec![7, 7, 7]]);
        let mut s = EpisodeSampler::new(&c, &all(&c), regime(Classification::Binary, SupportSource::OnePrompt), EpisodeConfig::default(), 1).unwrap();
        for _ in 0..100 {
            let ep = s.sample().unwrap();
            assert_eq!(ep.support_prompt, Some(1 - ep.query_prompt));
            assert_eq!(ep.support_prompts(&c), vec![1 - ep.query_prompt]);
        }
    }

    #[test]
    fn multiclass_class_counts() {
        let c = grid_corpus(&[vec![5, 5, 0], vec![5, 5, 0], vec![5, 5, 3]]);
        let mut s = EpisodeSampler::new(&c, &all(&c), regime(Classification::Multiclass, SupportSource::MultiPrompt), EpisodeConfig::default(), 2).unwrap();
        assert_eq!(s.sample().unwrap().class_count(), 2);
        let c = grid_corpus(&[vec![6; 9], vec![6; 9], vec![6; 9]]);
        let mut s = EpisodeSampler::new(&c, &all(&c), regime(Classification::Multiclass, SupportSource::MultiPrompt), EpisodeConfig::default(), 2).unwrap();
        for _ in 0..20 {
            let ep = s.sample().unwrap();
            assert_eq!(ep.class_count(), 5);
            let mut lv: Vec<_> = ep.classes.clone();
            lv.dedup();
            assert_eq!(lv.len(), 5);
        }
    }

    #[test]
    fn unavailable_when_too_small() {
        let c = grid_corpus(&[vec![4, 4], vec![4, 4]]);
        for r in Regime::ALL {
            let mut s = EpisodeSampler::new(&c, &all(&c), r, EpisodeConfig::default(), 0).unwrap();
            assert!(matches!(s.sample(), Err(Error::EpisodeUnavailable(_))));
        }
    }

    #[test]
    fn single_level_negative_uses_one_level() {
        let c = grid_corpus(&[vec![6, 6, 6, 6], vec![6, 6, 6, 6], vec![6, 6, 6, 6]]);
        let cfg = EpisodeConfig { negative: NegativeClass::SingleLevel, ..EpisodeConfig::default() };
        let mut s = EpisodeSampler::new(&c, &all(&c), regime(Classification::Binary, SupportSource::OnePrompt), cfg, 8).unwrap();
        for _ in 0..50 {
            let ep = s.sample().unwrap();
            let ClassDescriptor::Level(neg) = ep.classes[1] else { panic!() };
            assert_ne!(Some(neg), ep.positive_level());
            for &e in ep.support[1].iter().chain(&ep.query[1]) {
                assert_eq!(c.essays[e].level(0), Some(neg));
            }
        }
    }

    #[test]
    fn meta_test_drops_empty_levels() {
        // training prompts P1, P2 give level pools [7, 0, 3]
        let c = grid_corpus(&[vec![2, 2, 2], vec![4, 0, 3], vec![3, 0, 0]]);
        let train: Vec<usize> = (0..c.essays.len()).filter(|&e| c.essays[e].prompt != 0).collect();
        let task = build_meta_test(&c, 0, 0, &c.prompts[0].essays, &train).unwrap();
        assert_eq!(task.levels, vec![0, 2]);
        assert_eq!(task.support[0].len(), 7);
        assert_eq!(task.support[1].len(), 3);
        assert_eq!(task.query.len(), 6);
        assert_eq!(task.n_levels, 3);
        assert_eq!(task.support_prompts(&c), vec![1, 2]);
        // brute-force filter of training essays by level
        for (i, &l) in task.levels.iter().enumerate() {
            let scan: Vec<usize> = train.iter().copied().filter(|&e| c.essays[e].level(0) == Some(l)).collect();
            assert_eq!(task.support[i], scan);
        }
    }

    #[test]
    fn meta_test_requires_training_essays() {
        let c = grid_corpus(&[vec![2, 2], vec![1, 1]]);
        let err = build_meta_test(&c, 0, 0, &c.prompts[0].essays, &c.prompts[0].essays).unwrap_err();
        assert!(matches!(err, Error::NoTrainingEssays { .. }));
    }
}
