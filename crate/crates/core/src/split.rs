//! Train / dev / test partitioning for leave-one-prompt-out folds.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Where dev essays come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevSource {
    /// Whole prompts held out for dev.
    Prompts(Vec<String>),
    /// Fraction of every training prompt's essays held out for dev.
    Fraction(f64),
    None,
}

impl Default for DevSource {
    fn default() -> Self {
        DevSource::Fraction(0.2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_prompts: Vec<String>,
    #[serde(default)]
    pub dev: DevSource,
    /// Training prompts; defaults to every prompt not used for test or dev.
    #[serde(default)]
    pub train_prompts: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    /// One fold per prompt, each prompt held out in turn.
    pub fn leave_one_prompt_out(corpus: &Corpus, dev: DevSource, seed: u64) -> Vec<SplitSpec> {
        corpus
            .prompts
            .iter()
            .map(|p| SplitSpec {
                test_prompts: vec![p.id.clone()],
                dev: dev.clone(),
                train_prompts: None,
                seed,
            })
            .collect()
    }

    pub fn resolve(&self, corpus: &Corpus) -> Result<Split> {
        let lookup = |id: &String| {
            corpus
                .prompt_index(id)
                .ok_or_else(|| Error::UnknownPrompt(id.clone()))
        };
        let mut test: Vec<usize> = self.test_prompts.iter().map(lookup).collect::<Result<_>>()?;
        test.sort_unstable();
        test.dedup();
        let mut dev_prompts: Vec<usize> = match &self.dev {
            DevSource::Prompts(ids) => ids.iter().map(lookup).collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        dev_prompts.sort_unstable();
        dev_prompts.dedup();
        if let DevSource::Fraction(f) = self.dev {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidSplit(format!("dev fraction {f} outside [0, 1)")));
            }
        }
        if let Some(p) = dev_prompts.iter().find(|p| test.contains(p)) {
            return Err(Error::InvalidSplit(format!(
                "prompt {} is both test and dev",
                corpus.prompts[*p].id
            )));
        }
        let mut train: Vec<usize> = match &self.train_prompts {
            Some(ids) => ids.iter().map(lookup).collect::<Result<_>>()?,
            None => (0..corpus.prompts.len())
                .filter(|p| !test.contains(p) && !dev_prompts.contains(p))
                .collect(),
        };
        train.sort_unstable();
        train.dedup();
        if let Some(p) = train.iter().find(|p| test.contains(p) || dev_prompts.contains(p)) {
            return Err(Error::InvalidSplit(format!(
                "training prompt {} overlaps test/dev",
                corpus.prompts[*p].id
            )));
        }

        let mut roles = vec![EssayRole::Unused; corpus.essays.len()];
        for &p in &test {
            for &e in &corpus.prompts[p].essays {
                roles[e] = EssayRole::Test;
            }
        }
        for &p in &dev_prompts {
            for &e in &corpus.prompts[p].essays {
                roles[e] = EssayRole::Dev;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for &p in &train {
            let mut essays = corpus.prompts[p].essays.clone();
            let n_dev = match self.dev {
                DevSource::Fraction(f) => libm::round(essays.len() as f64 * f) as usize,
                _ => 0,
            };
            if n_dev > 0 {
                essays.shuffle(&mut rng);
            }
            for (i, &e) in essays.iter().enumerate() {
                roles[e] = if i < n_dev { EssayRole::Dev } else { EssayRole::Train };
            }
        }
        Ok(Split {
            test_prompts: test,
            dev_prompts,
            train_prompts: train,
            dev_fraction: matches!(self.dev, DevSource::Fraction(_)),
            roles,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EssayRole {
    Train,
    Dev,
    Test,
    Unused,
}

/// A [`SplitSpec`] resolved against one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub test_prompts: Vec<usize>,
    pub dev_prompts: Vec<usize>,
    pub train_prompts: Vec<usize>,
    /// Dev essays are carved out of training prompts rather than whole prompts.
    pub dev_fraction: bool,
    pub roles: Vec<EssayRole>,
}

/// One meta-testing query: a trait on one prompt, with the essays to score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySpec {
    pub trait_idx: usize,
    pub prompt: usize,
    pub essays: Vec<usize>,
}

impl Split {
    pub fn essays_with(&self, role: EssayRole) -> Vec<usize> {
        (0..self.roles.len()).filter(|&i| self.roles[i] == role).collect()
    }

    pub fn train_essays(&self) -> Vec<usize> {
        self.essays_with(EssayRole::Train)
    }

    fn queries(&self, corpus: &Corpus, prompts: &[usize], role: EssayRole) -> Vec<QuerySpec> {
        let mut out = Vec::new();
        for &p in prompts {
            for &t in &corpus.prompts[p].traits {
                let essays: Vec<usize> = corpus.prompts[p]
                    .essays
                    .iter()
                    .copied()
                    .filter(|&e| self.roles[e] == role && corpus.essays[e].labels[t].is_some())
                    .collect();
                if !essays.is_empty() {
                    out.push(QuerySpec { trait_idx: t, prompt: p, essays });
                }
            }
        }
        out.sort_by_key(|q| (q.prompt, q.trait_idx));
        out
    }

    pub fn dev_queries(&self, corpus: &Corpus) -> Vec<QuerySpec> {
        if self.dev_fraction {
            self.queries(corpus, &self.train_prompts, EssayRole::Dev)
        } else {
            self.queries(corpus, &self.dev_prompts, EssayRole::Dev)
        }
    }

    pub fn test_queries(&self, corpus: &Corpus) -> Vec<QuerySpec> {
        self.queries(corpus, &self.test_prompts, EssayRole::Test)
    }
}
