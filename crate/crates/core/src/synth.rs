//! Synthetic corpora with a known, linearly separable trait structure.
//!
//! Trait `t` moves the essay embedding along basis direction `t`: level `l`
//! sits at `l * separation`, plus isotropic Gaussian noise and a small
//! per-prompt offset.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{CorpusSpec, RawEssay, RawPrompt, RawTrait, ScoreScale, ShiftPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub prompts: usize,
    pub essays_per_prompt: usize,
    pub traits: usize,
    pub levels: usize,
    pub d: usize,
    pub d_u: usize,
    pub separation: f64,
    pub noise: f64,
    pub prompt_shift: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            prompts: 6,
            essays_per_prompt: 40,
            traits: 2,
            levels: 4,
            d: 8,
            d_u: 0,
            separation: 1.0,
            noise: 0.1,
            prompt_shift: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<CorpusSpec> {
        if self.traits == 0 || self.traits > self.d || self.levels < 2 || self.prompts == 0 {
            return Err(Error::InvalidConfig("synthetic corpus needs 1..=d traits and 2+ levels".into()));
        }
        let noise = Normal::new(0.0, self.noise).map_err(|_| Error::InvalidConfig("noise must be finite and >= 0".into()))?;
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let scale = ScoreScale::stepped(0.0, (self.levels - 1) as f64, 1.0)?;
        let traits = (0..self.traits)
            .map(|t| RawTrait {
                id: format!("T{t}"),
                rubric_embedding: Some((0..self.d).map(|_| unit.sample(&mut rng)).collect()),
                scale: Some(scale.clone()),
                prompt_scales: Vec::new(),
            })
            .collect();
        let mut prompts = Vec::with_capacity(self.prompts);
        let mut essays = Vec::with_capacity(self.prompts * self.essays_per_prompt);
        for p in 0..self.prompts {
            let id = format!("P{p}");
            let shift: Vec<f64> = (0..self.d).map(|_| unit.sample(&mut rng) * self.prompt_shift).collect();
            prompts.push(RawPrompt { id: id.clone(), embedding: Some((0..self.d).map(|_| unit.sample(&mut rng)).collect()) });
            for i in 0..self.essays_per_prompt {
                let levels: Vec<usize> = (0..self.traits).map(|_| rng.gen_range(0..self.levels)).collect();
                let mut embedding = shift.clone();
                for x in embedding.iter_mut() {
                    *x += noise.sample(&mut rng);
                }
                for (t, &l) in levels.iter().enumerate() {
                    embedding[t] += l as f64 * self.separation;
                }
                let features = (self.d_u > 0).then(|| {
                    (0..self.d_u).map(|j| levels[j % self.traits] as f64 + unit.sample(&mut rng)).collect()
                });
                essays.push(RawEssay {
                    id: format!("{id}-e{i}"),
                    prompt_id: id.clone(),
                    embedding,
                    features,
                    labels: levels.iter().enumerate().map(|(t, &l)| (format!("T{t}"), l as f64)).collect(),
                });
            }
        }
        Ok(CorpusSpec {
            name: String::from("synthetic"),
            d: self.d,
            d_u: self.d_u,
            shift: ShiftPolicy::None,
            traits,
            prompts,
            essays,
        })
    }
}
