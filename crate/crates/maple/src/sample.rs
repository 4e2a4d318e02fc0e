//! Episode stream statistics for the `sample` command.

use std::collections::{BTreeMap, BTreeSet};

use maple_core::episodes::ClassDescriptor;
use maple_core::{Episode, EpisodeSampler};
use serde::Serialize;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StreamStats {
    pub episodes: usize,
    /// Distinct (query prompt, trait, level) triples; for binary episodes the
    /// level is the positive one, for multiclass every chosen level counts.
    pub unique_tuples: usize,
    /// Number of episodes per class count.
    pub class_counts: BTreeMap<usize, usize>,
}

#[derive(Default)]
pub struct StatsAccumulator {
    tuples: BTreeSet<(usize, usize, usize)>,
    stats: StreamStats,
}

impl StatsAccumulator {
    pub fn add(&mut self, e: &Episode) {
        self.stats.episodes += 1;
        *self.stats.class_counts.entry(e.class_count()).or_default() += 1;
        match e.positive_level() {
            Some(l) => {
                self.tuples.insert((e.query_prompt, e.trait_idx, l));
            }
            None => {
                for c in &e.classes {
                    if let ClassDescriptor::Level(l) = c {
                        self.tuples.insert((e.query_prompt, e.trait_idx, *l));
                    }
                }
            }
        }
    }

    pub fn finish(mut self) -> StreamStats {
        self.stats.unique_tuples = self.tuples.len();
        self.stats
    }
}

/// Draws `count` episodes, handing each to `sink`.
pub fn draw(
    sampler: &mut EpisodeSampler<'_>,
    count: usize,
    mut sink: impl FnMut(usize, &Episode),
) -> maple_core::Result<StreamStats> {
    let mut acc = StatsAccumulator::default();
    for i in 0..count {
        let e = sampler.sample()?;
        acc.add(&e);
        sink(i, &e);
    }
    Ok(acc.finish())
}
