use std::collections::BTreeMap;

use maple_core::corpus::{CorpusSpec, RawEssay, RawPrompt, RawTrait};
use maple_core::episodes::{ClassDescriptor, EpisodeConfig, EpisodeSampler};
use maple_core::{Classification, Corpus, Regime, ScoreScale, ShiftPolicy, SupportSource};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Three prompts, one trait on 0..=8, `per` essays at every level.
fn nine_level_corpus(per: usize) -> Corpus {
    let mut essays = Vec::new();
    for p in 0..3 {
        for l in 0..9 {
            for i in 0..per {
                essays.push(RawEssay {
                    id: format!("p{p}-l{l}-{i}"),
                    prompt_id: format!("P{p}"),
                    embedding: vec![l as f64],
                    features: None,
                    labels: vec![("T".into(), l as f64)],
                });
            }
        }
    }
    Corpus::build(CorpusSpec {
        name: "nine".into(),
        d: 1,
        d_u: 0,
        shift: ShiftPolicy::None,
        traits: vec![RawTrait { id: "T".into(), scale: Some(ScoreScale::stepped(0.0, 8.0, 1.0).unwrap()), ..Default::default() }],
        prompts: (0..3).map(|p| RawPrompt { id: format!("P{p}"), embedding: None }).collect(),
        essays,
    })
    .unwrap()
}

#[test]
fn multiclass_level_subsets_are_uniform() {
    let c = nine_level_corpus(5);
    let all: Vec<usize> = (0..c.essays.len()).collect();
    let regime = Regime { classification: Classification::Multiclass, support: SupportSource::MultiPrompt };
    let mut s = EpisodeSampler::new(&c, &all, regime, EpisodeConfig::default(), 11).unwrap();
    let mut counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    let n = 50_000u64;
    for _ in 0..n {
        let e = s.sample().unwrap();
        let levels: Vec<usize> = e
            .classes
            .iter()
            .map(|c| match c {
                ClassDescriptor::Level(l) => *l,
                other => panic!("unexpected class {other:?}"),
            })
            .collect();
        assert!(levels.windows(2).all(|w| w[0] < w[1]));
        *counts.entry(levels).or_default() += 1;
    }
    // C(9, 5) subsets, all equally likely
    let cells = 126u64;
    assert_eq!(counts.len() as u64, cells);
    let expected = n as f64 / cells as f64;
    let chi2: f64 = counts.values().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}

#[test]
fn binary_positive_levels_are_uniform() {
    let c = nine_level_corpus(5);
    let all: Vec<usize> = (0..c.essays.len()).collect();
    let regime = Regime { classification: Classification::Binary, support: SupportSource::OnePrompt };
    let mut s = EpisodeSampler::new(&c, &all, regime, EpisodeConfig::default(), 12).unwrap();
    let mut counts = [0u64; 9];
    let n = 27_000u64;
    for _ in 0..n {
        counts[s.sample().unwrap().positive_level().unwrap()] += 1;
    }
    let expected = n as f64 / 9.0;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(8.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn same_seed_same_stream(seed in any::<u64>(), r in 0usize..4) {
        let c = nine_level_corpus(6);
        let all: Vec<usize> = (0..c.essays.len()).collect();
        let regime = Regime::ALL[r];
        let mut a = EpisodeSampler::new(&c, &all, regime, EpisodeConfig::default(), seed).unwrap();
        let mut b = EpisodeSampler::new(&c, &all, regime, EpisodeConfig::default(), seed).unwrap();
        for _ in 0..20 {
            prop_assert_eq!(a.sample().unwrap(), b.sample().unwrap());
        }
    }

    #[test]
    fn episodes_respect_protocol(seed in any::<u64>(), r in 0usize..4) {
        let c = nine_level_corpus(6);
        let all: Vec<usize> = (0..c.essays.len()).collect();
        let regime = Regime::ALL[r];
        let mut s = EpisodeSampler::new(&c, &all, regime, EpisodeConfig::default(), seed).unwrap();
        for _ in 0..20 {
            let e = s.sample().unwrap();
            let sp = e.support_prompts(&c);
            prop_assert!(!sp.contains(&e.query_prompt));
            if regime.support == SupportSource::OnePrompt {
                prop_assert_eq!(sp.len(), 1);
            }
            for (sup, q) in e.support.iter().zip(&e.query) {
                prop_assert_eq!(sup.len(), 5);
                prop_assert_eq!(q.len(), 5);
                prop_assert!(q.iter().all(|&x| c.essays[x].prompt == e.query_prompt));
            }
            let mut seen: Vec<usize> = e.essays().collect();
            let n = seen.len();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), n);
        }
    }
}
