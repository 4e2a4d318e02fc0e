use maple_core::eval::{run_fold, ExperimentConfig};
use maple_core::{Corpus, DevSource, SplitSpec, SyntheticSpec, TrainConfig};

fn experiment(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        train: TrainConfig { total_tasks: 2000, learning_rate: 1e-2, dev_every: 500, seed, ..TrainConfig::default() },
        ..ExperimentConfig::default()
    }
}

#[test]
fn loss_falls_on_separable_corpus() {
    let (mut first, mut last) = (0.0, 0.0);
    for seed in 0..5 {
        let c = Corpus::build(SyntheticSpec { seed, ..SyntheticSpec::default() }.generate().unwrap()).unwrap();
        let spec = SplitSpec { test_prompts: vec!["P5".into()], dev: DevSource::Fraction(0.2), train_prompts: None, seed };
        let out = run_fold(&c, 0, &spec, &experiment(seed), None, &mut |_| {}).unwrap();
        let log = &out.training.unwrap().log;
        first += log[1].batch_loss.unwrap();
        last += log.last().unwrap().batch_loss.unwrap();
    }
    assert!(last < first, "mean batch loss {} -> {}", first / 5.0, last / 5.0);
}

#[test]
fn best_checkpoint_is_dev_maximum() {
    let c = Corpus::build(SyntheticSpec { seed: 9, ..SyntheticSpec::default() }.generate().unwrap()).unwrap();
    let spec = SplitSpec { test_prompts: vec!["P0".into()], dev: DevSource::Prompts(vec!["P1".into()]), train_prompts: None, seed: 9 };
    let mut exp = experiment(9);
    exp.train.total_tasks = 600;
    exp.train.dev_every = 120;
    let out = run_fold(&c, 0, &spec, &exp, None, &mut |_| {}).unwrap();
    let training = out.training.unwrap();
    let series: Vec<f64> = training.dev_series().collect();
    assert_eq!(series.len(), 6);
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(training.best.dev_qwk, Some(max));
    let first_max = training.log.iter().find(|r| r.dev_qwk_avg == Some(max)).unwrap();
    assert_eq!(training.best.tasks_seen, first_max.tasks_seen);
    assert_eq!(out.checkpoint, training.best);
    assert!(out.audit.episode_prompts.iter().all(|p| p != "P0" && p != "P1"));
}
