use std::collections::BTreeSet;

use alsed_core::embeddings::EmbeddingConfig;
use alsed_core::experiment::{prepare_corpus, run_active_learning, segment_corpus, PreparedCorpus, ProjectConfig, RunResult};
use alsed_core::model::{ModelConfig, TrainConfig};
use alsed_core::synth::{generate, rare_preset};

fn corpus() -> PreparedCorpus {
    let mut train = rare_preset(5, 3);
    train.recording_len_s = 20.0;
    train.events_per_minute = 9.0;
    train.sample_rate = 16000;
    let mut test = train.clone();
    test.seed = 6;
    test.n_recordings = 2;
    test.id_prefix = "test".into();
    let config = project();
    prepare_corpus(&generate(&train).unwrap(), &generate(&test).unwrap(), &config.features, &config.embedding).unwrap()
}

fn project() -> ProjectConfig {
    ProjectConfig {
        embedding: EmbeddingConfig::RandomProjection {
            seed: 1,
            dim: 16,
            context: 2,
        },
        batch_fraction: 0.1,
        checkpoints: vec![0.1, 0.25, 0.5, 1.0],
        model: ModelConfig {
            hidden: 8,
            ..ModelConfig::default()
        },
        training: TrainConfig {
            max_epochs: 6,
            min_epochs: 2,
            patience: 2,
            ..TrainConfig::default()
        },
        seed: 9,
        ..ProjectConfig::default()
    }
}

fn run(corpus: &PreparedCorpus, system: u8) -> (RunResult, Vec<f64>) {
    let config = project().for_system(system).unwrap();
    let segments = segment_corpus(&corpus.train, &config.segmentation);
    let durations = segments.iter().map(|s| s.duration_s()).collect();
    (run_active_learning(&config, corpus, segments).unwrap(), durations)
}

fn check_budget(result: &RunResult, durations: &[f64]) {
    let ids: Vec<u32> = result.trace.iter().map(|r| r.segment_id).collect();
    let unique: BTreeSet<u32> = ids.iter().copied().collect();
    assert_eq!(unique.len(), ids.len(), "a segment was selected twice");
    assert_eq!(ids.len(), durations.len(), "final checkpoint must cover the pool");

    // Each checkpoint matches a whole-iteration prefix of the trace.
    for cp in &result.checkpoints {
        let prefix: Vec<_> = result.trace.iter().take(cp.n_annotated).collect();
        let last_iter = prefix.last().unwrap().iteration;
        assert!(result.trace.get(cp.n_annotated).is_none_or(|r| r.iteration > last_iter));
        let seconds: f64 = prefix.iter().map(|r| durations[r.segment_id as usize]).sum();
        assert!((seconds - cp.labeled_duration_s).abs() < 1e-6);
        assert!(cp.labeled_fraction >= cp.budget_fraction - 1e-9);
        assert!((cp.labeled_fraction - cp.labeled_duration_s / result.total_duration_s).abs() < 1e-12);
    }
    for w in result.checkpoints.windows(2) {
        assert!(w[0].budget_fraction < w[1].budget_fraction);
        assert!(w[0].labeled_duration_s <= w[1].labeled_duration_s);
        assert!(w[0].training_rounds <= w[1].training_rounds);
    }
    let last = result.checkpoints.last().unwrap();
    assert_eq!(last.budget_fraction, 1.0);
    assert!((last.labeled_fraction - 1.0).abs() < 1e-9);
}

#[test]
fn budget_accounting_and_isolation() {
    let corpus = corpus();
    let (s1, d1) = run(&corpus, 1);
    let (s2, _) = run(&corpus, 2);
    let (s3, _) = run(&corpus, 3);
    let (s5, d5) = run(&corpus, 5);
    check_budget(&s1, &d1);
    check_budget(&s5, &d5);
    assert_eq!(s1.checkpoints.len(), 4);

    // Systems that differ only in training input or label type see the same
    // random selection.
    let order = |r: &RunResult| r.trace.iter().map(|t| (t.iteration, t.segment_id)).collect::<Vec<_>>();
    assert_eq!(order(&s1), order(&s2));
    assert_eq!(order(&s1), order(&s3));

    // Same config, same run.
    let (again, _) = run(&corpus, 5);
    assert_eq!(again.checkpoints.len(), s5.checkpoints.len());
    for (a, b) in again.checkpoints.iter().zip(&s5.checkpoints) {
        assert_eq!((a.counts, a.n_annotated, a.training_rounds), (b.counts, b.n_annotated, b.training_rounds));
    }
    assert_eq!(again.trace, s5.trace);
}
