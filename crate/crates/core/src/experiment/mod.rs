//! The active-learning loop: configuration, corpus preparation, the shared
//! session state machine, simulated runs and suite exports.

mod config;
mod prepare;
mod run;
mod session;

pub use config::{
    default_checkpoints, AnnotationUnit, CorpusPreset, CorpusSource, ExperimentConfig, ProjectConfig, TrainingInput,
    TEST_CORPUS_STREAM,
};
pub use prepare::{embed_splits, load_source, logmels, prepare_corpus, segment_corpus, PreparedCorpus, PreparedRecording};
pub use run::{
    annotate_open_batch, median, metrics_rows, report, run_active_learning, run_experiment_suite, summarize,
    summary_csv, system_label, trace_csv, write_suite, CheckpointResult, MetricsRow, RunResult, SuiteRun, SummaryRow,
};
pub use session::{evaluate_model, Annotation, Session, TraceRow, EXHAUST};
