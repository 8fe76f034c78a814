//! The simulated active-learning loop, experiment suites and their exports.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ProjectConfig};
use super::prepare::{segment_corpus, PreparedCorpus};
use super::session::{evaluate_model, Annotation, Session, TraceRow};
use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::metrics::ErCounts;
use crate::segmentation::{CandidateSegment, SegmentId};
use crate::synth::{positive_fraction, simulate_annotation, SimulatedAnnotation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointResult {
    pub budget_fraction: f64,
    pub labeled_duration_s: f64,
    pub labeled_fraction: f64,
    pub n_annotated: usize,
    pub counts: ErCounts,
    pub er: Option<f64>,
    pub labeled_positive_fraction: f64,
    pub training_rounds: u64,
    /// Excluded from deterministic exports.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub system: Option<u8>,
    pub seed: u64,
    pub strategy: String,
    pub total_duration_s: f64,
    pub corpus_positive_fraction: f64,
    pub checkpoints: Vec<CheckpointResult>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl RunResult {
    pub fn at(&self, budget: f64) -> Option<&CheckpointResult> {
        self.checkpoints.iter().find(|c| (c.budget_fraction - budget).abs() < 1e-9)
    }
}

fn answer(session: &Session, corpus: &PreparedCorpus, id: SegmentId) -> Result<Annotation> {
    let seg = session.segment(id)?;
    let sim = simulate_annotation(
        &corpus.train_truth,
        &seg.recording_id,
        seg.start_s,
        seg.end_s,
        session.config().label_type,
    )?;
    Ok(match sim {
        SimulatedAnnotation::Weak(labels) => Annotation::Weak { labels },
        SimulatedAnnotation::Strong(events) => Annotation::Strong { events },
    })
}

/// Annotates every segment of the open batch from ground truth.
pub fn annotate_open_batch(session: &mut Session, corpus: &PreparedCorpus) -> Result<()> {
    let ids: Vec<SegmentId> = session.open_batch().to_vec();
    for id in ids {
        let a = answer(session, corpus, id)?;
        session.annotate(id, a)?;
    }
    Ok(())
}

/// Runs the loop until the last checkpoint, evaluating on the test split
/// whenever labeled duration crosses one or more checkpoints.
///
/// Model-driven strategies retrain after every batch; random sampling trains
/// only at checkpoints. Once the next checkpoint can only be met by taking
/// the whole remaining pool, the pool is annotated in one batch.
pub fn run_active_learning(
    config: &ProjectConfig,
    corpus: &PreparedCorpus,
    segments: Vec<CandidateSegment>,
) -> Result<RunResult> {
    let start = Instant::now();
    let mut session = Session::new(config.clone(), corpus.classes.clone(), corpus.train.clone(), segments)?;
    let total = session.total_duration();
    let checkpoints = config.checkpoints.clone();
    let mut next = 0;
    let mut results = Vec::new();
    while next < checkpoints.len() {
        let target = checkpoints[next] * total;
        let batch = if target >= total - 1e-6 {
            session.take_remaining()?
        } else {
            session.next_batch()?
        };
        if batch.picks.is_empty() {
            break;
        }
        annotate_open_batch(&mut session, corpus)?;
        let labeled = session.labeled_duration();
        let mut crossed = Vec::new();
        while next < checkpoints.len() && labeled >= checkpoints[next] * total - 1e-6 {
            crossed.push(checkpoints[next]);
            next += 1;
        }
        let model_driven = config.strategy.needs_model();
        if model_driven || !crossed.is_empty() {
            let outcome = session.train()?;
            tracing::debug!(
                iteration = session.iteration(),
                labeled_fraction = session.labeled_fraction(),
                best_epoch = outcome.best_epoch,
                "trained"
            );
        }
        if crossed.is_empty() {
            continue;
        }
        let model = session.model().expect("trained above");
        let counts = evaluate_model(model, &corpus.test, &corpus.test_truth, &config.decode)?;
        let lpf = session.labeled_positive_fraction(&corpus.train_truth)?;
        tracing::info!(
            system = %config.name,
            labeled_fraction = session.labeled_fraction(),
            er = ?counts.error_rate(),
            "checkpoint"
        );
        for budget in crossed {
            results.push(CheckpointResult {
                budget_fraction: budget,
                labeled_duration_s: labeled,
                labeled_fraction: labeled / total,
                n_annotated: session.annotations().len(),
                counts,
                er: counts.error_rate(),
                labeled_positive_fraction: lpf,
                training_rounds: session.training_rounds(),
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    if next < checkpoints.len() {
        tracing::warn!(reached = results.len(), "pool exhausted before the final checkpoint");
    }
    Ok(RunResult {
        system: None,
        seed: config.seed,
        strategy: config.strategy.as_str().to_string(),
        total_duration_s: total,
        corpus_positive_fraction: positive_fraction(&corpus.train_truth),
        checkpoints: results,
        trace: session.trace().to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub system: u8,
    pub seed: u64,
    pub result: RunResult,
}

/// Runs every (system, seed) pair on one prepared corpus.
pub fn run_experiment_suite(exp: &ExperimentConfig, corpus: &PreparedCorpus) -> Result<Vec<SuiteRun>> {
    exp.validate()?;
    let mut jobs = Vec::new();
    let mut segment_cache: BTreeMap<String, Vec<CandidateSegment>> = BTreeMap::new();
    for &system in &exp.systems {
        for &seed in &exp.seeds {
            let mut cfg = exp.project.for_system(system)?;
            cfg.seed = seed;
            let key = serde_json::to_string(&cfg.segmentation)?;
            let segments = segment_cache
                .entry(key)
                .or_insert_with(|| segment_corpus(&corpus.train, &cfg.segmentation))
                .clone();
            jobs.push((system, seed, cfg, segments));
        }
    }
    let results = crate::par_map(&jobs, |(system, seed, cfg, segments)| {
        run_active_learning(cfg, corpus, segments.clone()).map(|mut result| {
            result.system = Some(*system);
            SuiteRun {
                system: *system,
                seed: *seed,
                result,
            }
        })
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub system: String,
    pub seed: u64,
    pub budget_fraction: f64,
    #[serde(rename = "S")]
    pub s: u64,
    #[serde(rename = "D")]
    pub d: u64,
    #[serde(rename = "I")]
    pub i: u64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "ER")]
    pub er: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub system: String,
    pub budget_fraction: f64,
    pub n_runs: usize,
    pub median_er: Option<f64>,
    pub mean_er: Option<f64>,
    pub median_labeled_positive_fraction: f64,
}

pub fn metrics_rows(system: &str, result: &RunResult) -> Vec<MetricsRow> {
    result
        .checkpoints
        .iter()
        .map(|c| MetricsRow {
            system: system.to_string(),
            seed: result.seed,
            budget_fraction: c.budget_fraction,
            s: c.counts.substitutions,
            d: c.counts.deletions,
            i: c.counts.insertions,
            n: c.counts.n_ref,
            er: c.er,
        })
        .collect()
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median and mean ER per system and budget.
pub fn summarize<'a>(runs: impl IntoIterator<Item = (&'a str, &'a RunResult)>) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, u64), (f64, Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for (system, r) in runs {
        for c in &r.checkpoints {
            let g = groups
                .entry((system.to_string(), c.budget_fraction.to_bits()))
                .or_insert((c.budget_fraction, Vec::new(), Vec::new(), 0));
            g.3 += 1;
            if let Some(er) = c.er {
                g.1.push(er);
            }
            g.2.push(c.labeled_positive_fraction);
        }
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((system, _), (budget, mut ers, mut lpf, n))| SummaryRow {
            system,
            budget_fraction: budget,
            n_runs: n,
            mean_er: (!ers.is_empty()).then(|| ers.iter().sum::<f64>() / ers.len() as f64),
            median_er: median(&mut ers),
            median_labeled_positive_fraction: median(&mut lpf).unwrap_or(0.0),
        })
        .collect();
    rows.sort_by(|a, b| a.system.cmp(&b.system).then(a.budget_fraction.total_cmp(&b.budget_fraction)));
    rows
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

pub fn trace_csv(trace: &[TraceRow]) -> Result<Vec<u8>> {
    if trace.is_empty() {
        return Ok(b"iteration,pick_index,segment_id,strategy,j_value,distance_to_s\n".to_vec());
    }
    csv_bytes(trace)
}

pub fn system_label(system: Option<u8>, fallback: &str) -> String {
    system.map_or_else(|| fallback.to_string(), |s| format!("system{s}"))
}

/// Writes `metrics.csv`, `summary.csv`, `timings.csv`, and per-run JSON
/// reports and selection traces under `dir`.
pub fn write_suite(dir: &Path, runs: &[SuiteRun]) -> Result<()> {
    for sub in ["runs", "traces"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut metrics = Vec::new();
    let mut timings = Vec::new();
    for run in runs {
        let label = system_label(Some(run.system), "");
        metrics.extend(metrics_rows(&label, &run.result));
        for c in &run.result.checkpoints {
            timings.push((label.clone(), run.seed, c.budget_fraction, c.wall_time_s));
        }
        let stem = format!("{label}_seed{}", run.seed);
        write_atomic(
            &dir.join("runs").join(format!("{stem}.json")),
            serde_json::to_string_pretty(&run.result)?.as_bytes(),
        )?;
        write_atomic(&dir.join("traces").join(format!("{stem}.csv")), &trace_csv(&run.result.trace)?)?;
    }
    write_atomic(&dir.join("metrics.csv"), &csv_bytes(&metrics)?)?;
    let labels: Vec<String> = runs.iter().map(|r| system_label(Some(r.system), "")).collect();
    let summary = summarize(labels.iter().map(String::as_str).zip(runs.iter().map(|r| &r.result)));
    write_atomic(&dir.join("summary.csv"), &csv_bytes(&summary)?)?;
    let mut w = String::from("system,seed,budget_fraction,wall_time_s\n");
    for (s, seed, b, t) in timings {
        w.push_str(&format!("{s},{seed},{b},{t:.3}\n"));
    }
    write_atomic(&dir.join("timings.csv"), w.as_bytes())?;
    Ok(())
}

/// Rebuilds the summary table from the per-run reports under `dir/runs`.
pub fn report(dir: &Path) -> Result<Vec<SummaryRow>> {
    let runs_dir = dir.join("runs");
    let mut entries: Vec<_> = std::fs::read_dir(&runs_dir)
        .map_err(|e| Error::io(&runs_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    let mut runs = Vec::new();
    for p in entries {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let r: RunResult = serde_json::from_str(&text)?;
        runs.push((system_label(r.system, "run"), r));
    }
    Ok(summarize(runs.iter().map(|(s, r)| (s.as_str(), r))))
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    csv_bytes(rows)
}
