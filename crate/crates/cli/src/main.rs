//! `alsed`: active learning for sound event detection from the command line.

mod remote;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use alsed_core::binio::write_atomic;
use alsed_core::embeddings::EmbeddingManifest;
use alsed_core::experiment::{
    embed_splits, load_source, logmels, prepare_corpus, report, run_experiment_suite, segment_corpus, summary_csv,
    write_suite, ExperimentConfig, PreparedRecording,
};
use alsed_core::metrics::{build_roll, error_rate, ErCounts};
use alsed_core::segmentation::write_segment_table;
use alsed_core::synth::{write_corpus, CorpusManifest};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "alsed", version, about = "Active learning for sound event detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train and test corpora of an experiment as WAV files plus manifests.
    Generate {
        /// Preset name (exp_a1, exp_a2, exp_b, exp_c) or path to a TOML experiment document.
        #[arg(long)]
        config: String,
        /// Corpus seed; defaults to the one in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute log-mel features, embeddings and the candidate segment table.
    Prepare {
        #[arg(long)]
        config: String,
        /// Corpus seed; defaults to the one in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run simulated active learning for every system and seed of an experiment.
    Simulate {
        #[arg(long)]
        config: String,
        /// Run a single seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated systems, overriding the config.
        #[arg(long, value_delimiter = ',')]
        systems: Option<Vec<u8>>,
        #[arg(long)]
        out: PathBuf,
        /// Drive a running annotation server instead of the in-process loop.
        #[arg(long)]
        server: Option<String>,
    },
    /// Segment-based error rate of detections against a reference manifest.
    Evaluate {
        /// Corpus manifest holding the reference events.
        #[arg(long)]
        reference: PathBuf,
        /// CSV with columns recording_id, class, onset_s, offset_s.
        #[arg(long)]
        estimated: PathBuf,
    },
    /// Serve the annotation HTTP API over the projects in a directory.
    Serve {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Rebuild the ER-vs-budget summary of a finished suite.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_experiment(name: &str, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut exp = ExperimentConfig::load(name).with_context(|| format!("loading config {name:?}"))?;
    if let Some(seed) = seed {
        match exp.corpus.reseeded(seed) {
            Some(c) => exp.corpus = c,
            None => tracing::warn!("--seed has no effect on a manifest corpus"),
        }
    }
    Ok(exp)
}

fn generate(config: &str, seed: Option<u64>, out: &Path) -> Result<()> {
    let exp = load_experiment(config, seed)?;
    let specs = exp.corpus.generator_specs();
    let (train, test) = load_source(&exp.corpus)?;
    let (train_spec, test_spec) = match &specs {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let a = write_corpus(&out.join("train"), &train, train_spec)?;
    let b = write_corpus(&out.join("test"), &test, test_spec)?;
    println!("{}", a.display());
    println!("{}", b.display());
    Ok(())
}

fn prepare(config: &str, seed: Option<u64>, out: &Path) -> Result<()> {
    let exp = load_experiment(config, seed)?;
    let (mut train, mut test) = load_source(&exp.corpus)?;
    train.clips.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
    test.clips.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
    let p = &exp.project;
    let train_mels = logmels(&train.clips, &p.features)?;
    let test_mels = logmels(&test.clips, &p.features)?;
    let (provider, train_emb, test_emb) = embed_splits(&train_mels, &test_mels, &p.features, &p.embedding)?;
    let mut manifest = EmbeddingManifest {
        dim: provider.dim(),
        recordings: Default::default(),
    };
    for (split, mels, embs) in [("train", &train_mels, &train_emb), ("test", &test_mels, &test_emb)] {
        let dir = out.join(split);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (m, e) in mels.iter().zip(embs.iter()) {
            m.save(dir.join(format!("{}.lmel", m.recording_id)))?;
            let file = PathBuf::from(split).join(format!("{}.emb", e.recording_id));
            e.save(out.join(&file))?;
            manifest.recordings.insert(e.recording_id.clone(), file);
        }
    }
    write_atomic(&out.join("embeddings.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    let recs: Vec<PreparedRecording> = train
        .clips
        .iter()
        .zip(train_emb)
        .map(|(c, e)| PreparedRecording {
            id: c.recording_id.clone(),
            duration_s: c.duration_s(),
            embedding: e.into(),
        })
        .collect();
    let segments = segment_corpus(&recs, &p.segmentation);
    write_segment_table(&out.join("segments.csv"), &segments)?;
    println!("{} recordings, {} candidate segments", recs.len(), segments.len());
    Ok(())
}

fn simulate(config: &str, seed: Option<u64>, systems: Option<Vec<u8>>, out: &Path) -> Result<()> {
    let mut exp = ExperimentConfig::load(config).with_context(|| format!("loading config {config:?}"))?;
    if let Some(seed) = seed {
        exp.seeds = vec![seed];
    }
    if let Some(systems) = systems {
        exp.systems = systems;
    }
    exp.validate()?;
    let (train, test) = load_source(&exp.corpus)?;
    let corpus = prepare_corpus(&train, &test, &exp.project.features, &exp.project.embedding)?;
    tracing::info!(
        train = corpus.train.len(),
        test = corpus.test.len(),
        systems = ?exp.systems,
        seeds = ?exp.seeds,
        "corpus prepared"
    );
    let runs = run_experiment_suite(&exp, &corpus)?;
    write_suite(out, &runs)?;
    write_atomic(&out.join("experiment.toml"), exp.to_toml()?.as_bytes())?;
    let summary = std::fs::read(out.join("summary.csv"))?;
    std::io::stdout().write_all(&summary)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct DetectionRow {
    recording_id: String,
    class: String,
    onset_s: f64,
    offset_s: f64,
}

fn evaluate(reference: &Path, estimated: &Path) -> Result<ErCounts> {
    let manifest = CorpusManifest::load(reference)?;
    let truth = manifest.truth()?;
    let mut rows: Vec<DetectionRow> = Vec::new();
    let mut r = csv::Reader::from_path(estimated).with_context(|| format!("reading {}", estimated.display()))?;
    for row in r.deserialize() {
        rows.push(row?);
    }
    let c = truth.classes.len();
    let mut total = ErCounts::default();
    for (id, rec) in &truth.recordings {
        let reference = build_roll(rec.events.iter().map(|e| (e.class, e.onset_s, e.offset_s)), rec.duration_s, c)?;
        let mut hyp = Vec::new();
        for d in rows.iter().filter(|d| &d.recording_id == id) {
            hyp.push((truth.classes.index_of(&d.class)?, d.onset_s, d.offset_s.min(rec.duration_s)));
        }
        total.add(&error_rate(&reference, &build_roll(hyp, rec.duration_s, c)?)?);
    }
    if let Some(d) = rows.iter().find(|d| !truth.recordings.contains_key(&d.recording_id)) {
        bail!("detection for unknown recording {:?}", d.recording_id);
    }
    Ok(total)
}

fn serve(root: PathBuf, addr: SocketAddr) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(alsed_service::serve(
        root,
        addr,
        |bound| {
            println!("listening on http://{bound}");
            let _ = std::io::stdout().flush();
        },
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
    ))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, out } => generate(&config, seed, &out),
        Command::Prepare { config, seed, out } => prepare(&config, seed, &out),
        Command::Simulate {
            config,
            seed,
            systems,
            out,
            server: None,
        } => simulate(&config, seed, systems, &out),
        Command::Simulate {
            config,
            seed,
            systems,
            out,
            server: Some(server),
        } => remote::simulate(&server, &config, seed, systems, &out),
        Command::Evaluate { reference, estimated } => {
            let c = evaluate(&reference, &estimated)?;
            println!("S,D,I,N,ER");
            let er = c.error_rate().map_or(String::new(), |e| e.to_string());
            println!("{},{},{},{},{er}", c.substitutions, c.deletions, c.insertions, c.n_ref);
            Ok(())
        }
        Command::Serve { root, addr } => serve(root, addr),
        Command::Report { dir, out } => {
            let bytes = summary_csv(&report(&dir)?)?;
            match out {
                Some(p) => write_atomic(&p, &bytes)?,
                None => std::io::stdout().write_all(&bytes)?,
            }
            Ok(())
        }
    }
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let mut msg = e.to_string();
        for cause in e.chain().skip(1) {
            let c = cause.to_string();
            if !msg.contains(&c) {
                msg = format!("{msg}: {c}");
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
