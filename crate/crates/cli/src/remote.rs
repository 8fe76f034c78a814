//! `simulate --server`: the same suite driven through a running annotation service.

use std::path::Path;

use alsed_core::binio::write_atomic;
use alsed_core::experiment::{load_source, system_label, ExperimentConfig};
use alsed_core::synth::write_corpus;
use alsed_service::client::{simulate as annotate_until, Client};
use alsed_service::project::Split;
use anyhow::{Context, Result};

pub fn simulate(server: &str, config: &str, seed: Option<u64>, systems: Option<Vec<u8>>, out: &Path) -> Result<()> {
    let mut exp = ExperimentConfig::load(config).with_context(|| format!("loading config {config:?}"))?;
    if let Some(seed) = seed {
        exp.seeds = vec![seed];
    }
    if let Some(systems) = systems {
        exp.systems = systems;
    }
    exp.validate()?;

    // The server reads audio from disk, so generated corpora are written out first.
    let (train, test) = load_source(&exp.corpus)?;
    let specs = exp.corpus.generator_specs();
    let corpus_dir = out.join("corpus");
    let train_manifest = write_corpus(&corpus_dir.join("train"), &train, specs.as_ref().map(|s| &s.0))?;
    let test_manifest = write_corpus(&corpus_dir.join("test"), &test, specs.as_ref().map(|s| &s.1))?;
    let train_manifest = std::fs::canonicalize(&train_manifest)?;
    let test_manifest = std::fs::canonicalize(&test_manifest)?;

    let client = Client::new(server);
    let mut csv = String::from("system,seed,project,budget_fraction,labeled_fraction,training_rounds,S,D,I,N,er\n");
    for &system in &exp.systems {
        for &seed in &exp.seeds {
            let mut cfg = exp.project.clone();
            cfg.seed = seed;
            let id = client.create_project(&cfg, Some(system))?;
            client.add_manifest(&id, &train_manifest, Split::Train)?;
            client.add_manifest(&id, &test_manifest, Split::Test)?;
            client.prepare(&id)?;
            let mode = exp.project.for_system(system)?.label_type;
            for &budget in &cfg.checkpoints {
                annotate_until(&client, &id, &train.truth, mode, budget)?;
                let m = client.metrics(&id)?;
                let Some(last) = m.history.last() else { continue };
                let c = &last.counts;
                csv.push_str(&format!(
                    "{},{seed},{id},{budget},{},{},{},{},{},{},{}\n",
                    system_label(Some(system), ""),
                    last.labeled_fraction,
                    last.round,
                    c.substitutions,
                    c.deletions,
                    c.insertions,
                    c.n_ref,
                    last.er.map_or(String::new(), |e| e.to_string()),
                ));
                tracing::info!(system, seed, budget, er = ?last.er, "checkpoint");
            }
        }
    }
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("remote_metrics.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}
