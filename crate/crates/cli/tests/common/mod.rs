#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use alsed_core::embeddings::EmbeddingConfig;
use alsed_core::experiment::{CorpusSource, ExperimentConfig, ProjectConfig};
use alsed_core::model::{ModelConfig, TrainConfig};
use alsed_core::synth::rare_preset;

pub fn alsed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alsed"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn alsed")
}

pub fn ok(args: &[&str]) -> String {
    let out = alsed(args);
    assert!(
        out.status.success(),
        "alsed {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn small_project(classes: Vec<String>) -> ProjectConfig {
    ProjectConfig {
        name: "cli".into(),
        classes,
        embedding: EmbeddingConfig::RandomProjection {
            seed: 3,
            dim: 16,
            context: 2,
        },
        batch_fraction: 0.1,
        checkpoints: vec![0.2, 0.4],
        model: ModelConfig {
            hidden: 8,
            ..ModelConfig::default()
        },
        training: TrainConfig {
            max_epochs: 10,
            min_epochs: 3,
            patience: 3,
            ..TrainConfig::default()
        },
        ..ProjectConfig::default()
    }
}

/// A tiny experiment document: three 20 s training and two test recordings.
pub fn write_config(dir: &Path) -> PathBuf {
    let mut train = rare_preset(21, 3);
    train.recording_len_s = 20.0;
    train.events_per_minute = 9.0;
    train.id_prefix = "train".into();
    let mut test = train.clone();
    test.n_recordings = 2;
    test.id_prefix = "test".into();
    let classes = train.classes.iter().map(|c| c.name.clone()).collect();
    let exp = ExperimentConfig {
        name: "tiny".into(),
        systems: vec![1, 5],
        seeds: vec![1, 2],
        corpus: CorpusSource::Generator { train, test }.reseeded(21).unwrap(),
        project: small_project(classes),
    };
    let path = dir.join("tiny.toml");
    std::fs::write(&path, exp.to_toml().unwrap()).unwrap();
    path
}

pub fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timings.csv" {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub struct ServeProcess {
    child: Child,
    pub base: String,
}

impl ServeProcess {
    pub fn start(root: &Path) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_alsed"))
            .args(["serve", "--root", root.to_str().unwrap(), "--addr", "127.0.0.1:0"])
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().strip_prefix("listening on ").expect("listening line").to_string();
        Self { child, base }
    }

    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

