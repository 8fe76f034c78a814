#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;

use alsed_core::embeddings::EmbeddingConfig;
use alsed_core::experiment::ProjectConfig;
use alsed_core::model::{ModelConfig, TrainConfig};
use alsed_core::synth::{generate, rare_preset, write_corpus, GeneratedCorpus};

/// A live service on an ephemeral port, stopped on drop.
pub struct Server {
    pub base: String,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(root: &Path) -> Self {
        let root = root.to_path_buf();
        let (addr_tx, addr_rx) = mpsc::channel::<SocketAddr>();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                alsed_service::serve(
                    root,
                    "127.0.0.1:0".parse().unwrap(),
                    move |a| addr_tx.send(a).unwrap(),
                    async move {
                        let _ = stop_rx.await;
                    },
                )
                .await
                .unwrap();
            });
        });
        let addr = addr_rx.recv().expect("server bound");
        Self {
            base: format!("http://{addr}"),
            shutdown: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.halt();
    }
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub train: GeneratedCorpus,
    pub test: GeneratedCorpus,
}

/// Four 20 s training recordings and two test recordings with frequent events.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = rare_preset(11, 4);
    spec.recording_len_s = 20.0;
    spec.events_per_minute = 9.0;
    spec.id_prefix = "train".into();
    let train = generate(&spec).unwrap();
    let train_manifest = write_corpus(&dir.path().join("train"), &train, Some(&spec)).unwrap();
    let mut tspec = spec.clone();
    tspec.seed = 12;
    tspec.n_recordings = 2;
    tspec.id_prefix = "test".into();
    let test = generate(&tspec).unwrap();
    let test_manifest = write_corpus(&dir.path().join("test"), &test, Some(&tspec)).unwrap();
    Fixture {
        dir,
        train_manifest,
        test_manifest,
        train,
        test,
    }
}

/// Small, fast configuration over the fixture's classes.
pub fn small_config(f: &Fixture) -> ProjectConfig {
    ProjectConfig {
        name: "fixture".into(),
        classes: f.train.truth.classes.names().to_vec(),
        embedding: EmbeddingConfig::RandomProjection {
            seed: 3,
            dim: 16,
            context: 2,
        },
        batch_fraction: 0.1,
        seed: 5,
        model: ModelConfig {
            hidden: 8,
            ..ModelConfig::default()
        },
        training: TrainConfig {
            max_epochs: 15,
            min_epochs: 3,
            patience: 3,
            ..TrainConfig::default()
        },
        ..ProjectConfig::default()
    }
}
