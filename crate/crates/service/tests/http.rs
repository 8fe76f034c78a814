mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use alsed_core::audio::{decode_wav_bytes, load_audio};
use alsed_core::experiment::{evaluate_model, prepare_corpus, run_active_learning, segment_corpus};
use alsed_core::features::LogMelSpectrogram;
use alsed_core::model::SedModel;
use alsed_core::synth::{load_corpus, AnnotationMode};
use alsed_service::client::{annotate_batch, simulate, Client};
use alsed_service::project::Split;
use alsed_service::JobState;
use common::{fixture, small_config, Server};
use serde_json::{json, Value};

fn setup(client: &Client, f: &common::Fixture, system: Option<u8>) -> String {
    let id = client.create_project(&small_config(f), system).unwrap();
    assert_eq!(client.add_manifest(&id, &f.train_manifest, Split::Train).unwrap(), 4);
    assert_eq!(client.add_manifest(&id, &f.test_manifest, Split::Test).unwrap(), 2);
    id
}

#[test]
fn full_loop_reaches_metrics() {
    let f = fixture();
    let root = tempfile::tempdir().unwrap();
    let server = Server::start(root.path());
    let c = Client::new(&server.base);
    let id = setup(&c, &f, Some(5));
    let n = c.prepare(&id).unwrap();
    assert!(n >= 4);
    assert_eq!(c.metrics(&id).unwrap().history.len(), 0);

    let batch = c.batch(&id).unwrap();
    assert!(!batch.segments.is_empty());
    assert_eq!(batch.iteration, 1);
    annotate_batch(&c, &id, &batch, &f.train.truth, AnnotationMode::Weak).unwrap();
    let status = c.wait_idle(&id, Duration::from_secs(120)).unwrap();
    assert_eq!(status.training, JobState::Idle);
    assert_eq!(status.training_rounds, 1);
    assert_eq!(status.n_annotated, batch.segments.len());
    let labeled: f64 = batch.segments.iter().map(|s| s.duration_s).sum();
    assert!((status.labeled_duration_s - labeled).abs() < 1e-9);

    let m = c.metrics(&id).unwrap();
    assert!(m.ground_truth);
    assert_eq!(m.history.len(), 1);

    // The reported counts equal an offline evaluation of the saved checkpoint.
    let dir = root.path().join("projects").join(&id);
    let model = SedModel::load(dir.join("model.sedm")).unwrap();
    let cfg = small_config(&f);
    let corpus = prepare_corpus(&f.train, &f.test, &cfg.features, &cfg.embedding).unwrap();
    let counts = evaluate_model(&model, &corpus.test, &corpus.test_truth, &cfg.decode).unwrap();
    assert_eq!(m.history[0].counts, counts);
    assert_eq!(m.history[0].er, counts.error_rate());

    // The second batch never repeats a segment of the first.
    let second = c.batch(&id).unwrap();
    assert_eq!(second.iteration, 2);
    for s in &second.segments {
        assert!(batch.segments.iter().all(|b| b.segment_id != s.segment_id));
    }
}

#[test]
fn project_creation_errors_and_ids() {
    let f = fixture();
    let root = tempfile::tempdir().unwrap();
    let server = Server::start(root.path());
    let c = Client::new(&server.base);
    let a = c.create_project(&small_config(&f), None).unwrap();
    let b = c.create_project(&small_config(&f), None).unwrap();
    assert_ne!(a, b);

    let err = c.post_raw("/projects", "application/json", b"{not json").unwrap_err();
    assert_eq!(err.status(), Some(400));
    let err = c.post::<Value>("/projects", &json!({ "classes": ["a"], "bogus": 1 })).unwrap_err();
    assert_eq!(err.status(), Some(400));
    let err = c.post::<Value>("/projects", &json!({ "classes": [] })).unwrap_err();
    assert_eq!(err.status(), Some(400));

    let toml = "name = \"t\"\nclasses = [\"dog\", \"bird\"]\n";
    let body = c.post_raw("/projects", "application/toml", toml.as_bytes()).unwrap();
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["name"], "t");

    assert_eq!(c.status("nope").unwrap_err().status(), Some(404));
    let all: Vec<Value> = c.get("/projects").unwrap();
    assert_eq!(all.len(), 3);
}

#[test]
fn batch_and_annotation_conflicts() {
    let f = fixture();
    let root = tempfile::tempdir().unwrap();
    let server = Server::start(root.path());
    let c = Client::new(&server.base);
    let id = setup(&c, &f, Some(1));
    assert_eq!(c.batch(&id).unwrap_err().status(), Some(409), "unprepared");
    c.prepare(&id).unwrap();

    let batch = c.batch(&id).unwrap();
    // Repeatable read until labels arrive.
    let again = c.batch(&id).unwrap();
    let ids = |b: &alsed_service::project::BatchDescriptor| b.segments.iter().map(|s| s.segment_id).collect::<Vec<_>>();
    assert_eq!(ids(&batch), ids(&again));
    let err = c.get::<Value>(&format!("/projects/{id}/batch?fresh=true")).unwrap_err();
    assert_eq!(err.status(), Some(409));

    let first = batch.segments[0].segment_id;
    let ack = c.annotate_weak(&id, first, &[]).unwrap();
    assert_eq!(ack.remaining_in_batch, batch.segments.len() - 1);
    assert_eq!(c.annotate_weak(&id, first, &[]).unwrap_err().status(), Some(409));

    let status = c.status(&id).unwrap();
    let outside = (0..status.n_segments as u32)
        .find(|s| !ids(&batch).contains(s))
        .unwrap();
    assert_eq!(c.annotate_weak(&id, outside, &[]).unwrap_err().status(), Some(409));
    assert_eq!(c.annotate_weak(&id, 99_999, &[]).unwrap_err().status(), Some(404));
    if batch.segments.len() > 1 {
        let second = batch.segments[1].segment_id;
        let err = c.annotate_weak(&id, second, &["no-such-class".to_string()]).unwrap_err();
        assert_eq!(err.status(), Some(400));
        let err = c
            .post::<Value>(&format!("/projects/{id}/annotations"), &json!({ "segment_id": second }))
            .unwrap_err();
        assert_eq!(err.status(), Some(400));
    }

    // Abandoning returns the unannotated remainder to the pool.
    let v: Value = c.post(&format!("/projects/{id}/batch/abandon"), &json!({})).unwrap();
    assert_eq!(v["abandoned"].as_u64().unwrap() as usize, batch.segments.len() - 1);
    let status = c.status(&id).unwrap();
    assert!(status.open_batch.is_empty());
    assert_eq!(status.n_annotated, 1);
}

#[test]
fn segment_resources_match_sources() {
    let f = fixture();
    let root = tempfile::tempdir().unwrap();
    let server = Server::start(root.path());
    let c = Client::new(&server.base);
    let id = setup(&c, &f, Some(1));
    c.prepare(&id).unwrap();
    let batch = c.batch(&id).unwrap();
    let seg = &batch.segments[0];
    let source = load_audio(f.train_manifest.parent().unwrap().join(format!("{}.wav", seg.recording_id)), "src").unwrap();
    let rate = source.sample_rate as f64;

    let bytes = c.segment_audio(&seg.sid, 0.0).unwrap();
    let expected = ((seg.end_s - seg.start_s) * rate).round() as usize;
    assert_eq!(bytes.len(), 44 + 2 * expected);
    let clip = decode_wav_bytes(&bytes, "seg").unwrap();
    let a = (seg.start_s * rate).round() as usize;
    assert_eq!(clip.samples, source.samples[a..a + expected]);

    let padded = decode_wav_bytes(&c.segment_audio(&seg.sid, 1.0).unwrap(), "seg").unwrap();
    let lo = ((seg.start_s - 1.0).max(0.0) * rate).round() as usize;
    let hi = (((seg.end_s + 1.0) * rate).round() as usize).min(source.samples.len());
    assert_eq!(padded.samples, source.samples[lo..hi]);

    // A segment at the very start of a recording gets no left padding.
    let status = c.status(&id).unwrap();
    let dir = root.path().join("projects").join(&id);
    let table = alsed_core::segmentation::read_segment_table(&dir.join("segments.csv")).unwrap();
    assert_eq!(table.len(), status.n_segments);
    let head = table.iter().find(|r| r.start_s == 0.0).unwrap();
    let sid = alsed_service::project::sid(&id, head.segment_id);
    let padded = decode_wav_bytes(&c.segment_audio(&sid, 1.0).unwrap(), "seg").unwrap();
    let n = ((head.end_s + 1.0) * rate).round() as usize;
    assert_eq!(padded.samples.len(), n);

    let mel = c.segment_mel(&seg.sid).unwrap();
    assert_eq!(mel.values.len(), mel.t * mel.b);
    assert_eq!(mel.b, 128);
    let full = LogMelSpectrogram::load(dir.join("mel").join(format!("{}.lmel", seg.recording_id)), "m").unwrap();
    let start = (seg.start_s / mel.hop_s).round() as usize;
    let rows: Vec<f32> = full.values.rows().into_iter().skip(start).take(mel.t).flatten().copied().collect();
    assert_eq!(rows, mel.values);

    assert_eq!(c.segment_audio(&format!("{id}.999999"), 0.0).unwrap_err().status(), Some(404));
    assert_eq!(c.segment_mel("garbage").unwrap_err().status(), Some(404));
    assert_eq!(c.segment_audio(&seg.sid, -1.0).unwrap_err().status(), Some(400));
}

#[test]
fn restart_keeps_acknowledged_annotations() {
    let f = fixture();
    let root = tempfile::tempdir().unwrap();
    let server = Server::start(root.path());
    let c = Client::new(&server.base);
    let id = setup(&c, &f, Some(5));
    c.prepare(&id).unwrap();
    let batch = c.batch(&id).unwrap();
    assert!(batch.segments.len() >= 2);
    let done: Vec<u32> = batch.segments.iter().take(batch.segments.len() / 2).map(|s| s.segment_id).collect();
    for &s in &done {
        c.annotate_weak(&id, s, &[]).unwrap();
    }
    server.stop();

    let server = Server::start(root.path());
    let c = Client::new(&server.base);
    let status = c.status(&id).unwrap();
    assert_eq!(status.n_annotated, done.len());
    let reopened = c.batch(&id).unwrap();
    let ids: Vec<u32> = reopened.segments.iter().map(|s| s.segment_id).collect();
    assert_eq!(ids, batch.segments.iter().map(|s| s.segment_id).collect::<Vec<_>>());
    for s in &reopened.segments {
        assert_eq!(s.annotated, done.contains(&s.segment_id));
    }
    annotate_batch(&c, &id, &reopened, &f.train.truth, AnnotationMode::Weak).unwrap();
    let status = c.wait_idle(&id, Duration::from_secs(120)).unwrap();
    assert_eq!(status.n_annotated, batch.segments.len());
    assert_eq!(status.training_rounds, 1);
}

#[test]
fn prepare_is_idempotent_and_names_bad_audio() {
    let f = fixture();
    let root = tempfile::tempdir().unwrap();
    let server = Server::start(root.path());
    let c = Client::new(&server.base);
    let id = setup(&c, &f, Some(1));
    let n = c.prepare(&id).unwrap();
    let dir = root.path().join("projects").join(&id);
    let table = std::fs::read(dir.join("segments.csv")).unwrap();
    assert_eq!(c.prepare(&id).unwrap(), n);
    assert_eq!(std::fs::read(dir.join("segments.csv")).unwrap(), table);

    // Registering a corrupt file is refused and names the recording.
    let err = c
        .post::<Value>(
            &format!("/projects/{id}/recordings"),
            &json!({ "id": "broken", "wav_base64": "AAAA" }),
        )
        .unwrap_err();
    assert_eq!(err.status(), Some(400));
    assert!(err.to_string().contains("broken"), "{err}");

    // Damage on disk after registration surfaces at prepare time.
    let other = c.create_project(&small_config(&f), Some(1)).unwrap();
    c.add_manifest(&other, &f.train_manifest, Split::Train).unwrap();
    let odir = root.path().join("projects").join(&other);
    std::fs::write(odir.join("audio").join("train0002.wav"), b"RIFF garbage").unwrap();
    let err = c.prepare(&other).unwrap_err();
    assert_eq!(err.status(), Some(400));
    assert!(err.to_string().contains("train0002"), "{err}");
}

#[test]
fn metrics_flag_without_ground_truth() {
    let f = fixture();
    let root = tempfile::tempdir().unwrap();
    let server = Server::start(root.path());
    let c = Client::new(&server.base);
    let id = c.create_project(&small_config(&f), Some(5)).unwrap();
    c.add_manifest(&id, &f.train_manifest, Split::Train).unwrap();
    c.prepare(&id).unwrap();
    let batch = c.batch(&id).unwrap();
    let last = batch.segments.len() - 1;
    for (i, s) in batch.segments.iter().enumerate() {
        let ack = c.annotate_weak(&id, s.segment_id, &[]).unwrap();
        if i == last {
            assert!(ack.batch_complete);
            assert_eq!(ack.training, JobState::Queued);
        } else {
            assert_eq!(ack.training, JobState::Idle);
        }
    }
    let status = c.wait_idle(&id, Duration::from_secs(120)).unwrap();
    assert_eq!(status.training_rounds, 1);
    let m = c.metrics(&id).unwrap();
    assert!(!m.ground_truth);
    assert!(m.history.is_empty());

    // A manual round can be queued once annotations exist.
    let v: Value = c.post(&format!("/projects/{id}/train"), &json!({})).unwrap();
    assert_eq!(v["training"], "queued");
    let status = c.wait_idle(&id, Duration::from_secs(120)).unwrap();
    assert_eq!(status.training_rounds, 2);
}

#[test]
fn http_run_matches_in_process_run() {
    let f = fixture();
    let cfg = small_config(&f).for_system(5).unwrap();
    let mut lib_cfg = cfg.clone();
    lib_cfg.checkpoints = vec![0.3];
    let corpus = prepare_corpus(
        &load_corpus(&f.train_manifest).unwrap(),
        &load_corpus(&f.test_manifest).unwrap(),
        &cfg.features,
        &cfg.embedding,
    )
    .unwrap();
    let segments = segment_corpus(&corpus.train, &cfg.segmentation);
    let lib = run_active_learning(&lib_cfg, &corpus, segments).unwrap();
    let mut lib_batches: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for row in &lib.trace {
        lib_batches.entry(row.iteration).or_default().push(row.segment_id);
    }
    let lib_batches: Vec<Vec<u32>> = lib_batches.into_values().collect();

    let root = tempfile::tempdir().unwrap();
    let server = Server::start(root.path());
    let c = Client::new(&server.base);
    let id = setup(&c, &f, Some(5));
    c.prepare(&id).unwrap();
    let http_batches = simulate(&c, &id, &f.train.truth, AnnotationMode::Weak, 0.3).unwrap();
    assert_eq!(http_batches, lib_batches);

    let m = c.metrics(&id).unwrap();
    let last = m.history.last().unwrap();
    let cp = &lib.checkpoints[0];
    assert_eq!(last.counts, cp.counts);
    assert!((last.labeled_duration_s - cp.labeled_duration_s).abs() < 1e-9);
    assert_eq!(last.round, cp.training_rounds);
}
