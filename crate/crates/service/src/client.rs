//! Blocking client for the HTTP API, plus a simulated annotator that answers
//! batches from ground truth.

use std::path::Path;
use std::time::{Duration, Instant};

use alsed_core::experiment::ProjectConfig;
use alsed_core::synth::{simulate_annotation, AnnotationMode, GroundTruth, ManifestEvent, SimulatedAnnotation};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use thiserror::Error;
use ureq::Agent;

use crate::project::{AnnotationAck, BatchDescriptor, JobState, MelPayload, MetricsReport, ProjectStatus, Split};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("HTTP {status}: {message}")]
    Status { status: u16, message: String },
    #[error("request failed: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error(transparent)]
    Core(#[from] alsed_core::Error),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            Self::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type ClientResult<T> = std::result::Result<T, ClientError>;

pub struct Client {
    agent: Agent,
    base: String,
}

fn transport(e: ureq::Error) -> ClientError {
    ClientError::Transport(e.to_string())
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        let agent: Agent = Agent::config_builder().http_status_as_error(false).build().into();
        Self {
            agent,
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn finish(mut resp: ureq::http::Response<ureq::Body>) -> ClientResult<Vec<u8>> {
        let status = resp.status().as_u16();
        let bytes = resp.body_mut().read_to_vec().map_err(transport)?;
        if status >= 400 {
            let message = serde_json::from_slice::<Value>(&bytes)
                .ok()
                .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
                .unwrap_or_else(|| String::from_utf8_lossy(&bytes).into_owned());
            return Err(ClientError::Status { status, message });
        }
        Ok(bytes)
    }

    fn decode<T: DeserializeOwned>(bytes: &[u8]) -> ClientResult<T> {
        serde_json::from_slice(bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn get_bytes(&self, path: &str) -> ClientResult<Vec<u8>> {
        let resp = self.agent.get(format!("{}{path}", self.base)).call().map_err(transport)?;
        Self::finish(resp)
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> ClientResult<T> {
        Self::decode(&self.get_bytes(path)?)
    }

    pub fn post<T: DeserializeOwned>(&self, path: &str, body: &Value) -> ClientResult<T> {
        let resp = self
            .agent
            .post(format!("{}{path}", self.base))
            .send_json(body)
            .map_err(transport)?;
        Self::decode(&Self::finish(resp)?)
    }

    pub fn post_raw(&self, path: &str, content_type: &str, body: &[u8]) -> ClientResult<Vec<u8>> {
        let resp = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("content-type", content_type)
            .send(body)
            .map_err(transport)?;
        Self::finish(resp)
    }

    /// Creates a project; `system` applies a row of the systems table.
    pub fn create_project(&self, config: &ProjectConfig, system: Option<u8>) -> ClientResult<String> {
        let path = match system {
            Some(s) => format!("/projects?system={s}"),
            None => "/projects".to_string(),
        };
        let body = serde_json::to_value(config).map_err(|e| ClientError::Decode(e.to_string()))?;
        let v: Value = self.post(&path, &body)?;
        v["id"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ClientError::Decode("missing project id".into()))
    }

    /// Registers every recording of a corpus manifest visible to the server.
    pub fn add_manifest(&self, project: &str, manifest: &Path, split: Split) -> ClientResult<usize> {
        let body = json!({ "manifest": manifest, "split": split });
        let v: Vec<Value> = self.post(&format!("/projects/{project}/recordings"), &body)?;
        Ok(v.len())
    }

    pub fn prepare(&self, project: &str) -> ClientResult<usize> {
        let v: Value = self.post(&format!("/projects/{project}/prepare"), &json!({}))?;
        v["n_segments"]
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| ClientError::Decode("missing n_segments".into()))
    }

    /// The open batch, or a new one (waiting for training if needed).
    pub fn batch(&self, project: &str) -> ClientResult<BatchDescriptor> {
        self.get(&format!("/projects/{project}/batch"))
    }

    pub fn annotate_weak(&self, project: &str, segment_id: u32, labels: &[String]) -> ClientResult<AnnotationAck> {
        self.post(
            &format!("/projects/{project}/annotations"),
            &json!({ "segment_id": segment_id, "labels": labels }),
        )
    }

    pub fn annotate_strong(
        &self,
        project: &str,
        segment_id: u32,
        events: &[ManifestEvent],
    ) -> ClientResult<AnnotationAck> {
        self.post(
            &format!("/projects/{project}/annotations"),
            &json!({ "segment_id": segment_id, "events": events }),
        )
    }

    pub fn status(&self, project: &str) -> ClientResult<ProjectStatus> {
        self.get(&format!("/projects/{project}/status"))
    }

    pub fn metrics(&self, project: &str) -> ClientResult<MetricsReport> {
        self.get(&format!("/projects/{project}/metrics"))
    }

    pub fn segment_audio(&self, sid: &str, context_s: f64) -> ClientResult<Vec<u8>> {
        self.get_bytes(&format!("/segments/{sid}/audio?context={context_s}"))
    }

    pub fn segment_mel(&self, sid: &str) -> ClientResult<MelPayload> {
        self.get(&format!("/segments/{sid}/mel"))
    }

    /// Polls until no training job is queued or running.
    pub fn wait_idle(&self, project: &str, timeout: Duration) -> ClientResult<ProjectStatus> {
        let start = Instant::now();
        loop {
            let s = self.status(project)?;
            if !matches!(s.training, JobState::Queued | JobState::Running) {
                return Ok(s);
            }
            if start.elapsed() > timeout {
                return Err(ClientError::Timeout("training"));
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

/// Answers every open segment of `batch` from `truth`, as the simulated
/// annotator of the in-process loop does.
pub fn annotate_batch(
    client: &Client,
    project: &str,
    batch: &BatchDescriptor,
    truth: &GroundTruth,
    mode: AnnotationMode,
) -> ClientResult<()> {
    for seg in batch.segments.iter().filter(|s| !s.annotated) {
        match simulate_annotation(truth, &seg.recording_id, seg.start_s, seg.end_s, mode)? {
            SimulatedAnnotation::Weak(labels) => {
                client.annotate_weak(project, seg.segment_id, &truth.classes.names_of(&labels))?;
            }
            SimulatedAnnotation::Strong(events) => {
                let events: Vec<ManifestEvent> = events
                    .iter()
                    .map(|e| ManifestEvent {
                        class: truth.classes.name(e.class).to_string(),
                        onset_s: e.onset_s,
                        offset_s: e.offset_s,
                    })
                    .collect();
                client.annotate_strong(project, seg.segment_id, &events)?;
            }
        }
    }
    Ok(())
}

/// Runs the simulated annotator until the labeled fraction reaches `budget`
/// or the pool is exhausted. Returns the segment ids of each batch.
pub fn simulate(
    client: &Client,
    project: &str,
    truth: &GroundTruth,
    mode: AnnotationMode,
    budget: f64,
) -> ClientResult<Vec<Vec<u32>>> {
    let mut batches = Vec::new();
    loop {
        let batch = client.batch(project)?;
        if batch.segments.is_empty() {
            break;
        }
        annotate_batch(client, project, &batch, truth, mode)?;
        batches.push(batch.segments.iter().map(|s| s.segment_id).collect());
        let status = client.wait_idle(project, Duration::from_secs(600))?;
        if status.labeled_duration_s >= budget * status.total_duration_s - 1e-6 {
            break;
        }
    }
    Ok(batches)
}
