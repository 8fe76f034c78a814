//! HTTP routes over a directory of projects.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use alsed_core::experiment::ProjectConfig;
use alsed_core::synth::{CorpusManifest, ManifestEvent};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::Deserialize;
use tokio::sync::watch;

use crate::error::{Result, ServiceError};
use crate::project::{parse_sid, JobState, Project, RecordingEntry, Split};

#[derive(Clone)]
struct Handle {
    project: Arc<Mutex<Project>>,
    changed: watch::Sender<u64>,
}

impl Handle {
    fn new(project: Project) -> Self {
        Self {
            project: Arc::new(Mutex::new(project)),
            changed: watch::Sender::new(0),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Project> {
        self.project.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn notify(&self) {
        self.changed.send_modify(|n| *n += 1);
    }
}

/// Shared service state: the project root and the open projects.
#[derive(Clone)]
pub struct AppState {
    root: PathBuf,
    projects: Arc<RwLock<BTreeMap<String, Handle>>>,
}

impl AppState {
    /// Opens every project under `<root>/projects`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let dir = root.join("projects");
        std::fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        let mut projects = BTreeMap::new();
        let entries = std::fs::read_dir(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| ServiceError::io(&dir, e))?;
            if !entry.path().join("config.toml").exists() {
                continue;
            }
            let id = entry.file_name().to_string_lossy().into_owned();
            let project = Project::open(entry.path(), id.clone())?;
            tracing::info!(project = %id, "opened");
            projects.insert(id, Handle::new(project));
        }
        Ok(Self {
            root,
            projects: Arc::new(RwLock::new(projects)),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn handle(&self, id: &str) -> Result<Handle> {
        self.projects
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown project {id:?}")))
    }

    /// Starts workers for training jobs that were queued before a restart.
    /// Must be called from within a tokio runtime.
    pub fn resume_training(&self) {
        let handles: Vec<Handle> = self.projects.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
        for h in handles {
            if h.lock().job() == JobState::Queued {
                spawn_training(h);
            }
        }
    }
}

fn spawn_training(h: Handle) {
    tokio::task::spawn_blocking(move || {
        let job = h.lock().begin_training();
        h.notify();
        let Some(job) = job else { return };
        let round = job.round;
        let outcome = job.run();
        if let Err(e) = h.lock().finish_training(round, outcome) {
            tracing::error!(error = %e, "could not record training outcome");
        }
        h.notify();
    });
}

async fn blocking<T: Send + 'static>(h: &Handle, f: impl FnOnce(&mut Project) -> Result<T> + Send + 'static) -> Result<T> {
    let h = h.clone();
    tokio::task::spawn_blocking(move || f(&mut h.lock()))
        .await
        .map_err(|e| ServiceError::Task(e.to_string()))?
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}/recordings", post(add_recordings))
        .route("/projects/{id}/prepare", post(prepare))
        .route("/projects/{id}/batch", get(batch))
        .route("/projects/{id}/batch/abandon", post(abandon))
        .route("/projects/{id}/annotations", post(annotate))
        .route("/projects/{id}/train", post(request_training))
        .route("/projects/{id}/status", get(status))
        .route("/projects/{id}/metrics", get(metrics))
        .route("/segments/{sid}/audio", get(segment_audio))
        .route("/segments/{sid}/mel", get(segment_mel))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct CreateQuery {
    system: Option<u8>,
}

fn parse_config(headers: &HeaderMap, body: &[u8]) -> Result<ProjectConfig> {
    let text = std::str::from_utf8(body).map_err(|_| ServiceError::BadRequest("body is not UTF-8".into()))?;
    let is_toml = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("toml"));
    if is_toml {
        return toml::from_str(text).map_err(|e| ServiceError::BadRequest(format!("malformed config: {e}")));
    }
    serde_json::from_str(text).map_err(|e| ServiceError::BadRequest(format!("malformed config: {e}")))
}

async fn create_project(
    State(state): State<AppState>,
    Query(q): Query<CreateQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<impl IntoResponse> {
    let mut config = parse_config(&headers, &body)?;
    if let Some(system) = q.system {
        config = config.for_system(system)?;
    }
    config.validate()?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let dir = state.root.join("projects").join(&id);
    let name = config.name.clone();
    let pid = id.clone();
    let project = tokio::task::spawn_blocking(move || Project::create(dir, pid, config))
        .await
        .map_err(|e| ServiceError::Task(e.to_string()))??;
    state
        .projects
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(id.clone(), Handle::new(project));
    tracing::info!(project = %id, %name, "created");
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "id": id, "name": name }))))
}

async fn list_projects(State(state): State<AppState>) -> Result<impl IntoResponse> {
    let handles: Vec<Handle> = state.projects.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
    let mut out = Vec::with_capacity(handles.len());
    for h in handles {
        out.push(blocking(&h, |p| Ok(p.status())).await?);
    }
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordingBody {
    id: String,
    #[serde(default)]
    split: Split,
    /// Server-side path of a WAV file.
    path: Option<PathBuf>,
    wav_base64: Option<String>,
    events: Option<Vec<ManifestEvent>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RecordingRequest {
    /// Registers every recording of a corpus manifest, with its ground truth.
    Manifest {
        manifest: PathBuf,
        #[serde(default)]
        split: Split,
    },
    One(RecordingBody),
    Many(Vec<RecordingBody>),
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| ServiceError::BadRequest(format!("cannot read {}: {e}", path.display())))
}

fn register(p: &mut Project, req: RecordingRequest) -> Result<Vec<RecordingEntry>> {
    let bodies = match req {
        RecordingRequest::Manifest { manifest, split } => {
            let m = CorpusManifest::load(&manifest).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            m.recordings
                .into_iter()
                .map(|r| RecordingBody {
                    id: r.id,
                    split,
                    path: Some(base.join(r.file)),
                    wav_base64: None,
                    events: Some(r.events),
                })
                .collect()
        }
        RecordingRequest::One(b) => vec![b],
        RecordingRequest::Many(v) => v,
    };
    let mut out = Vec::with_capacity(bodies.len());
    for b in bodies {
        let wav = match (&b.path, &b.wav_base64) {
            (Some(path), None) => read_file(path)?,
            (None, Some(data)) => base64::engine::general_purpose::STANDARD
                .decode(data)
                .map_err(|e| ServiceError::BadRequest(format!("recording {}: bad base64: {e}", b.id)))?,
            _ => {
                return Err(ServiceError::BadRequest(format!(
                    "recording {}: give exactly one of path and wav_base64",
                    b.id
                )))
            }
        };
        out.push(p.add_recording(&b.id, b.split, &wav, b.events)?);
    }
    Ok(out)
}

async fn add_recordings(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<impl IntoResponse> {
    let req: RecordingRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("malformed request: {e}")))?;
    let h = state.handle(&id)?;
    let entries = blocking(&h, move |p| register(p, req)).await?;
    Ok((StatusCode::CREATED, Json(entries)))
}

async fn prepare(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse> {
    let h = state.handle(&id)?;
    let n = blocking(&h, |p| p.prepare()).await?;
    Ok(Json(serde_json::json!({ "n_segments": n })))
}

#[derive(Debug, Deserialize)]
struct BatchQuery {
    /// Ask for a new batch; an open batch is then a conflict.
    #[serde(default)]
    fresh: bool,
    /// Wait for a running training job instead of failing.
    #[serde(default = "yes")]
    wait: bool,
}

fn yes() -> bool {
    true
}

async fn batch(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<BatchQuery>,
) -> Result<impl IntoResponse> {
    let h = state.handle(&id)?;
    loop {
        let mut rx = h.changed.subscribe();
        let (fresh, wait) = (q.fresh, q.wait);
        let out = blocking(&h, move |p| {
            let busy = matches!(p.job(), JobState::Queued | JobState::Running);
            let open = p.session().is_some_and(|s| !s.open_batch().is_empty());
            if wait && busy && !open {
                return Ok(None);
            }
            p.batch(fresh).map(Some)
        })
        .await?;
        match out {
            Some(d) => return Ok(Json(d)),
            None => {
                rx.changed().await.map_err(|e| ServiceError::Task(e.to_string()))?;
            }
        }
    }
}

async fn abandon(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse> {
    let h = state.handle(&id)?;
    let n = blocking(&h, |p| p.abandon_batch()).await?;
    Ok(Json(serde_json::json!({ "abandoned": n })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationBody {
    segment_id: u32,
    /// Weak labels by class name; empty means "no target events".
    labels: Option<Vec<String>>,
    /// Strong labels.
    events: Option<Vec<ManifestEvent>>,
    annotator: Option<String>,
}

async fn annotate(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<impl IntoResponse> {
    let req: AnnotationBody =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("malformed annotation: {e}")))?;
    let h = state.handle(&id)?;
    let ack = blocking(&h, move |p| {
        let annotation = match (&req.labels, &req.events) {
            (Some(labels), None) => p.weak_annotation(labels)?,
            (None, Some(events)) => p.strong_annotation(events)?,
            _ => return Err(ServiceError::BadRequest("give exactly one of labels and events".into())),
        };
        p.annotate(req.segment_id, annotation, req.annotator)
    })
    .await?;
    if ack.batch_complete {
        h.notify();
        spawn_training(h);
    }
    Ok(Json(ack))
}

async fn request_training(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse> {
    let h = state.handle(&id)?;
    let job = blocking(&h, |p| p.request_training()).await?;
    h.notify();
    spawn_training(h);
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "training": job }))))
}

async fn status(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse> {
    let h = state.handle(&id)?;
    Ok(Json(blocking(&h, |p| Ok(p.status())).await?))
}

async fn metrics(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse> {
    let h = state.handle(&id)?;
    Ok(Json(blocking(&h, |p| Ok(p.metrics())).await?))
}

fn segment_handle(state: &AppState, sid: &str) -> Result<(Handle, u32)> {
    let (project, segment) = parse_sid(sid).ok_or_else(|| ServiceError::NotFound(format!("unknown segment {sid:?}")))?;
    Ok((state.handle(project)?, segment))
}

#[derive(Debug, Deserialize)]
struct AudioQuery {
    #[serde(default)]
    context: f64,
}

async fn segment_audio(
    State(state): State<AppState>,
    UrlPath(sid): UrlPath<String>,
    Query(q): Query<AudioQuery>,
) -> Result<impl IntoResponse> {
    let (h, segment) = segment_handle(&state, &sid)?;
    let bytes = blocking(&h, move |p| p.segment_audio(segment, q.context)).await?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes))
}

async fn segment_mel(State(state): State<AppState>, UrlPath(sid): UrlPath<String>) -> Result<impl IntoResponse> {
    let (h, segment) = segment_handle(&state, &sid)?;
    Ok(Json(blocking(&h, move |p| p.segment_mel(segment)).await?))
}
