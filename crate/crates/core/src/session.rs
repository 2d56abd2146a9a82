//! Interactive sessions: a human picks an object and a primitive each step
//! and the shared episode engine executes it.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, PoisonError, TryLockError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{mix_seed, Episode, HarnessError, HeapRef, LoadedHeap, RolloutConfig, RolloutRecord};
use crate::heapgen::{generate_heap_at, HeapSpec};
use crate::planners::{Action, Primitive};
use crate::policies::{recognize_target, Method, PolicyConfig, TerminationCause};
use crate::scene::{ObjectId, SceneSnapshot, SceneState};
use crate::simphys::Outcome;

pub const WIRE_VERSION: u32 = 1;
pub const HUMAN_LABEL: &str = "human";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session already finished ({0})")]
    SessionFinished(TerminationCause),
    #[error("object {0} is not visible")]
    UnknownObject(ObjectId),
    #[error("a step is already in flight for this session")]
    ConcurrentStep,
    #[error("bad snapshot: {0}")]
    BadSnapshot(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Engine(HarnessError),
}

impl From<HarnessError> for SessionError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::UnknownObject(id) => SessionError::UnknownObject(id),
            HarnessError::Finished(c) => SessionError::SessionFinished(c),
            other => SessionError::Engine(other),
        }
    }
}

/// Where a new session's scene comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSource {
    /// Freshly generated heap.
    Spec { spec: HeapSpec },
    /// Exported scene snapshot, validated on arrival.
    Snapshot { snapshot: serde_json::Value },
    /// Heap preloaded by the server, by manifest name.
    Heap { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub version: u32,
    pub source: SceneSource,
    /// Seeds the physics draws; defaults to 0.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub version: u32,
    /// Optional here because the HTTP route already names the session; when
    /// present it must match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub object_id: ObjectId,
    pub primitive: Primitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinView {
    pub width: f64,
    pub depth: f64,
    pub wall_thickness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedObject {
    pub id: ObjectId,
    pub layer: u32,
    /// Footprint parts in world coordinates (m), drawn in ascending layer order.
    pub polygons: Vec<Vec<[f64; 2]>>,
    pub color: String,
    /// Set only while the target is recognized.
    pub target: bool,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEcho {
    pub goal_id: ObjectId,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "cause", rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Finished(TerminationCause),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub version: u32,
    pub session_id: String,
    pub timestep: u32,
    pub actions_taken: u32,
    pub bin: BinView,
    pub objects: Vec<RenderedObject>,
    pub plan: Option<PlanEcho>,
    pub quality: Option<f64>,
    pub outcome: Option<Outcome>,
    pub reward_delta: Option<f64>,
    pub status: SessionStatus,
}

/// Stable, well-spread fill colour per object id.
pub fn object_color(id: ObjectId) -> String {
    let h = (id as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.55, 0.9);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let byte = |u: f64| ((u + m) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", byte(r), byte(g), byte(b))
}

fn status_of(ep: &Episode) -> SessionStatus {
    ep.termination().map_or(SessionStatus::Active, SessionStatus::Finished)
}

fn observe(id: &str, ep: &mut Episode) -> Result<StepResponse, SessionError> {
    let policy = ep.config().policy.clone();
    let masks = ep.masks()?.clone();
    let scene = ep.scene();
    let recognized = recognize_target(&masks, scene.target_id, &policy);
    let mut objects: Vec<RenderedObject> = scene
        .active()
        .map(|o| RenderedObject {
            id: o.id,
            layer: o.layer,
            polygons: o.world_parts().iter().map(|part| part.iter().map(|p| [p.x, p.y]).collect()).collect(),
            color: object_color(o.id),
            target: recognized == Some(o.id),
            visible: masks.get(o.id).is_some_and(|m| m.modal_area_px() > 0),
        })
        .collect();
    objects.sort_by_key(|o| (o.layer, o.id));
    Ok(StepResponse {
        version: WIRE_VERSION,
        session_id: id.to_string(),
        timestep: scene.timestep,
        actions_taken: ep.steps().len() as u32,
        bin: BinView { width: scene.bin.width, depth: scene.bin.depth, wall_thickness: scene.bin.wall_thickness },
        objects,
        plan: None,
        quality: None,
        outcome: None,
        reward_delta: None,
        status: status_of(ep),
    })
}

/// Rollout configuration used for human-driven episodes. Thresholds and
/// caps are never consulted; the step horizon still applies.
pub fn human_config(seed: u64, resolution: f64) -> RolloutConfig {
    let mut policy = PolicyConfig::new(Method::Random, false);
    policy.seed = seed;
    let mut config = RolloutConfig::new(policy);
    config.label = HUMAN_LABEL.to_string();
    config.resolution = resolution;
    config
}

struct Slot {
    episode: Episode,
}

/// Owns all live sessions. Distinct sessions step concurrently; steps on
/// one session are serialized and a second concurrent step is rejected.
pub struct SessionManager {
    sessions: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
    heaps: Vec<LoadedHeap>,
    resolution: f64,
    records_path: Option<PathBuf>,
    finished: Mutex<Vec<RolloutRecord>>,
    counter: AtomicU64,
    nonce: u64,
}

impl SessionManager {
    pub fn new(heaps: Vec<LoadedHeap>, resolution: f64) -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            heaps,
            resolution,
            records_path: None,
            finished: Mutex::new(Vec::new()),
            counter: AtomicU64::new(0),
            nonce: rand::random(),
        }
    }

    /// Appends each finished session's record to `path` as a JSON line.
    pub fn with_records_path(mut self, path: PathBuf) -> Self {
        self.records_path = Some(path);
        self
    }

    pub fn heap_names(&self) -> Vec<String> {
        self.heaps.iter().map(|h| h.heap.name.clone()).collect()
    }

    /// Records of every session that has finished so far.
    pub fn finished_records(&self) -> Vec<RolloutRecord> {
        self.finished.lock().unwrap_or_else(PoisonError::into_inner).clone()
    }

    fn resolve(&self, source: &SceneSource) -> Result<(SceneState, HeapRef), SessionError> {
        match source {
            SceneSource::Spec { spec } => {
                let scene = generate_heap_at(spec, self.resolution).map_err(|e| SessionError::BadRequest(e.to_string()))?;
                let heap = HeapRef { name: format!("spec-{}", spec.seed), seed: spec.seed, n_objects: spec.n_objects as u32 };
                Ok((scene, heap))
            }
            SceneSource::Snapshot { snapshot } => {
                let snap = SceneSnapshot::from_json(&snapshot.to_string()).map_err(|e| SessionError::BadSnapshot(e.to_string()))?;
                let heap = HeapRef { name: "snapshot".into(), seed: 0, n_objects: snap.scene.initial_count };
                Ok((snap.scene, heap))
            }
            SceneSource::Heap { name } => self
                .heaps
                .iter()
                .find(|h| &h.heap.name == name)
                .map(|h| (h.scene.clone(), h.heap.clone()))
                .ok_or_else(|| SessionError::BadRequest(format!("no heap named {name}"))),
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, SessionError> {
        let map = self.sessions.lock().unwrap_or_else(PoisonError::into_inner);
        map.get(id).cloned().ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn create_session(&self, req: &CreateSessionRequest) -> Result<StepResponse, SessionError> {
        check_version(req.version)?;
        let (scene, heap) = self.resolve(&req.source)?;
        let mut episode = Episode::new(scene, heap, human_config(req.seed, self.resolution)).map_err(|e| match e {
            HarnessError::Scene(e) => SessionError::BadSnapshot(e.to_string()),
            other => other.into(),
        })?;
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!("{:016x}", mix_seed(self.nonce, n));
        let first = observe(&id, &mut episode)?;
        self.sessions
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .insert(id, Arc::new(Mutex::new(Slot { episode })));
        Ok(first)
    }

    pub fn submit_step(&self, id: &str, req: &StepRequest) -> Result<StepResponse, SessionError> {
        check_version(req.version)?;
        if req.session_id.as_deref().is_some_and(|s| s != id) {
            return Err(SessionError::BadRequest("session_id does not match the addressed session".into()));
        }
        let slot = self.slot(id)?;
        let mut guard = match slot.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(SessionError::ConcurrentStep),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let ep = &mut guard.episode;
        if let Some(cause) = ep.termination() {
            return Err(SessionError::SessionFinished(cause));
        }
        let termination = ep.step_choice(req.object_id, req.primitive)?;
        let step = ep.steps().last().cloned().expect("a step was just executed");
        let mut resp = observe(id, ep)?;
        resp.plan = Some(PlanEcho { goal_id: step.goal_id, action: step.action });
        resp.quality = Some(step.quality);
        resp.outcome = Some(step.outcome);
        resp.reward_delta = Some(step.reward_delta);
        if termination.is_some() {
            let record = ep.record().expect("terminated");
            drop(guard);
            self.store_record(record)?;
        }
        Ok(resp)
    }

    /// Current state without side effects.
    pub fn get_observation(&self, id: &str) -> Result<StepResponse, SessionError> {
        let slot = self.slot(id)?;
        let mut guard = slot.lock().unwrap_or_else(PoisonError::into_inner);
        observe(id, &mut guard.episode)
    }

    fn store_record(&self, record: RolloutRecord) -> Result<(), SessionError> {
        let mut finished = self.finished.lock().unwrap_or_else(PoisonError::into_inner);
        if let Some(path) = &self.records_path {
            let mut line = serde_json::to_string(&record).map_err(|e| SessionError::Engine(e.into()))?;
            line.push('\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| SessionError::Engine(e.into()))?;
            f.write_all(line.as_bytes()).map_err(|e| SessionError::Engine(e.into()))?;
        }
        finished.push(record);
        Ok(())
    }
}

fn check_version(v: u32) -> Result<(), SessionError> {
    if v != WIRE_VERSION {
        return Err(SessionError::BadRequest(format!("wire version {v}, expected {WIRE_VERSION}")));
    }
    Ok(())
}
