//! Rollout engine, experiment runner, persistence and reporting.

mod experiment;
mod manifest;
mod summary;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heapgen::HeapError;
use crate::planners::{Action, ActionPlan, PlanError, PlannerParams, PlanningContext, Primitive};
use crate::policies::{
    check_termination, select_action, target_grasp_reliability, Decision, PolicyConfig, PolicyError, PolicyState,
    TerminationCause,
};
use crate::scene::{rasterize_scene, ObjectId, SceneError, SceneState, SegMasks, DEFAULT_RESOLUTION};
use crate::simphys::{simulate_grasp, simulate_push, Outcome, PhysicsParams, SimError, TransitionResult};

pub use experiment::{run_batch, run_experiment, Execution, ExperimentOutput, WorkItem, PARTIAL_SUFFIX};
pub use manifest::{generate_manifest, load_manifest, HeapEntry, HeapManifest, LoadedHeap, MANIFEST_FILE};
pub use summary::{emit_reports, parse_records, summarize, ExperimentSummary, GroupSummary, REFERENCE_ROW};

pub const RECORD_SCHEMA_VERSION: u32 = 1;
pub const RESOLUTION_ENV: &str = "MECH_SEARCH_RESOLUTION";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Heap(#[from] HeapError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("run interrupted after {completed} of {total} rollouts: {reason}")]
    PartialRun { completed: usize, total: usize, reason: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("episode already finished ({0})")]
    Finished(TerminationCause),
    #[error("object {0} is not visible")]
    UnknownObject(ObjectId),
}

/// Everything that determines a rollout besides the heap itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Group label in reports; the policy name unless overridden.
    pub label: String,
    pub policy: PolicyConfig,
    pub planner: PlannerParams,
    pub physics: PhysicsParams,
    pub resolution: f64,
}

impl RolloutConfig {
    pub fn new(policy: PolicyConfig) -> Self {
        Self {
            label: policy.name().to_string(),
            policy,
            planner: PlannerParams::default(),
            physics: PhysicsParams::default(),
            resolution: DEFAULT_RESOLUTION,
        }
    }

    pub fn from_policy_name(name: &str) -> Result<Self, HarnessError> {
        Ok(Self::new(PolicyConfig::from_name(name)?))
    }
}

/// Raster resolution from the environment override, else the default.
pub fn resolution_from_env() -> Result<f64, HarnessError> {
    match std::env::var(RESOLUTION_ENV) {
        Ok(v) => match v.trim().parse::<f64>() {
            Ok(r) if r.is_finite() && r > 0.0 => Ok(r),
            _ => Err(HarnessError::Invalid(format!("{RESOLUTION_ENV}={v} is not a positive number"))),
        },
        Err(_) => Ok(DEFAULT_RESOLUTION),
    }
}

/// Identity of the heap a rollout ran on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeapRef {
    pub name: String,
    pub seed: u64,
    pub n_objects: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActionCounts {
    pub suction: u32,
    pub parallel_jaw: u32,
    pub push: u32,
}

impl ActionCounts {
    pub fn add(&mut self, p: Primitive) {
        match p {
            Primitive::Suction => self.suction += 1,
            Primitive::ParallelJaw => self.parallel_jaw += 1,
            Primitive::Push => self.push += 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.suction + self.parallel_jaw + self.push
    }

    pub fn merge(&mut self, o: &ActionCounts) {
        self.suction += o.suction;
        self.parallel_jaw += o.parallel_jaw;
        self.push += o.push;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub timestep: u32,
    /// First entry of the priority list, absent for human-chosen actions.
    pub priority_head: Option<ObjectId>,
    pub goal_id: ObjectId,
    pub action: Action,
    pub quality: f64,
    pub outcome: Outcome,
    /// Change in estimated target grasp reliability across the step.
    pub reward_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub schema_version: u32,
    pub heap: HeapRef,
    pub config: RolloutConfig,
    pub steps: Vec<StepRecord>,
    pub termination: TerminationCause,
    pub action_counts: ActionCounts,
}

impl RolloutRecord {
    pub fn num_actions(&self) -> u32 {
        self.steps.len() as u32
    }

    pub fn is_success(&self) -> bool {
        self.termination == TerminationCause::Success
    }
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One rollout in progress. Both the autonomous runner and interactive
/// sessions drive the same engine.
#[derive(Debug, Clone)]
pub struct Episode {
    scene: SceneState,
    heap: HeapRef,
    config: RolloutConfig,
    policy_state: PolicyState,
    physics_rng: ChaCha8Rng,
    steps: Vec<StepRecord>,
    counts: ActionCounts,
    termination: Option<TerminationCause>,
    /// Masks and target reliability of the current scene.
    observation: Option<(SegMasks, f64)>,
}

impl Episode {
    pub fn new(heap_scene: SceneState, heap: HeapRef, config: RolloutConfig) -> Result<Self, HarnessError> {
        heap_scene.validate()?;
        config.policy.validate()?;
        if !(config.resolution.is_finite() && config.resolution > 0.0) {
            return Err(HarnessError::Invalid(format!("resolution {}", config.resolution)));
        }
        let seed = mix_seed(config.policy.seed, heap.seed);
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
        policy_rng.set_stream(0);
        let mut physics_rng = ChaCha8Rng::seed_from_u64(seed);
        physics_rng.set_stream(1);
        Ok(Self {
            scene: heap_scene,
            heap,
            config,
            policy_state: PolicyState::new(policy_rng),
            physics_rng,
            steps: Vec::new(),
            counts: ActionCounts::default(),
            termination: None,
            observation: None,
        })
    }

    pub fn scene(&self) -> &SceneState {
        &self.scene
    }

    pub fn config(&self) -> &RolloutConfig {
        &self.config
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn termination(&self) -> Option<TerminationCause> {
        self.termination
    }

    /// Segmentation of the current scene (cached between steps).
    pub fn masks(&mut self) -> Result<&SegMasks, HarnessError> {
        self.ensure_observation()?;
        Ok(&self.observation.as_ref().expect("just computed").0)
    }

    fn ensure_observation(&mut self) -> Result<(), HarnessError> {
        if self.observation.is_none() {
            let masks = rasterize_scene(&self.scene, self.config.resolution)?;
            let v = target_grasp_reliability(
                &PlanningContext::new(&self.scene, &masks, &self.config.planner),
                self.scene.target_id,
            );
            self.observation = Some((masks, v));
        }
        Ok(())
    }

    fn check_running(&self) -> Result<(), HarnessError> {
        match self.termination {
            Some(t) => Err(HarnessError::Finished(t)),
            None => Ok(()),
        }
    }

    /// Lets the configured policy choose and execute one action.
    pub fn step_policy(&mut self) -> Result<Option<TerminationCause>, HarnessError> {
        self.check_running()?;
        self.ensure_observation()?;
        let (masks, _) = self.observation.as_ref().expect("observed");
        let ctx = PlanningContext::new(&self.scene, masks, &self.config.planner);
        let selection = select_action(&ctx, &self.config.policy, &mut self.policy_state);
        match selection.decision {
            Decision::Fail(cause) => {
                self.termination = Some(cause);
                Ok(self.termination)
            }
            Decision::Execute(plan) => self.execute(plan, selection.priority.first().copied()),
        }
    }

    /// Plans `primitive` on a chosen visible object and executes it with no
    /// confidence threshold.
    pub fn step_choice(&mut self, object: ObjectId, primitive: Primitive) -> Result<Option<TerminationCause>, HarnessError> {
        self.check_running()?;
        self.ensure_observation()?;
        let (masks, _) = self.observation.as_ref().expect("observed");
        if !masks.get(object).is_some_and(|e| e.modal_area_px() > 0) {
            return Err(HarnessError::UnknownObject(object));
        }
        let ctx = PlanningContext::new(&self.scene, masks, &self.config.planner);
        let plan = match ctx.plan(primitive, object) {
            Ok(p) => p,
            Err(PlanError::EmptyMask(id) | PlanError::UnknownObject(id)) => return Err(HarnessError::UnknownObject(id)),
            Err(e) => return Err(e.into()),
        };
        self.execute(plan, None)
    }

    fn execute(&mut self, plan: ActionPlan, priority_head: Option<ObjectId>) -> Result<Option<TerminationCause>, HarnessError> {
        let v_before = self.observation.as_ref().map_or(0.0, |o| o.1);
        let result: TransitionResult = if plan.primitive().is_grasp() {
            simulate_grasp(&self.scene, &plan, &self.config.physics, &mut self.physics_rng)?
        } else {
            simulate_push(&self.scene, &plan, &self.config.physics)?
        };
        self.policy_state.record(plan.primitive());
        self.counts.add(plan.primitive());
        let termination = check_termination(&plan, &result, &self.policy_state, &self.config.policy);
        let timestep = self.scene.timestep;
        self.scene = result.next_scene.clone();
        self.observation = None;
        self.ensure_observation()?;
        let v_after = self.observation.as_ref().expect("observed").1;
        self.steps.push(StepRecord {
            timestep,
            priority_head,
            goal_id: plan.goal_id,
            action: plan.action,
            quality: plan.quality,
            outcome: result.outcome,
            reward_delta: v_after - v_before,
        });
        self.termination = termination;
        Ok(termination)
    }

    /// Finished rollout record; `None` while the episode is still running.
    pub fn record(&self) -> Option<RolloutRecord> {
        self.termination.map(|termination| RolloutRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            heap: self.heap.clone(),
            config: self.config.clone(),
            steps: self.steps.clone(),
            termination,
            action_counts: self.counts,
        })
    }
}

/// Runs the configured policy on `heap` until termination.
pub fn run_rollout(heap: &SceneState, heap_ref: &HeapRef, config: &RolloutConfig) -> Result<RolloutRecord, HarnessError> {
    let mut ep = Episode::new(heap.clone(), heap_ref.clone(), config.clone())?;
    while ep.step_policy()?.is_none() {}
    Ok(ep.record().expect("terminated"))
}

/// Replays a fixed sequence of (object, primitive) choices. Returns the
/// episode so callers can inspect the final scene; stops early when the
/// episode terminates.
pub fn run_scripted(
    heap: &SceneState,
    heap_ref: &HeapRef,
    config: &RolloutConfig,
    script: &[(ObjectId, Primitive)],
) -> Result<Episode, HarnessError> {
    let mut ep = Episode::new(heap.clone(), heap_ref.clone(), config.clone())?;
    for &(object, primitive) in script {
        if ep.step_choice(object, primitive)?.is_some() {
            break;
        }
    }
    Ok(ep)
}
