//! Action-selection methods: priority lists, grasp execution thresholds,
//! the push fallback, target recognition and termination.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planners::{ActionPlan, PlanningContext, Primitive};
use crate::scene::{ObjectId, SceneState, SegMasks};
use crate::simphys::{Outcome, TransitionResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    PreemptedRandom,
    LargestFirst,
}

/// How the grasp pass picks among threshold-clearing grasps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraspSelection {
    /// Walk the priority list and take the first object with a grasp above
    /// its threshold (best of the two grasp planners for that object).
    #[default]
    FirstFit,
    /// Highest-quality threshold-clearing grasp over all listed objects.
    GlobalArgmax,
}

impl FromStr for GraspSelection {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first-fit" => Ok(Self::FirstFit),
            "global-argmax" => Ok(Self::GlobalArgmax),
            _ => Err(PolicyError::UnknownSelection(s.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("unknown policy '{0}' (expected random, prandom, prandom-push, largest or largest-push)")]
    UnknownPolicy(String),
    #[error("unknown grasp selection '{0}' (expected first-fit or global-argmax)")]
    UnknownSelection(String),
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("no visible object to prioritize")]
    EmptyScene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub method: Method,
    pub pushing: bool,
    pub t_thresh: f64,
    pub t_high: f64,
    pub recognition_visibility_threshold: f64,
    pub push_consecutive_cap: u32,
    pub timestep_factor: u32,
    pub seed: u64,
    #[serde(default)]
    pub grasp_selection: GraspSelection,
}

impl PolicyConfig {
    pub fn new(method: Method, pushing: bool) -> Self {
        Self {
            method,
            pushing,
            t_thresh: 0.15,
            t_high: 0.3,
            recognition_visibility_threshold: 0.3,
            push_consecutive_cap: 3,
            timestep_factor: 2,
            seed: 0,
            grasp_selection: GraspSelection::FirstFit,
        }
    }

    /// Parses a CLI policy name.
    pub fn from_name(name: &str) -> Result<Self, PolicyError> {
        let (method, pushing) = match name {
            "random" => (Method::Random, false),
            "prandom" => (Method::PreemptedRandom, false),
            "prandom-push" => (Method::PreemptedRandom, true),
            "largest" => (Method::LargestFirst, false),
            "largest-push" => (Method::LargestFirst, true),
            _ => return Err(PolicyError::UnknownPolicy(name.to_string())),
        };
        Ok(Self::new(method, pushing))
    }

    pub fn name(&self) -> &'static str {
        match (self.method, self.pushing) {
            (Method::Random, false) => "random",
            (Method::Random, true) => "random-push",
            (Method::PreemptedRandom, false) => "prandom",
            (Method::PreemptedRandom, true) => "prandom-push",
            (Method::LargestFirst, false) => "largest",
            (Method::LargestFirst, true) => "largest-push",
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(0.0 <= self.t_thresh && self.t_thresh <= self.t_high && self.t_high <= 1.0) {
            return Err(PolicyError::InvalidConfig(format!(
                "need 0 <= t_thresh ({}) <= t_high ({}) <= 1",
                self.t_thresh, self.t_high
            )));
        }
        if !(0.0..=1.0).contains(&self.recognition_visibility_threshold) {
            return Err(PolicyError::InvalidConfig("recognition threshold outside [0, 1]".into()));
        }
        if self.push_consecutive_cap == 0 || self.timestep_factor == 0 {
            return Err(PolicyError::InvalidConfig("caps must be positive".into()));
        }
        Ok(())
    }

    /// Step budget for a heap of `n` objects.
    pub fn max_steps(&self, n: u32) -> u32 {
        self.timestep_factor * n
    }
}

/// Per-rollout mutable policy state.
#[derive(Debug, Clone)]
pub struct PolicyState {
    pub consecutive_pushes: u32,
    pub steps_taken: u32,
    pub rng: ChaCha8Rng,
}

impl PolicyState {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { consecutive_pushes: 0, steps_taken: 0, rng }
    }

    /// Books an executed action.
    pub fn record(&mut self, primitive: Primitive) {
        self.steps_taken += 1;
        if primitive == Primitive::Push {
            self.consecutive_pushes += 1;
        } else {
            self.consecutive_pushes = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    Success,
    NoActionAvailable,
    TargetEjected,
    Timeout,
}

impl TerminationCause {
    pub const ALL: [TerminationCause; 4] =
        [Self::Success, Self::NoActionAvailable, Self::TargetEjected, Self::Timeout];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::NoActionAvailable => "no_action_available",
            Self::TargetEjected => "target_ejected",
            Self::Timeout => "timeout",
        }
    }
}

impl fmt::Display for TerminationCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Execute(ActionPlan),
    Fail(TerminationCause),
}

/// Decision plus the inputs it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub decision: Decision,
    pub priority: Vec<ObjectId>,
    pub recognized: Option<ObjectId>,
}

/// Visibility stand-in for the target recognizer.
pub fn recognize_target(masks: &SegMasks, target_id: ObjectId, config: &PolicyConfig) -> Option<ObjectId> {
    let entry = masks.get(target_id)?;
    (entry.modal_area_px() > 0 && entry.visibility() >= config.recognition_visibility_threshold).then_some(target_id)
}

/// Ordered list of visible objects to try.
pub fn priority_list(
    method: Method,
    masks: &SegMasks,
    recognized: Option<ObjectId>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ObjectId>, PolicyError> {
    let visible = masks.visible_ids();
    if visible.is_empty() {
        return Err(PolicyError::EmptyScene);
    }
    let area = |id: ObjectId| masks.get(id).map_or(0, |e| e.modal_area_px());
    Ok(match method {
        Method::Random => {
            let mut ids = visible;
            ids.shuffle(rng);
            ids
        }
        Method::PreemptedRandom => {
            let mut rest: Vec<ObjectId> = visible.into_iter().filter(|&id| Some(id) != recognized).collect();
            rest.shuffle(rng);
            recognized.into_iter().chain(rest).collect()
        }
        Method::LargestFirst => {
            let mut rest: Vec<ObjectId> = visible.into_iter().filter(|&id| Some(id) != recognized).collect();
            rest.sort_by(|&a, &b| area(b).cmp(&area(a)).then(a.cmp(&b)));
            recognized.into_iter().chain(rest).collect()
        }
    })
}

/// Grasp confidence threshold for object `o`.
pub fn grasp_threshold(o: ObjectId, recognized: Option<ObjectId>, config: &PolicyConfig) -> f64 {
    if Some(o) == recognized || !config.pushing {
        config.t_thresh
    } else {
        config.t_high
    }
}

/// Better of the two grasp plans on one object; suction wins ties.
fn best_grasp(ctx: &PlanningContext<'_>, id: ObjectId) -> Option<ActionPlan> {
    let sc = crate::planners::plan_suction(ctx, id).ok();
    let pj = crate::planners::plan_parallel_jaw(ctx, id).ok();
    match (sc, pj) {
        (Some(s), Some(p)) => Some(if p.quality > s.quality { p } else { s }),
        (s, p) => s.or(p),
    }
}

/// Every object's best grasp that clears its threshold, in priority order.
pub fn executable_grasps(
    ctx: &PlanningContext<'_>,
    priority: &[ObjectId],
    recognized: Option<ObjectId>,
    config: &PolicyConfig,
) -> Vec<ActionPlan> {
    priority
        .iter()
        .filter_map(|&id| best_grasp(ctx, id).filter(|p| p.quality > grasp_threshold(id, recognized, config)))
        .collect()
}

fn grasp_pass(
    ctx: &PlanningContext<'_>,
    priority: &[ObjectId],
    recognized: Option<ObjectId>,
    config: &PolicyConfig,
) -> Option<ActionPlan> {
    match config.grasp_selection {
        GraspSelection::FirstFit => priority.iter().find_map(|&id| {
            best_grasp(ctx, id).filter(|p| p.quality > grasp_threshold(id, recognized, config))
        }),
        // Strictly-greater keeps the earlier rank on ties; best_grasp already prefers suction.
        GraspSelection::GlobalArgmax => executable_grasps(ctx, priority, recognized, config)
            .into_iter()
            .reduce(|best, p| if p.quality > best.quality { p } else { best }),
    }
}

/// One policy decision for the current observation.
pub fn select_action(
    ctx: &PlanningContext<'_>,
    config: &PolicyConfig,
    state: &mut PolicyState,
) -> Selection {
    let recognized = recognize_target(ctx.masks, ctx.scene.target_id, config);
    let Ok(priority) = priority_list(config.method, ctx.masks, recognized, &mut state.rng) else {
        return Selection { decision: Decision::Fail(TerminationCause::NoActionAvailable), priority: Vec::new(), recognized };
    };
    if let Some(plan) = grasp_pass(ctx, &priority, recognized, config) {
        return Selection { decision: Decision::Execute(plan), priority, recognized };
    }
    if config.pushing && state.consecutive_pushes < config.push_consecutive_cap {
        let push = priority
            .iter()
            .find_map(|&id| crate::planners::plan_push(ctx, id).ok().filter(|p| p.quality == 1.0));
        if let Some(plan) = push {
            return Selection { decision: Decision::Execute(plan), priority, recognized };
        }
    }
    Selection { decision: Decision::Fail(TerminationCause::NoActionAvailable), priority, recognized }
}

/// Termination after an executed action. `plan` is the action just executed
/// and `next` the resulting state.
pub fn check_termination(
    plan: &ActionPlan,
    result: &TransitionResult,
    state: &PolicyState,
    config: &PolicyConfig,
) -> Option<TerminationCause> {
    let target = result.next_scene.target_id;
    if plan.goal_id == target && result.outcome == Outcome::GraspSucceeded {
        return Some(TerminationCause::Success);
    }
    if let Outcome::ObjectEjected(ids) = &result.outcome {
        if ids.contains(&target) {
            return Some(TerminationCause::TargetEjected);
        }
    }
    if !result.next_scene.is_active(target) {
        return Some(TerminationCause::TargetEjected);
    }
    if state.steps_taken >= config.max_steps(result.next_scene.initial_count) {
        return Some(TerminationCause::Timeout);
    }
    None
}

/// Estimated grasp reliability on the target: 1 once it has been extracted,
/// 0 while it is invisible or gone.
pub fn target_grasp_reliability(ctx: &PlanningContext<'_>, target_id: ObjectId) -> f64 {
    if ctx.scene.extracted.contains(&target_id) {
        return 1.0;
    }
    if !ctx.scene.is_active(target_id) {
        return 0.0;
    }
    ctx.best_grasp_quality(target_id)
}

/// Convenience wrapper rasterizing `scene` first.
pub fn reliability_of(scene: &SceneState, resolution: f64, params: &crate::planners::PlannerParams) -> f64 {
    match crate::scene::rasterize_scene(scene, resolution) {
        Ok(masks) => target_grasp_reliability(&PlanningContext::new(scene, &masks, params), scene.target_id),
        Err(_) => 0.0,
    }
}
