//! Potential-based reward shaping.
//!
//! The potential φ of an observation credits every motion completed so far
//! with a fixed increment λ_m and adds the (non-positive) in-motion progress
//! score on top, so φ rises monotonically along a correctly executed task.
//! Rewards are potential differences, which leaves optimal policies
//! unchanged relative to the sparse task reward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::corpus::{ClipCorpus, ClipKind};
use crate::error::{Classify, ErrorClass};
use crate::knowledge::TaskKnowledge;
use crate::mpe::{similarity, MotionInference, MotionProgressEvaluator, MpeError};
use crate::stage::{match_stage, StageError, StateClassifier};
use crate::world::Observation;

/// Published large-scale per-motion increment. Desk-scale runs calibrate
/// their own value with [`calibrate_lambda_m`] instead, since the increment
/// must dominate the embedding-scale-dependent progress range.
pub const FULL_SCALE_LAMBDA_M: f64 = 36.0;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("stage index {stage} is out of range for {stages} stages")]
    StageOutOfRange { stage: usize, stages: usize },
    #[error("{what} is not finite")]
    NonFinite { what: &'static str },
    #[error("calibration corpus contains no motion clips")]
    NoMotionClips,
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Mpe(#[from] MpeError),
}

impl Classify for RewardError {
    fn class(&self) -> ErrorClass {
        match self {
            RewardError::NonFinite { .. } => ErrorClass::Runtime,
            RewardError::Stage(e) => e.class(),
            RewardError::Mpe(e) => e.class(),
            _ => ErrorClass::Validation,
        }
    }
}

/// Shaping settings for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    /// Potential increment per completed motion. Must be at least the
    /// largest |progress| the evaluator emits, otherwise a motion boundary
    /// could lower the potential.
    pub lambda_m: f64,
    /// Confidence gate: inferences at or below this confidence keep their
    /// stage credit but contribute motion 0 and progress 0. Mirrors the
    /// evaluator's own gate so hand-built inferences behave identically.
    pub lambda_c: f64,
    /// Motions per stage, in task order.
    pub motion_counts: Vec<usize>,
}

impl PotentialConfig {
    /// Settings for a planned task: its per-stage motion counts, the default
    /// confidence gate, and the given increment.
    pub fn for_task(knowledge: &TaskKnowledge, lambda_m: f64) -> PotentialConfig {
        PotentialConfig {
            lambda_m,
            lambda_c: 0.2,
            motion_counts: knowledge.stages.iter().map(|s| s.motions.len()).collect(),
        }
    }
}

/// Detected stage, motion, and progress with the resulting potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialReport {
    pub stage: usize,
    pub motion: usize,
    pub confidence: f64,
    /// Similarity of the progress embedding to the accepted motion's
    /// instruction; non-positive, and exactly 0 when gated.
    pub progress: f64,
    pub phi: f64,
}

/// Folds a stage index and a motion inference into the scalar potential:
/// λ_m · (motions completed in earlier stages + current motion index)
/// + progress. Inferences at or below the confidence gate keep only the
/// stage term.
pub fn potential(
    stage: usize,
    inference: &MotionInference,
    config: &PotentialConfig,
) -> Result<PotentialReport, RewardError> {
    if stage >= config.motion_counts.len() {
        return Err(RewardError::StageOutOfRange {
            stage,
            stages: config.motion_counts.len(),
        });
    }
    let (motion, progress) = if inference.confidence <= config.lambda_c {
        (0, 0.0)
    } else {
        (inference.motion, inference.progress)
    };
    let preceding: usize = config.motion_counts[..stage].iter().sum();
    let phi = config.lambda_m * (preceding + motion) as f64 + progress;
    if !phi.is_finite() {
        return Err(RewardError::NonFinite { what: "potential" });
    }
    Ok(PotentialReport {
        stage,
        motion,
        confidence: inference.confidence,
        progress,
        phi,
    })
}

/// The shaping reward for one transition: φ(now) − φ(previous).
pub fn shaped_reward(phi_now: f64, phi_prev: f64) -> Result<f64, RewardError> {
    if !phi_now.is_finite() {
        return Err(RewardError::NonFinite { what: "phi_now" });
    }
    if !phi_prev.is_finite() {
        return Err(RewardError::NonFinite { what: "phi_prev" });
    }
    Ok(phi_now - phi_prev)
}

/// Full reward pipeline for one observation: classify object states, match
/// the stage, infer the matched stage's motion and progress, and fold them
/// into the potential. Keeping this a single call site guarantees stage,
/// motion, and progress are always mutually consistent.
pub fn evaluate_observation(
    obs: &Observation,
    knowledge: &TaskKnowledge,
    classifier: &StateClassifier,
    model: &MotionProgressEvaluator,
    config: &PotentialConfig,
    catalog: &Catalog,
) -> Result<PotentialReport, RewardError> {
    let estimate = classifier.detect_states(obs)?;
    let stage = match_stage(&estimate, knowledge, catalog)?;
    let inference = model.infer_motion(&obs.global_f64(), &knowledge.stages[stage].motions)?;
    potential(stage, &inference, config)
}

/// Calibrates λ_m from data: the largest |progress| the trained evaluator
/// emits over the corpus's motion frames (each frame scored against its own
/// clip's instruction), scaled by a 1.1 safety factor so every per-motion
/// increment strictly dominates the in-motion progress range.
pub fn calibrate_lambda_m(
    model: &MotionProgressEvaluator,
    corpus: &ClipCorpus,
) -> Result<f64, RewardError> {
    let mut max_abs: f64 = 0.0;
    let mut motion_frames = 0usize;
    for clip in &corpus.clips {
        if clip.kind != ClipKind::Motion {
            continue;
        }
        let l = model
            .lang()
            .embedding_f64(&clip.instruction)
            .ok_or_else(|| MpeError::MissingEmbedding(clip.instruction.clone()))?;
        for frame in &clip.frames {
            let (_, _, p) = model.embed_frame(&frame.global_f64());
            let score = similarity(&p, &l)?;
            if !score.is_finite() {
                return Err(RewardError::NonFinite { what: "progress score" });
            }
            max_abs = max_abs.max(score.abs());
            motion_frames += 1;
        }
    }
    if motion_frames == 0 {
        return Err(RewardError::NoMotionClips);
    }
    Ok(1.1 * max_abs)
}
