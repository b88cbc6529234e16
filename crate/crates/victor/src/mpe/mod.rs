//! Motion progress evaluator: a dual-head embedding model over observations.
//!
//! A shared encoder maps an observation to a base embedding; a motion head
//! projects it into the space of instruction embeddings (which motion is
//! happening?) and a progress head into a second copy of that space (how far
//! along is it?). The two heads are trained with the contrastive objectives in
//! [`loss`] and queried through [`MotionProgressEvaluator::infer_motion`],
//! which confidence-gates its answer against the arbitrary-movement
//! instruction so meaningless frames cannot claim progress.

pub mod loss;
pub mod train;

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointWriter};
use crate::error::{Classify, ErrorClass};
use crate::lang::LangTable;
use crate::nn::Mlp;
use crate::world::GLOBAL_DIM;

pub use loss::{loss_lfcn, loss_mcn, loss_tcn, similarity, LossParts, LossWeights};
pub use train::{train_mpe, MpeTrainResult, MpeTrainRecord};

/// Checkpoint kind tag.
pub const CHECKPOINT_KIND: &str = "mpe";

#[derive(Debug, Error)]
pub enum MpeError {
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),
    #[error("a batch clip is missing its contrasting instruction")]
    MissingNegative,
    #[error("candidate motion list is empty")]
    EmptyCandidates,
    #[error("no embedding for {0:?} in the language table")]
    MissingEmbedding(String),
    #[error("negative sampling needs at least two distinct motion instructions, found {0}")]
    NegativeSampling(usize),
    #[error("training corpus is unusable: {0}")]
    CorpusTooSmall(String),
    #[error("loss became non-finite at step {step}")]
    Divergence { step: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl Classify for MpeError {
    fn class(&self) -> ErrorClass {
        match self {
            MpeError::Divergence { .. } => ErrorClass::Runtime,
            MpeError::Checkpoint(inner) => inner.class(),
            _ => ErrorClass::Validation,
        }
    }
}

/// Hyperparameters for the evaluator. Defaults are the desk-scale profile;
/// [`MpeConfig::full_scale_profile`] restores the published large-scale settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpeConfig {
    /// Shared dimension of all embeddings.
    pub embed_dim: usize,
    /// Width of the two hidden encoder layers.
    pub hidden_dim: usize,
    /// Hidden width of the motion/progress heads; `None` keeps them linear.
    /// A hidden layer lets the heads separate frames that share a pose and
    /// differ only in grip/content channels (e.g. at-the-drawer frames from
    /// handle-pulling vs. block-placing).
    pub head_hidden_dim: Option<usize>,
    pub learning_rate: f64,
    /// When set, the learning rate decays linearly from `learning_rate` to
    /// this value over training. High early rates organize the embedding
    /// space; the low tail quiets frame-to-frame jitter in the heads.
    pub final_learning_rate: Option<f64>,
    pub train_steps: usize,
    /// Motion clips per batch (B).
    pub batch_motion: usize,
    /// Arbitrary clips per batch (N).
    pub batch_arbitrary: usize,
    /// λ1: weight of the time-contrastive loss.
    pub lambda_tcn: f64,
    /// λ2: weight of the motion-contrastive loss.
    pub lambda_mcn: f64,
    /// λ3: weight of the language-frame loss.
    pub lambda_lfcn: f64,
    /// λ_c: inferences at or below this confidence are gated to motion 0.
    pub confidence_threshold: f64,
    /// Use the literal printed confidence ratio, which *decreases* with match
    /// quality, instead of the reoriented default that increases with it.
    pub literal_confidence: bool,
    /// Multiplier on the Xavier-uniform initialization limit. Short training
    /// budgets need the encoder to start near the unit-norm language targets;
    /// the classic limit (gain 1) strands the heads several units away.
    pub init_gain: f64,
    pub seed: u64,
}

impl Default for MpeConfig {
    fn default() -> Self {
        MpeConfig {
            embed_dim: 32,
            hidden_dim: 64,
            head_hidden_dim: None,
            learning_rate: 1e-4,
            final_learning_rate: None,
            train_steps: 3000,
            batch_motion: 24,
            batch_arbitrary: 8,
            lambda_tcn: 1.0,
            lambda_mcn: 1.0,
            lambda_lfcn: 1.0,
            confidence_threshold: 0.2,
            literal_confidence: false,
            init_gain: 1.0,
            seed: 0,
        }
    }
}

impl MpeConfig {
    /// The published large-scale hyperparameters (assumes a pretrained
    /// vision backbone; far too slow to converge on the desk-scale encoder).
    pub fn full_scale_profile() -> MpeConfig {
        MpeConfig {
            learning_rate: 1e-6,
            train_steps: 20000,
            init_gain: 1.0,
            ..MpeConfig::default()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            tcn: self.lambda_tcn,
            mcn: self.lambda_mcn,
            lfcn: self.lambda_lfcn,
        }
    }
}

/// Outcome of one inference: the best-scoring candidate, the gate decision,
/// and the (non-positive) progress similarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionInference {
    /// Argmax index into the candidate list.
    pub motion_star: usize,
    /// Gate statistic in (0, 1); higher means more motion-like by default.
    pub confidence: f64,
    /// Accepted motion index: `motion_star`, or 0 when gated.
    pub motion: usize,
    /// Similarity of the progress embedding to the accepted motion's
    /// instruction; 0 when gated.
    pub progress: f64,
    /// True when the inference was rejected by the confidence gate.
    pub gated: bool,
    /// Raw similarity score per candidate (diagnostics).
    pub scores: Vec<f64>,
}

/// The trained evaluator: encoder, two heads, and the frozen language table.
#[derive(Clone, Debug)]
pub struct MotionProgressEvaluator {
    pub encoder: Mlp,
    pub motion_head: Mlp,
    pub progress_head: Mlp,
    pub lang: LangTable,
    pub config: MpeConfig,
    /// Instruction labeling meaningless movement; the gate's reference point.
    pub arbitrary_instruction: String,
}

impl MotionProgressEvaluator {
    /// Freshly initialized model (before training) over `input_dim`-channel
    /// observations.
    pub fn new(
        input_dim: usize,
        lang: LangTable,
        arbitrary_instruction: &str,
        config: MpeConfig,
    ) -> Result<MotionProgressEvaluator, MpeError> {
        if lang.dim() != config.embed_dim {
            return Err(MpeError::DimMismatch { left: lang.dim(), right: config.embed_dim });
        }
        if lang.get(arbitrary_instruction).is_none() {
            return Err(MpeError::MissingEmbedding(arbitrary_instruction.to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dims = [input_dim, config.hidden_dim, config.hidden_dim, config.embed_dim];
        let encoder =
            Mlp::with_gain(&dims, config.init_gain, &mut rng).expect("valid encoder dims");
        let head_dims: Vec<usize> = match config.head_hidden_dim {
            Some(h) => vec![config.embed_dim, h, config.embed_dim],
            None => vec![config.embed_dim, config.embed_dim],
        };
        let motion_head =
            Mlp::with_gain(&head_dims, config.init_gain, &mut rng).expect("valid head dims");
        let progress_head =
            Mlp::with_gain(&head_dims, config.init_gain, &mut rng).expect("valid head dims");
        Ok(MotionProgressEvaluator {
            encoder,
            motion_head,
            progress_head,
            lang,
            config,
            arbitrary_instruction: arbitrary_instruction.to_string(),
        })
    }

    /// Convenience constructor over the standard observation layout.
    pub fn for_observations(
        lang: LangTable,
        arbitrary_instruction: &str,
        config: MpeConfig,
    ) -> Result<MotionProgressEvaluator, MpeError> {
        MotionProgressEvaluator::new(GLOBAL_DIM, lang, arbitrary_instruction, config)
    }

    /// The frozen language table the model was trained against.
    pub fn lang(&self) -> &LangTable {
        &self.lang
    }

    pub fn config(&self) -> &MpeConfig {
        &self.config
    }

    /// Base, motion, and progress embeddings for one observation vector.
    /// The head outputs are unit-normalized so they live on the same sphere
    /// as the (orthonormal) language embeddings; without this the contrastive
    /// losses only order projections and the confidence ratio — which compares
    /// raw distances, not distance differences — converges to an ungateable
    /// 0.5 as the embedding norm drifts.
    pub fn embed_frame(&self, global: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let x = ndarray::Array2::from_shape_vec((1, global.len()), global.to_vec())
            .expect("row vector");
        let f = self.encoder.forward(&x);
        let mut m = self.motion_head.forward(&f).row(0).to_vec();
        let mut p = self.progress_head.forward(&f).row(0).to_vec();
        crate::nn::unit_vec(&mut m);
        crate::nn::unit_vec(&mut p);
        (f.row(0).to_vec(), m, p)
    }

    /// Identifies the most plausible candidate motion for an observation and
    /// its in-motion progress, gating to (motion 0, progress 0) whenever the
    /// frame looks more like arbitrary movement than like the chosen motion.
    pub fn infer_motion(
        &self,
        global: &[f64],
        candidates: &[String],
    ) -> Result<MotionInference, MpeError> {
        if candidates.is_empty() {
            return Err(MpeError::EmptyCandidates);
        }
        let (_, m, p) = self.embed_frame(global);

        let mut scores = Vec::with_capacity(candidates.len());
        for name in candidates {
            let l = self
                .lang
                .embedding_f64(name)
                .ok_or_else(|| MpeError::MissingEmbedding(name.clone()))?;
            scores.push(similarity(&m, &l)?);
        }
        let motion_star = tie_break(&scores);

        let l_star = self
            .lang
            .embedding_f64(&candidates[motion_star])
            .expect("scored above");
        let l_arbitrary = self
            .lang
            .embedding_f64(&self.arbitrary_instruction)
            .ok_or_else(|| MpeError::MissingEmbedding(self.arbitrary_instruction.clone()))?;

        let d_star = -scores[motion_star];
        let d_arbitrary = -similarity(&m, &l_arbitrary)?;
        let denom = d_star + d_arbitrary;
        let confidence = if denom < 1e-12 {
            0.5
        } else if self.config.literal_confidence {
            d_star / denom
        } else {
            d_arbitrary / denom
        };

        let (motion, progress, gated) = if confidence > self.config.confidence_threshold {
            (motion_star, similarity(&p, &l_star)?, false)
        } else {
            (0, 0.0, true)
        };
        Ok(MotionInference { motion_star, confidence, motion, progress, gated, scores })
    }

    pub fn save(&self, path: &Path) -> Result<(), MpeError> {
        let mut writer = CheckpointWriter::new(CHECKPOINT_KIND);
        writer.set_meta(
            "config",
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        writer.set_meta(
            "arbitrary_instruction",
            serde_json::Value::from(self.arbitrary_instruction.clone()),
        );
        writer.add_mlp("encoder", &self.encoder);
        writer.add_mlp("motion_head", &self.motion_head);
        writer.add_mlp("progress_head", &self.progress_head);
        writer.add_lang_table(&self.lang);
        writer.write(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MotionProgressEvaluator, MpeError> {
        let ckpt = Checkpoint::read(path)?;
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let config: MpeConfig = serde_json::from_value(ckpt.meta_value("config")?.clone())
            .map_err(|e| CheckpointError::Payload(format!("bad config: {e}")))?;
        let arbitrary_instruction = ckpt.meta_str("arbitrary_instruction")?.to_string();
        Ok(MotionProgressEvaluator {
            encoder: ckpt.mlp("encoder")?,
            motion_head: ckpt.mlp("motion_head")?,
            progress_head: ckpt.mlp("progress_head")?,
            lang: ckpt.lang_table()?,
            config,
            arbitrary_instruction,
        })
    }
}

/// Argmax with exact ties resolving to the lowest index.
pub fn tie_break(scores: &[f64]) -> usize {
    assert!(!scores.is_empty(), "tie_break needs at least one score");
    let mut best = 0;
    for (idx, &score) in scores.iter().enumerate().skip(1) {
        if score > scores[best] {
            best = idx;
        }
    }
    best
}
