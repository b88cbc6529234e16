//! Object-state classification and stage matching.
//!
//! A small scorer network per object rates the relevance of (crop,
//! state-description) pairs; softmax over an object's candidate descriptions
//! yields its state distribution. The detected states are then matched
//! exactly against the task knowledge's per-stage environments to find the
//! current stage, falling back to the initial stage when nothing matches.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, ObjectId, ObjectState, StateMap};
use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointWriter};
use crate::corpus::{ClipCorpus, MotionClip};
use crate::error::{Classify, ErrorClass};
use crate::knowledge::TaskKnowledge;
use crate::lang::LangTable;
use crate::mpe::tie_break;
use crate::nn::{Adam, Mlp};
use crate::world::{splitmix, Observation, CROP_DIM};

/// Checkpoint kind tag for saved classifiers.
pub const CHECKPOINT_KIND: &str = "state_classifier";

#[derive(Debug, Error)]
pub enum StageError {
    #[error("corpus has no frames to train on")]
    EmptyCorpus,
    #[error("clip {clip} frame {frame} is missing a label for {}", .object.as_str())]
    MissingLabel { clip: usize, frame: usize, object: ObjectId },
    #[error("state description {0:?} has no language embedding")]
    UnknownLanguage(String),
    #[error("observation is missing the crop for {}", .0.as_str())]
    MissingCrop(ObjectId),
    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },
    #[error("stages {first} and {second} both match the detected states")]
    AmbiguousStage { first: usize, second: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl Classify for StageError {
    fn class(&self) -> ErrorClass {
        match self {
            StageError::Divergence { .. } => ErrorClass::Runtime,
            StageError::Checkpoint(e) => e.class(),
            _ => ErrorClass::Validation,
        }
    }
}

/// State-classifier training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden_dim: 64,
            learning_rate: 1e-5,
            train_steps: 40_000,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    /// Desk-scale profile: the toy crops are nearly separable, so far fewer
    /// steps at a larger learning rate reach the same accuracy in seconds.
    pub fn toy_profile() -> ClassifierConfig {
        ClassifierConfig {
            learning_rate: 1e-3,
            train_steps: 1_500,
            ..ClassifierConfig::default()
        }
    }
}

/// Detected object states with their per-state probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    /// Most probable state per object.
    pub states: StateMap,
    /// Softmax distribution over each object's candidate states.
    pub scores: BTreeMap<ObjectId, BTreeMap<ObjectState, f64>>,
}

impl StateEstimate {
    /// A degenerate estimate that assigns probability one to the given
    /// states — the "perfect detector" used with ground-truth labels.
    pub fn certain(states: StateMap) -> StateEstimate {
        let scores = states
            .iter()
            .map(|(object, state)| (*object, BTreeMap::from([(*state, 1.0)])))
            .collect();
        StateEstimate { states, scores }
    }
}

/// Per-object relevance scorers over (crop ⊕ state-description) inputs.
#[derive(Clone, Debug)]
pub struct StateClassifier {
    scorers: BTreeMap<ObjectId, Mlp>,
    state_vocab: BTreeMap<ObjectId, Vec<ObjectState>>,
    descriptions: BTreeMap<ObjectId, BTreeMap<ObjectState, String>>,
    lang: LangTable,
    config: ClassifierConfig,
}

/// One optimizer step of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrainRecord {
    pub step: usize,
    /// Mean binary cross-entropy over the step's (crop, description) pairs.
    pub loss: f64,
}

/// A fitted classifier plus its training-loss trace.
pub struct StageTrainResult {
    pub classifier: StateClassifier,
    pub trace: Vec<StageTrainRecord>,
}

impl StateClassifier {
    /// Fresh classifier with scorers initialized from `config.seed`. The
    /// state vocabulary and description strings are copied from the catalog;
    /// every description must already be in the language table.
    pub fn new(catalog: &Catalog, lang: LangTable, config: ClassifierConfig) -> Result<StateClassifier, StageError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dims = [CROP_DIM + lang.dim(), config.hidden_dim, config.hidden_dim, 1];
        let mut scorers = BTreeMap::new();
        let mut state_vocab = BTreeMap::new();
        let mut descriptions = BTreeMap::new();
        for def in &catalog.objects {
            for state in &def.states {
                let text = &def.descriptions[state];
                if lang.get(text).is_none() {
                    return Err(StageError::UnknownLanguage(text.clone()));
                }
            }
            scorers.insert(def.id, Mlp::new(&dims, &mut rng).expect("dims are non-zero"));
            state_vocab.insert(def.id, def.states.clone());
            descriptions.insert(def.id, def.descriptions.clone());
        }
        Ok(StateClassifier {
            scorers,
            state_vocab,
            descriptions,
            lang,
            config,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn state_vocab(&self) -> &BTreeMap<ObjectId, Vec<ObjectState>> {
        &self.state_vocab
    }

    /// Scorer input rows for one object: its crop concatenated with each
    /// candidate state description's embedding, in vocabulary order.
    fn candidate_rows(&self, object: ObjectId, crop: &[f32]) -> Array2<f64> {
        let vocab = &self.state_vocab[&object];
        let in_dim = CROP_DIM + self.lang.dim();
        let mut rows = Array2::zeros((vocab.len(), in_dim));
        for (j, state) in vocab.iter().enumerate() {
            let text = &self.descriptions[&object][state];
            let embedding = self.lang.get(text).expect("validated at construction");
            for (c, &v) in crop.iter().enumerate() {
                rows[[j, c]] = v as f64;
            }
            for (c, &v) in embedding.iter().enumerate() {
                rows[[j, CROP_DIM + c]] = v as f64;
            }
        }
        rows
    }

    fn crop_of<'o>(&self, obs: &'o Observation, object: ObjectId) -> Result<&'o [f32], StageError> {
        let idx = ObjectId::ALL
            .iter()
            .position(|o| *o == object)
            .expect("vocab objects are catalog objects");
        match obs.crops.get(idx) {
            Some(crop) if crop.len() == CROP_DIM => Ok(crop),
            _ => Err(StageError::MissingCrop(object)),
        }
    }

    /// Classifies every object's state from its observation crop: softmax
    /// over the candidate-description logits, ties broken toward the lower
    /// vocabulary index.
    pub fn detect_states(&self, obs: &Observation) -> Result<StateEstimate, StageError> {
        let mut states = StateMap::new();
        let mut scores = BTreeMap::new();
        for (&object, vocab) in &self.state_vocab {
            let crop = self.crop_of(obs, object)?;
            let logits = self.scorers[&object].forward(&self.candidate_rows(object, crop));
            let z: Vec<f64> = (0..vocab.len()).map(|j| logits[[j, 0]]).collect();
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            states.insert(object, vocab[tie_break(&z)]);
            scores.insert(
                object,
                vocab.iter().zip(&exps).map(|(s, e)| (*s, e / total)).collect(),
            );
        }
        Ok(StateEstimate { states, scores })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), StageError> {
        let mut writer = CheckpointWriter::new(CHECKPOINT_KIND);
        writer.set_meta(
            "config",
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        writer.set_meta(
            "state_vocab",
            serde_json::to_value(&self.state_vocab).expect("vocab serializes"),
        );
        writer.set_meta(
            "descriptions",
            serde_json::to_value(&self.descriptions).expect("descriptions serialize"),
        );
        for (object, scorer) in &self.scorers {
            writer.add_mlp(&format!("scorer_{}", object.as_str()), scorer);
        }
        writer.add_lang_table(&self.lang);
        writer.write(path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<StateClassifier, StageError> {
        let checkpoint = Checkpoint::read(path)?;
        checkpoint.expect_kind(CHECKPOINT_KIND)?;
        let meta = |key: &str| checkpoint.meta_value(key).cloned();
        let config: ClassifierConfig = serde_json::from_value(meta("config")?)
            .map_err(|e| CheckpointError::Meta(format!("config: {e}")))?;
        let state_vocab: BTreeMap<ObjectId, Vec<ObjectState>> = serde_json::from_value(meta("state_vocab")?)
            .map_err(|e| CheckpointError::Meta(format!("state_vocab: {e}")))?;
        let descriptions: BTreeMap<ObjectId, BTreeMap<ObjectState, String>> =
            serde_json::from_value(meta("descriptions")?)
                .map_err(|e| CheckpointError::Meta(format!("descriptions: {e}")))?;
        let mut scorers = BTreeMap::new();
        for object in state_vocab.keys() {
            scorers.insert(*object, checkpoint.mlp(&format!("scorer_{}", object.as_str()))?);
        }
        Ok(StateClassifier {
            scorers,
            state_vocab,
            descriptions,
            lang: checkpoint.lang_table()?,
            config,
        })
    }
}

/// Numerically stable σ(z).
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with logits: max(z,0) − z·y + ln(1+e^{−|z|}).
fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Trains the per-object scorers with binary cross-entropy: each sampled
/// frame contributes a positive pair (crop, true-state description) and one
/// negative pair per remaining candidate state.
pub fn train_state_classifier(
    corpus: &ClipCorpus,
    catalog: &Catalog,
    lang: LangTable,
    config: &ClassifierConfig,
) -> Result<StageTrainResult, StageError> {
    let mut frames = Vec::new();
    for (clip_idx, clip) in corpus.clips.iter().enumerate() {
        for frame_idx in 0..clip.len() {
            for def in &catalog.objects {
                if !clip.labels[frame_idx].contains_key(&def.id) {
                    return Err(StageError::MissingLabel {
                        clip: clip_idx,
                        frame: frame_idx,
                        object: def.id,
                    });
                }
            }
            frames.push((clip_idx, frame_idx));
        }
    }
    if frames.is_empty() {
        return Err(StageError::EmptyCorpus);
    }

    let mut classifier = StateClassifier::new(catalog, lang, config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(config.seed, 0x57a7e));
    let mut optimizers: BTreeMap<ObjectId, Adam> = classifier
        .scorers
        .iter()
        .map(|(object, scorer)| (*object, Adam::new(scorer.param_count(), config.learning_rate)))
        .collect();

    let pairs_per_frame: usize = classifier.state_vocab.values().map(Vec::len).sum();
    let mut trace = Vec::with_capacity(config.train_steps);
    for step in 0..config.train_steps {
        let picks: Vec<(usize, usize)> = (0..config.batch_size)
            .map(|_| frames[rng.random_range(0..frames.len())])
            .collect();
        let total_rows = (config.batch_size * pairs_per_frame) as f64;
        let mut loss = 0.0;

        for (&object, vocab) in &classifier.state_vocab.clone() {
            let in_dim = CROP_DIM + classifier.lang.dim();
            let rows = picks.len() * vocab.len();
            let mut input = Array2::zeros((rows, in_dim));
            let mut targets = vec![0.0; rows];
            for (i, &(clip_idx, frame_idx)) in picks.iter().enumerate() {
                let clip = &corpus.clips[clip_idx];
                let crop = classifier.crop_of(&clip.frames[frame_idx], object)?;
                let label = clip.labels[frame_idx][&object];
                for (j, state) in vocab.iter().enumerate() {
                    let row = i * vocab.len() + j;
                    let text = &classifier.descriptions[&object][state];
                    let embedding = classifier.lang.get(text).expect("validated at construction");
                    for (c, &v) in crop.iter().enumerate() {
                        input[[row, c]] = v as f64;
                    }
                    for (c, &v) in embedding.iter().enumerate() {
                        input[[row, CROP_DIM + c]] = v as f64;
                    }
                    targets[row] = if label == *state { 1.0 } else { 0.0 };
                }
            }

            let scorer = classifier.scorers.get_mut(&object).expect("scorer exists");
            let (logits, activations) = scorer.forward_cached(&input);
            let mut grad = Array2::zeros((rows, 1));
            for r in 0..rows {
                let z = logits[[r, 0]];
                loss += bce_with_logits(z, targets[r]);
                grad[[r, 0]] = (sigmoid(z) - targets[r]) / total_rows;
            }
            let (grads, _) = scorer.backward(&activations, &grad);
            optimizers.get_mut(&object).expect("optimizer exists").step_mlp(scorer, &grads);
        }

        let mean_loss = loss / total_rows;
        if !mean_loss.is_finite() {
            return Err(StageError::Divergence { step });
        }
        trace.push(StageTrainRecord { step, loss: mean_loss });
    }

    Ok(StageTrainResult { classifier, trace })
}

/// Fraction of frames whose detected state equals the label, per object.
pub fn per_object_accuracy(
    classifier: &StateClassifier,
    clips: &[MotionClip],
) -> Result<BTreeMap<ObjectId, f64>, StageError> {
    let mut correct: BTreeMap<ObjectId, usize> = BTreeMap::new();
    let mut total = 0usize;
    for clip in clips {
        for (frame, label) in clip.frames.iter().zip(&clip.labels) {
            let estimate = classifier.detect_states(frame)?;
            total += 1;
            for (object, state) in &estimate.states {
                if label.get(object) == Some(state) {
                    *correct.entry(*object).or_default() += 1;
                }
            }
        }
    }
    Ok(correct
        .into_iter()
        .map(|(object, n)| (object, n as f64 / total.max(1) as f64))
        .collect())
}

/// Resolves the current stage by exact comparison of the detected states
/// against each stage's expected environment, restricted to the objects that
/// discriminate between stages.
///
/// Resolution order: (1) a unique exact match wins; two exact matches are a
/// knowledge-integrity error. (2) While the block is held it matches any
/// expected block state ("in transit"); if several stages match this way the
/// first block-interaction stage among them is chosen. (3) States matching
/// the environment left after the final stage's motions resolve to the final
/// stage. (4) Anything else falls back to the initial stage, index 0.
pub fn match_stage(
    estimate: &StateEstimate,
    knowledge: &TaskKnowledge,
    catalog: &Catalog,
) -> Result<usize, StageError> {
    let conditioned = knowledge.conditioned_objects();
    let matches_env = |env: &StateMap, ignore_block: bool| {
        conditioned.iter().all(|object| {
            (ignore_block && *object == ObjectId::Block)
                || estimate.states.get(object) == env.get(object)
        })
    };

    let exact: Vec<usize> = (0..knowledge.stages.len())
        .filter(|&i| matches_env(&knowledge.stages[i].environment, false))
        .collect();
    match exact.as_slice() {
        [single] => return Ok(*single),
        [first, second, ..] => {
            return Err(StageError::AmbiguousStage {
                first: *first,
                second: *second,
            })
        }
        [] => {}
    }

    if estimate.states.get(&ObjectId::Block) == Some(&ObjectState::Held) {
        let carrying: Vec<usize> = (0..knowledge.stages.len())
            .filter(|&i| matches_env(&knowledge.stages[i].environment, true))
            .collect();
        if let Some(&stage) = carrying
            .iter()
            .find(|&&i| knowledge.stages[i].interacted_object == ObjectId::Block)
            .or_else(|| carrying.first())
        {
            return Ok(stage);
        }
    }

    if matches_env(&knowledge.terminal_environment(catalog), false) {
        return Ok(knowledge.stages.len() - 1);
    }

    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ObjectState::*;
    use crate::knowledge::plan_task;
    use crate::world::scripted::{generate_arbitrary_clip, generate_motion_clip, scripted_rollout};
    use crate::world::{World, WorldConfig};

    fn world() -> World {
        World::builtin(WorldConfig::default())
    }

    /// A small labeled corpus: a few clips of every catalog motion plus some
    /// arbitrary clips for state variety.
    fn small_corpus(world: &World, clips_per_motion: usize, arbitrary: usize) -> ClipCorpus {
        let mut clips = Vec::new();
        for motion in &world.catalog.motions {
            for _ in 0..clips_per_motion {
                let seed = splitmix(0xc0de, clips.len() as u64);
                clips.push(generate_motion_clip(world, &motion.name, seed, 16).unwrap());
            }
        }
        for i in 0..arbitrary {
            clips.push(generate_arbitrary_clip(world, splitmix(0xa44b, i as u64), 16).unwrap());
        }
        ClipCorpus { clips }
    }

    fn toy_config(steps: usize) -> ClassifierConfig {
        ClassifierConfig {
            train_steps: steps,
            ..ClassifierConfig::toy_profile()
        }
    }

    #[test]
    fn default_config_matches_the_reference_recipe() {
        let config = ClassifierConfig::default();
        assert_eq!(config.train_steps, 40_000);
        assert_eq!(config.learning_rate, 1e-5);
        assert_eq!(config.batch_size, 32);
    }

    #[test]
    fn training_reaches_high_held_out_accuracy() {
        let world = world();
        let corpus = small_corpus(&world, 3, 10);
        // Hold out every fourth clip.
        let train = ClipCorpus {
            clips: corpus
                .clips
                .iter()
                .enumerate()
                .filter(|(i, _)| i % 4 != 0)
                .map(|(_, c)| c.clone())
                .collect(),
        };
        let held_out: Vec<MotionClip> = corpus
            .clips
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 4 == 0)
            .map(|(_, c)| c.clone())
            .collect();

        let lang = LangTable::for_catalog(&world.catalog);
        let result = train_state_classifier(&train, &world.catalog, lang, &toy_config(700)).unwrap();
        let accuracy = per_object_accuracy(&result.classifier, &held_out).unwrap();
        for (object, acc) in &accuracy {
            assert!(*acc >= 0.95, "{}: {acc}", object.as_str());
        }
        // The loss trace is recorded per optimizer step and decreases.
        assert_eq!(result.trace.len(), 700);
        assert!(result.trace.last().unwrap().loss < result.trace[0].loss);
    }

    #[test]
    fn zero_steps_returns_the_initialization() {
        let world = world();
        let corpus = small_corpus(&world, 1, 2);
        let lang = LangTable::for_catalog(&world.catalog);
        let result = train_state_classifier(&corpus, &world.catalog, lang.clone(), &toy_config(0)).unwrap();
        assert!(result.trace.is_empty());
        let fresh = StateClassifier::new(&world.catalog, lang, toy_config(0)).unwrap();
        for object in ObjectId::ALL {
            assert_eq!(
                result.classifier.scorers[&object].params_f32(),
                fresh.scorers[&object].params_f32()
            );
        }
    }

    #[test]
    fn training_rejects_missing_labels_and_empty_corpora() {
        let world = world();
        let lang = LangTable::for_catalog(&world.catalog);
        assert!(matches!(
            train_state_classifier(&ClipCorpus::default(), &world.catalog, lang.clone(), &toy_config(1)),
            Err(StageError::EmptyCorpus)
        ));

        let mut corpus = small_corpus(&world, 1, 0);
        corpus.clips[0].labels[3].remove(&ObjectId::Light);
        assert!(matches!(
            train_state_classifier(&corpus, &world.catalog, lang, &toy_config(1)),
            Err(StageError::MissingLabel { clip: 0, frame: 3, object: ObjectId::Light })
        ));
    }

    #[test]
    fn detection_normalizes_scores_and_breaks_ties_low() {
        let world = world();
        let lang = LangTable::for_catalog(&world.catalog);
        let mut classifier = StateClassifier::new(&world.catalog, lang, toy_config(0)).unwrap();
        let (_, obs) = world
            .reset(&BTreeMap::from([
                (ObjectId::Drawer, Closed),
                (ObjectId::Box, Closed),
                (ObjectId::Light, Closed),
                (ObjectId::Block, OnTable),
            ]), 3)
            .unwrap();

        let estimate = classifier.detect_states(&obs).unwrap();
        for scores in estimate.scores.values() {
            let total: f64 = scores.values().sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
        for (object, state) in &estimate.states {
            let best = estimate.scores[object].iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            assert_eq!(state, best.0);
        }

        // All-zero scorers produce equal logits: ties break to the first
        // vocabulary entry.
        for scorer in classifier.scorers.values_mut() {
            let zeros = vec![0.0f32; scorer.param_count()];
            scorer.set_params_f32(&zeros).unwrap();
        }
        let tied = classifier.detect_states(&obs).unwrap();
        assert_eq!(tied.states[&ObjectId::Drawer], Closed);
        assert_eq!(tied.states[&ObjectId::Block], InDrawer);

        // A truncated observation names the missing crop.
        let mut broken = obs.clone();
        broken.crops.truncate(3);
        assert!(matches!(
            classifier.detect_states(&broken),
            Err(StageError::MissingCrop(ObjectId::Block))
        ));
    }

    fn figure_task() -> (TaskKnowledge, StateMap) {
        let initial = BTreeMap::from([
            (ObjectId::Drawer, Closed),
            (ObjectId::Box, Closed),
            (ObjectId::Light, Closed),
            (ObjectId::Block, OnTable),
        ]);
        let knowledge = plan_task(
            "open the drawer then move the blue block to the drawer",
            &initial,
            Catalog::builtin(),
        )
        .unwrap();
        (knowledge, initial)
    }

    #[test]
    fn stage_matching_follows_the_task_environments() {
        let catalog = Catalog::builtin();
        let (knowledge, initial) = figure_task();
        let matched = |states: StateMap| match_stage(&StateEstimate::certain(states), &knowledge, catalog);

        // The drawer is expected to be closed only at the first stage.
        assert_eq!(matched(initial.clone()).unwrap(), 0);

        let mut open = initial.clone();
        open.insert(ObjectId::Drawer, Open);
        assert_eq!(matched(open.clone()).unwrap(), 1);

        // Unconditioned objects never affect the result.
        let mut perturbed = open.clone();
        perturbed.insert(ObjectId::Box, Open);
        perturbed.insert(ObjectId::Light, Open);
        assert_eq!(matched(perturbed).unwrap(), 1);

        // States matching no stage fall back to the initial stage.
        let mut lost = open.clone();
        lost.insert(ObjectId::Block, InBox);
        assert_eq!(matched(lost).unwrap(), 0);

        // A held block matches the stage that moves it.
        let mut carrying = open.clone();
        carrying.insert(ObjectId::Block, Held);
        assert_eq!(matched(carrying).unwrap(), 1);

        // The post-task environment resolves to the final stage.
        let mut done = open;
        done.insert(ObjectId::Block, InDrawer);
        assert_eq!(matched(done).unwrap(), 1);
    }

    #[test]
    fn ambiguous_knowledge_is_reported() {
        let catalog = Catalog::builtin();
        let (knowledge, initial) = figure_task();
        let mut broken = knowledge.clone();
        broken.stages[1].environment = broken.stages[0].environment.clone();
        assert!(matches!(
            match_stage(&StateEstimate::certain(initial), &broken, catalog),
            Err(StageError::AmbiguousStage { first: 0, second: 1 })
        ));
    }

    #[test]
    fn ground_truth_stages_are_non_decreasing_along_expert_demos() {
        let world = world();
        let catalog = Catalog::builtin();
        for task_id in ["open_drawer_then_move_block_to_drawer", "open_box_then_pick_block"] {
            let task = crate::world::registry::TaskRegistry::builtin().get(task_id).unwrap();
            let knowledge = plan_task(&task.instruction, &task.initial, catalog).unwrap();
            let motions: Vec<String> = knowledge.stages.iter().flat_map(|s| s.motions.clone()).collect();
            let rollout = scripted_rollout(&world, &motions, &task.initial, 11).unwrap();
            let mut last = 0;
            for state in &rollout.states {
                let estimate = StateEstimate::certain(world.ground_truth(state));
                let stage = match_stage(&estimate, &knowledge, catalog).unwrap();
                assert!(stage >= last, "{task_id}: stage regressed from {last} to {stage}");
                last = stage;
            }
            assert_eq!(last, knowledge.stages.len() - 1, "{task_id}");
        }
    }

    #[test]
    fn checkpoints_round_trip_bit_identically() {
        let world = world();
        let corpus = small_corpus(&world, 1, 2);
        let lang = LangTable::for_catalog(&world.catalog);
        let trained = train_state_classifier(&corpus, &world.catalog, lang, &toy_config(40))
            .unwrap()
            .classifier;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classifier.bin");
        trained.save(&path).unwrap();
        let loaded = StateClassifier::load(&path).unwrap();
        assert_eq!(loaded.config, trained.config);
        assert_eq!(loaded.state_vocab, trained.state_vocab);
        assert_eq!(loaded.descriptions, trained.descriptions);
        for object in ObjectId::ALL {
            assert_eq!(loaded.scorers[&object].params_f32(), trained.scorers[&object].params_f32());
        }

        // Saving the loaded classifier reproduces the file byte for byte,
        // and the reloaded copy classifies identically.
        let again = dir.path().join("classifier2.bin");
        loaded.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

        let start = BTreeMap::from([
            (ObjectId::Drawer, Open),
            (ObjectId::Box, Closed),
            (ObjectId::Light, Open),
            (ObjectId::Block, InBox),
        ]);
        let (_, obs) = world.reset(&start, 9).unwrap();
        let reread = StateClassifier::load(&again).unwrap();
        assert_eq!(loaded.detect_states(&obs).unwrap(), reread.detect_states(&obs).unwrap());

        // Kind tags are enforced.
        let err = crate::mpe::MotionProgressEvaluator::load(&path).unwrap_err();
        assert!(matches!(
            err,
            crate::mpe::MpeError::Checkpoint(CheckpointError::KindMismatch { .. })
        ));
    }
}
