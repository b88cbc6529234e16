//! Contrastive training loop for the motion progress evaluator.
//!
//! Each step samples a batch of clips (B motion + N arbitrary), one strictly
//! ordered frame triple per clip, and one contrasting instruction per clip,
//! then minimizes the weighted sum of the three losses in [`super::loss`]
//! with Adam. Sampling, initialization, and updates all flow from the config
//! seed, so training is exactly reproducible.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClipCorpus, ClipKind, MotionClip};
use crate::lang::LangTable;
use crate::nn::Adam;
use crate::world::splitmix;

use super::loss::{loss_and_grads, ClipGrads, ClipTerm, TripleEmbeds};
use super::{MotionProgressEvaluator, MpeConfig, MpeError};

/// One trace row: the batch-summed loss components at a training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpeTrainRecord {
    pub step: usize,
    pub l_tcn: f64,
    pub l_mcn: f64,
    pub l_lfcn: f64,
    pub l_total: f64,
}

/// A trained model plus its per-step loss trace.
pub struct MpeTrainResult {
    pub model: MotionProgressEvaluator,
    pub trace: Vec<MpeTrainRecord>,
}

/// A sampled batch, decoupled from the model so the same batch can be
/// re-evaluated under perturbed parameters (gradient checking) or replayed.
pub(crate) struct SampledBatch {
    /// Frame rows, three per clip, in clip order: `(3·clips × input_dim)`.
    pub rows: Array2<f64>,
    pub clips: Vec<BatchClip>,
}

pub(crate) struct BatchClip {
    pub is_motion: bool,
    pub own: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Indices of corpus clips usable for training, split by kind.
struct UsableClips {
    motion: Vec<usize>,
    arbitrary: Vec<usize>,
    /// Distinct instructions across the whole usable corpus (for fallback
    /// negative sampling).
    vocabulary: Vec<String>,
}

fn usable_clips(corpus: &ClipCorpus) -> Result<UsableClips, MpeError> {
    let mut motion = Vec::new();
    let mut arbitrary = Vec::new();
    let mut vocabulary: Vec<String> = Vec::new();
    for (idx, clip) in corpus.clips.iter().enumerate() {
        if clip.len() < 3 {
            continue;
        }
        match clip.kind {
            ClipKind::Motion => motion.push(idx),
            ClipKind::Arbitrary => arbitrary.push(idx),
        }
        if !vocabulary.contains(&clip.instruction) {
            vocabulary.push(clip.instruction.clone());
        }
    }
    let distinct_motion = motion
        .iter()
        .map(|&i| &corpus.clips[i].instruction)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if distinct_motion < 2 {
        return Err(MpeError::NegativeSampling(distinct_motion));
    }
    if arbitrary.is_empty() {
        return Err(MpeError::CorpusTooSmall(
            "no arbitrary-movement clips (needed as the gate's negative class)".to_string(),
        ));
    }
    Ok(UsableClips { motion, arbitrary, vocabulary })
}

/// Uniform strictly ordered triple (i, j, k) within a clip of length `len`.
fn sample_triple(rng: &mut ChaCha8Rng, len: usize) -> (usize, usize, usize) {
    debug_assert!(len >= 3);
    let i = rng.random_range(0..=len - 3);
    let j = rng.random_range(i + 1..=len - 2);
    let k = rng.random_range(j + 1..=len - 1);
    (i, j, k)
}

fn sample_batch(
    corpus: &ClipCorpus,
    usable: &UsableClips,
    lang: &LangTable,
    config: &MpeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SampledBatch, MpeError> {
    let mut picked: Vec<&MotionClip> = Vec::with_capacity(config.batch_motion + config.batch_arbitrary);
    for _ in 0..config.batch_motion {
        picked.push(&corpus.clips[usable.motion[rng.random_range(0..usable.motion.len())]]);
    }
    for _ in 0..config.batch_arbitrary {
        picked.push(&corpus.clips[usable.arbitrary[rng.random_range(0..usable.arbitrary.len())]]);
    }
    if picked.is_empty() {
        return Err(MpeError::EmptyBatch("batch sizes are both zero"));
    }

    let input_dim = picked[0].frames[0].global.len();
    let mut rows = Array2::zeros((picked.len() * 3, input_dim));
    let mut clips = Vec::with_capacity(picked.len());
    let batch_instructions: Vec<&str> = {
        let mut seen = Vec::new();
        for clip in &picked {
            if !seen.contains(&clip.instruction.as_str()) {
                seen.push(clip.instruction.as_str());
            }
        }
        seen
    };

    for (c, clip) in picked.iter().enumerate() {
        let (i, j, k) = sample_triple(rng, clip.len());
        for (slot, frame) in [i, j, k].into_iter().enumerate() {
            for (col, &v) in clip.frames[frame].global.iter().enumerate() {
                rows[(c * 3 + slot, col)] = v as f64;
            }
        }

        let own = lang
            .embedding_f64(&clip.instruction)
            .ok_or_else(|| MpeError::MissingEmbedding(clip.instruction.clone()))?;
        // Contrast against another instruction present in the batch, falling
        // back to the corpus vocabulary when the batch is homogeneous.
        let others: Vec<&str> = batch_instructions
            .iter()
            .copied()
            .filter(|s| *s != clip.instruction)
            .collect();
        let negative_text = if !others.is_empty() {
            others[rng.random_range(0..others.len())]
        } else {
            let fallback: Vec<&str> = usable
                .vocabulary
                .iter()
                .map(String::as_str)
                .filter(|s| *s != clip.instruction)
                .collect();
            fallback[rng.random_range(0..fallback.len())]
        };
        let negative = lang
            .embedding_f64(negative_text)
            .ok_or_else(|| MpeError::MissingEmbedding(negative_text.to_string()))?;
        clips.push(BatchClip { is_motion: clip.kind == ClipKind::Motion, own, negative });
    }
    Ok(SampledBatch { rows, clips })
}

/// Forward pass + loss for a sampled batch; also returns everything needed
/// for the backward pass.
pub(crate) fn batch_forward(
    model: &MotionProgressEvaluator,
    batch: &SampledBatch,
) -> Result<(super::LossParts, Vec<ClipGrads>, BatchCaches), MpeError> {
    let (f_out, f_cache) = model.encoder.forward_cached(&batch.rows);
    let (m_raw, m_cache) = model.motion_head.forward_cached(&f_out);
    let (p_raw, p_cache) = model.progress_head.forward_cached(&f_out);
    // Head outputs are trained on the unit sphere, matching embed_frame.
    let (m_out, m_norms) = crate::nn::unit_rows(&m_raw);
    let (p_out, p_norms) = crate::nn::unit_rows(&p_raw);

    let terms: Vec<ClipTerm> = batch
        .clips
        .iter()
        .enumerate()
        .map(|(c, clip)| {
            let row = |mat: &Array2<f64>, slot: usize| mat.row(c * 3 + slot).to_vec();
            ClipTerm {
                embeds: TripleEmbeds {
                    f: [row(&f_out, 0), row(&f_out, 1), row(&f_out, 2)],
                    m: [row(&m_out, 0), row(&m_out, 1), row(&m_out, 2)],
                    p: [row(&p_out, 0), row(&p_out, 1), row(&p_out, 2)],
                },
                own: clip.own.clone(),
                negative: Some(clip.negative.clone()),
                is_motion: clip.is_motion,
            }
        })
        .collect();

    let (parts, grads) = loss_and_grads(&terms, model.config.weights())?;
    Ok((
        parts,
        grads,
        BatchCaches { f_cache, m_cache, p_cache, m_out, m_norms, p_out, p_norms },
    ))
}

pub(crate) struct BatchCaches {
    f_cache: Vec<Array2<f64>>,
    m_cache: Vec<Array2<f64>>,
    p_cache: Vec<Array2<f64>>,
    /// Normalized head outputs and pre-normalization row norms, needed to
    /// backpropagate through the sphere projection.
    m_out: Array2<f64>,
    m_norms: Vec<f64>,
    p_out: Array2<f64>,
    p_norms: Vec<f64>,
}

/// Parameter gradients for encoder and both heads from per-clip embedding
/// gradients.
pub(crate) fn batch_backward(
    model: &MotionProgressEvaluator,
    grads: &[ClipGrads],
    caches: &BatchCaches,
) -> (crate::nn::MlpGrads, crate::nn::MlpGrads, crate::nn::MlpGrads) {
    let rows = grads.len() * 3;
    let dim = model.config.embed_dim;
    let mut g_f = Array2::zeros((rows, dim));
    let mut g_m = Array2::zeros((rows, dim));
    let mut g_p = Array2::zeros((rows, dim));
    for (c, grad) in grads.iter().enumerate() {
        for slot in 0..3 {
            for d in 0..dim {
                g_f[(c * 3 + slot, d)] = grad.f[slot][d];
                g_m[(c * 3 + slot, d)] = grad.m[slot][d];
                g_p[(c * 3 + slot, d)] = grad.p[slot][d];
            }
        }
    }
    let g_m_raw = crate::nn::unit_rows_backward(&g_m, &caches.m_out, &caches.m_norms);
    let g_p_raw = crate::nn::unit_rows_backward(&g_p, &caches.p_out, &caches.p_norms);
    let (mh_grads, df_from_m) = model.motion_head.backward(&caches.m_cache, &g_m_raw);
    let (ph_grads, df_from_p) = model.progress_head.backward(&caches.p_cache, &g_p_raw);
    let total_f = g_f + df_from_m + df_from_p;
    let (enc_grads, _) = model.encoder.backward(&caches.f_cache, &total_f);
    (enc_grads, mh_grads, ph_grads)
}

/// Trains an evaluator on a clip corpus. The corpus must contain at least
/// two distinct motion instructions (so every clip has a contrast) and at
/// least one arbitrary-movement clip (the gate's negative class).
pub fn train_mpe(
    corpus: &ClipCorpus,
    lang: LangTable,
    arbitrary_instruction: &str,
    config: &MpeConfig,
) -> Result<MpeTrainResult, MpeError> {
    let usable = usable_clips(corpus)?;
    let input_dim = corpus.clips[usable.motion[0]].frames[0].global.len();
    let mut model = MotionProgressEvaluator::new(input_dim, lang, arbitrary_instruction, config.clone())?;

    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(config.seed, 0x7ea1));
    let mut adam_enc = Adam::new(model.encoder.param_count(), config.learning_rate);
    let mut adam_m = Adam::new(model.motion_head.param_count(), config.learning_rate);
    let mut adam_p = Adam::new(model.progress_head.param_count(), config.learning_rate);

    let mut trace = Vec::with_capacity(config.train_steps);
    for step in 0..config.train_steps {
        if let Some(lr_end) = config.final_learning_rate {
            let frac = step as f64 / (config.train_steps.max(2) - 1) as f64;
            let lr = config.learning_rate + (lr_end - config.learning_rate) * frac;
            adam_enc.lr = lr;
            adam_m.lr = lr;
            adam_p.lr = lr;
        }
        let batch = sample_batch(corpus, &usable, &model.lang, config, &mut rng)?;
        let (parts, clip_grads, caches) = batch_forward(&model, &batch)?;
        let total = parts.total(config.weights());
        if !total.is_finite() {
            return Err(MpeError::Divergence { step });
        }
        let (enc_grads, mh_grads, ph_grads) = batch_backward(&model, &clip_grads, &caches);
        adam_enc.step_mlp(&mut model.encoder, &enc_grads);
        adam_m.step_mlp(&mut model.motion_head, &mh_grads);
        adam_p.step_mlp(&mut model.progress_head, &ph_grads);
        trace.push(MpeTrainRecord {
            step,
            l_tcn: parts.tcn,
            l_mcn: parts.mcn,
            l_lfcn: parts.lfcn,
            l_total: total,
        });
    }
    Ok(MpeTrainResult { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MotionClip;
    use crate::world::scripted::{generate_corpus, CorpusSpec};
    use crate::world::{Observation, World, WorldConfig};

    /// A synthetic clip with the given instruction and raw frame vectors.
    fn synth_clip(instruction: &str, kind: ClipKind, frames: Vec<Vec<f32>>) -> MotionClip {
        let labels = vec![Default::default(); frames.len()];
        MotionClip {
            instruction: instruction.to_string(),
            kind,
            motion_name: (kind == ClipKind::Motion).then(|| instruction.to_string()),
            frames: frames
                .into_iter()
                .map(|global| Observation { global, crops: Vec::new() })
                .collect(),
            labels,
        }
    }

    fn synth_corpus(seed: u64, dim: usize) -> (ClipCorpus, LangTable) {
        let strings: Vec<String> =
            ["alpha", "beta", "noise"].iter().map(|s| s.to_string()).collect();
        let lang = LangTable::new_orthonormal(&strings, 4, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frames = |n: usize| -> Vec<Vec<f32>> {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0f32)).collect())
                .collect()
        };
        let corpus = ClipCorpus {
            clips: vec![
                synth_clip("alpha", ClipKind::Motion, frames(5)),
                synth_clip("beta", ClipKind::Motion, frames(6)),
                synth_clip("noise", ClipKind::Arbitrary, frames(4)),
            ],
        };
        (corpus, lang)
    }

    fn tiny_config() -> MpeConfig {
        MpeConfig {
            embed_dim: 4,
            hidden_dim: 6,
            learning_rate: 1e-3,
            train_steps: 20,
            batch_motion: 3,
            batch_arbitrary: 1,
            seed: 5,
            ..MpeConfig::default()
        }
    }

    #[test]
    fn corpus_validation_enforces_instruction_diversity_and_arbitrary_clips() {
        let (corpus, lang) = synth_corpus(1, 5);
        let config = tiny_config();

        let mut single = corpus.clone();
        single.clips.remove(1); // drop "beta": only one motion instruction left
        assert!(matches!(
            train_mpe(&single, lang.clone(), "noise", &config),
            Err(MpeError::NegativeSampling(1))
        ));

        let mut no_arbitrary = corpus.clone();
        no_arbitrary.clips.retain(|c| c.kind == ClipKind::Motion);
        assert!(matches!(
            train_mpe(&no_arbitrary, lang.clone(), "noise", &config),
            Err(MpeError::CorpusTooSmall(_))
        ));

        assert!(train_mpe(&corpus, lang, "noise", &config).is_ok());
    }

    #[test]
    fn triple_sampling_respects_strict_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for len in 3..10 {
            for _ in 0..200 {
                let (i, j, k) = sample_triple(&mut rng, len);
                assert!(i < j && j < k && k < len, "({i},{j},{k}) for len {len}");
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_traces_every_step() {
        let (corpus, lang) = synth_corpus(3, 5);
        let config = tiny_config();
        let a = train_mpe(&corpus, lang.clone(), "noise", &config).unwrap();
        let b = train_mpe(&corpus, lang, "noise", &config).unwrap();
        assert_eq!(a.trace.len(), config.train_steps);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model.encoder.params_f32(), b.model.encoder.params_f32());
        assert!(a.trace.iter().all(|r| r.l_total.is_finite()));
    }

    #[test]
    fn zero_loss_weights_leave_parameters_untouched() {
        let (corpus, lang) = synth_corpus(4, 5);
        let config = MpeConfig {
            lambda_tcn: 0.0,
            lambda_mcn: 0.0,
            lambda_lfcn: 0.0,
            ..tiny_config()
        };
        let result = train_mpe(&corpus, lang.clone(), "noise", &config).unwrap();
        let untrained =
            MotionProgressEvaluator::new(5, lang, "noise", config.clone()).unwrap();
        assert_eq!(result.model.encoder.params_f32(), untrained.encoder.params_f32());
        assert_eq!(result.model.motion_head.params_f32(), untrained.motion_head.params_f32());
        assert_eq!(result.model.progress_head.params_f32(), untrained.progress_head.params_f32());
    }

    #[test]
    fn corrupted_observations_surface_as_divergence() {
        let (mut corpus, lang) = synth_corpus(5, 5);
        corpus.clips[0].frames[1].global[2] = f32::INFINITY;
        let config = MpeConfig { train_steps: 50, ..tiny_config() };
        match train_mpe(&corpus, lang, "noise", &config) {
            Err(MpeError::Divergence { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn parameter_gradients_match_central_differences_through_the_whole_model() {
        let (corpus, lang) = synth_corpus(6, 5);
        let config = tiny_config();
        let usable = usable_clips(&corpus).unwrap();
        let model =
            MotionProgressEvaluator::new(5, lang, "noise", config.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let batch = sample_batch(&corpus, &usable, &model.lang, &config, &mut rng).unwrap();

        let (_, clip_grads, caches) = batch_forward(&model, &batch).unwrap();
        let (enc_grads, mh_grads, ph_grads) = batch_backward(&model, &clip_grads, &caches);

        let loss_of = |m: &MotionProgressEvaluator| -> f64 {
            let (parts, _, _) = batch_forward(m, &batch).unwrap();
            parts.total(config.weights())
        };

        let h = 1e-5;
        let nets: [(&str, Vec<f64>); 3] = [
            ("encoder", enc_grads.to_flat()),
            ("motion_head", mh_grads.to_flat()),
            ("progress_head", ph_grads.to_flat()),
        ];
        for (name, analytic) in &nets {
            let base = match *name {
                "encoder" => model.encoder.params_f64(),
                "motion_head" => model.motion_head.params_f64(),
                _ => model.progress_head.params_f64(),
            };
            for idx in 0..base.len() {
                let mut probe = model.clone();
                let mut plus = base.clone();
                plus[idx] += h;
                let mut minus = base.clone();
                minus[idx] -= h;
                let set = |m: &mut MotionProgressEvaluator, vals: &[f64]| match *name {
                    "encoder" => m.encoder.set_params_f64(vals).unwrap(),
                    "motion_head" => m.motion_head.set_params_f64(vals).unwrap(),
                    _ => m.progress_head.set_params_f64(vals).unwrap(),
                };
                set(&mut probe, &plus);
                let lp = loss_of(&probe);
                set(&mut probe, &minus);
                let lm = loss_of(&probe);
                let numeric = (lp - lm) / (2.0 * h);
                let ana = analytic[idx];
                let tol = 1e-8 + 1e-4 * numeric.abs().max(ana.abs());
                assert!(
                    (numeric - ana).abs() < tol,
                    "{name} param {idx}: numeric {numeric} vs analytic {ana}"
                );
            }
        }
    }

    #[test]
    fn short_training_on_scripted_clips_reduces_the_loss() {
        let world = World::builtin(WorldConfig::default());
        let spec = CorpusSpec { clips_per_motion: 2, arbitrary_clips: 6, clip_length: 10, seed: 1 };
        let corpus = generate_corpus(&world, &spec).unwrap();
        let lang = crate::lang::LangTable::for_catalog(&world.catalog);
        let config = MpeConfig {
            train_steps: 150,
            learning_rate: 3e-4,
            seed: 11,
            ..MpeConfig::default()
        };
        let result =
            train_mpe(&corpus, lang, &world.catalog.arbitrary_instruction, &config).unwrap();
        let early: f64 =
            result.trace[..20].iter().map(|r| r.l_total).sum::<f64>() / 20.0;
        let late: f64 =
            result.trace[result.trace.len() - 20..].iter().map(|r| r.l_total).sum::<f64>() / 20.0;
        assert!(late < early, "loss did not decrease: {early} -> {late}");
    }
}
