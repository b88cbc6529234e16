//! The three contrastive objectives and their embedding gradients.
//!
//! All three losses are *sums* over the batch, term by term, exactly as the
//! module-level docs describe:
//!
//! * time-contrast (`loss_tcn`): within each motion clip, the base embeddings
//!   of the frame pairs (i,j) and (j,k) must beat the far pair (i,k);
//! * motion-contrast (`loss_mcn`): each frame's motion embedding must sit
//!   closer to its own instruction than to one contrasting instruction;
//! * language-frame contrast (`loss_lfcn`): within each motion clip, the last
//!   frame's progress embedding must be the closest of the three to the
//!   instruction.
//!
//! Similarity is the negative Euclidean distance throughout. Gradients are
//! derived by hand and verified against central finite differences.

use super::MpeError;

/// Similarity between two embeddings: −‖a − b‖₂.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64, MpeError> {
    if a.len() != b.len() {
        return Err(MpeError::DimMismatch { left: a.len(), right: b.len() });
    }
    Ok(-distance(a, b))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `−log σ(z)` computed stably for large |z|.
fn softplus_neg(z: f64) -> f64 {
    if z < -30.0 {
        -z
    } else {
        (-z).exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Embeddings of one clip's frame triple (i, j, k): base, motion-head, and
/// progress-head vectors.
#[derive(Clone, Debug)]
pub struct TripleEmbeds {
    pub f: [Vec<f64>; 3],
    pub m: [Vec<f64>; 3],
    pub p: [Vec<f64>; 3],
}

/// One batch element: a triple, its own instruction embedding, an optional
/// contrasting instruction embedding, and whether the clip demonstrates a
/// catalog motion (as opposed to arbitrary movement).
#[derive(Clone, Debug)]
pub struct ClipTerm {
    pub embeds: TripleEmbeds,
    pub own: Vec<f64>,
    pub negative: Option<Vec<f64>>,
    pub is_motion: bool,
}

/// Per-component loss values (batch sums).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub tcn: f64,
    pub mcn: f64,
    pub lfcn: f64,
}

impl LossParts {
    pub fn total(&self, weights: LossWeights) -> f64 {
        weights.tcn * self.tcn + weights.mcn * self.mcn + weights.lfcn * self.lfcn
    }
}

/// λ1, λ2, λ3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub tcn: f64,
    pub mcn: f64,
    pub lfcn: f64,
}

/// Gradients of the weighted total loss w.r.t. one clip's embeddings.
#[derive(Clone, Debug)]
pub struct ClipGrads {
    pub f: [Vec<f64>; 3],
    pub m: [Vec<f64>; 3],
    pub p: [Vec<f64>; 3],
}

/// Time-contrastive loss over the motion clips of a batch.
pub fn loss_tcn(clips: &[ClipTerm]) -> Result<f64, MpeError> {
    let motion: Vec<&ClipTerm> = clips.iter().filter(|c| c.is_motion).collect();
    if motion.is_empty() {
        return Err(MpeError::EmptyBatch("time-contrastive loss needs motion clips"));
    }
    let mut total = 0.0;
    for clip in motion {
        let [fi, fj, fk] = &clip.embeds.f;
        let s_ij = similarity(fi, fj)?;
        let s_jk = similarity(fj, fk)?;
        let s_ik = similarity(fi, fk)?;
        total += softplus_neg(s_ij - s_ik) + softplus_neg(s_jk - s_ik);
    }
    Ok(total)
}

/// Motion-language contrastive loss over every clip in the batch.
pub fn loss_mcn(clips: &[ClipTerm]) -> Result<f64, MpeError> {
    if clips.is_empty() {
        return Err(MpeError::EmptyBatch("motion-contrastive loss needs clips"));
    }
    let mut total = 0.0;
    for clip in clips {
        let negative = clip.negative.as_ref().ok_or(MpeError::MissingNegative)?;
        for m in &clip.embeds.m {
            let s_own = similarity(m, &clip.own)?;
            let s_neg = similarity(m, negative)?;
            total += softplus_neg(s_own - s_neg);
        }
    }
    Ok(total)
}

/// Language-frame contrastive loss over the motion clips of a batch.
pub fn loss_lfcn(clips: &[ClipTerm]) -> Result<f64, MpeError> {
    let motion: Vec<&ClipTerm> = clips.iter().filter(|c| c.is_motion).collect();
    if motion.is_empty() {
        return Err(MpeError::EmptyBatch("language-frame loss needs motion clips"));
    }
    let mut total = 0.0;
    for clip in motion {
        let s: Vec<f64> = clip
            .embeds
            .p
            .iter()
            .map(|p| similarity(p, &clip.own))
            .collect::<Result<_, _>>()?;
        total += log_sum_exp(&s) - s[2];
    }
    Ok(total)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `∂S(a,b)/∂a`; the gradient w.r.t. `b` is its negation. Zero at `a = b`
/// (a valid subgradient of the norm).
fn sim_grad_a(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = distance(a, b);
    if d < 1e-12 {
        return vec![0.0; a.len()];
    }
    a.iter().zip(b).map(|(x, y)| -(x - y) / d).collect()
}

fn add_scaled(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

/// Weighted total loss over a batch plus its gradient w.r.t. every clip
/// embedding. This is the single code path training uses; the standalone
/// loss functions above exist for inspection and oracle testing.
pub fn loss_and_grads(
    clips: &[ClipTerm],
    weights: LossWeights,
) -> Result<(LossParts, Vec<ClipGrads>), MpeError> {
    if clips.is_empty() {
        return Err(MpeError::EmptyBatch("loss needs a non-empty batch"));
    }
    if !clips.iter().any(|c| c.is_motion) {
        return Err(MpeError::EmptyBatch("loss needs at least one motion clip"));
    }
    let dim = clips[0].embeds.f[0].len();
    let mut parts = LossParts { tcn: 0.0, mcn: 0.0, lfcn: 0.0 };
    let mut grads = Vec::with_capacity(clips.len());

    for clip in clips {
        let mut g = ClipGrads {
            f: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]],
            m: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]],
            p: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]],
        };

        if clip.is_motion {
            // Time contrast over base embeddings.
            let [fi, fj, fk] = &clip.embeds.f;
            let s_ij = similarity(fi, fj)?;
            let s_jk = similarity(fj, fk)?;
            let s_ik = similarity(fi, fk)?;
            parts.tcn += softplus_neg(s_ij - s_ik) + softplus_neg(s_jk - s_ik);

            let d_sij = weights.tcn * (sigmoid(s_ij - s_ik) - 1.0);
            let d_sjk = weights.tcn * (sigmoid(s_jk - s_ik) - 1.0);
            let d_sik = -d_sij - d_sjk; // (1−σ₁) + (1−σ₂), weighted

            let g_ij = sim_grad_a(fi, fj);
            add_scaled(&mut g.f[0], &g_ij, d_sij);
            add_scaled(&mut g.f[1], &g_ij, -d_sij);
            let g_jk = sim_grad_a(fj, fk);
            add_scaled(&mut g.f[1], &g_jk, d_sjk);
            add_scaled(&mut g.f[2], &g_jk, -d_sjk);
            let g_ik = sim_grad_a(fi, fk);
            add_scaled(&mut g.f[0], &g_ik, d_sik);
            add_scaled(&mut g.f[2], &g_ik, -d_sik);
        }

        // Motion-language contrast; instruction embeddings stay frozen.
        let negative = clip.negative.as_ref().ok_or(MpeError::MissingNegative)?;
        for (m, gm) in clip.embeds.m.iter().zip(&mut g.m) {
            let s_own = similarity(m, &clip.own)?;
            let s_neg = similarity(m, negative)?;
            parts.mcn += softplus_neg(s_own - s_neg);
            let s = sigmoid(s_own - s_neg);
            add_scaled(gm, &sim_grad_a(m, &clip.own), weights.mcn * (s - 1.0));
            add_scaled(gm, &sim_grad_a(m, negative), weights.mcn * (1.0 - s));
        }

        if clip.is_motion {
            // Language-frame contrast: softmax over the three progress scores.
            let s: Vec<f64> = clip
                .embeds
                .p
                .iter()
                .map(|p| similarity(p, &clip.own))
                .collect::<Result<_, _>>()?;
            let lse = log_sum_exp(&s);
            parts.lfcn += lse - s[2];
            for (x, (p, gp)) in clip.embeds.p.iter().zip(&mut g.p).enumerate() {
                let soft = (s[x] - lse).exp();
                let coeff = if x == 2 { soft - 1.0 } else { soft };
                add_scaled(gp, &sim_grad_a(p, &clip.own), weights.lfcn * coeff);
            }
        }

        grads.push(g);
    }
    Ok((parts, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // ------------------------------------------------------------------
    // Independent brute-force oracles: direct formula transcription with
    // explicit loops, sharing no code with the implementation above.
    // ------------------------------------------------------------------

    fn oracle_sim(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for idx in 0..a.len() {
            acc += (a[idx] - b[idx]).powi(2);
        }
        -acc.sqrt()
    }

    fn oracle_tcn(clips: &[ClipTerm]) -> f64 {
        let mut total = 0.0;
        for clip in clips {
            if !clip.is_motion {
                continue;
            }
            let neg = oracle_sim(&clip.embeds.f[0], &clip.embeds.f[2]).exp();
            for (x, y) in [(0usize, 1usize), (1, 2)] {
                let pos = oracle_sim(&clip.embeds.f[x], &clip.embeds.f[y]).exp();
                total += -(pos / (pos + neg)).ln();
            }
        }
        total
    }

    fn oracle_mcn(clips: &[ClipTerm]) -> f64 {
        let mut total = 0.0;
        for clip in clips {
            for m in &clip.embeds.m {
                let own = oracle_sim(m, &clip.own).exp();
                let other = oracle_sim(m, clip.negative.as_ref().unwrap()).exp();
                total += -(own / (own + other)).ln();
            }
        }
        total
    }

    fn oracle_lfcn(clips: &[ClipTerm]) -> f64 {
        let mut total = 0.0;
        for clip in clips {
            if !clip.is_motion {
                continue;
            }
            let e: Vec<f64> = clip.embeds.p.iter().map(|p| oracle_sim(p, &clip.own).exp()).collect();
            total += -(e[2] / (e[0] + e[1] + e[2])).ln();
        }
        total
    }

    fn vec2(x: f64, y: f64) -> Vec<f64> {
        vec![x, y]
    }

    fn triple_from(f: [[f64; 2]; 3], m: [[f64; 2]; 3], p: [[f64; 2]; 3]) -> TripleEmbeds {
        TripleEmbeds {
            f: [f[0].to_vec(), f[1].to_vec(), f[2].to_vec()],
            m: [m[0].to_vec(), m[1].to_vec(), m[2].to_vec()],
            p: [p[0].to_vec(), p[1].to_vec(), p[2].to_vec()],
        }
    }

    fn random_clip(rng: &mut ChaCha8Rng, dim: usize, is_motion: bool) -> ClipTerm {
        let mut v = |scale: f64| -> Vec<f64> { (0..dim).map(|_| rng.random_range(-scale..scale)).collect() };
        ClipTerm {
            embeds: TripleEmbeds {
                f: [v(2.0), v(2.0), v(2.0)],
                m: [v(2.0), v(2.0), v(2.0)],
                p: [v(2.0), v(2.0), v(2.0)],
            },
            own: v(2.0),
            negative: Some(v(2.0)),
            is_motion,
        }
    }

    #[test]
    fn similarity_matches_hand_values_and_is_symmetric() {
        assert_eq!(similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(similarity(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), -5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let ab = similarity(&a, &b).unwrap();
            assert!((ab - similarity(&b, &a).unwrap()).abs() < 1e-15);
            assert!((ab - oracle_sim(&a, &b)).abs() < 1e-12);
        }
        assert!(matches!(
            similarity(&[1.0], &[1.0, 2.0]),
            Err(MpeError::DimMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn tcn_reproduces_the_pinned_worked_values() {
        // Equal embeddings: both softmax ratios are 1/2.
        let equal = ClipTerm {
            embeds: triple_from(
                [[0.5, -0.5]; 3],
                [[0.0, 0.0]; 3],
                [[0.0, 0.0]; 3],
            ),
            own: vec2(0.0, 0.0),
            negative: Some(vec2(1.0, 0.0)),
            is_motion: true,
        };
        let loss = loss_tcn(std::slice::from_ref(&equal)).unwrap();
        assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);

        // Collinear points at 0, 1, 3.
        let line = ClipTerm {
            embeds: triple_from(
                [[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]],
                [[0.0, 0.0]; 3],
                [[0.0, 0.0]; 3],
            ),
            own: vec2(0.0, 0.0),
            negative: Some(vec2(1.0, 0.0)),
            is_motion: true,
        };
        let loss = loss_tcn(std::slice::from_ref(&line)).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln() + (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((expected - 0.440190).abs() < 1e-6);
    }

    #[test]
    fn tcn_decreases_as_the_middle_frame_approaches_the_first() {
        // The last frame sits far away, perpendicular to the (i, j) segment,
        // so moving j toward i barely changes either distance to k and the
        // (i, j) term dominates.
        let clip_at = |jx: f64| ClipTerm {
            embeds: triple_from(
                [[0.0, 0.0], [jx, 0.0], [0.0, 50.0]],
                [[0.0, 0.0]; 3],
                [[0.0, 0.0]; 3],
            ),
            own: vec2(0.0, 0.0),
            negative: Some(vec2(1.0, 0.0)),
            is_motion: true,
        };
        let far = loss_tcn(&[clip_at(2.0)]).unwrap();
        let near = loss_tcn(&[clip_at(1.0)]).unwrap();
        assert!(near < far);
    }

    #[test]
    fn mcn_reproduces_the_pinned_worked_values() {
        // One motion + one arbitrary clip, everything equidistant: 6 · ln 2.
        let make = |is_motion| ClipTerm {
            embeds: triple_from([[0.0, 0.0]; 3], [[0.0, 0.0]; 3], [[0.0, 0.0]; 3]),
            own: vec2(0.0, 1.0),
            negative: Some(vec2(1.0, 0.0)),
            is_motion,
        };
        let loss = loss_mcn(&[make(true), make(false)]).unwrap();
        assert!((loss - 6.0 * 2f64.ln()).abs() < 1e-12);
        assert!((6.0 * 2f64.ln() - 4.158883).abs() < 1e-6);

        // m at the origin, own at distance 1, contrast at distance 2.
        let clip = ClipTerm {
            embeds: triple_from([[0.0, 0.0]; 3], [[0.0, 0.0]; 3], [[0.0, 0.0]; 3]),
            own: vec2(1.0, 0.0),
            negative: Some(vec2(2.0, 0.0)),
            is_motion: true,
        };
        let loss = loss_mcn(std::slice::from_ref(&clip)).unwrap();
        let expected = 3.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((expected - 0.939786).abs() < 1e-6);

        // Swapping own and contrast must increase the loss.
        let swapped = ClipTerm {
            own: vec2(2.0, 0.0),
            negative: Some(vec2(1.0, 0.0)),
            ..clip.clone()
        };
        assert!(loss_mcn(&[swapped]).unwrap() > loss);
    }

    #[test]
    fn lfcn_reproduces_the_pinned_worked_values_and_skips_arbitrary_clips() {
        // Equidistant progress embeddings: ln 3 per clip.
        let equidistant = ClipTerm {
            embeds: triple_from(
                [[0.0, 0.0]; 3],
                [[0.0, 0.0]; 3],
                [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]],
            ),
            own: vec2(0.0, 0.0),
            negative: Some(vec2(1.0, 1.0)),
            is_motion: true,
        };
        let loss = loss_lfcn(std::slice::from_ref(&equidistant)).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);

        // Distances (3, 2, 1) from the instruction.
        let approach = ClipTerm {
            embeds: triple_from(
                [[0.0, 0.0]; 3],
                [[0.0, 0.0]; 3],
                [[3.0, 0.0], [2.0, 0.0], [1.0, 0.0]],
            ),
            own: vec2(0.0, 0.0),
            negative: Some(vec2(1.0, 1.0)),
            is_motion: true,
        };
        let loss = loss_lfcn(std::slice::from_ref(&approach)).unwrap();
        let expected = (1.0 + (-1.0f64).exp() + (-2.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((expected - 0.4076060).abs() < 1e-6);

        // An arbitrary clip with wild progress embeddings changes nothing.
        let arbitrary = ClipTerm {
            embeds: triple_from(
                [[9.0, 9.0]; 3],
                [[9.0, 9.0]; 3],
                [[9.0, 0.0], [0.0, 9.0], [-9.0, 0.0]],
            ),
            own: vec2(0.0, 0.0),
            negative: Some(vec2(1.0, 1.0)),
            is_motion: false,
        };
        let with_arbitrary = loss_lfcn(&[approach, arbitrary]).unwrap();
        assert!((with_arbitrary - loss).abs() < 1e-15);
    }

    #[test]
    fn losses_match_the_brute_force_oracles_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for round in 0..100 {
            let dim = rng.random_range(1..=8);
            let clips: Vec<ClipTerm> = (0..rng.random_range(1..=4))
                .map(|idx| {
                    let is_motion = idx == 0 || rng.random_range(0..3) > 0;
                    random_clip(&mut rng, dim, is_motion)
                })
                .collect();
            let tcn = loss_tcn(&clips).unwrap();
            let mcn = loss_mcn(&clips).unwrap();
            let lfcn = loss_lfcn(&clips).unwrap();
            assert!((tcn - oracle_tcn(&clips)).abs() < 1e-6, "round {round} tcn");
            assert!((mcn - oracle_mcn(&clips)).abs() < 1e-6, "round {round} mcn");
            assert!((lfcn - oracle_lfcn(&clips)).abs() < 1e-6, "round {round} lfcn");

            // The combined path reports identical components.
            let weights = LossWeights { tcn: 1.0, mcn: 1.0, lfcn: 1.0 };
            let (parts, _) = loss_and_grads(&clips, weights).unwrap();
            assert!((parts.tcn - tcn).abs() < 1e-12);
            assert!((parts.mcn - mcn).abs() < 1e-12);
            assert!((parts.lfcn - lfcn).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_or_ill_formed_batches_are_rejected() {
        assert!(matches!(loss_tcn(&[]), Err(MpeError::EmptyBatch(_))));
        assert!(matches!(loss_mcn(&[]), Err(MpeError::EmptyBatch(_))));
        assert!(matches!(loss_lfcn(&[]), Err(MpeError::EmptyBatch(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut clip = random_clip(&mut rng, 4, true);
        clip.negative = None;
        assert!(matches!(loss_mcn(std::slice::from_ref(&clip)), Err(MpeError::MissingNegative)));
        assert!(matches!(
            loss_and_grads(std::slice::from_ref(&clip), LossWeights { tcn: 1.0, mcn: 1.0, lfcn: 1.0 }),
            Err(MpeError::MissingNegative)
        ));

        // Arbitrary-only batches cannot form the motion-clip losses.
        let arbitrary = random_clip(&mut rng, 4, false);
        assert!(matches!(loss_tcn(std::slice::from_ref(&arbitrary)), Err(MpeError::EmptyBatch(_))));
        assert!(matches!(loss_lfcn(std::slice::from_ref(&arbitrary)), Err(MpeError::EmptyBatch(_))));
    }

    #[test]
    fn embedding_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let weights = LossWeights { tcn: 0.7, mcn: 1.3, lfcn: 0.5 };
        for _ in 0..10 {
            let clips: Vec<ClipTerm> =
                (0..3).map(|idx| random_clip(&mut rng, 3, idx != 1)).collect();
            let (_, grads) = loss_and_grads(&clips, weights).unwrap();

            let total = |clips: &[ClipTerm]| -> f64 {
                let (parts, _) = loss_and_grads(clips, weights).unwrap();
                parts.total(weights)
            };

            let h = 1e-6;
            for (clip_idx, grad) in grads.iter().enumerate() {
                for (field, analytic) in [(0usize, &grad.f), (1, &grad.m), (2, &grad.p)] {
                    for frame in 0..3 {
                        for d in 0..3 {
                            let mut plus = clips.clone();
                            let mut minus = clips.clone();
                            {
                                let e = &mut plus[clip_idx].embeds;
                                let v = match field {
                                    0 => &mut e.f[frame],
                                    1 => &mut e.m[frame],
                                    _ => &mut e.p[frame],
                                };
                                v[d] += h;
                            }
                            {
                                let e = &mut minus[clip_idx].embeds;
                                let v = match field {
                                    0 => &mut e.f[frame],
                                    1 => &mut e.m[frame],
                                    _ => &mut e.p[frame],
                                };
                                v[d] -= h;
                            }
                            let numeric = (total(&plus) - total(&minus)) / (2.0 * h);
                            let ana = analytic[frame][d];
                            assert!(
                                (numeric - ana).abs() < 1e-6 + 1e-4 * numeric.abs().max(ana.abs()),
                                "clip {clip_idx} field {field} frame {frame} dim {d}: {numeric} vs {ana}"
                            );
                        }
                    }
                }
            }
        }
    }
}
