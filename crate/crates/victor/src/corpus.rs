//! Labeled clip corpus and its on-disk format.
//!
//! A corpus directory holds `manifest.json` plus one raw float32 file per clip
//! (row-major `frames x 16` global vectors) and a parallel `.labels.jsonl`
//! file carrying one object-state map per frame. Per-object crops are not
//! stored: they are reconstructed on load from the stored globals, the frame
//! labels, and a deterministic noise stream, which keeps the disk format
//! minimal while giving the state classifier the same training distribution.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::catalog::{ObjectId, StateMap};
use crate::error::{Classify, ErrorClass};
use crate::world::{splitmix, Observation, World, CROP_DIM, GLOBAL_DIM};

/// Whether a clip demonstrates a catalog motion or arbitrary movement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    Motion,
    Arbitrary,
}

/// One labeled clip: an instruction, per-frame observations, and per-frame
/// ground-truth object states.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    pub instruction: String,
    pub kind: ClipKind,
    /// Canonical catalog motion name; `None` for arbitrary clips.
    pub motion_name: Option<String>,
    pub frames: Vec<Observation>,
    pub labels: Vec<StateMap>,
}

impl MotionClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus manifest is invalid: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("clip {path}: frame file length {bytes} bytes is not a multiple of one {dim}-channel frame")]
    FrameDim { path: String, bytes: usize, dim: usize },
    #[error("clip {path}: {frames} frames but {labels} labels")]
    LabelMismatch { path: String, frames: usize, labels: usize },
    #[error("clip {path}: label line {line} is invalid: {source}")]
    LabelParse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("corpus is unusable: {0}")]
    Unusable(String),
}

impl Classify for CorpusError {
    fn class(&self) -> ErrorClass {
        match self {
            CorpusError::Io(_) => ErrorClass::Runtime,
            _ => ErrorClass::Validation,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    instruction: String,
    kind: ClipKind,
    motion_name: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    clips: Vec<ManifestEntry>,
}

/// An in-memory clip collection.
#[derive(Clone, Debug, Default)]
pub struct ClipCorpus {
    pub clips: Vec<MotionClip>,
}

impl ClipCorpus {
    /// Distinct motion instructions present, in first-appearance order.
    pub fn motion_instructions(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for clip in self.clips.iter().filter(|c| c.kind == ClipKind::Motion) {
            if seen.insert(clip.instruction.clone()) {
                out.push(clip.instruction.clone());
            }
        }
        out
    }

    pub fn motion_clip_count(&self) -> usize {
        self.clips.iter().filter(|c| c.kind == ClipKind::Motion).count()
    }

    pub fn arbitrary_clip_count(&self) -> usize {
        self.clips.iter().filter(|c| c.kind == ClipKind::Arbitrary).count()
    }

    /// Total labeled frames across all clips.
    pub fn frame_count(&self) -> usize {
        self.clips.iter().map(|c| c.len()).sum()
    }

    /// Writes the corpus under `dir` (manifest, frame arrays, label files).
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir.join("clips"))?;
        let mut manifest = Manifest { clips: Vec::new() };
        for (idx, clip) in self.clips.iter().enumerate() {
            let rel = format!("clips/clip_{idx:05}.f32");
            let mut frame_file = std::fs::File::create(dir.join(&rel))?;
            for frame in &clip.frames {
                for &v in &frame.global {
                    frame_file.write_all(&v.to_le_bytes())?;
                }
            }
            let mut label_file = std::fs::File::create(dir.join(label_path(&rel)))?;
            for label in &clip.labels {
                let line = serde_json::to_string(&label)?;
                label_file.write_all(line.as_bytes())?;
                label_file.write_all(b"\n")?;
            }
            manifest.clips.push(ManifestEntry {
                path: rel,
                instruction: clip.instruction.clone(),
                kind: clip.kind,
                motion_name: clip.motion_name.clone(),
            });
        }
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    /// Loads a corpus directory, reconstructing per-object crops from the
    /// stored globals, labels, and a clip-indexed noise stream.
    pub fn load(dir: &Path, world: &World) -> Result<ClipCorpus, CorpusError> {
        let manifest_text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&manifest_text)?;
        let mut clips = Vec::with_capacity(manifest.clips.len());
        for (idx, entry) in manifest.clips.iter().enumerate() {
            let path = dir.join(&entry.path);
            let globals = read_frames(&path, &entry.path)?;
            let labels = read_labels(&dir.join(label_path(&entry.path)), &entry.path)?;
            if globals.len() != labels.len() {
                return Err(CorpusError::LabelMismatch {
                    path: entry.path.clone(),
                    frames: globals.len(),
                    labels: labels.len(),
                });
            }
            let frames = globals
                .into_iter()
                .zip(&labels)
                .enumerate()
                .map(|(frame_idx, (global, label))| {
                    reconstruct_observation(world, global, label, idx as u64, frame_idx as u64)
                })
                .collect();
            clips.push(MotionClip {
                instruction: entry.instruction.clone(),
                kind: entry.kind,
                motion_name: entry.motion_name.clone(),
                frames,
                labels,
            });
        }
        Ok(ClipCorpus { clips })
    }
}

fn label_path(clip_path: &str) -> PathBuf {
    PathBuf::from(clip_path.replace(".f32", ".labels.jsonl"))
}

fn read_frames(path: &Path, rel: &str) -> Result<Vec<Vec<f32>>, CorpusError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let frame_bytes = GLOBAL_DIM * 4;
    if bytes.len() % frame_bytes != 0 {
        return Err(CorpusError::FrameDim {
            path: rel.to_string(),
            bytes: bytes.len(),
            dim: GLOBAL_DIM,
        });
    }
    Ok(bytes
        .chunks_exact(frame_bytes)
        .map(|frame| {
            frame
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        })
        .collect())
}

fn read_labels(path: &Path, rel: &str) -> Result<Vec<StateMap>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let label: StateMap = serde_json::from_str(line).map_err(|source| CorpusError::LabelParse {
            path: rel.to_string(),
            line: line_no + 1,
            source,
        })?;
        labels.push(label);
    }
    Ok(labels)
}

/// Rebuilds the crop channels for one stored frame: state one-hots come from
/// the label, offsets from the stored (noisy) agent and block positions, and
/// fresh Gaussian noise from a stream keyed by clip and frame index.
fn reconstruct_observation(
    world: &World,
    global: Vec<f32>,
    label: &StateMap,
    clip_idx: u64,
    frame_idx: u64,
) -> Observation {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(
        splitmix(0xc09u64, clip_idx),
        frame_idx,
    ));
    let noise = Normal::new(0.0, world.config.noise_sigma).expect("sigma >= 0");
    let agent = [global[0] as f64, global[1] as f64];
    let block_pos = [global[12] as f64, global[13] as f64];
    let mut crops = Vec::with_capacity(ObjectId::ALL.len());
    for id in ObjectId::ALL {
        let def = world.catalog.object(id);
        let mut crop = Vec::with_capacity(CROP_DIM);
        let mut draw = |base: f64| (base + noise.sample(&mut rng)) as f32;
        for s in &def.states {
            crop.push(draw(if label.get(&id) == Some(s) { 1.0 } else { 0.0 }));
        }
        let target = match id {
            ObjectId::Block => block_pos,
            _ => world.catalog.anchor(id.as_str()),
        };
        crop.push(draw(target[0] - agent[0]));
        crop.push(draw(target[1] - agent[1]));
        while crop.len() < CROP_DIM {
            crop.push(draw(0.0));
        }
        crops.push(crop);
    }
    Observation { global, crops }
}
