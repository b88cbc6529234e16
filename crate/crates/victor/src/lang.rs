//! Frozen language-embedding table.
//!
//! Every instruction and state description the models condition on is mapped
//! to a fixed random vector. The vectors are drawn once from a seeded
//! generator and orthonormalized, then frozen: they act as stable,
//! well-separated symbols rather than trained parameters. Checkpoints embed
//! the table they were trained with so the reward engine can refuse to
//! compose models that disagree about what the vocabulary means.

use std::collections::BTreeMap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::catalog::{normalize_phrase, Catalog};
use crate::error::{Classify, ErrorClass};

/// Dimension of every language embedding.
pub const LANG_DIM: usize = 32;

/// Seed for the built-in table. Changing it invalidates every checkpoint.
const TABLE_SEED: u64 = 0x1a06_7ab1e;

#[derive(Debug, Error)]
pub enum LangError {
    #[error("cannot orthonormalize {count} strings in {dim} dimensions")]
    TooManyStrings { count: usize, dim: usize },
    #[error("duplicate vocabulary string: {0:?}")]
    Duplicate(String),
    #[error("embedding table blob has {got} floats, expected {expected}")]
    BlobSize { expected: usize, got: usize },
}

impl Classify for LangError {
    fn class(&self) -> ErrorClass {
        ErrorClass::Validation
    }
}

/// An immutable string-to-vector table with mutually orthonormal entries.
#[derive(Clone, Debug, PartialEq)]
pub struct LangTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

impl LangTable {
    /// Builds a table of orthonormal embeddings for `strings`, deterministic
    /// in `seed`. Requires `strings.len() <= dim`.
    pub fn new_orthonormal(strings: &[String], dim: usize, seed: u64) -> Result<LangTable, LangError> {
        if strings.len() > dim {
            return Err(LangError::TooManyStrings { count: strings.len(), dim });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(strings.len());
        let mut entries = BTreeMap::new();
        for text in strings {
            // Draw, project out the existing basis, normalize; redraw on the
            // (measure-zero) chance of near-dependence.
            let vector = loop {
                let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                for b in &basis {
                    let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (x, y) in v.iter_mut().zip(b) {
                        *x -= proj * y;
                    }
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    for x in &mut v {
                        *x /= norm;
                    }
                    break v;
                }
            };
            let stored: Vec<f32> = vector.iter().map(|&x| x as f32).collect();
            if entries.insert(text.clone(), stored).is_some() {
                return Err(LangError::Duplicate(text.clone()));
            }
            basis.push(vector);
        }
        Ok(LangTable { dim, entries })
    }

    /// The frozen table over a catalog's full vocabulary.
    pub fn for_catalog(catalog: &Catalog) -> LangTable {
        LangTable::new_orthonormal(&catalog.language_strings(), LANG_DIM, TABLE_SEED)
            .expect("catalog vocabulary fits the embedding dimension")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Embedding for `text`: exact match first, then whitespace/case-
    /// insensitive fallback.
    pub fn get(&self, text: &str) -> Option<&[f32]> {
        if let Some(v) = self.entries.get(text) {
            return Some(v);
        }
        let wanted = normalize_phrase(text);
        self.entries
            .iter()
            .find(|(key, _)| normalize_phrase(key) == wanted)
            .map(|(_, v)| v.as_slice())
    }

    /// Embedding widened to f64 for the numeric models.
    pub fn embedding_f64(&self, text: &str) -> Option<Vec<f64>> {
        self.get(text).map(|v| v.iter().map(|&x| x as f64).collect())
    }

    /// Vocabulary in stored (sorted) order.
    pub fn strings(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    /// Flattens the table for checkpointing: sorted strings plus one
    /// concatenated float blob in the same order.
    pub fn to_blob(&self) -> (Vec<String>, Vec<f32>) {
        let strings: Vec<String> = self.entries.keys().cloned().collect();
        let mut data = Vec::with_capacity(strings.len() * self.dim);
        for key in &strings {
            data.extend_from_slice(&self.entries[key]);
        }
        (strings, data)
    }

    /// Inverse of [`LangTable::to_blob`].
    pub fn from_blob(strings: &[String], dim: usize, data: &[f32]) -> Result<LangTable, LangError> {
        if data.len() != strings.len() * dim {
            return Err(LangError::BlobSize {
                expected: strings.len() * dim,
                got: data.len(),
            });
        }
        let mut entries = BTreeMap::new();
        for (idx, text) in strings.iter().enumerate() {
            let vector = data[idx * dim..(idx + 1) * dim].to_vec();
            if entries.insert(text.clone(), vector).is_some() {
                return Err(LangError::Duplicate(text.clone()));
            }
        }
        Ok(LangTable { dim, entries })
    }
}
