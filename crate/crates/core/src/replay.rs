//! Experience replay memory: a bounded per-style sample store, and assembly of
//! the training set for each adaptation stage.

use crate::model::Sample;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("style `{0}` is already in the buffer")]
    DuplicateStyle(String),
    #[error("adaptation set mixes styles `{0}` and `{1}`")]
    MixedStyles(String, String),
    #[error("empty sample set")]
    Empty,
    #[error("snapshot refers to sample {0}, which is not in the pool")]
    MissingSample(u64),
    #[error("quota must be positive")]
    ZeroQuota,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleMemory {
    pub style: String,
    pub quota: usize,
    pub samples: Vec<Sample>,
}

/// Per-style retained samples, in style insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayBuffer {
    styles: Vec<StyleMemory>,
}

impl ReplayBuffer {
    /// Keeps `min(quota, available)` samples per style of `initial`, drawn
    /// uniformly without replacement. Styles keep their order of first
    /// appearance; retained samples keep their dataset order.
    pub fn init(initial: &[Sample], quota: usize, seed: u64) -> Result<Self, ReplayError> {
        if quota == 0 {
            return Err(ReplayError::ZeroQuota);
        }
        if initial.is_empty() {
            return Err(ReplayError::Empty);
        }
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<&Sample>> = HashMap::new();
        for s in initial {
            let entry = groups.entry(s.style.as_str()).or_insert_with(|| {
                order.push(s.style.as_str());
                Vec::new()
            });
            entry.push(s);
        }
        let mut styles = Vec::with_capacity(order.len());
        for (k, style) in order.iter().enumerate() {
            let pool = &groups[style];
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let take = quota.min(pool.len());
            let mut picked = index::sample(&mut rng, pool.len(), take).into_vec();
            picked.sort_unstable();
            styles.push(StyleMemory {
                style: style.to_string(),
                quota,
                samples: picked.into_iter().map(|i| pool[i].clone()).collect(),
            });
        }
        Ok(Self { styles })
    }

    /// Stores a whole single-style adaptation set under a new key whose quota
    /// is the set's size.
    pub fn extend(&mut self, adaptation: &[Sample]) -> Result<(), ReplayError> {
        let first = adaptation.first().ok_or(ReplayError::Empty)?;
        if let Some(other) = adaptation.iter().find(|s| s.style != first.style) {
            return Err(ReplayError::MixedStyles(first.style.clone(), other.style.clone()));
        }
        if self.contains(&first.style) {
            return Err(ReplayError::DuplicateStyle(first.style.clone()));
        }
        self.styles.push(StyleMemory {
            style: first.style.clone(),
            quota: adaptation.len(),
            samples: adaptation.to_vec(),
        });
        Ok(())
    }

    pub fn contains(&self, style: &str) -> bool {
        self.styles.iter().any(|m| m.style == style)
    }

    pub fn styles(&self) -> impl Iterator<Item = &str> {
        self.styles.iter().map(|m| m.style.as_str())
    }

    pub fn memories(&self) -> &[StyleMemory] {
        &self.styles
    }

    pub fn len(&self) -> usize {
        self.styles.iter().map(|m| m.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenation of all retained lists in style order. Shuffling happens
    /// downstream.
    pub fn assemble(&self) -> Result<Vec<&Sample>, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::Empty);
        }
        Ok(self.styles.iter().flat_map(|m| m.samples.iter()).collect())
    }

    pub fn snapshot(&self) -> BufferSnapshot {
        BufferSnapshot {
            styles: self
                .styles
                .iter()
                .map(|m| StyleSnapshot {
                    style: m.style.clone(),
                    quota: m.quota,
                    ids: m.samples.iter().map(|s| s.id).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds a buffer from a snapshot, resolving ids against `pool`.
    pub fn restore(snapshot: &BufferSnapshot, pool: &[Sample]) -> Result<Self, ReplayError> {
        let by_id: HashMap<u64, &Sample> = pool.iter().map(|s| (s.id, s)).collect();
        let mut styles = Vec::with_capacity(snapshot.styles.len());
        for entry in &snapshot.styles {
            let samples = entry
                .ids
                .iter()
                .map(|id| by_id.get(id).map(|s| (*s).clone()).ok_or(ReplayError::MissingSample(*id)))
                .collect::<Result<Vec<_>, _>>()?;
            styles.push(StyleMemory {
                style: entry.style.clone(),
                quota: entry.quota,
                samples,
            });
        }
        Ok(Self { styles })
    }
}

/// Sample identifiers and style keys; enough to rebuild a buffer exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSnapshot {
    pub styles: Vec<StyleSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleSnapshot {
    pub style: String,
    pub quota: usize,
    pub ids: Vec<u64>,
}

impl BufferSnapshot {
    pub fn unique_ids(&self) -> bool {
        let mut seen = HashSet::new();
        self.styles.iter().flat_map(|s| &s.ids).all(|id| seen.insert(*id))
    }
}
