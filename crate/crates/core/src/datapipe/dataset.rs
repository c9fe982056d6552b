use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::frames::{frame_path, preprocess_frame, read_frame, stack_frames};
use super::{derive_seed, sample_frames, ManifestEntry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Indexed labelled examples. `example` must be a pure function of
/// `(index, epoch)` so batches can be assembled in parallel without
/// affecting results.
pub trait Dataset: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape of one example, without the batch axis.
    fn example_shape(&self) -> Vec<usize>;

    fn label(&self, index: usize) -> usize;

    fn example(&self, index: usize, epoch: usize) -> Result<Tensor<f32>>;

    /// Stack the listed examples into `[N, ...]`, in the given order.
    fn batch(&self, indices: &[usize], epoch: usize) -> Result<(Tensor<f32>, Vec<usize>)> {
        let examples: Vec<Tensor<f32>> = indices
            .par_iter()
            .map(|&i| self.example(i, epoch))
            .collect::<Result<_>>()?;
        let mut shape = vec![indices.len()];
        shape.extend(self.example_shape());
        let mut data = Vec::with_capacity(shape.iter().product());
        for e in &examples {
            data.extend_from_slice(e.data());
        }
        let labels = indices.iter().map(|&i| self.label(i)).collect();
        Ok((Tensor::new(shape, data)?, labels))
    }
}

/// Frame-sampling policy of a clip dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Fresh frame indices every epoch (training).
    PerEpoch,
    /// One fixed draw per clip (validation and test).
    Fixed,
}

fn example_rng(seed: u64, sampling: Sampling, clip_id: &str, epoch: usize) -> ChaCha8Rng {
    let parts: &[u64] = match sampling {
        Sampling::PerEpoch => &[epoch as u64],
        Sampling::Fixed => &[],
    };
    ChaCha8Rng::seed_from_u64(derive_seed(seed, clip_id, parts))
}

/// Preprocessed frames of every clip, decoded once and shared.
#[derive(Debug, Default)]
pub struct ClipStore {
    size: usize,
    clips: HashMap<String, Arc<Vec<Tensor<f32>>>>,
}

impl ClipStore {
    /// Read, crop, resize and normalize every frame of `entries`.
    pub fn load(root: &Path, entries: &[ManifestEntry], size: usize) -> Result<Self> {
        let decoded: Vec<(String, Vec<Tensor<f32>>)> = entries
            .par_iter()
            .map(|entry| {
                let dir = root.join(&entry.path);
                let frames = (0..entry.frame_count)
                    .map(|i| read_frame(frame_path(&dir, i)).and_then(|f| preprocess_frame(&f, size)))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::Clip { clip_id: entry.clip_id.clone(), detail: e.to_string() })?;
                Ok((entry.clip_id.clone(), frames))
            })
            .collect::<Result<_>>()?;
        Ok(ClipStore {
            size,
            clips: decoded.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn frames(&self, clip_id: &str) -> Result<&[Tensor<f32>]> {
        self.clips
            .get(clip_id)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Clip { clip_id: clip_id.to_string(), detail: "not loaded".into() })
    }
}

/// Clips as `[3, T, s, s]` examples.
#[derive(Debug, Clone)]
pub struct ClipDataset {
    entries: Vec<ManifestEntry>,
    store: Arc<ClipStore>,
    frames: usize,
    sampling: Sampling,
    seed: u64,
}

impl ClipDataset {
    pub fn new(entries: Vec<ManifestEntry>, store: Arc<ClipStore>, frames: usize, sampling: Sampling, seed: u64) -> Result<Self> {
        if frames < 1 {
            return Err(Error::invalid("clip datasets need at least one frame per example"));
        }
        for e in &entries {
            store.frames(&e.clip_id)?;
        }
        Ok(ClipDataset { entries, store, frames, sampling, seed })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }
}

impl Dataset for ClipDataset {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn example_shape(&self) -> Vec<usize> {
        vec![3, self.frames, self.store.size(), self.store.size()]
    }

    fn label(&self, index: usize) -> usize {
        self.entries[index].class_label
    }

    fn example(&self, index: usize, epoch: usize) -> Result<Tensor<f32>> {
        let entry = &self.entries[index];
        let all = self.store.frames(&entry.clip_id)?;
        let mut rng = example_rng(self.seed, self.sampling, &entry.clip_id, epoch);
        let idx = sample_frames(all.len(), self.frames, &mut rng)?;
        let picked: Vec<Tensor<f32>> = idx.into_iter().map(|i| all[i].clone()).collect();
        stack_frames(&picked)
    }
}

/// Single frames of clips as `[3, s, s]` images, `per_clip` distinct
/// frames per clip (one by default).
#[derive(Debug, Clone)]
pub struct FrameDataset {
    entries: Vec<ManifestEntry>,
    store: Arc<ClipStore>,
    sampling: Sampling,
    seed: u64,
    per_clip: usize,
}

impl FrameDataset {
    pub fn new(entries: Vec<ManifestEntry>, store: Arc<ClipStore>, sampling: Sampling, seed: u64) -> Result<Self> {
        for e in &entries {
            store.frames(&e.clip_id)?;
        }
        Ok(FrameDataset { entries, store, sampling, seed, per_clip: 1 })
    }

    /// Draw `n` frames of every clip per epoch, without replacement while
    /// the clip has enough frames.
    pub fn with_frames_per_clip(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("at least one frame per clip is required"));
        }
        self.per_clip = n;
        Ok(self)
    }
}

impl Dataset for FrameDataset {
    fn len(&self) -> usize {
        self.entries.len() * self.per_clip
    }

    fn example_shape(&self) -> Vec<usize> {
        vec![3, self.store.size(), self.store.size()]
    }

    fn label(&self, index: usize) -> usize {
        self.entries[index / self.per_clip].class_label
    }

    fn example(&self, index: usize, epoch: usize) -> Result<Tensor<f32>> {
        let (clip, slot) = (index / self.per_clip, index % self.per_clip);
        let entry = &self.entries[clip];
        let all = self.store.frames(&entry.clip_id)?;
        let mut rng = example_rng(self.seed, self.sampling, &entry.clip_id, epoch);
        if self.per_clip == 1 {
            return Ok(all[rng.random_range(0..all.len())].clone());
        }
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.shuffle(&mut rng);
        Ok(all[order[slot % order.len()]].clone())
    }
}

/// In-memory examples, identical every epoch.
#[derive(Debug, Clone)]
pub struct TensorDataset {
    examples: Vec<Tensor<f32>>,
    labels: Vec<usize>,
}

impl TensorDataset {
    pub fn new(examples: Vec<Tensor<f32>>, labels: Vec<usize>) -> Result<Self> {
        if examples.len() != labels.len() {
            return Err(Error::invalid("one label per example required"));
        }
        if let Some(first) = examples.first() {
            if examples.iter().any(|e| e.shape() != first.shape()) {
                return Err(Error::invalid("examples differ in shape"));
            }
        }
        Ok(TensorDataset { examples, labels })
    }
}

impl Dataset for TensorDataset {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn example_shape(&self) -> Vec<usize> {
        self.examples.first().map(|e| e.shape().to_vec()).unwrap_or_default()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn example(&self, index: usize, _epoch: usize) -> Result<Tensor<f32>> {
        Ok(self.examples[index].clone())
    }
}
