//! Clip preprocessing, manifests, signer-independent splits and the
//! synthetic clip generator.

mod dataset;
mod frames;
mod synth;

use std::collections::BTreeSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use dataset::{ClipDataset, ClipStore, Dataset, FrameDataset, Sampling, TensorDataset};
pub use frames::{
    center_square_crop, frame_path, load_clip, normalize, normalize_u8, preprocess_frame, read_frame, resize,
    write_frame, ClipConfig, ClipSample, Frame, FRAME_MAGIC,
};
pub use synth::{generate_synthetic_dataset, Family, SynthGeometry, SynthParams, SynthStyle, StyleRanges};

/// One clip of a dataset. `path` is the clip's frame directory, relative
/// to the directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub frame_count: usize,
    pub class_label: usize,
    pub signer_id: u32,
    pub path: String,
}

impl ManifestEntry {
    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        let bad = |detail: String| Err(Error::Clip { clip_id: self.clip_id.clone(), detail });
        if self.frame_count < 1 {
            return bad("frame_count must be at least 1".into());
        }
        if self.signer_id < 1 {
            return bad("signer ids start at 1".into());
        }
        if let Some(c) = num_classes {
            if self.class_label >= c {
                return bad(format!("class {} outside a {c}-class dataset", self.class_label));
            }
        }
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Write one JSON record per line.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    for entry in entries {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    out.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", i + 1),
        })?;
        entry.validate(None)?;
        if !seen.insert(entry.clip_id.clone()) {
            return Err(Error::Clip { clip_id: entry.clip_id, detail: "listed twice in the manifest".into() });
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Share of the training signers kept for a target-dataset size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingFraction {
    Full,
    Half,
    Quarter,
}

impl TrainingFraction {
    pub const ALL: [TrainingFraction; 3] = [TrainingFraction::Full, TrainingFraction::Half, TrainingFraction::Quarter];

    pub fn denominator(self) -> usize {
        match self {
            TrainingFraction::Full => 1,
            TrainingFraction::Half => 2,
            TrainingFraction::Quarter => 4,
        }
    }

    /// Number of training signers kept out of `n`: `ceil(n / d)`, at least 1.
    pub fn signer_count(self, n: usize) -> usize {
        n.div_ceil(self.denominator()).max(1).min(n)
    }

    /// Dataset-size name used in reports.
    pub fn size_name(self) -> &'static str {
        match self {
            TrainingFraction::Full => "large",
            TrainingFraction::Half => "medium",
            TrainingFraction::Quarter => "small",
        }
    }

    pub fn from_size_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.size_name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub training_signers: Vec<u32>,
    pub validation_signers: Vec<u32>,
    pub test_signers: Vec<u32>,
    pub training_fraction: TrainingFraction,
}

impl SplitSpec {
    /// Consecutive signer ranges `1..=train`, then validation, then test.
    pub fn consecutive(train: u32, val: u32, test: u32, fraction: TrainingFraction) -> Self {
        SplitSpec {
            training_signers: (1..=train).collect(),
            validation_signers: (train + 1..=train + val).collect(),
            test_signers: (train + val + 1..=train + val + test).collect(),
            training_fraction: fraction,
        }
    }

    /// Training signers after applying the fraction: a prefix of the
    /// ascending training-signer list.
    pub fn kept_training_signers(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.training_signers.clone();
        all.sort_unstable();
        all.dedup();
        let keep = self.training_fraction.signer_count(all.len());
        all.truncate(keep);
        all
    }

    pub fn validate(&self) -> Result<()> {
        let sets = [
            ("training", &self.training_signers),
            ("validation", &self.validation_signers),
            ("test", &self.test_signers),
        ];
        for (name, set) in sets {
            if set.is_empty() {
                return Err(Error::invalid(format!("{name} signer set is empty")));
            }
        }
        for (i, (na, a)) in sets.iter().enumerate() {
            for (nb, b) in &sets[i + 1..] {
                if let Some(s) = a.iter().find(|s| b.contains(s)) {
                    return Err(Error::invalid(format!("signer {s} appears in both the {na} and {nb} sets")));
                }
            }
        }
        Ok(())
    }
}

/// Train/validation/test manifests of one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifests {
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

fn sort_entries(entries: &mut [ManifestEntry]) {
    entries.sort_by(|a, b| {
        (a.signer_id, a.class_label, &a.clip_id).cmp(&(b.signer_id, b.class_label, &b.clip_id))
    });
}

/// Route every entry by signer. Training keeps only the signer prefix
/// selected by the fraction.
pub fn split_manifest(manifest: &[ManifestEntry], split: &SplitSpec) -> Result<SplitManifests> {
    split.validate()?;
    let kept = split.kept_training_signers();
    let mut out = SplitManifests { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for entry in manifest {
        let s = entry.signer_id;
        if split.training_signers.contains(&s) {
            if kept.contains(&s) {
                out.train.push(entry.clone());
            }
        } else if split.validation_signers.contains(&s) {
            out.val.push(entry.clone());
        } else if split.test_signers.contains(&s) {
            out.test.push(entry.clone());
        } else {
            return Err(Error::Clip {
                clip_id: entry.clip_id.clone(),
                detail: format!("signer {s} belongs to no split"),
            });
        }
    }
    sort_entries(&mut out.train);
    sort_entries(&mut out.val);
    sort_entries(&mut out.test);
    Ok(out)
}

/// `k` sorted frame indices: uniform without replacement when the clip is
/// long enough, otherwise every frame followed by repeats of the last.
pub fn sample_frames<R: Rng + ?Sized>(frame_count: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k < 1 {
        return Err(Error::invalid("at least one frame must be sampled"));
    }
    if frame_count < 1 {
        return Err(Error::invalid("clip has no frames"));
    }
    if frame_count < k {
        let mut idx: Vec<usize> = (0..frame_count).collect();
        idx.resize(k, frame_count - 1);
        return Ok(idx);
    }
    let mut idx = index::sample(rng, frame_count, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Stable 64-bit seed derived from a base seed, a tag and integer parts.
pub fn derive_seed(base: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fraction_counts() {
        assert_eq!(TrainingFraction::Half.signer_count(16), 8);
        assert_eq!(TrainingFraction::Quarter.signer_count(16), 4);
        assert_eq!(TrainingFraction::Quarter.signer_count(6), 2);
        assert_eq!(TrainingFraction::Quarter.signer_count(1), 1);
    }

    #[test]
    fn overlapping_split_rejected() {
        let mut s = SplitSpec::consecutive(3, 1, 1, TrainingFraction::Full);
        s.test_signers.push(2);
        assert!(s.validate().unwrap_err().to_string().contains("signer 2"));
    }

    #[test]
    fn zero_frames_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_frames(10, 0, &mut rng).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_tag_and_part() {
        assert_ne!(derive_seed(1, "a", &[0]), derive_seed(1, "b", &[0]));
        assert_ne!(derive_seed(1, "a", &[0]), derive_seed(1, "a", &[1]));
        assert_eq!(derive_seed(1, "a", &[2]), derive_seed(1, "a", &[2]));
    }
}
