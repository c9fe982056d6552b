use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datapipe::{Family, StyleRanges, SynthGeometry, SynthParams, TrainingFraction};
use crate::error::{Error, Result};
use crate::netdef::{build_inflated, build_mini_inception_2d, ChannelProfile, TemporalSchedule};
use crate::training::{StopRule, TrainConfig};

/// Network input geometry and temporal schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Side of the square network input.
    pub image_size: usize,
    /// Frames per 3D example.
    pub temporal_depth: usize,
    pub schedule: TemporalSchedule,
    pub channels: ChannelProfile,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            image_size: 32,
            temporal_depth: 8,
            schedule: TemporalSchedule::desk_default(),
            channels: ChannelProfile::default(),
        }
    }
}

/// Raw clip rendering shared by both synthetic datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub amplitude: f64,
    pub noise: f64,
    /// Motion-trail length in frame intervals.
    pub trail: f64,
    pub style: StyleRanges,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            frames: 10,
            height: 40,
            width: 48,
            amplitude: 0.5,
            noise: 4.0,
            trail: 6.0,
            style: StyleRanges { speed: (1.0, 1.3), offset_px: 1.5, radius_px: (3.5, 4.5), color_shift: 40.0 },
        }
    }
}

/// One synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDatasetConfig {
    pub classes: usize,
    pub signers: u32,
    pub clips_per_signer_class: usize,
    pub seed: u64,
    pub families: Vec<Family>,
    #[serde(default)]
    pub angle_offset_deg: f64,
}

impl SynthDatasetConfig {
    pub fn synth_params(&self, render: &RenderConfig) -> SynthParams {
        let geometry = SynthGeometry { frames: render.frames, height: render.height, width: render.width };
        let mut p = SynthParams::new(self.classes, self.signers, self.clips_per_signer_class, geometry, self.seed);
        p.families = self.families.clone();
        p.angle_offset_deg = self.angle_offset_deg;
        p.amplitude = render.amplitude;
        p.noise = render.noise;
        p.trail = render.trail;
        p.style = render.style;
        p
    }
}

/// Signer counts of the target split; signers are numbered consecutively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One full repetition per seed.
    pub seeds: Vec<u64>,
    pub fractions: Vec<TrainingFraction>,
    pub geometry: GeometryConfig,
    pub render: RenderConfig,
    pub source: SynthDatasetConfig,
    pub target: SynthDatasetConfig,
    pub split: SplitCounts,
    /// Seed of the fixed validation/test frame draws.
    pub eval_seed: u64,
    pub bootstrap: TrainConfig,
    /// Frames of each source clip used as separate bootstrap images per epoch.
    pub bootstrap_frames_per_clip: usize,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        use Family::*;
        ExperimentConfig {
            seeds: vec![1, 2, 3],
            fractions: TrainingFraction::ALL.to_vec(),
            geometry: GeometryConfig::default(),
            render: RenderConfig::default(),
            source: SynthDatasetConfig {
                classes: 12,
                signers: 12,
                clips_per_signer_class: 3,
                seed: 1001,
                families: vec![Line, Arc, Zigzag],
                angle_offset_deg: 0.0,
            },
            target: SynthDatasetConfig {
                classes: 6,
                signers: 10,
                clips_per_signer_class: 4,
                seed: 2002,
                families: vec![Line, Arc, Zigzag],
                angle_offset_deg: 45.0,
            },
            split: SplitCounts { train: 6, val: 2, test: 2 },
            eval_seed: 7,
            bootstrap: TrainConfig {
                learning_rate: 0.02,
                max_epochs: 10,
                stop_rule: StopRule::TrainAccuracyThreshold { theta: 0.9 },
                ..TrainConfig::default()
            },
            bootstrap_frames_per_clip: 4,
            pretrain: TrainConfig {
                learning_rate: 0.02,
                max_epochs: 40,
                stop_rule: StopRule::TrainAccuracyThreshold { theta: 0.95 },
                ..TrainConfig::default()
            },
            finetune: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("experiment config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Format { path: path.to_path_buf(), detail: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// SHA-256 (hex) of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.fractions.is_empty() {
            return Err(Error::invalid("at least one training fraction is required"));
        }
        let mut seen = self.fractions.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.fractions.len() {
            return Err(Error::invalid("training fractions listed twice"));
        }
        let source = self.source.synth_params(&self.render);
        source.validate()?;
        self.target.synth_params(&self.render).validate()?;
        if self.split.train + self.split.val + self.split.test != self.target.signers {
            return Err(Error::invalid(format!(
                "split {}+{}+{} does not cover the {} target signers",
                self.split.train, self.split.val, self.split.test, self.target.signers
            )));
        }
        if self.split.train == 0 || self.split.val == 0 || self.split.test == 0 {
            return Err(Error::invalid("every split needs at least one signer"));
        }
        for (name, tc) in [("bootstrap", &self.bootstrap), ("pretrain", &self.pretrain), ("finetune", &self.finetune)] {
            tc.validate().map_err(|e| Error::invalid(format!("[{name}] {e}")))?;
        }
        if matches!(self.finetune.stop_rule, StopRule::TrainAccuracyThreshold { .. }) {
            return Err(Error::invalid("target training uses early stopping on validation loss"));
        }
        for (name, tc) in [("bootstrap", &self.bootstrap), ("pretrain", &self.pretrain)] {
            if matches!(tc.stop_rule, StopRule::EarlyStopOnValLoss) {
                return Err(Error::invalid(format!("[{name}] has no validation data; use the accuracy threshold")));
            }
        }
        if self.bootstrap_frames_per_clip == 0 {
            return Err(Error::invalid("bootstrap_frames_per_clip must be at least 1"));
        }
        self.geometry.channels.validate()?;
        let spec2d = build_mini_inception_2d(self.source.classes, self.geometry.image_size, &self.geometry.channels)?;
        build_inflated(&spec2d, &self.geometry.schedule, self.geometry.temporal_depth)?;
        Ok(())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = ExperimentConfig::from_toml_str("seeds = [4]\n[finetune]\nmax_epochs = 3\n").unwrap();
        assert_eq!(c.seeds, vec![4]);
        assert_eq!(c.finetune.max_epochs, 3);
        assert_eq!(c.finetune.batch_size, 32);
    }

    #[test]
    fn bad_split_rejected() {
        let mut c = ExperimentConfig::default();
        c.split.test = 3;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml_str("unknown_key = 1").is_err());
    }
}
