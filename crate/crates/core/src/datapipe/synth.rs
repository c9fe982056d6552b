//! Synthetic sign clips: a blob ("active hand") traces a class-specific
//! trajectory over a signer-specific scene.
//!
//! A class is a trajectory family rotated by an angle; classes enumerate
//! families first, then evenly spaced angles. A signer fixes a
//! [`SynthStyle`]. Every clip adds small jitter and pixel noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::frames::{frame_path, write_frame, Frame};
use super::{derive_seed, write_manifest, ManifestEntry, MANIFEST_FILE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Line,
    Arc,
    Circle,
    Zigzag,
    FigureEight,
    Wave,
}

impl Family {
    /// Path point at progress `s ∈ [0, 1]`, inside the unit disc.
    pub fn point(self, s: f64) -> (f64, f64) {
        match self {
            Family::Line => (2.0 * s - 1.0, 0.0),
            Family::Arc => (-0.9 * (PI * s).cos(), 0.8 * (PI * s).sin() - 0.4),
            Family::Circle => ((2.0 * PI * s).cos() * 0.85, (2.0 * PI * s).sin() * 0.85),
            Family::Zigzag => {
                let tri = 1.0 - 4.0 * ((1.5 * s + 0.25).fract() - 0.5).abs();
                (0.9 * (2.0 * s - 1.0), 0.4 * tri)
            }
            Family::FigureEight => ((2.0 * PI * s).sin(), 0.5 * (4.0 * PI * s).sin()),
            Family::Wave => (0.9 * (2.0 * s - 1.0), 0.4 * (3.0 * PI * s).sin()),
        }
    }

    /// Largest distance of the path from the origin.
    fn reach(self) -> f64 {
        (0..=1000)
            .map(|i| {
                let (x, y) = self.point(i as f64 / 1000.0);
                x.hypot(y)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthGeometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

/// Bounds for per-signer rendering parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleRanges {
    /// Trajectory speed multiplier; values above 1 finish early and hold.
    pub speed: (f64, f64),
    /// Largest scene offset from the frame center, in pixels per axis.
    pub offset_px: f64,
    /// Active-hand blob radius in pixels.
    pub radius_px: (f64, f64),
    /// Largest per-channel color shift, in 8-bit units.
    pub color_shift: f64,
}

impl Default for StyleRanges {
    fn default() -> Self {
        StyleRanges { speed: (1.0, 1.3), offset_px: 2.5, radius_px: (2.5, 3.5), color_shift: 40.0 }
    }
}

/// Rendering parameters of one signer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthStyle {
    pub speed: f64,
    pub offset: (f64, f64),
    pub radius: f64,
    pub color_shift: [f64; 3],
    /// Handedness: mirrors the resting hand to the other side.
    pub mirror: bool,
    pub background: f64,
}

impl SynthStyle {
    pub fn draw<R: Rng + ?Sized>(ranges: &StyleRanges, rng: &mut R) -> Self {
        let uni = |rng: &mut R, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        SynthStyle {
            speed: uni(rng, ranges.speed),
            offset: (
                uni(rng, (-ranges.offset_px, ranges.offset_px)),
                uni(rng, (-ranges.offset_px, ranges.offset_px)),
            ),
            radius: uni(rng, ranges.radius_px),
            color_shift: [0; 3].map(|_| uni(rng, (-ranges.color_shift, ranges.color_shift))),
            mirror: rng.random_bool(0.5),
            background: uni(rng, (40.0, 90.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub num_classes: usize,
    pub num_signers: u32,
    pub clips_per_signer_class: usize,
    pub geometry: SynthGeometry,
    pub seed: u64,
    pub families: Vec<Family>,
    /// Rotation of the first angle of every family, in degrees.
    pub angle_offset_deg: f64,
    /// Trajectory half-extent as a fraction of half the crop side.
    pub amplitude: f64,
    pub style: StyleRanges,
    /// Pixel noise standard deviation, in 8-bit units.
    pub noise: f64,
    /// Length of the fading motion trail behind the active hand, in frame
    /// intervals; 0 draws a sharp hand.
    #[serde(default)]
    pub trail: f64,
}

/// Per-clip relative amplitude jitter and absolute offset jitter (pixels).
const AMPLITUDE_JITTER: f64 = 0.1;
const OFFSET_JITTER_PX: f64 = 1.0;
/// Opacity lost from the newest to the oldest trail sample.
const TRAIL_FADE: f64 = 0.8;

impl SynthParams {
    pub fn new(num_classes: usize, num_signers: u32, clips_per_signer_class: usize, geometry: SynthGeometry, seed: u64) -> Self {
        SynthParams {
            num_classes,
            num_signers,
            clips_per_signer_class,
            geometry,
            seed,
            families: vec![Family::Line, Family::Arc, Family::Circle, Family::Zigzag, Family::FigureEight, Family::Wave],
            angle_offset_deg: 0.0,
            amplitude: 0.45,
            style: StyleRanges::default(),
            noise: 6.0,
            trail: 0.0,
        }
    }

    /// `(family, angle in radians)` of a class.
    pub fn class_motion(&self, class: usize) -> (Family, f64) {
        let nf = self.families.len();
        let angles = self.num_classes.div_ceil(nf);
        let family = self.families[class % nf];
        let angle = self.angle_offset_deg + 360.0 * (class / nf) as f64 / angles as f64;
        (family, angle.to_radians())
    }

    pub fn signer_style(&self, signer: u32) -> SynthStyle {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "signer", &[u64::from(signer)]));
        SynthStyle::draw(&self.style, &mut rng)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if self.num_classes == 0 || self.num_signers == 0 || self.clips_per_signer_class == 0 {
            return Err(Error::invalid("classes, signers and clips must all be positive"));
        }
        if self.families.is_empty() {
            return Err(Error::invalid("at least one trajectory family is required"));
        }
        if !(self.trail >= 0.0 && self.trail.is_finite()) {
            return Err(Error::invalid("trail length must be finite and non-negative"));
        }
        if g.frames == 0 || g.height < 8 || g.width < 8 {
            return Err(Error::invalid(format!("geometry {g:?} is too small")));
        }
        let r = &self.style;
        if r.speed.0 < 1.0 || r.speed.1 < r.speed.0 || r.radius_px.0 <= 0.0 || r.radius_px.1 < r.radius_px.0 {
            return Err(Error::invalid("style ranges must be ordered, with speed ≥ 1 and positive radius"));
        }
        let half = g.height.min(g.width) as f64 / 2.0;
        let reach = self.families.iter().map(|f| f.reach()).fold(0.0, f64::max);
        let extent = self.amplitude * half * (1.0 + AMPLITUDE_JITTER) * reach
            + (r.offset_px + OFFSET_JITTER_PX) * std::f64::consts::SQRT_2
            + r.radius_px.1;
        if extent > half {
            return Err(Error::invalid(format!(
                "trajectories reach {extent:.1} px from the center but the central square has half-side {half:.1} px"
            )));
        }
        Ok(())
    }

    fn render_clip(&self, class: usize, signer: u32, clip: usize) -> Vec<Frame> {
        let g = self.geometry;
        let style = self.signer_style(signer);
        let (family, angle) = self.class_motion(class);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            "clip",
            &[class as u64, u64::from(signer), clip as u64],
        ));
        let half = g.height.min(g.width) as f64 / 2.0;
        let amp = self.amplitude * half * (1.0 + rng.random_range(-AMPLITUDE_JITTER..=AMPLITUDE_JITTER));
        let jitter = (
            rng.random_range(-OFFSET_JITTER_PX..=OFFSET_JITTER_PX),
            rng.random_range(-OFFSET_JITTER_PX..=OFFSET_JITTER_PX),
        );
        let cx = g.width as f64 / 2.0 + style.offset.0 + jitter.0;
        let cy = g.height as f64 / 2.0 + style.offset.1 + jitter.1;
        let (sin, cos) = angle.sin_cos();
        let side = if style.mirror { -1.0 } else { 1.0 };
        let rest = (cx + side * 0.55 * half, cy + 0.6 * half);
        let hand: [f64; 3] = [230.0, 180.0, 140.0];
        let hand = [0, 1, 2].map(|c| (hand[c] + style.color_shift[c]).clamp(0.0, 255.0));
        let torso = [0, 1, 2].map(|c| (style.background + 50.0 + 0.5 * style.color_shift[2 - c]).clamp(0.0, 255.0));
        let noise = Normal::new(0.0, self.noise.max(0.0)).expect("finite noise std");

        let position = |t: f64| {
            let u = if g.frames > 1 { (t / (g.frames - 1) as f64).max(0.0) } else { 0.0 };
            let (px, py) = family.point((u * style.speed).min(1.0));
            (cx + amp * (cos * px - sin * py), cy - amp * (sin * px + cos * py))
        };
        let trail_steps = if self.trail > 0.0 { (self.trail * 4.0).ceil() as usize } else { 0 };

        (0..g.frames)
            .map(|t| {
                // (x, y, weight) samples of the hand, newest first.
                let hand_samples: Vec<(f64, f64, f64)> = (0..=trail_steps)
                    .map(|k| {
                        let back = if trail_steps > 0 { k as f64 / trail_steps as f64 } else { 0.0 };
                        let (x, y) = position(t as f64 - back * self.trail);
                        (x, y, 1.0 - TRAIL_FADE * back)
                    })
                    .collect();
                let mut data = Vec::with_capacity(g.width * g.height * 3);
                for y in 0..g.height {
                    for x in 0..g.width {
                        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                        let mut px = [style.background; 3];
                        let tx = (fx - cx) / (0.5 * half);
                        let ty = (fy - (cy + 0.9 * half)) / (0.8 * half);
                        if tx * tx + ty * ty <= 1.0 {
                            px = torso;
                        }
                        let rest_cover = coverage((fx - rest.0).hypot(fy - rest.1), style.radius);
                        let hand_cover = hand_samples
                            .iter()
                            .map(|&(hx, hy, w)| w * coverage((fx - hx).hypot(fy - hy), style.radius))
                            .fold(0.0, f64::max);
                        for c in 0..3 {
                            px[c] += (hand[c] * 0.8 - px[c]) * rest_cover;
                            px[c] += (hand[c] - px[c]) * hand_cover;
                        }
                        for v in px {
                            let n = if self.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                            data.push((v + n).round().clamp(0.0, 255.0) as u8);
                        }
                    }
                }
                Frame { width: g.width, height: g.height, data }
            })
            .collect()
    }
}

/// Anti-aliased disc coverage at distance `d` from the center.
fn coverage(d: f64, radius: f64) -> f64 {
    (radius + 0.5 - d).clamp(0.0, 1.0)
}

/// Render every `(class, signer, clip)` combination under `root` and write
/// the manifest. Output is a pure function of `params`.
pub fn generate_synthetic_dataset(params: &SynthParams, root: &Path) -> Result<Vec<ManifestEntry>> {
    params.validate()?;
    let mut jobs = Vec::new();
    for signer in 1..=params.num_signers {
        for class in 0..params.num_classes {
            for clip in 0..params.clips_per_signer_class {
                let clip_id = format!("s{signer:03}_c{class:03}_k{clip:02}");
                let entry = ManifestEntry {
                    path: clip_id.clone(),
                    clip_id,
                    frame_count: params.geometry.frames,
                    class_label: class,
                    signer_id: signer,
                };
                jobs.push((entry, clip));
            }
        }
    }
    jobs.par_iter().try_for_each(|(entry, clip)| -> Result<()> {
        let dir = root.join(&entry.path);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for (i, frame) in params.render_clip(entry.class_label, entry.signer_id, *clip).iter().enumerate() {
            write_frame(frame_path(&dir, i), frame)?;
        }
        Ok(())
    })?;
    let entries: Vec<ManifestEntry> = jobs.into_iter().map(|(e, _)| e).collect();
    write_manifest(root.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}
