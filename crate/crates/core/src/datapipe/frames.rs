//! Raw frame files and the per-frame preprocessing chain.
//!
//! A frame file is a 16-byte header followed by `height * width * 3`
//! bytes of interleaved 8-bit RGB in row-major order:
//!
//! | offset | size | content            |
//! |--------|------|--------------------|
//! | 0      | 4    | magic `SFRM`       |
//! | 4      | 4    | width (u32 LE)     |
//! | 8      | 4    | height (u32 LE)    |
//! | 12     | 4    | channels (u32 LE, always 3) |
//!
//! Frame `i` of a clip lives at `<clip dir>/<i:05>.frm`.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_frames, ManifestEntry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FRAME_MAGIC: &[u8; 4] = b"SFRM";
const HEADER_LEN: usize = 16;

/// One decoded RGB8 frame, interleaved `[H, W, 3]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "frame of {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Frame { width, height, data })
    }

    /// Channel-major float copy `[3, H, W]` with values in `0..=255`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0f32; 3 * plane];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = f32::from(px[c]);
            }
        }
        Tensor::new(vec![3, self.height, self.width], out).expect("consistent frame")
    }
}

pub fn frame_path(clip_dir: &Path, index: usize) -> PathBuf {
    clip_dir.join(format!("{index:05}.frm"))
}

pub fn write_frame(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(HEADER_LEN + frame.data.len());
    bytes.extend_from_slice(FRAME_MAGIC);
    for v in [frame.width, frame.height, 3] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&frame.data);
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let bad = |detail: &str| Error::Format { path: path.to_path_buf(), detail: detail.to_string() };
    if bytes.len() < HEADER_LEN || &bytes[..4] != FRAME_MAGIC {
        return Err(bad("not a frame file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (width, height, channels) = (word(4), word(8), word(12));
    if channels != 3 {
        return Err(bad("only 3-channel frames are supported"));
    }
    if width == 0 || height == 0 || bytes.len() != HEADER_LEN + width * height * 3 {
        return Err(bad("payload size does not match the header"));
    }
    Ok(Frame { width, height, data: bytes[HEADER_LEN..].to_vec() })
}

/// Largest central square. An odd leftover leaves the window one pixel
/// closer to the top/left edge.
pub fn center_square_crop(frame: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [c, h, w] = frame.shape() else {
        return Err(Error::shape("center_square_crop", format!("frame {:?} is not [C, H, W]", frame.shape())));
    };
    let s = (*h).min(*w);
    let (top, left) = ((h - s) / 2, (w - s) / 2);
    let mut out = Vec::with_capacity(c * s * s);
    for ci in 0..*c {
        for r in 0..s {
            let start = (ci * h + top + r) * w + left;
            out.extend_from_slice(&frame.data()[start..start + s]);
        }
    }
    Tensor::new(vec![*c, s, s], out)
}

/// Corner-aligned source coordinate and blend weight for output index `i`.
fn sample_axis(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    if dst == 1 || src == 1 {
        let pos = (src - 1) as f64 / 2.0;
        let lo = pos.floor() as usize;
        return (lo, (lo + 1).min(src - 1), pos - lo as f64);
    }
    let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resize of `[C, s, s]` to `[C, target, target]`; output corners
/// sample input corners exactly.
pub fn resize(frame: &Tensor<f32>, target: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = frame.shape() else {
        return Err(Error::shape("resize", format!("frame {:?} is not [C, H, W]", frame.shape())));
    };
    if target == 0 {
        return Err(Error::invalid("resize target must be positive"));
    }
    let (c, h, w) = (*c, *h, *w);
    let rows: Vec<_> = (0..target).map(|i| sample_axis(i, h, target)).collect();
    let cols: Vec<_> = (0..target).map(|j| sample_axis(j, w, target)).collect();
    let x = frame.data();
    let mut out = Vec::with_capacity(c * target * target);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for &(r0, r1, fy) in &rows {
            for &(c0, c1, fx) in &cols {
                let v00 = plane[r0 * w + c0] as f64;
                let v01 = plane[r0 * w + c1] as f64;
                let v10 = plane[r1 * w + c0] as f64;
                let v11 = plane[r1 * w + c1] as f64;
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                out.push((top + (bottom - top) * fy) as f32);
            }
        }
    }
    Tensor::new(vec![c, target, target], out)
}

/// `x / 127.5 - 1`, clamped to `[-1, 1]`.
pub fn normalize(frame: &Tensor<f32>) -> Tensor<f32> {
    frame.map(|v| (v / 127.5 - 1.0).clamp(-1.0, 1.0))
}

pub fn normalize_u8(values: &[u8]) -> Vec<f32> {
    values.iter().map(|&v| f32::from(v) / 127.5 - 1.0).collect()
}

/// Crop, resize and normalize one frame to `[3, size, size]`.
pub fn preprocess_frame(frame: &Frame, size: usize) -> Result<Tensor<f32>> {
    let cropped = center_square_crop(&frame.to_tensor())?;
    let resized = if cropped.shape()[1] == size { cropped } else { resize(&cropped, size)? };
    Ok(normalize(&resized))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipConfig {
    /// Frames per example (the network's input depth).
    pub frames: usize,
    /// Output side after crop and resize.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    /// `[3, T, size, size]` in `[-1, 1]`.
    pub frames: Tensor<f32>,
    pub label: usize,
}

/// Stack `T` preprocessed `[3, s, s]` frames into `[3, T, s, s]`.
pub(crate) fn stack_frames(frames: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let t = frames.len();
    let [c, h, w] = frames[0].shape() else { unreachable!("preprocessed frames are rank 3") };
    let plane = h * w;
    let mut out = vec![0.0f32; c * t * plane];
    for (ti, f) in frames.iter().enumerate() {
        for ci in 0..*c {
            out[(ci * t + ti) * plane..(ci * t + ti + 1) * plane]
                .copy_from_slice(&f.data()[ci * plane..(ci + 1) * plane]);
        }
    }
    Tensor::new(vec![*c, t, *h, *w], out)
}

/// Read the sampled frames of `entry` from disk and run the full chain.
pub fn load_clip<R: Rng + ?Sized>(
    root: &Path,
    entry: &ManifestEntry,
    config: &ClipConfig,
    rng: &mut R,
) -> Result<ClipSample> {
    let indices = sample_frames(entry.frame_count, config.frames, rng)?;
    let dir = root.join(&entry.path);
    let clip_err = |e: Error| Error::Clip { clip_id: entry.clip_id.clone(), detail: e.to_string() };
    let mut frames = Vec::with_capacity(indices.len());
    for i in indices {
        let frame = read_frame(frame_path(&dir, i)).map_err(clip_err)?;
        frames.push(preprocess_frame(&frame, config.size).map_err(clip_err)?);
    }
    Ok(ClipSample { frames: stack_frames(&frames)?, label: entry.class_label })
}
