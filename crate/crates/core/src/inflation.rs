//! Bootstrapping a 3D network from a trained 2D one.
//!
//! Each 2D kernel is replicated `kt` times along a new temporal axis and
//! divided by `kt`. On a video whose frames are all the same image, every
//! conv layer then reproduces the 2D activation at each surviving time
//! step, pooling preserves that constancy, and the pooled features reaching
//! the (copied) head match the 2D ones. This requires valid temporal
//! padding: zero frames at the boundary would break the constancy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netdef::{forward, Dimensionality, GraphSpec, LayerKind, ParamSet};
use crate::ops::Padding;
use crate::tensor::{Scalar, Tensor};

/// Target of one parameterized 2D layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub target: String,
    /// Temporal kernel extent; 1 for the dense head.
    pub kt: usize,
}

/// Maps every conv and dense layer of a 2D graph onto the 3D graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InflationPlan {
    pub entries: BTreeMap<String, PlanEntry>,
}

impl InflationPlan {
    /// Derive the plan for a 3D graph built from `spec2d` with the same layer ids.
    pub fn from_specs(spec2d: &GraphSpec, spec3d: &GraphSpec) -> Result<Self> {
        check_pair(spec2d, spec3d)?;
        let mut entries = BTreeMap::new();
        for layer in spec2d.layers().iter().filter(|l| l.kind.is_parameterized()) {
            let target = spec3d
                .layer(&layer.id)
                .ok_or_else(|| Error::graph(&layer.id, "no layer with this id in the 3D graph"))?;
            let kt = match &target.kind {
                LayerKind::Conv { kernel, .. } => kernel[0],
                LayerKind::Dense { .. } => 1,
                other => {
                    return Err(Error::graph(
                        &layer.id,
                        format!("parameterized 2D layer maps onto a 3D {} layer", other.name()),
                    ))
                }
            };
            entries.insert(layer.id.clone(), PlanEntry { target: target.id.clone(), kt });
        }
        let plan = InflationPlan { entries };
        plan.validate(spec2d, spec3d)?;
        Ok(plan)
    }

    /// Every conv/dense layer covered exactly once with a `kt` that agrees
    /// with the 3D graph.
    pub fn validate(&self, spec2d: &GraphSpec, spec3d: &GraphSpec) -> Result<()> {
        check_pair(spec2d, spec3d)?;
        let parameterized: Vec<&str> = spec2d
            .layers()
            .iter()
            .filter(|l| l.kind.is_parameterized())
            .map(|l| l.id.as_str())
            .collect();
        for id in &parameterized {
            if !self.entries.contains_key(*id) {
                return Err(Error::graph(*id, "missing from the inflation plan"));
            }
        }
        for (id, entry) in &self.entries {
            let source = spec2d
                .layer(id)
                .filter(|l| l.kind.is_parameterized())
                .ok_or_else(|| Error::graph(id, "inflation plan names a layer that is not a 2D conv/dense layer"))?;
            let target = spec3d
                .layer(&entry.target)
                .ok_or_else(|| Error::graph(id, format!("plan target `{}` is absent from the 3D graph", entry.target)))?;
            match (&source.kind, &target.kind) {
                (LayerKind::Conv { kernel: k2, .. }, LayerKind::Conv { kernel: k3, .. }) => {
                    if k3[0] != entry.kt || k3[1..] != k2[..] {
                        return Err(Error::graph(
                            id,
                            format!("plan kt={} disagrees with 3D kernel {k3:?} (2D kernel {k2:?})", entry.kt),
                        ));
                    }
                }
                (LayerKind::Dense { .. }, LayerKind::Dense { .. }) if entry.kt == 1 => {}
                _ => return Err(Error::graph(id, "plan pairs layers of different kinds")),
            }
        }
        Ok(())
    }

    /// Number of scalar parameters the inflated set will hold.
    pub fn inflated_param_count(&self, spec2d: &GraphSpec) -> usize {
        spec2d
            .param_shapes()
            .iter()
            .map(|(key, shape)| {
                let n: usize = shape.iter().product();
                let (layer, name) = key.split_once('/').expect("layer/param key");
                if name == "kernel" {
                    n * self.entries[layer].kt
                } else {
                    n
                }
            })
            .sum()
    }
}

fn check_pair(spec2d: &GraphSpec, spec3d: &GraphSpec) -> Result<()> {
    if spec2d.dimensionality() != Dimensionality::D2 || spec3d.dimensionality() != Dimensionality::D3 {
        return Err(Error::invalid(format!(
            "inflation maps a 2d graph onto a 3d graph, got {} → {}",
            spec2d.dimensionality(),
            spec3d.dimensionality()
        )));
    }
    Ok(())
}

/// How temporal replicas of a 2D kernel are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelScaling {
    /// Divide by `kt`; preserves the 2D function on constant-in-time input.
    Rescale,
    /// Plain replication. Only useful to show what the rescaling buys.
    Replicate,
}

/// `[F, C, kh, kw]` → `[F, C, kt, kh, kw]`, each temporal slice `k2d / kt`.
pub fn inflate_kernel<T: Scalar>(k2d: &Tensor<T>, kt: usize) -> Result<Tensor<T>> {
    inflate_kernel_with(k2d, kt, KernelScaling::Rescale)
}

pub fn inflate_kernel_with<T: Scalar>(k2d: &Tensor<T>, kt: usize, scaling: KernelScaling) -> Result<Tensor<T>> {
    if kt < 1 {
        return Err(Error::invalid("temporal extent kt must be at least 1"));
    }
    let [f, c, kh, kw] = k2d.shape() else {
        return Err(Error::shape("inflate_kernel", format!("kernel {:?} is not [F, C, kh, kw]", k2d.shape())));
    };
    let plane = kh * kw;
    let divisor = T::from_usize(kt);
    let mut data = Vec::with_capacity(k2d.len() * kt);
    for block in k2d.data().chunks(plane) {
        for _ in 0..kt {
            match scaling {
                KernelScaling::Rescale => data.extend(block.iter().map(|&v| v / divisor)),
                KernelScaling::Replicate => data.extend_from_slice(block),
            }
        }
    }
    Tensor::new(vec![*f, *c, kt, *kh, *kw], data)
}

/// Bootstrap 3D parameters from 2D ones: conv kernels inflated, biases and
/// the dense head copied bitwise.
pub fn inflate_params<T: Scalar>(
    params2d: &ParamSet<T>,
    spec2d: &GraphSpec,
    spec3d: &GraphSpec,
    plan: &InflationPlan,
) -> Result<ParamSet<T>> {
    inflate_params_with(params2d, spec2d, spec3d, plan, KernelScaling::Rescale)
}

pub fn inflate_params_with<T: Scalar>(
    params2d: &ParamSet<T>,
    spec2d: &GraphSpec,
    spec3d: &GraphSpec,
    plan: &InflationPlan,
    scaling: KernelScaling,
) -> Result<ParamSet<T>> {
    plan.validate(spec2d, spec3d)?;
    params2d.validate(spec2d)?;
    let mut out = ParamSet::new();
    for (key, tensor) in params2d.iter() {
        let (layer, name) = key.split_once('/').expect("layer/param key");
        let entry = &plan.entries[layer];
        let inflated = if name == "kernel" {
            inflate_kernel_with(tensor, entry.kt, scaling)?
        } else {
            tensor.clone()
        };
        out.insert(format!("{}/{name}", entry.target), inflated);
    }
    out.validate(spec3d)?;
    Ok(out)
}

/// `[C, H, W]` → `[C, T, H, W]` with every frame equal to `image`.
pub fn boring_video<T: Scalar>(image: &Tensor<T>, frames: usize) -> Result<Tensor<T>> {
    let [c, h, w] = image.shape() else {
        return Err(Error::shape("boring_video", format!("image {:?} is not [C, H, W]", image.shape())));
    };
    let batch = boring_video_batch(&image.clone().reshape(vec![1, *c, *h, *w])?, frames)?;
    batch.reshape(vec![*c, frames, *h, *w])
}

/// `[N, C, H, W]` → `[N, C, T, H, W]`, repeating each image `T` times.
pub fn boring_video_batch<T: Scalar>(images: &Tensor<T>, frames: usize) -> Result<Tensor<T>> {
    if frames < 1 {
        return Err(Error::invalid("a video needs at least one frame"));
    }
    let [n, c, h, w] = images.shape() else {
        return Err(Error::shape("boring_video", format!("images {:?} are not [N, C, H, W]", images.shape())));
    };
    let plane = h * w;
    let mut data = Vec::with_capacity(images.len() * frames);
    for block in images.data().chunks(plane) {
        for _ in 0..frames {
            data.extend_from_slice(block);
        }
    }
    Tensor::new(vec![*n, *c, frames, *h, *w], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    /// Largest absolute logit difference over all images and classes.
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare the 2D network on each image with the 3D network on the
/// corresponding boring video of the 3D input depth.
pub fn consistency_check<T: Scalar>(
    spec2d: &GraphSpec,
    params2d: &ParamSet<T>,
    spec3d: &GraphSpec,
    params3d: &ParamSet<T>,
    images: &Tensor<T>,
    tolerance: f64,
) -> Result<ConsistencyReport> {
    check_pair(spec2d, spec3d)?;
    for layer in spec3d.layers() {
        let padding = match &layer.kind {
            LayerKind::Conv { padding, .. }
            | LayerKind::MaxPool { padding, .. }
            | LayerKind::AvgPool { padding, .. } => padding,
            _ => continue,
        };
        if padding[0] == Padding::Same {
            return Err(Error::graph(
                &layer.id,
                "temporal same-padding breaks the constant-video identity; inflate with valid temporal padding",
            ));
        }
    }
    let depth = spec3d.input_shape()[1];
    let logits2d = forward(spec2d, params2d, images)?;
    let logits3d = forward(spec3d, params3d, &boring_video_batch(images, depth)?)?;
    let max_deviation = logits2d.max_abs_diff(&logits3d)?;
    Ok(ConsistencyReport {
        max_deviation,
        tolerance,
        passed: max_deviation <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_kernel_becomes_quarters() {
        let k = Tensor::<f32>::full(vec![1, 1, 3, 3], 1.0);
        let k3 = inflate_kernel(&k, 4).unwrap();
        assert_eq!(k3.shape(), &[1, 1, 4, 3, 3]);
        assert!(k3.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn unit_extent_is_bitwise_identity() {
        let k = Tensor::<f32>::from_f64(vec![2, 1, 1, 2], &[0.1, -3.7, 1e-7, 42.0]).unwrap();
        let k3 = inflate_kernel(&k, 1).unwrap();
        assert!(k3.reshape(vec![2, 1, 1, 2]).unwrap().bit_eq(&k));
    }

    #[test]
    fn zero_extent_rejected() {
        let k = Tensor::<f32>::zeros(vec![1, 1, 3, 3]);
        assert!(inflate_kernel(&k, 0).is_err());
    }

    #[test]
    fn boring_video_replicates() {
        let img = Tensor::<f64>::from_f64(vec![2, 1, 2], &[1., 2., 3., 4.]).unwrap();
        let v = boring_video(&img, 1).unwrap();
        assert_eq!(v.shape(), &[2, 1, 1, 2]);
        assert_eq!(v.data(), img.data());

        let v = boring_video(&img, 3).unwrap();
        for c in 0..2 {
            for w in 0..2 {
                for t in 0..3 {
                    assert_eq!(v.at(&[c, t, 0, w]), img.at(&[c, 0, w]));
                }
            }
        }
    }
}
