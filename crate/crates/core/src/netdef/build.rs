use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Dimensionality, GraphSpec, LayerKind, LayerSpec, INPUT};
use crate::error::{Error, Result};
use crate::ops::{plan_axis, Padding};

/// Output channels of the four branches of one Inception-style block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockChannels {
    /// 1×1 branch.
    pub pointwise: usize,
    /// 1×1 reduction feeding the 3×3 branch.
    pub reduce: usize,
    /// 3×3 branch.
    pub spatial: usize,
    /// 1×1 projection after the 3×3 average pool.
    pub pool_proj: usize,
}

impl BlockChannels {
    pub fn output(&self) -> usize {
        self.pointwise + self.spatial + self.pool_proj
    }

    fn validate(&self, name: &str) -> Result<()> {
        if [self.pointwise, self.reduce, self.spatial, self.pool_proj].contains(&0) {
            return Err(Error::invalid(format!("block {name}: every branch needs at least one channel")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub stem: usize,
    pub block_a: BlockChannels,
    pub block_b: BlockChannels,
}

impl Default for ChannelProfile {
    fn default() -> Self {
        ChannelProfile {
            stem: 16,
            block_a: BlockChannels { pointwise: 8, reduce: 8, spatial: 12, pool_proj: 8 },
            block_b: BlockChannels { pointwise: 12, reduce: 12, spatial: 16, pool_proj: 12 },
        }
    }
}

impl ChannelProfile {
    pub fn validate(&self) -> Result<()> {
        if self.stem == 0 {
            return Err(Error::invalid("stem needs at least one channel"));
        }
        self.block_a.validate("a")?;
        self.block_b.validate("b")
    }
}

fn conv2d(id: &str, out: usize, k: usize, stride: usize, input: &str) -> LayerSpec {
    LayerSpec::new(
        id,
        LayerKind::Conv {
            out_channels: out,
            kernel: vec![k, k],
            stride: vec![stride, stride],
            padding: vec![Padding::Same, Padding::Same],
        },
        &[input],
    )
}

fn relu(id: &str, input: &str) -> LayerSpec {
    LayerSpec::new(id, LayerKind::Relu, &[input])
}

/// Layers of one block named `{p}_...`; returns the concat layer id.
fn inception_block(p: &str, ch: &BlockChannels, input: &str, layers: &mut Vec<LayerSpec>) -> String {
    let id = |s: &str| format!("{p}_{s}");
    layers.push(conv2d(&id("b1"), ch.pointwise, 1, 1, input));
    layers.push(relu(&id("b1_relu"), &id("b1")));
    layers.push(conv2d(&id("b2_reduce"), ch.reduce, 1, 1, input));
    layers.push(relu(&id("b2_reduce_relu"), &id("b2_reduce")));
    layers.push(conv2d(&id("b2"), ch.spatial, 3, 1, &id("b2_reduce_relu")));
    layers.push(relu(&id("b2_relu"), &id("b2")));
    layers.push(LayerSpec::new(
        id("b3_pool"),
        LayerKind::AvgPool {
            window: vec![3, 3],
            stride: vec![1, 1],
            padding: vec![Padding::Same, Padding::Same],
        },
        &[input],
    ));
    layers.push(conv2d(&id("b3"), ch.pool_proj, 1, 1, &id("b3_pool")));
    layers.push(relu(&id("b3_relu"), &id("b3")));
    layers.push(LayerSpec::new(
        id("concat"),
        LayerKind::Concat,
        &[&id("b1_relu"), &id("b2_relu"), &id("b3_relu")],
    ));
    id("concat")
}

/// Miniature Inception-style 2D classifier over `[3, side, side]` images:
/// a stride-2 stem, two branch/concat blocks separated by a 2×2 max pool,
/// global average pooling and a dense head.
pub fn build_mini_inception_2d(num_classes: usize, input_side: usize, profile: &ChannelProfile) -> Result<GraphSpec> {
    if input_side < 16 {
        return Err(Error::invalid(format!("input side {input_side} is below the minimum of 16")));
    }
    profile.validate()?;
    let mut layers = vec![conv2d("stem", profile.stem, 3, 2, INPUT), relu("stem_relu", "stem")];
    let a = inception_block("a", &profile.block_a, "stem_relu", &mut layers);
    layers.push(LayerSpec::new(
        "pool",
        LayerKind::MaxPool {
            window: vec![2, 2],
            stride: vec![2, 2],
            padding: vec![Padding::Valid, Padding::Valid],
        },
        &[&a],
    ));
    let b = inception_block("b", &profile.block_b, "pool", &mut layers);
    layers.push(LayerSpec::new("gap", LayerKind::GlobalAvgPool, &[&b]));
    layers.push(LayerSpec::new("head", LayerKind::Dense { classes: num_classes }, &["gap"]));
    GraphSpec::new(Dimensionality::D2, vec![3, input_side, input_side], num_classes, layers)
}

/// Temporal kernel extent, stride and padding for one conv or pool layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalStep {
    pub layer: String,
    pub kt: usize,
    pub st: usize,
    #[serde(default = "valid")]
    pub padding: Padding,
}

fn valid() -> Padding {
    Padding::Valid
}

/// Per-layer temporal hyperparameters used when inflating a 2D graph.
/// Conv/pool layers not listed get `kt = 1, st = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TemporalSchedule {
    pub steps: Vec<TemporalStep>,
}

impl TemporalSchedule {
    fn uniform(groups: &[(&[&str], usize, usize)]) -> Self {
        let mut steps = Vec::new();
        for (layers, kt, st) in groups {
            for layer in *layers {
                steps.push(TemporalStep { layer: layer.to_string(), kt: *kt, st: *st, padding: Padding::Valid });
            }
        }
        TemporalSchedule { steps }
    }

    /// Desk-scale schedule for the mini graph: depth 8 → 6 → 4 → 2.
    pub fn desk_default() -> Self {
        Self::uniform(&[(&["stem"], 3, 1), (&["a_b1", "a_b2", "a_b3"], 3, 1), (&["pool"], 2, 2)])
    }

    /// Schedule for 20 input frames: 20 → 18 → 16 → 8 → 6 before the
    /// final pooling layer.
    pub fn full_scale() -> Self {
        Self::uniform(&[
            (&["stem"], 3, 1),
            (&["a_b1", "a_b2", "a_b3"], 3, 1),
            (&["pool"], 2, 2),
            (&["b_b1", "b_b2", "b_b3"], 3, 1),
        ])
    }

    /// Every conv/pool keeps its temporal extent.
    pub fn identity() -> Self {
        TemporalSchedule::default()
    }

    pub fn get(&self, layer: &str) -> Option<&TemporalStep> {
        self.steps.iter().find(|s| s.layer == layer)
    }

    /// `(kt, st, padding)` for `layer`, defaulting to the identity step.
    pub fn step_for(&self, layer: &str) -> (usize, usize, Padding) {
        self.get(layer)
            .map(|s| (s.kt, s.st, s.padding))
            .unwrap_or((1, 1, Padding::Valid))
    }

    /// Temporal depth after each listed-or-not conv/pool layer of `spec2d`,
    /// composing `floor((T + pad − kt) / st) + 1` along the graph.
    pub fn depths(&self, spec2d: &GraphSpec, input_depth: usize) -> Result<BTreeMap<String, usize>> {
        let mut depth: BTreeMap<String, usize> = BTreeMap::new();
        depth.insert(INPUT.to_string(), input_depth);
        for layer in spec2d.layers() {
            let d_in = depth[&layer.inputs[0]];
            let d = match layer.kind {
                LayerKind::Conv { .. } | LayerKind::MaxPool { .. } | LayerKind::AvgPool { .. } => {
                    let (kt, st, pad) = self.step_for(&layer.id);
                    plan_axis(d_in, kt, st, pad)
                        .map_err(|_| {
                            Error::graph(
                                &layer.id,
                                format!("temporal schedule (kt={kt}, st={st}) drives depth {d_in} below 1"),
                            )
                        })?
                        .output
                }
                _ => d_in,
            };
            depth.insert(layer.id.clone(), d);
        }
        Ok(depth)
    }
}

/// Inflate a 2D graph into 3D: conv kernels and pool windows gain a
/// temporal axis from `schedule`; spatial hyperparameters are unchanged.
pub fn build_inflated(spec2d: &GraphSpec, schedule: &TemporalSchedule, input_depth: usize) -> Result<GraphSpec> {
    if spec2d.dimensionality() != Dimensionality::D2 {
        return Err(Error::invalid("only 2D graphs can be inflated"));
    }
    if input_depth == 0 {
        return Err(Error::invalid("input depth must be at least 1"));
    }
    let mut seen = BTreeSet::new();
    for step in &schedule.steps {
        if !seen.insert(step.layer.as_str()) {
            return Err(Error::graph(&step.layer, "listed twice in the temporal schedule"));
        }
        match spec2d.layer(&step.layer).map(|l| &l.kind) {
            Some(LayerKind::Conv { .. } | LayerKind::MaxPool { .. } | LayerKind::AvgPool { .. }) => {}
            Some(other) => {
                return Err(Error::graph(
                    &step.layer,
                    format!("temporal schedule targets a {} layer; only conv/pool layers have a window", other.name()),
                ))
            }
            None => return Err(Error::graph(&step.layer, "temporal schedule names a layer absent from the 2D graph")),
        }
        if step.kt == 0 || step.st == 0 {
            return Err(Error::graph(&step.layer, "temporal extent and stride must be positive"));
        }
    }
    // Fail with a schedule-specific message before generic shape inference.
    schedule.depths(spec2d, input_depth)?;

    let lift = |layer: &str, extent: &[usize], stride: &[usize], padding: &[Padding]| {
        let (kt, st, pt) = schedule.step_for(layer);
        let mut e = vec![kt];
        e.extend_from_slice(extent);
        let mut s = vec![st];
        s.extend_from_slice(stride);
        let mut p = vec![pt];
        p.extend_from_slice(padding);
        (e, s, p)
    };
    let layers = spec2d
        .layers()
        .iter()
        .map(|layer| {
            let kind = match &layer.kind {
                LayerKind::Conv { out_channels, kernel, stride, padding } => {
                    let (kernel, stride, padding) = lift(&layer.id, kernel, stride, padding);
                    LayerKind::Conv { out_channels: *out_channels, kernel, stride, padding }
                }
                LayerKind::MaxPool { window, stride, padding } => {
                    let (window, stride, padding) = lift(&layer.id, window, stride, padding);
                    LayerKind::MaxPool { window, stride, padding }
                }
                LayerKind::AvgPool { window, stride, padding } => {
                    let (window, stride, padding) = lift(&layer.id, window, stride, padding);
                    LayerKind::AvgPool { window, stride, padding }
                }
                other => other.clone(),
            };
            LayerSpec { id: layer.id.clone(), kind, inputs: layer.inputs.clone() }
        })
        .collect();
    let [c, h, w] = spec2d.input_shape() else {
        unreachable!("validated 2D input shape")
    };
    GraphSpec::new(Dimensionality::D3, vec![*c, input_depth, *h, *w], spec2d.num_classes(), layers)
}
