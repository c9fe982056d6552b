//! Declarative layer graphs: construction, shape inference, parameters,
//! execution and checkpoints.

mod build;
mod checkpoint;
mod forward;
mod params;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, Padding, Window};

pub use build::{
    build_inflated, build_mini_inception_2d, BlockChannels, ChannelProfile, TemporalSchedule, TemporalStep,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use forward::{forward, forward_on_tape, Trace};
pub use params::{init_params, replace_head, ParamSet};

/// Reserved id naming the network input in `LayerSpec::inputs`.
pub const INPUT: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimensionality {
    #[serde(rename = "2d")]
    D2,
    #[serde(rename = "3d")]
    D3,
}

impl Dimensionality {
    /// Number of axes a conv/pool window spans.
    pub fn spatial_rank(self) -> usize {
        match self {
            Dimensionality::D2 => 2,
            Dimensionality::D3 => 3,
        }
    }
}

impl fmt::Display for Dimensionality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimensionality::D2 => "2d",
            Dimensionality::D3 => "3d",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: Vec<usize>,
        stride: Vec<usize>,
        padding: Vec<Padding>,
    },
    MaxPool {
        window: Vec<usize>,
        stride: Vec<usize>,
        padding: Vec<Padding>,
    },
    AvgPool {
        window: Vec<usize>,
        stride: Vec<usize>,
        padding: Vec<Padding>,
    },
    Relu,
    Concat,
    GlobalAvgPool,
    Dense {
        classes: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::Relu => "relu",
            LayerKind::Concat => "concat",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Dense { .. } => "dense",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Dense { .. })
    }

    /// Kernel or pooling window, when the layer slides one.
    pub fn window(&self) -> Option<Result<Window>> {
        match self {
            LayerKind::Conv { kernel, stride, padding, .. } => Some(Window::new(kernel, stride, padding)),
            LayerKind::MaxPool { window, stride, padding } | LayerKind::AvgPool { window, stride, padding } => {
                Some(Window::new(window, stride, padding))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        LayerSpec {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphSpecDef {
    dimensionality: Dimensionality,
    input_shape: Vec<usize>,
    num_classes: usize,
    layers: Vec<LayerSpec>,
}

/// A validated layer graph. Layers are stored in evaluation order; the last
/// layer is the dense classification head.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GraphSpecDef", into = "GraphSpecDef")]
pub struct GraphSpec {
    dimensionality: Dimensionality,
    input_shape: Vec<usize>,
    num_classes: usize,
    layers: Vec<LayerSpec>,
    /// Per-layer output shape without the batch axis.
    shapes: Vec<Vec<usize>>,
}

impl PartialEq for GraphSpec {
    fn eq(&self, other: &Self) -> bool {
        self.dimensionality == other.dimensionality
            && self.input_shape == other.input_shape
            && self.num_classes == other.num_classes
            && self.layers == other.layers
    }
}

impl TryFrom<GraphSpecDef> for GraphSpec {
    type Error = Error;

    fn try_from(def: GraphSpecDef) -> Result<Self> {
        GraphSpec::new(def.dimensionality, def.input_shape, def.num_classes, def.layers)
    }
}

impl From<GraphSpec> for GraphSpecDef {
    fn from(spec: GraphSpec) -> Self {
        GraphSpecDef {
            dimensionality: spec.dimensionality,
            input_shape: spec.input_shape,
            num_classes: spec.num_classes,
            layers: spec.layers,
        }
    }
}

impl GraphSpec {
    /// Validate the graph and infer every layer's output shape.
    pub fn new(
        dimensionality: Dimensionality,
        input_shape: Vec<usize>,
        num_classes: usize,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        let rank = dimensionality.spatial_rank();
        if input_shape.len() != rank + 1 || input_shape.contains(&0) {
            return Err(Error::graph(
                INPUT,
                format!("input shape {input_shape:?} must be [C, {}] with positive extents", if rank == 2 { "H, W" } else { "T, H, W" }),
            ));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be at least 1"));
        }
        let heads: Vec<&LayerSpec> = layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Dense { .. }))
            .collect();
        if heads.len() != 1 {
            return Err(Error::invalid(format!(
                "graph must have exactly one dense head layer, found {}",
                heads.len()
            )));
        }
        let last = layers.last().expect("at least the head layer");
        if !matches!(last.kind, LayerKind::Dense { .. }) {
            return Err(Error::graph(&last.id, "the dense head must be the final layer"));
        }
        if let LayerKind::Dense { classes } = last.kind {
            if classes != num_classes {
                return Err(Error::graph(
                    &last.id,
                    format!("head has {classes} classes but the graph declares {num_classes}"),
                ));
            }
        }

        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            if layer.id == INPUT || layer.id.contains('/') || layer.id.is_empty() {
                return Err(Error::graph(&layer.id, "layer ids must be non-empty, contain no '/', and not be \"input\""));
            }
            let mut in_shapes = Vec::with_capacity(layer.inputs.len());
            for src in &layer.inputs {
                if src == INPUT {
                    in_shapes.push(input_shape.as_slice());
                } else if let Some(&j) = index.get(src.as_str()) {
                    in_shapes.push(shapes[j].as_slice());
                } else if layers[i..].iter().any(|l| &l.id == src) {
                    return Err(Error::graph(
                        &layer.id,
                        format!("input `{src}` is not defined before this layer (cycle or out-of-order graph)"),
                    ));
                } else {
                    return Err(Error::graph(&layer.id, format!("unknown input `{src}`")));
                }
            }
            let shape = infer_shape(layer, &in_shapes, rank).map_err(|e| match e {
                Error::Graph { .. } => e,
                other => Error::graph(&layer.id, other.to_string()),
            })?;
            if index.insert(&layer.id, i).is_some() {
                return Err(Error::graph(&layer.id, "duplicate layer id"));
            }
            shapes.push(shape);
        }

        Ok(GraphSpec {
            dimensionality,
            input_shape,
            num_classes,
            layers,
            shapes,
        })
    }

    pub fn dimensionality(&self) -> Dimensionality {
        self.dimensionality
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, id: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// Output shape of layer `id`, without the batch axis.
    pub fn output_shape(&self, id: &str) -> Option<&[usize]> {
        if id == INPUT {
            return Some(&self.input_shape);
        }
        self.layers
            .iter()
            .position(|l| l.id == id)
            .map(|i| self.shapes[i].as_slice())
    }

    /// `(layer id, output shape)` in evaluation order.
    pub fn shape_walk(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.layers
            .iter()
            .zip(&self.shapes)
            .map(|(l, s)| (l.id.as_str(), s.as_slice()))
    }

    pub fn head(&self) -> &LayerSpec {
        self.layers.last().expect("validated graph has a head")
    }

    /// Width of the feature vector feeding the head.
    pub fn feature_width(&self) -> usize {
        let src = &self.head().inputs[0];
        self.output_shape(src).expect("validated input")[0]
    }

    /// Temporal extent at the input of the last global pooling layer
    /// (3D graphs only).
    pub fn depth_before_final_pool(&self) -> Option<usize> {
        if self.dimensionality != Dimensionality::D3 {
            return None;
        }
        let pool = self
            .layers
            .iter()
            .rev()
            .find(|l| matches!(l.kind, LayerKind::GlobalAvgPool))?;
        self.output_shape(&pool.inputs[0]).map(|s| s[1])
    }

    /// Expected shape of every parameter tensor, keyed `layer/param`.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            let in_shape = self.output_shape(&layer.inputs[0]).expect("validated input");
            match &layer.kind {
                LayerKind::Conv { out_channels, kernel, .. } => {
                    let mut k = vec![*out_channels, in_shape[0]];
                    k.extend_from_slice(kernel);
                    out.push((format!("{}/kernel", layer.id), k));
                    out.push((format!("{}/bias", layer.id), vec![*out_channels]));
                }
                LayerKind::Dense { classes } => {
                    out.push((format!("{}/weight", layer.id), vec![in_shape[0], *classes]));
                    out.push((format!("{}/bias", layer.id), vec![*classes]));
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Same graph with the head resized to `classes` outputs.
    pub fn with_num_classes(&self, classes: usize) -> Result<GraphSpec> {
        if classes < 1 {
            return Err(Error::invalid("new class count must be at least 1"));
        }
        let mut layers = self.layers.clone();
        if let Some(LayerSpec { kind: LayerKind::Dense { classes: c }, .. }) = layers.last_mut() {
            *c = classes;
        }
        GraphSpec::new(self.dimensionality, self.input_shape.clone(), classes, layers)
    }

    /// Structured-text form (pretty JSON).
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph specs always serialize")
    }

    pub fn from_text(text: &str) -> Result<GraphSpec> {
        Ok(serde_json::from_str(text)?)
    }
}

fn infer_shape(layer: &LayerSpec, inputs: &[&[usize]], rank: usize) -> Result<Vec<usize>> {
    let single = || -> Result<&[usize]> {
        match inputs {
            [one] => Ok(*one),
            _ => Err(Error::graph(
                &layer.id,
                format!("{} takes exactly one input, got {}", layer.kind.name(), inputs.len()),
            )),
        }
    };
    let spatial = |shape: &[usize]| -> Result<()> {
        if shape.len() != rank + 1 {
            return Err(Error::graph(
                &layer.id,
                format!("{} needs a [C, spatial x{rank}] input, got {shape:?}", layer.kind.name()),
            ));
        }
        Ok(())
    };
    match &layer.kind {
        LayerKind::Conv { .. } | LayerKind::MaxPool { .. } | LayerKind::AvgPool { .. } => {
            let input = single()?;
            spatial(input)?;
            let window = layer.kind.window().expect("windowed layer")?;
            if window.rank() != rank {
                return Err(Error::graph(
                    &layer.id,
                    format!("window has {} axes in a {rank}-axis graph", window.rank()),
                ));
            }
            if let LayerKind::Conv { out_channels: 0, .. } = layer.kind {
                return Err(Error::graph(&layer.id, "conv needs at least one output channel"));
            }
            let out = window.output_extent(&input[1..]).map_err(|e| {
                Error::graph(&layer.id, format!("input {input:?}: {e}"))
            })?;
            let channels = match layer.kind {
                LayerKind::Conv { out_channels, .. } => out_channels,
                _ => input[0],
            };
            let mut shape = vec![channels];
            shape.extend(out);
            Ok(shape)
        }
        LayerKind::Relu => Ok(single()?.to_vec()),
        LayerKind::Concat => {
            let with_batch: Vec<Vec<usize>> = inputs
                .iter()
                .map(|s| std::iter::once(1).chain(s.iter().copied()).collect())
                .collect();
            let refs: Vec<&[usize]> = with_batch.iter().map(|s| s.as_slice()).collect();
            let shape = ops::concat_shape(&refs)?;
            Ok(shape[1..].to_vec())
        }
        LayerKind::GlobalAvgPool => {
            let input = single()?;
            spatial(input)?;
            Ok(vec![input[0]])
        }
        LayerKind::Dense { classes } => {
            let input = single()?;
            if input.len() != 1 {
                return Err(Error::graph(&layer.id, format!("dense needs a flat feature input, got {input:?}")));
            }
            if *classes == 0 {
                return Err(Error::graph(&layer.id, "dense needs at least one class"));
            }
            Ok(vec![*classes])
        }
    }
}
