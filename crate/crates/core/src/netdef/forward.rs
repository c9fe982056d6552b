use std::collections::{BTreeMap, HashMap};

use super::{GraphSpec, LayerKind, ParamSet, INPUT};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Tape handles for every layer output of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub layers: Vec<(String, Var)>,
    /// Input to the head (the pooled feature vector).
    pub features: Var,
    pub logits: Var,
}

impl Trace {
    pub fn get(&self, id: &str) -> Option<Var> {
        self.layers.iter().find(|(l, _)| l == id).map(|(_, v)| *v)
    }
}

/// Evaluate `spec` on `tape` in layer order. `params` maps `layer/param`
/// keys to recorded tensors (see [`ParamSet::record`]).
pub fn forward_on_tape<T: Scalar>(
    spec: &GraphSpec,
    tape: &mut Tape<T>,
    params: &BTreeMap<String, Var>,
    input: Var,
) -> Result<Trace> {
    let shape = tape.value(input).shape();
    if shape.len() != spec.input_shape().len() + 1 || shape[1..] != *spec.input_shape() {
        return Err(Error::graph(
            INPUT,
            format!("expected [N, {:?}], got {shape:?}", spec.input_shape()),
        ));
    }
    let mut values: HashMap<&str, Var> = HashMap::new();
    values.insert(INPUT, input);
    let mut layers = Vec::with_capacity(spec.layers().len());
    for layer in spec.layers() {
        let inputs: Vec<Var> = layer.inputs.iter().map(|id| values[id.as_str()]).collect();
        let param = |name: &str| -> Result<Var> {
            params
                .get(&format!("{}/{name}", layer.id))
                .copied()
                .ok_or_else(|| Error::graph(&layer.id, format!("missing parameter `{name}`")))
        };
        let out = match &layer.kind {
            LayerKind::Conv { stride, padding, .. } => {
                tape.conv(inputs[0], param("kernel")?, param("bias")?, stride, padding)
            }
            LayerKind::MaxPool { .. } => {
                let w = layer.kind.window().expect("pool window")?;
                tape.max_pool(inputs[0], &w)
            }
            LayerKind::AvgPool { .. } => {
                let w = layer.kind.window().expect("pool window")?;
                tape.avg_pool(inputs[0], &w)
            }
            LayerKind::Relu => tape.relu(inputs[0]),
            LayerKind::Concat => tape.concat_channels(&inputs),
            LayerKind::GlobalAvgPool => tape.global_avg_pool(inputs[0]),
            LayerKind::Dense { .. } => tape.dense(inputs[0], param("weight")?, param("bias")?),
        }
        .map_err(|e| match e {
            Error::Graph { .. } => e,
            other => Error::graph(&layer.id, other.to_string()),
        })?;
        values.insert(&layer.id, out);
        layers.push((layer.id.clone(), out));
    }
    let head = spec.head();
    Ok(Trace {
        features: values[head.inputs[0].as_str()],
        logits: values[head.id.as_str()],
        layers,
    })
}

/// Logits `[N, num_classes]` without gradient tracking.
pub fn forward<T: Scalar>(spec: &GraphSpec, params: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, false);
    let x = tape.constant(input.clone());
    let trace = forward_on_tape(spec, &mut tape, &vars, x)?;
    Ok(tape.take_value(trace.logits))
}
