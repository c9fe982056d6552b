use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GraphSpec, LayerKind};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Named parameter tensors, keyed `layer/param` and iterated in key order.
#[derive(Clone, PartialEq)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> std::fmt::Debug for ParamSet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map().entries(self.tensors.iter()).finish()
    }
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet { tensors: BTreeMap::new() }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, tensor: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(key.into(), tensor)
    }

    pub fn get(&self, key: &str) -> Option<&Tensor<T>> {
        self.tensors.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
        }
    }

    /// Check the key set and every shape against `spec`.
    pub fn validate(&self, spec: &GraphSpec) -> Result<()> {
        let expected = spec.param_shapes();
        for (key, shape) in &expected {
            match self.tensors.get(key) {
                None => return Err(Error::invalid(format!("parameter `{key}` is missing"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::shape(
                        "params",
                        format!("`{key}` has shape {:?}, the graph declares {shape:?}", t.shape()),
                    ))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.iter().any(|(e, _)| e == *k)) {
            return Err(Error::invalid(format!("parameter `{extra}` does not belong to the graph")));
        }
        Ok(())
    }

    /// Put every tensor on `tape`, tracking gradients iff `trainable`.
    pub fn record(&self, tape: &mut Tape<T>, trainable: bool) -> BTreeMap<String, Var> {
        self.tensors
            .iter()
            .map(|(k, t)| {
                let mut t = t.clone();
                t.requires_grad = trainable;
                (k.clone(), tape.leaf(t))
            })
            .collect()
    }

    /// Bitwise equality of every tensor.
    pub fn bit_eq(&self, other: &ParamSet<T>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.bit_eq(b))
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`) and zero biases for one layer.
fn init_layer<T: Scalar>(spec: &GraphSpec, layer_id: &str, rng: &mut ChaCha8Rng, out: &mut ParamSet<T>) {
    for (key, shape) in spec.param_shapes() {
        let Some((layer, name)) = key.split_once('/') else { continue };
        if layer != layer_id {
            continue;
        }
        let tensor = if name == "bias" {
            Tensor::zeros(shape)
        } else {
            let fan_in: usize = match spec.layer(layer).map(|l| &l.kind) {
                Some(LayerKind::Dense { .. }) => shape[0],
                _ => shape[1..].iter().product(),
            };
            Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
        };
        out.insert(key, tensor);
    }
}

/// Deterministic initialization of every parameter of `spec` from `seed`.
pub fn init_params<T: Scalar>(spec: &GraphSpec, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for layer in spec.layers() {
        if layer.kind.is_parameterized() {
            init_layer(spec, &layer.id, &mut rng, &mut params);
        }
    }
    params
}

/// Swap the classification head for a freshly initialized one with
/// `new_num_classes` outputs. All other tensors are carried over unchanged.
pub fn replace_head<T: Scalar>(
    params: &ParamSet<T>,
    spec: &GraphSpec,
    new_num_classes: usize,
    seed: u64,
) -> Result<(ParamSet<T>, GraphSpec)> {
    params.validate(spec)?;
    let new_spec = spec.with_num_classes(new_num_classes)?;
    let head = new_spec.head().id.clone();
    let prefix = format!("{head}/");
    let mut out = ParamSet::new();
    for (k, t) in params.iter() {
        if !k.starts_with(&prefix) {
            out.insert(k.clone(), t.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_layer(&new_spec, &head, &mut rng, &mut out);
    Ok((out, new_spec))
}
