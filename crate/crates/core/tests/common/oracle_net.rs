//! Layer-by-layer graph interpreter built on the naive oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use inflate_transfer::netdef::{GraphSpec, LayerKind, ParamSet, INPUT};
use inflate_transfer::{Padding, Scalar, Tensor};

use super::oracle::{self, Pool};

/// Activation with shape `[N, ...]`.
pub type Act = (Vec<f64>, Vec<usize>);

fn pads(input: &[usize], k: &[usize], s: &[usize], p: &[Padding]) -> Vec<(usize, usize)> {
    (0..input.len())
        .map(|a| match p[a] {
            Padding::Valid => (0, 0),
            Padding::Same => oracle::same_pads(input[a], k[a], s[a]),
        })
        .collect()
}

fn lift3(v: &[usize]) -> [usize; 3] {
    match v.len() {
        2 => [1, v[0], v[1]],
        3 => [v[0], v[1], v[2]],
        n => panic!("rank {n} window"),
    }
}

fn lift_pads(p: Vec<(usize, usize)>) -> [(usize, usize); 3] {
    match p.len() {
        2 => [(0, 0), p[0], p[1]],
        _ => [p[0], p[1], p[2]],
    }
}

fn f64s<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64()).collect()
}

/// Every layer output of `spec` on `input`, in f64.
pub fn trace<T: Scalar>(spec: &GraphSpec, params: &ParamSet<T>, input: &Tensor<T>) -> BTreeMap<String, Act> {
    let mut acts: BTreeMap<String, Act> = BTreeMap::new();
    acts.insert(INPUT.to_string(), (f64s(input), input.shape().to_vec()));
    for layer in spec.layers() {
        let (x, xs) = acts[&layer.inputs[0]].clone();
        let n = xs[0];
        let spatial = &xs[2..];
        let p = |name: &str| params.get(&format!("{}/{name}", layer.id)).unwrap();
        let out: Act = match &layer.kind {
            LayerKind::Conv { kernel, stride, padding, .. } => {
                let k = p("kernel");
                let b = f64s(p("bias"));
                let pd = pads(spatial, kernel, stride, padding);
                if spatial.len() == 2 {
                    let ks = k.shape();
                    let (y, s) = oracle::conv2d(
                        &x,
                        [xs[0], xs[1], xs[2], xs[3]],
                        &f64s(k),
                        [ks[0], ks[1], ks[2], ks[3]],
                        &b,
                        [stride[0], stride[1]],
                        [pd[0], pd[1]],
                    );
                    (y, s.to_vec())
                } else {
                    let ks = k.shape();
                    let (y, s) = oracle::conv3d(
                        &x,
                        [xs[0], xs[1], xs[2], xs[3], xs[4]],
                        &f64s(k),
                        [ks[0], ks[1], ks[2], ks[3], ks[4]],
                        &b,
                        [stride[0], stride[1], stride[2]],
                        [pd[0], pd[1], pd[2]],
                    );
                    (y, s.to_vec())
                }
            }
            LayerKind::MaxPool { window, stride, padding } | LayerKind::AvgPool { window, stride, padding } => {
                let kind = if matches!(layer.kind, LayerKind::MaxPool { .. }) { Pool::Max } else { Pool::Avg };
                let pd = pads(spatial, window, stride, padding);
                let (y, o) = oracle::pool3(
                    kind,
                    &x,
                    n * xs[1],
                    lift3(spatial),
                    lift3(window),
                    lift3(stride),
                    lift_pads(pd),
                );
                let mut shape = vec![n, xs[1]];
                if spatial.len() == 3 {
                    shape.push(o[0]);
                }
                shape.extend_from_slice(&o[1..]);
                (y, shape)
            }
            LayerKind::Relu => (oracle::relu(&x), xs.clone()),
            LayerKind::Concat => {
                let inner: usize = spatial.iter().product();
                let parts: Vec<Act> = layer.inputs.iter().map(|id| acts[id].clone()).collect();
                let refs: Vec<(&[f64], usize)> = parts.iter().map(|(d, s)| (d.as_slice(), s[1])).collect();
                let mut shape = xs.clone();
                shape[1] = parts.iter().map(|(_, s)| s[1]).sum();
                (oracle::concat(&refs, n, inner), shape)
            }
            LayerKind::GlobalAvgPool => {
                let inner: usize = spatial.iter().product();
                (oracle::global_avg_pool(&x, n, xs[1], inner), vec![n, xs[1]])
            }
            LayerKind::Dense { classes } => {
                let y = oracle::dense(&x, &f64s(p("weight")), &f64s(p("bias")), n, xs[1], *classes);
                (y, vec![n, *classes])
            }
        };
        acts.insert(layer.id.clone(), out);
    }
    acts
}
