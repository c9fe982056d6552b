//! Naive reference implementations. These index tensors directly with
//! nested loops and share no code with the library kernels.
#![allow(dead_code)]

/// Explicit zero-padding amounts `(before, after)` per spatial axis.
pub type Pads = Vec<(usize, usize)>;

/// TensorFlow-style "same" padding for one axis.
pub fn same_pads(input: usize, k: usize, s: usize) -> (usize, usize) {
    let out = (input + s - 1) / s;
    let total = ((out - 1) * s + k).saturating_sub(input);
    (total / 2, total - total / 2)
}

/// `x[n][c][h][w]`, kernel `k[f][c][i][j]`.
pub fn conv2d(
    x: &[f64],
    xs: [usize; 4],
    k: &[f64],
    ks: [usize; 4],
    b: &[f64],
    stride: [usize; 2],
    pads: [(usize, usize); 2],
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = xs;
    let [f, kc, kh, kw] = ks;
    assert_eq!(c, kc);
    let oh = (h + pads[0].0 + pads[0].1 - kh) / stride[0] + 1;
    let ow = (w + pads[1].0 + pads[1].1 - kw) / stride[1] + 1;
    let mut y = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for yi in 0..oh {
                for xi in 0..ow {
                    let mut acc = b[fi];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let r = (yi * stride[0] + i) as isize - pads[0].0 as isize;
                                let q = (xi * stride[1] + j) as isize - pads[1].0 as isize;
                                if r < 0 || q < 0 || r >= h as isize || q >= w as isize {
                                    continue;
                                }
                                let (r, q) = (r as usize, q as usize);
                                acc += x[((ni * c + ci) * h + r) * w + q] * k[((fi * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    y[((ni * f + fi) * oh + yi) * ow + xi] = acc;
                }
            }
        }
    }
    (y, [n, f, oh, ow])
}

pub fn conv3d(
    x: &[f64],
    xs: [usize; 5],
    k: &[f64],
    ks: [usize; 5],
    b: &[f64],
    stride: [usize; 3],
    pads: [(usize, usize); 3],
) -> (Vec<f64>, [usize; 5]) {
    let [n, c, t, h, w] = xs;
    let [f, kc, kt, kh, kw] = ks;
    assert_eq!(c, kc);
    let ot = (t + pads[0].0 + pads[0].1 - kt) / stride[0] + 1;
    let oh = (h + pads[1].0 + pads[1].1 - kh) / stride[1] + 1;
    let ow = (w + pads[2].0 + pads[2].1 - kw) / stride[2] + 1;
    let mut y = vec![0.0; n * f * ot * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for zi in 0..ot {
                for yi in 0..oh {
                    for xi in 0..ow {
                        let mut acc = b[fi];
                        for ci in 0..c {
                            for a in 0..kt {
                                for i in 0..kh {
                                    for j in 0..kw {
                                        let p = (zi * stride[0] + a) as isize - pads[0].0 as isize;
                                        let r = (yi * stride[1] + i) as isize - pads[1].0 as isize;
                                        let q = (xi * stride[2] + j) as isize - pads[2].0 as isize;
                                        if p < 0 || r < 0 || q < 0 || p >= t as isize || r >= h as isize || q >= w as isize {
                                            continue;
                                        }
                                        let (p, r, q) = (p as usize, r as usize, q as usize);
                                        acc += x[(((ni * c + ci) * t + p) * h + r) * w + q]
                                            * k[(((fi * c + ci) * kt + a) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        y[(((ni * f + fi) * ot + zi) * oh + yi) * ow + xi] = acc;
                    }
                }
            }
        }
    }
    (y, [n, f, ot, oh, ow])
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Pool {
    Max,
    Avg,
}

/// Pooling over `[planes, T, H, W]` (2D callers pass `T = 1`, window 1);
/// padded positions are skipped.
pub fn pool3(
    kind: Pool,
    x: &[f64],
    planes: usize,
    dims: [usize; 3],
    window: [usize; 3],
    stride: [usize; 3],
    pads: [(usize, usize); 3],
) -> (Vec<f64>, [usize; 3]) {
    let out: Vec<usize> = (0..3)
        .map(|a| (dims[a] + pads[a].0 + pads[a].1 - window[a]) / stride[a] + 1)
        .collect();
    let mut y = Vec::new();
    for p in 0..planes {
        for zo in 0..out[0] {
            for yo in 0..out[1] {
                for xo in 0..out[2] {
                    let mut vals = Vec::new();
                    for a in 0..window[0] {
                        for i in 0..window[1] {
                            for j in 0..window[2] {
                                let z = (zo * stride[0] + a) as isize - pads[0].0 as isize;
                                let r = (yo * stride[1] + i) as isize - pads[1].0 as isize;
                                let q = (xo * stride[2] + j) as isize - pads[2].0 as isize;
                                if z < 0 || r < 0 || q < 0 {
                                    continue;
                                }
                                let (z, r, q) = (z as usize, r as usize, q as usize);
                                if z >= dims[0] || r >= dims[1] || q >= dims[2] {
                                    continue;
                                }
                                vals.push(x[((p * dims[0] + z) * dims[1] + r) * dims[2] + q]);
                            }
                        }
                    }
                    y.push(match kind {
                        Pool::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                        Pool::Avg => vals.iter().sum::<f64>() / vals.len() as f64,
                    });
                }
            }
        }
    }
    (y, [out[0], out[1], out[2]])
}

/// Triple-loop `x[n][d] · w[d][c] + b[c]`.
pub fn dense(x: &[f64], w: &[f64], b: &[f64], n: usize, d: usize, c: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * c];
    for i in 0..n {
        for j in 0..c {
            let mut acc = b[j];
            for k in 0..d {
                acc += x[i * d + k] * w[k * c + j];
            }
            y[i * c + j] = acc;
        }
    }
    y
}

pub fn global_avg_pool(x: &[f64], n: usize, c: usize, inner: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * c];
    for i in 0..n {
        for j in 0..c {
            let mut acc = 0.0;
            for k in 0..inner {
                acc += x[(i * c + j) * inner + k];
            }
            y[i * c + j] = acc / inner as f64;
        }
    }
    y
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Channel concat of `[N, C_i, inner]` blocks.
pub fn concat(parts: &[(&[f64], usize)], n: usize, inner: usize) -> Vec<f64> {
    let mut y = Vec::new();
    for i in 0..n {
        for (data, c) in parts {
            for j in 0..*c {
                for k in 0..inner {
                    y.push(data[(i * c + j) * inner + k]);
                }
            }
        }
    }
    y
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
