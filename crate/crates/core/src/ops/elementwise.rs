use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub(crate) fn concat_shape(shapes: &[&[usize]]) -> Result<Vec<usize>> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    if first.len() < 2 {
        return Err(Error::shape("concat_channels", format!("input {first:?} has no channel axis")));
    }
    let mut out = first.to_vec();
    out[1] = 0;
    for (i, s) in shapes.iter().enumerate() {
        let agrees = s.len() == first.len()
            && s[0] == first[0]
            && s[2..] == first[2..];
        if !agrees {
            return Err(Error::shape(
                "concat_channels",
                format!("input {i} has shape {s:?}, which disagrees with {first:?} outside the channel axis"),
            ));
        }
        out[1] += s[1];
    }
    Ok(out)
}

pub(crate) fn concat_forward<T: Scalar>(parts: &[&[T]], shapes: &[&[usize]], out_shape: &[usize]) -> Vec<T> {
    let n = out_shape[0];
    let inner: usize = out_shape[2..].iter().product();
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for b in 0..n {
        for (part, shape) in parts.iter().zip(shapes) {
            let len = shape[1] * inner;
            out.extend_from_slice(&part[b * len..(b + 1) * len]);
        }
    }
    out
}

/// Split the channel-concatenated gradient back into per-input pieces.
pub(crate) fn concat_backward<T: Scalar>(dy: &[T], shapes: &[Vec<usize>]) -> Vec<Vec<T>> {
    let n = shapes[0][0];
    let inner: usize = shapes[0][2..].iter().product();
    let mut grads: Vec<Vec<T>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    let mut at = 0;
    for _ in 0..n {
        for (g, s) in grads.iter_mut().zip(shapes) {
            let len = s[1] * inner;
            g.extend_from_slice(&dy[at..at + len]);
            at += len;
        }
    }
    grads
}

pub(crate) fn gap_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 3 {
        return Err(Error::shape(
            "global_avg_pool",
            format!("input {shape:?} needs [N, C, ...] with at least one pooled axis"),
        ));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

pub(crate) fn gap_forward<T: Scalar>(x: &[T], planes: usize, inner: usize) -> Vec<T> {
    let scale = T::from_usize(inner);
    (0..planes)
        .map(|p| {
            let mut sum = T::zero();
            for &v in &x[p * inner..(p + 1) * inner] {
                sum += v;
            }
            sum / scale
        })
        .collect()
}

pub(crate) fn gap_backward<T: Scalar>(dy: &[T], inner: usize) -> Vec<T> {
    let scale = T::from_usize(inner);
    dy.iter()
        .flat_map(|&g| std::iter::repeat_n(g / scale, inner))
        .collect()
}
