use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub(crate) fn check_logits(shape: &[usize], labels: &[usize]) -> Result<(usize, usize)> {
    let [n, c] = shape else {
        return Err(Error::shape("softmax_cross_entropy", format!("logits {shape:?} are not [N, C]")));
    };
    if labels.len() != *n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= *c) {
        return Err(Error::invalid(format!("label {l} at row {i} is outside [0, {c})")));
    }
    Ok((*n, *c))
}

/// Mean loss and the per-row softmax probabilities.
pub(crate) fn softmax_cross_entropy_forward<T: Scalar>(
    logits: &[T],
    labels: &[usize],
    n: usize,
    c: usize,
) -> (T, Vec<T>) {
    let mut probs = vec![T::zero(); n * c];
    let mut total = T::zero();
    for (r, &label) in labels.iter().enumerate().take(n) {
        let z = &logits[r * c..(r + 1) * c];
        let max = z.iter().copied().fold(T::neg_infinity(), |m, v| if v > m { v } else { m });
        let p = &mut probs[r * c..(r + 1) * c];
        let mut sum = T::zero();
        for (pi, &zi) in p.iter_mut().zip(z) {
            *pi = (zi - max).exp();
            sum += *pi;
        }
        for pi in p.iter_mut() {
            *pi = *pi / sum;
        }
        // -log softmax = log(sum) - (z_label - max)
        let nll = sum.ln() - (z[label] - max);
        total += if nll > T::zero() { nll } else { T::zero() };
    }
    (total / T::from_usize(n), probs)
}

pub(crate) fn softmax_cross_entropy_backward<T: Scalar>(probs: &[T], labels: &[usize], c: usize, upstream: T) -> Vec<T> {
    let scale = upstream / T::from_usize(labels.len());
    let mut g = probs.to_vec();
    for (r, &label) in labels.iter().enumerate() {
        g[r * c + label] -= T::one();
    }
    for v in &mut g {
        *v = *v * scale;
    }
    g
}

/// Index of each row's maximum; ties resolve to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let [_, c] = logits.shape() else {
        return Err(Error::shape("argmax", format!("logits {:?} are not [N, C]", logits.shape())));
    };
    Ok(logits
        .data()
        .chunks(*c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    check_logits(logits.shape(), labels)?;
    let hits = argmax_rows(logits)?
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
