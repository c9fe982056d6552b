use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub(crate) fn dense_dims(input: &[usize], weight: &[usize], bias: &[usize]) -> Result<(usize, usize, usize)> {
    match (input, weight, bias) {
        ([n, d], [wd, c], [bc]) if d == wd && c == bc => Ok((*n, *d, *c)),
        _ => Err(Error::shape(
            "dense",
            format!("input {input:?} · weight {weight:?} + bias {bias:?} (need [N,D]·[D,C]+[C])"),
        )),
    }
}

pub(crate) fn dense_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], n: usize, d: usize, c: usize) -> Vec<T> {
    let mut y: Vec<T> = (0..n).flat_map(|_| b.iter().copied()).collect();
    T::gemm(n, d, c, T::one(), x, (d as isize, 1), w, (c as isize, 1), T::one(), &mut y, (c as isize, 1));
    y
}

/// Returns `(dx, dw, db)`.
pub(crate) fn dense_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    n: usize,
    d: usize,
    c: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); n * d];
    T::gemm(n, c, d, T::one(), dy, (c as isize, 1), w, (1, c as isize), T::zero(), &mut dx, (d as isize, 1));
    let mut dw = vec![T::zero(); d * c];
    T::gemm(d, n, c, T::one(), x, (1, d as isize), dy, (c as isize, 1), T::zero(), &mut dw, (c as isize, 1));
    let mut db = vec![T::zero(); c];
    for row in dy.chunks(c) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    (dx, dw, db)
}
