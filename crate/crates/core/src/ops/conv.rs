use rayon::prelude::*;

use crate::tensor::Scalar;

/// Resolved convolution geometry over three spatial axes `(T, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub stride: [usize; 3],
    pub pad_before: [usize; 3],
}

impl ConvDims {
    fn input_len(&self) -> usize {
        self.in_channels * self.input.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    /// Rows of the unfolded input: `C · kt · kh · kw`.
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad_before == [0, 0, 0]
    }

    /// Input coordinate along `axis` for output index `o` and kernel tap `k`,
    /// or `None` when it falls in the zero padding.
    #[inline]
    fn source(&self, axis: usize, o: usize, k: usize) -> Option<usize> {
        let pos = (o * self.stride[axis] + k) as isize - self.pad_before[axis] as isize;
        (pos >= 0 && (pos as usize) < self.input[axis]).then_some(pos as usize)
    }
}

/// Unfold one sample `[C, T, H, W]` into `[C·kt·kh·kw, To·Ho·Wo]`.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims, col: &mut [T]) {
    let [it, ih, iw] = d.input;
    let [kt, kh, kw] = d.kernel;
    let [ot, oh, ow] = d.output;
    let p = d.positions();
    let mut row = 0;
    for c in 0..d.in_channels {
        let plane = &x[c * it * ih * iw..(c + 1) * it * ih * iw];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for t in 0..ot {
                        let st = d.source(0, t, dt);
                        for h in 0..oh {
                            let sh = d.source(1, h, dh);
                            match (st, sh) {
                                (Some(st), Some(sh)) => {
                                    let base = (st * ih + sh) * iw;
                                    for w in 0..ow {
                                        dst[idx] = match d.source(2, w, dw) {
                                            Some(sw) => plane[base + sw],
                                            None => T::zero(),
                                        };
                                        idx += 1;
                                    }
                                }
                                _ => {
                                    dst[idx..idx + ow].fill(T::zero());
                                    idx += ow;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Fold `[C·kt·kh·kw, To·Ho·Wo]` back, accumulating into `[C, T, H, W]`.
fn col2im<T: Scalar>(col: &[T], d: &ConvDims, dx: &mut [T]) {
    let [it, ih, iw] = d.input;
    let [kt, kh, kw] = d.kernel;
    let [ot, oh, ow] = d.output;
    let p = d.positions();
    let mut row = 0;
    for c in 0..d.in_channels {
        let plane = &mut dx[c * it * ih * iw..(c + 1) * it * ih * iw];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for t in 0..ot {
                        let st = d.source(0, t, dt);
                        for h in 0..oh {
                            if let (Some(st), Some(sh)) = (st, d.source(1, h, dh)) {
                                let base = (st * ih + sh) * iw;
                                for w in 0..ow {
                                    if let Some(sw) = d.source(2, w, dw) {
                                        plane[base + sw] += src[idx];
                                    }
                                    idx += 1;
                                }
                            } else {
                                idx += ow;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Scalar>(x: &[T], kernel: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let p = d.positions();
    let ck = d.patch_len();
    let in_len = d.input_len();
    let mut out = vec![T::zero(); d.batch * d.filters * p];
    out.par_chunks_mut(d.filters * p)
        .enumerate()
        .for_each(|(n, y)| {
            let xn = &x[n * in_len..(n + 1) * in_len];
            for (f, row) in y.chunks_mut(p).enumerate() {
                row.fill(bias[f]);
            }
            if d.is_pointwise() {
                T::gemm(d.filters, ck, p, T::one(), kernel, (ck as isize, 1), xn, (p as isize, 1), T::one(), y, (p as isize, 1));
            } else {
                let mut col = vec![T::zero(); ck * p];
                im2col(xn, d, &mut col);
                T::gemm(d.filters, ck, p, T::one(), kernel, (ck as isize, 1), &col, (p as isize, 1), T::one(), y, (p as isize, 1));
            }
        });
    out
}

/// Gradients with respect to input (when requested), kernel and bias.
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    d: &ConvDims,
    want_input_grad: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let p = d.positions();
    let ck = d.patch_len();
    let in_len = d.input_len();
    let out_len = d.filters * p;

    let mut dx = want_input_grad.then(|| vec![T::zero(); d.batch * in_len]);

    let per_sample = |n: usize, dxn: Option<&mut [T]>| -> Vec<T> {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let dyn_ = &dy[n * out_len..(n + 1) * out_len];
        let pointwise = d.is_pointwise();
        let mut col = Vec::new();
        if !pointwise {
            col = vec![T::zero(); ck * p];
            im2col(xn, d, &mut col);
        }
        let cols: &[T] = if pointwise { xn } else { &col };
        // dK[F, CK] = dY[F, P] · colᵀ[P, CK]
        let mut dk = vec![T::zero(); d.filters * ck];
        T::gemm(d.filters, p, ck, T::one(), dyn_, (p as isize, 1), cols, (1, p as isize), T::zero(), &mut dk, (ck as isize, 1));
        if let Some(dxn) = dxn {
            // dcol[CK, P] = Kᵀ[CK, F] · dY[F, P]
            if pointwise {
                T::gemm(ck, d.filters, p, T::one(), kernel, (1, ck as isize), dyn_, (p as isize, 1), T::zero(), dxn, (p as isize, 1));
            } else {
                let mut dcol = vec![T::zero(); ck * p];
                T::gemm(ck, d.filters, p, T::one(), kernel, (1, ck as isize), dyn_, (p as isize, 1), T::zero(), &mut dcol, (p as isize, 1));
                col2im(&dcol, d, dxn);
            }
        }
        dk
    };

    let dks: Vec<Vec<T>> = match dx.as_mut() {
        Some(dx) => dx
            .par_chunks_mut(in_len)
            .enumerate()
            .map(|(n, dxn)| per_sample(n, Some(dxn)))
            .collect(),
        None => (0..d.batch)
            .into_par_iter()
            .map(|n| per_sample(n, None))
            .collect(),
    };

    // Batch reduction in sample order.
    let mut dk = vec![T::zero(); d.filters * ck];
    for part in &dks {
        for (acc, &v) in dk.iter_mut().zip(part) {
            *acc += v;
        }
    }
    let mut db = vec![T::zero(); d.filters];
    for n in 0..d.batch {
        for (f, acc) in db.iter_mut().enumerate() {
            let row = &dy[n * out_len + f * p..n * out_len + (f + 1) * p];
            for &v in row {
                *acc += v;
            }
        }
    }
    (dx, dk, db)
}
