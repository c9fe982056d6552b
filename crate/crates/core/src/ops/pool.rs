use rayon::prelude::*;

use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PoolKind {
    Max,
    Avg,
}

/// Resolved pooling geometry; `planes` is `N · C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PoolDims {
    pub planes: usize,
    pub input: [usize; 3],
    pub window: [usize; 3],
    pub output: [usize; 3],
    pub stride: [usize; 3],
    pub pad_before: [usize; 3],
}

impl PoolDims {
    /// Clamped input range covered by output index `o` along `axis`.
    #[inline]
    fn range(&self, axis: usize, o: usize) -> (usize, usize) {
        let start = (o * self.stride[axis]) as isize - self.pad_before[axis] as isize;
        let end = start + self.window[axis] as isize;
        (start.max(0) as usize, (end.min(self.input[axis] as isize)) as usize)
    }
}

/// Forward pooling. For max pooling the second value holds, per output
/// element, the in-plane offset of the selected input (first maximum in scan
/// order).
pub(crate) fn pool_forward<T: Scalar>(kind: PoolKind, x: &[T], d: &PoolDims) -> (Vec<T>, Vec<usize>) {
    let in_plane: usize = d.input.iter().product();
    let out_plane: usize = d.output.iter().product();
    let mut out = vec![T::zero(); d.planes * out_plane];
    let mut arg = vec![0usize; if kind == PoolKind::Max { d.planes * out_plane } else { 0 }];
    let [_, ih, iw] = d.input;
    let [ot, oh, ow] = d.output;

    let run_plane = |p: usize, y: &mut [T], a: Option<&mut [usize]>| {
        let xp = &x[p * in_plane..(p + 1) * in_plane];
        let mut a = a;
        let mut idx = 0;
        for t in 0..ot {
            let (t0, t1) = d.range(0, t);
            for h in 0..oh {
                let (h0, h1) = d.range(1, h);
                for w in 0..ow {
                    let (w0, w1) = d.range(2, w);
                    match kind {
                        PoolKind::Max => {
                            let mut best = T::neg_infinity();
                            let mut best_at = usize::MAX;
                            for tt in t0..t1 {
                                for hh in h0..h1 {
                                    for ww in w0..w1 {
                                        let off = (tt * ih + hh) * iw + ww;
                                        if best_at == usize::MAX || xp[off] > best {
                                            best = xp[off];
                                            best_at = off;
                                        }
                                    }
                                }
                            }
                            y[idx] = best;
                            if let Some(a) = a.as_deref_mut() {
                                a[idx] = best_at;
                            }
                        }
                        PoolKind::Avg => {
                            let mut sum = T::zero();
                            for tt in t0..t1 {
                                for hh in h0..h1 {
                                    for ww in w0..w1 {
                                        sum += xp[(tt * ih + hh) * iw + ww];
                                    }
                                }
                            }
                            let count = (t1 - t0) * (h1 - h0) * (w1 - w0);
                            y[idx] = sum / T::from_usize(count);
                        }
                    }
                    idx += 1;
                }
            }
        }
    };

    match kind {
        PoolKind::Max => out
            .par_chunks_mut(out_plane)
            .zip(arg.par_chunks_mut(out_plane))
            .enumerate()
            .for_each(|(p, (y, a))| run_plane(p, y, Some(a))),
        PoolKind::Avg => out
            .par_chunks_mut(out_plane)
            .enumerate()
            .for_each(|(p, y)| run_plane(p, y, None)),
    }
    (out, arg)
}

pub(crate) fn pool_backward<T: Scalar>(kind: PoolKind, dy: &[T], argmax: &[usize], d: &PoolDims) -> Vec<T> {
    let in_plane: usize = d.input.iter().product();
    let out_plane: usize = d.output.iter().product();
    let mut dx = vec![T::zero(); d.planes * in_plane];
    let [_, ih, iw] = d.input;
    let [ot, oh, ow] = d.output;
    dx.par_chunks_mut(in_plane).enumerate().for_each(|(p, dxp)| {
        let dyp = &dy[p * out_plane..(p + 1) * out_plane];
        match kind {
            PoolKind::Max => {
                let ap = &argmax[p * out_plane..(p + 1) * out_plane];
                for (g, &at) in dyp.iter().zip(ap) {
                    dxp[at] += *g;
                }
            }
            PoolKind::Avg => {
                let mut idx = 0;
                for t in 0..ot {
                    let (t0, t1) = d.range(0, t);
                    for h in 0..oh {
                        let (h0, h1) = d.range(1, h);
                        for w in 0..ow {
                            let (w0, w1) = d.range(2, w);
                            let count = (t1 - t0) * (h1 - h0) * (w1 - w0);
                            let share = dyp[idx] / T::from_usize(count);
                            for tt in t0..t1 {
                                for hh in h0..h1 {
                                    for ww in w0..w1 {
                                        dxp[(tt * ih + hh) * iw + ww] += share;
                                    }
                                }
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
    });
    dx
}
