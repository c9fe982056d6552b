//! Forward and backward kernels for the layer types the networks use.
//!
//! Convolution and pooling are implemented once over three spatial axes
//! `(T, H, W)`; the 2D entry points lift their operands by inserting a
//! singleton temporal axis. All batch-parallel loops write disjoint output
//! slices and reduce across the batch in sample order, so results do not
//! depend on the number of worker threads.

mod conv;
mod dense;
mod elementwise;
mod loss;
mod pool;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub(crate) use conv::{conv_backward, conv_forward, ConvDims};
pub(crate) use dense::{dense_backward, dense_forward};
pub(crate) use elementwise::{concat_backward, concat_forward, concat_shape, gap_backward, gap_forward};
pub use loss::{accuracy, argmax_rows};
pub(crate) use loss::{
    check_logits as loss_dims, softmax_cross_entropy_backward, softmax_cross_entropy_forward,
};
pub(crate) use pool::{pool_backward, pool_forward, PoolDims, PoolKind};

/// Per-axis padding mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding.
    Valid,
    /// Zero padding so that the output extent is `ceil(input / stride)`;
    /// any odd remainder goes after the data.
    Same,
}

/// Output extent and leading pad for one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisPlan {
    pub output: usize,
    pub pad_before: usize,
    pub pad_total: usize,
}

/// Resolve one axis of a sliding window. `H' = floor((H + pad - k) / s) + 1`.
pub fn plan_axis(input: usize, extent: usize, stride: usize, padding: Padding) -> Result<AxisPlan> {
    if extent == 0 || stride == 0 {
        return Err(Error::invalid(format!(
            "window extent {extent} and stride {stride} must be positive"
        )));
    }
    let pad_total = match padding {
        Padding::Valid => 0,
        Padding::Same => {
            let out = input.div_ceil(stride);
            ((out - 1) * stride + extent).saturating_sub(input)
        }
    };
    if extent > input + pad_total {
        return Err(Error::shape(
            "window",
            format!("extent {extent} exceeds padded input {}", input + pad_total),
        ));
    }
    Ok(AxisPlan {
        output: (input + pad_total - extent) / stride + 1,
        pad_before: pad_total / 2,
        pad_total,
    })
}

/// Sliding-window hyperparameters over the spatial axes of a 2D (`len 2`)
/// or 3D (`len 3`) operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub extent: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<Padding>,
}

impl Window {
    pub fn new(extent: &[usize], stride: &[usize], padding: &[Padding]) -> Result<Self> {
        let rank = extent.len();
        if !(rank == 2 || rank == 3) || stride.len() != rank || padding.len() != rank {
            return Err(Error::invalid(format!(
                "window needs 2 or 3 axes with matching strides and paddings, got extent {extent:?} stride {stride:?} padding {padding:?}"
            )));
        }
        Ok(Window {
            extent: extent.to_vec(),
            stride: stride.to_vec(),
            padding: padding.to_vec(),
        })
    }

    pub fn rank(&self) -> usize {
        self.extent.len()
    }

    /// Output spatial extents for the given input spatial extents.
    pub fn output_extent(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != self.rank() {
            return Err(Error::shape(
                "window",
                format!("{} spatial axes given to a {}-axis window", input.len(), self.rank()),
            ));
        }
        input
            .iter()
            .enumerate()
            .map(|(i, &d)| plan_axis(d, self.extent[i], self.stride[i], self.padding[i]).map(|p| p.output))
            .collect()
    }

    /// Lift to three axes and resolve against `input` (also three axes).
    fn resolve(&self, input: &[usize; 3]) -> Result<([usize; 3], [usize; 3], [usize; 3], [usize; 3])> {
        let lift = 3 - self.rank();
        let mut extent = [1; 3];
        let mut stride = [1; 3];
        let mut padding = [Padding::Valid; 3];
        extent[lift..].copy_from_slice(&self.extent);
        stride[lift..].copy_from_slice(&self.stride);
        padding[lift..].copy_from_slice(&self.padding);
        let mut out = [0; 3];
        let mut pad = [0; 3];
        for a in 0..3 {
            let plan = plan_axis(input[a], extent[a], stride[a], padding[a])?;
            out[a] = plan.output;
            pad[a] = plan.pad_before;
        }
        Ok((extent, stride, out, pad))
    }
}

/// Split an `[N, C, (T,) H, W]` shape into batch, channel and lifted spatial extents.
fn split_spatial(op: &'static str, shape: &[usize], rank: usize) -> Result<(usize, usize, [usize; 3])> {
    if shape.len() != rank + 2 {
        return Err(Error::shape(
            op,
            format!("expected {} axes [N, C, spatial...], got {shape:?}", rank + 2),
        ));
    }
    let mut spatial = [1; 3];
    spatial[3 - rank..].copy_from_slice(&shape[2..]);
    Ok((shape[0], shape[1], spatial))
}

fn assemble_shape(n: usize, c: usize, spatial: &[usize; 3], rank: usize) -> Vec<usize> {
    let mut shape = vec![n, c];
    shape.extend_from_slice(&spatial[3 - rank..]);
    shape
}

pub(crate) fn conv_dims(
    input: &[usize],
    kernel: &[usize],
    bias: &[usize],
    stride: &[usize],
    padding: &[Padding],
) -> Result<(ConvDims, Vec<usize>)> {
    let rank = stride.len();
    let (n, c, spatial) = split_spatial("conv", input, rank)?;
    if kernel.len() != rank + 2 {
        return Err(Error::shape(
            "conv",
            format!("kernel {kernel:?} must have {} axes [F, C, extents...]", rank + 2),
        ));
    }
    if kernel[1] != c {
        return Err(Error::shape(
            "conv",
            format!("channel axis: input has {c} channels, kernel expects {}", kernel[1]),
        ));
    }
    if bias != [kernel[0]] {
        return Err(Error::shape(
            "conv",
            format!("bias {bias:?} must be [{}] (filter axis)", kernel[0]),
        ));
    }
    let window = Window::new(&kernel[2..], stride, padding)?;
    let (extent, stride3, out, pad) = window.resolve(&spatial).map_err(|e| match e {
        Error::Shape { detail, .. } => Error::shape(
            "conv",
            format!("spatial axes of input {input:?} vs kernel {kernel:?}: {detail}"),
        ),
        other => other,
    })?;
    let dims = ConvDims {
        batch: n,
        in_channels: c,
        filters: kernel[0],
        input: spatial,
        kernel: extent,
        output: out,
        stride: stride3,
        pad_before: pad,
    };
    let shape = assemble_shape(n, kernel[0], &out, rank);
    Ok((dims, shape))
}

pub(crate) fn pool_dims(input: &[usize], window: &Window) -> Result<(PoolDims, Vec<usize>)> {
    let rank = window.rank();
    let (n, c, spatial) = split_spatial("pool", input, rank)?;
    let (extent, stride, out, pad) = window.resolve(&spatial)?;
    let dims = PoolDims {
        planes: n * c,
        input: spatial,
        window: extent,
        output: out,
        stride,
        pad_before: pad,
    };
    Ok((dims, assemble_shape(n, c, &out, rank)))
}

/// 2D cross-correlation: `[N,C,H,W] ⋆ [F,C,kh,kw] + bias[F]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 2],
    padding: [Padding; 2],
) -> Result<Tensor<T>> {
    if input.rank() != 4 {
        return Err(Error::shape("conv2d", format!("input {:?} is not [N,C,H,W]", input.shape())));
    }
    conv(input, kernel, bias, &stride, &padding)
}

/// 3D cross-correlation: `[N,C,T,H,W] ⋆ [F,C,kt,kh,kw] + bias[F]`.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 3],
    padding: [Padding; 3],
) -> Result<Tensor<T>> {
    if input.rank() != 5 {
        return Err(Error::shape("conv3d", format!("input {:?} is not [N,C,T,H,W]", input.shape())));
    }
    conv(input, kernel, bias, &stride, &padding)
}

pub(crate) fn conv<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: &[usize],
    padding: &[Padding],
) -> Result<Tensor<T>> {
    let (dims, shape) = conv_dims(input.shape(), kernel.shape(), bias.shape(), stride, padding)?;
    Tensor::new(shape, conv_forward(input.data(), kernel.data(), bias.data(), &dims))
}

/// Max pooling over the trailing 2 or 3 axes of `[N, C, ...]`.
pub fn max_pool<T: Scalar>(input: &Tensor<T>, window: &Window) -> Result<Tensor<T>> {
    let (dims, shape) = pool_dims(input.shape(), window)?;
    let (out, _) = pool_forward(PoolKind::Max, input.data(), &dims);
    Tensor::new(shape, out)
}

/// Average pooling; padded positions are excluded from each window's mean.
pub fn avg_pool<T: Scalar>(input: &Tensor<T>, window: &Window) -> Result<Tensor<T>> {
    let (dims, shape) = pool_dims(input.shape(), window)?;
    let (out, _) = pool_forward(PoolKind::Avg, input.data(), &dims);
    Tensor::new(shape, out)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// `input[N,D] · weight[D,C] + bias[C]`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, c) = dense::dense_dims(input.shape(), weight.shape(), bias.shape())?;
    Tensor::new(vec![n, c], dense_forward(input.data(), weight.data(), bias.data(), n, d, c))
}

/// Concatenate along the channel axis (axis 1).
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
    let shape = elementwise::concat_shape(&shapes)?;
    let parts: Vec<&[T]> = inputs.iter().map(|t| t.data()).collect();
    Tensor::new(shape.clone(), concat_forward(&parts, &shapes, &shape))
}

/// Mean over every axis after the channel axis: `[N, C, ...] -> [N, C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, inner) = elementwise::gap_dims(input.shape())?;
    Tensor::new(vec![n, c], gap_forward(input.data(), n * c, inner))
}

/// Mean categorical cross-entropy of `logits[N,C]` against class indices.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (n, c) = loss::check_logits(logits.shape(), labels)?;
    Ok(softmax_cross_entropy_forward(logits.data(), labels, n, c).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_preserves_extent_at_unit_stride() {
        for input in 1..9 {
            for k in 1..=input {
                let p = plan_axis(input, k, 1, Padding::Same).unwrap();
                assert_eq!(p.output, input);
                assert_eq!(p.pad_total, k - 1);
            }
        }
    }

    #[test]
    fn same_padding_with_stride_rounds_up() {
        let p = plan_axis(32, 3, 2, Padding::Same).unwrap();
        assert_eq!((p.output, p.pad_before, p.pad_total), (16, 0, 1));
        let p = plan_axis(5, 1, 2, Padding::Same).unwrap();
        assert_eq!((p.output, p.pad_total), (3, 0));
    }

    #[test]
    fn valid_padding_floor_formula() {
        let p = plan_axis(20, 3, 1, Padding::Valid).unwrap();
        assert_eq!(p.output, 18);
        let p = plan_axis(7, 2, 2, Padding::Valid).unwrap();
        assert_eq!(p.output, 3);
        assert!(plan_axis(2, 3, 1, Padding::Valid).is_err());
    }

    #[test]
    fn conv_shape_errors_name_axes() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 5, 5]);
        let k = Tensor::<f64>::zeros(vec![3, 4, 3, 3]);
        let b = Tensor::<f64>::zeros(vec![3]);
        let err = conv2d(&x, &k, &b, [1, 1], [Padding::Valid; 2]).unwrap_err();
        assert!(err.to_string().contains("channel axis"), "{err}");

        let k = Tensor::<f64>::zeros(vec![3, 2, 7, 3]);
        let err = conv2d(&x, &k, &b, [1, 1], [Padding::Valid; 2]).unwrap_err();
        assert!(err.to_string().contains("spatial axes"), "{err}");
    }
}
