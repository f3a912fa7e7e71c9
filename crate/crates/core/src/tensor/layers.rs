//! Layer kinds and their forward/backward kernels.
//!
//! Spatial tensors are laid out `[batch, channels, x, y, z]` with `z`
//! fastest. Kernels write each output element from exactly one thread in a
//! fixed summation order, so results do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Default negative-side slope of the leaky activations.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Number of taps in a 3×3×3 kernel.
pub const KERNEL_VOLUME: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// One entry of a layer stack. Convolutions are always 3×3×3 with stride 1
/// and zero "same" padding; upsampling always doubles every spatial axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    Conv3d {
        in_channels: usize,
        out_channels: usize,
    },
    TrilinearUpsample,
    LeakyRelu {
        slope: f64,
    },
    /// Leaky in [`Mode::Train`], a plain ReLU in [`Mode::Eval`].
    ValvedLeakyRelu {
        slope: f64,
    },
    Sigmoid,
    /// Reshape every batch element to `shape` (batch axis excluded).
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    /// Shapes of this layer's parameters, weights first.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => vec![vec![in_features, out_features], vec![out_features]],
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
            } => vec![vec![out_channels, in_channels, 3, 3, 3], vec![out_channels]],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Output shape for a given input shape (batch axis included).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => {
                if input.len() != 2 {
                    return Err(Error::dim("fc_forward", "rank", 2, input.len()));
                }
                if input[1] != *in_features {
                    return Err(Error::dim("fc_forward", "in_features", *in_features, input[1]));
                }
                Ok(vec![input[0], *out_features])
            }
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
            } => {
                if input.len() != 5 {
                    return Err(Error::dim("conv3d_forward", "rank", 5, input.len()));
                }
                if input[1] != *in_channels {
                    return Err(Error::dim("conv3d_forward", "in_channels", *in_channels, input[1]));
                }
                Ok(vec![input[0], *out_channels, input[2], input[3], input[4]])
            }
            LayerSpec::TrilinearUpsample => {
                if input.len() != 5 {
                    return Err(Error::dim("upsample_trilinear", "rank", 5, input.len()));
                }
                Ok(vec![input[0], input[1], 2 * input[2], 2 * input[3], 2 * input[4]])
            }
            LayerSpec::Reshape { shape } => {
                let per_item: usize = input[1..].iter().product();
                let target: usize = shape.iter().product();
                if per_item != target {
                    return Err(Error::dim("reshape", "element count", target, per_item));
                }
                let mut out = vec![input[0]];
                out.extend_from_slice(shape);
                Ok(out)
            }
            _ => Ok(input.to_vec()),
        }
    }
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

/// `out[b, j] = sum_i input[b, i] * weights[i, j] + bias[j]`.
pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    input.expect_rank("fc_forward", 2)?;
    weights.expect_rank("fc_forward", 2)?;
    let (batch, n_in) = (input.shape()[0], input.shape()[1]);
    let (w_in, n_out) = (weights.shape()[0], weights.shape()[1]);
    if w_in != n_in {
        return Err(Error::dim("fc_forward", "in_features", w_in, n_in));
    }
    if bias.shape() != [n_out] {
        return Err(Error::dim("fc_forward", "out_features", n_out, bias.len()));
    }
    let w = weights.data();
    let mut out = Vec::with_capacity(batch * n_out);
    for row in input.data().chunks_exact(n_in) {
        let mut acc = bias.data().to_vec();
        for (i, &xi) in row.iter().enumerate() {
            let wrow = &w[i * n_out..(i + 1) * n_out];
            for (a, &wij) in acc.iter_mut().zip(wrow) {
                *a += xi * wij;
            }
        }
        out.extend_from_slice(&acc);
    }
    Tensor::new(&[batch, n_out], out)
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn fc_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (batch, n_in) = (input.shape()[0], input.shape()[1]);
    let n_out = weights.shape()[1];
    let (x, w, g) = (input.data(), weights.data(), grad_out.data());

    let mut grad_in = vec![0.0; batch * n_in];
    for b in 0..batch {
        let grow = &g[b * n_out..(b + 1) * n_out];
        for i in 0..n_in {
            let wrow = &w[i * n_out..(i + 1) * n_out];
            grad_in[b * n_in + i] = wrow.iter().zip(grow).map(|(a, b)| a * b).sum();
        }
    }

    let mut grad_w = vec![0.0; n_in * n_out];
    let mut grad_b = vec![0.0; n_out];
    for b in 0..batch {
        let grow = &g[b * n_out..(b + 1) * n_out];
        for i in 0..n_in {
            let xi = x[b * n_in + i];
            for (gw, &gj) in grad_w[i * n_out..(i + 1) * n_out].iter_mut().zip(grow) {
                *gw += xi * gj;
            }
        }
        for (gb, &gj) in grad_b.iter_mut().zip(grow) {
            *gb += gj;
        }
    }
    (grad_in, grad_w, grad_b)
}

// ---------------------------------------------------------------------------
// 3D convolution (3×3×3, stride 1, zero same-padding)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct Dims {
    x: usize,
    y: usize,
    z: usize,
}

impl Dims {
    fn volume(self) -> usize {
        self.x * self.y * self.z
    }

    fn padded_volume(self) -> usize {
        (self.x + 2) * (self.y + 2) * (self.z + 2)
    }
}

/// Copy one channel into a buffer with a one-voxel zero border.
fn pad_channel(src: &[f64], d: Dims, dst: &mut [f64]) {
    let (py, pz) = (d.y + 2, d.z + 2);
    dst.iter_mut().for_each(|v| *v = 0.0);
    for x in 0..d.x {
        for y in 0..d.y {
            let s = (x * d.y + y) * d.z;
            let t = ((x + 1) * py + (y + 1)) * pz + 1;
            dst[t..t + d.z].copy_from_slice(&src[s..s + d.z]);
        }
    }
}

fn pad_all(src: &[f64], channels: usize, d: Dims) -> Vec<f64> {
    let (v, pv) = (d.volume(), d.padded_volume());
    let mut out = vec![0.0; channels * pv];
    for c in 0..channels {
        pad_channel(&src[c * v..(c + 1) * v], d, &mut out[c * pv..(c + 1) * pv]);
    }
    out
}

/// Destination channels computed together; their row accumulators stay
/// in L1 while each source row is reused across the block.
const CHANNEL_BLOCK: usize = 8;

/// `dst[o][p] += sum_s sum_k kernels[o][s][k] * src[s][p + offset(k)]`.
///
/// `src_pad` holds `n_src` padded channels, `dst` a block of unpadded
/// channels and `kernels` is laid out `[dst][src][27]`. Every output is
/// accumulated source-major, then tap-major, so the result does not depend
/// on the block size.
fn correlate_block(src_pad: &[f64], n_src: usize, kernels: &[f64], d: Dims, dst: &mut [f64]) {
    let (v, pv) = (d.volume(), d.padded_volume());
    let (py, pz, nz) = (d.y + 2, d.z + 2, d.z);
    let n_dst = dst.len() / v;
    let mut tile = vec![0.0; n_dst * nz];
    for x in 0..d.x {
        for y in 0..d.y {
            let row = (x * d.y + y) * nz;
            for o in 0..n_dst {
                tile[o * nz..(o + 1) * nz].copy_from_slice(&dst[o * v + row..o * v + row + nz]);
            }
            for s in 0..n_src {
                let src = &src_pad[s * pv..(s + 1) * pv];
                for a in 0..3 {
                    for b in 0..3 {
                        let base = ((x + a) * py + (y + b)) * pz;
                        let prow = &src[base..base + pz];
                        let (p0, p1, p2) = (&prow[..nz], &prow[1..nz + 1], &prow[2..nz + 2]);
                        for (o, t) in tile.chunks_exact_mut(nz).enumerate() {
                            let k = &kernels[(o * n_src + s) * KERNEL_VOLUME + a * 9 + b * 3..][..3];
                            let (k0, k1, k2) = (k[0], k[1], k[2]);
                            for (((t, &q0), &q1), &q2) in t.iter_mut().zip(p0).zip(p1).zip(p2) {
                                *t += k0 * q0 + k1 * q1 + k2 * q2;
                            }
                        }
                    }
                }
            }
            for o in 0..n_dst {
                dst[o * v + row..o * v + row + nz].copy_from_slice(&tile[o * nz..(o + 1) * nz]);
            }
        }
    }
}

/// `acc[o][s][k] += sum_p grad[o][p] * src[s][p + offset(k)]`.
///
/// Row sums are accumulated in `LANES` independent partial sums combined
/// in a fixed order, which lets the inner loop vectorize while keeping the
/// result independent of the hardware. Rows are visited in order, so each
/// weight's gradient is summed the same way whatever the block size.
fn weight_grad_block(src_pad: &[f64], n_src: usize, grad: &[f64], d: Dims, acc: &mut [f64]) {
    const LANES: usize = 8;
    let (v, pv) = (d.volume(), d.padded_volume());
    let (py, pz, nz) = (d.y + 2, d.z + 2, d.z);
    let full = nz / LANES * LANES;
    let n_dst = grad.len() / v;
    for x in 0..d.x {
        for y in 0..d.y {
            let row = (x * d.y + y) * nz;
            for s in 0..n_src {
                let src = &src_pad[s * pv..(s + 1) * pv];
                for a in 0..3 {
                    for b in 0..3 {
                        let base = ((x + a) * py + (y + b)) * pz;
                        let prow = &src[base..base + pz];
                        for o in 0..n_dst {
                            let grow = &grad[o * v + row..o * v + row + nz];
                            let mut lanes = [[0.0; LANES]; 3];
                            for (i, gc) in grow[..full].chunks_exact(LANES).enumerate() {
                                let z0 = i * LANES;
                                for (c, lane) in lanes.iter_mut().enumerate() {
                                    let pc = &prow[z0 + c..z0 + c + LANES];
                                    for l in 0..LANES {
                                        lane[l] += gc[l] * pc[l];
                                    }
                                }
                            }
                            let k = (o * n_src + s) * KERNEL_VOLUME + a * 9 + b * 3;
                            for (c, lane) in lanes.iter().enumerate() {
                                let mut sum = lane.iter().sum::<f64>();
                                for z in full..nz {
                                    sum += grow[z] * prow[z + c];
                                }
                                acc[k + c] += sum;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_dims(op: &'static str, input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, Dims)> {
    input.expect_rank(op, 5)?;
    kernels.expect_rank(op, 5)?;
    let s = input.shape();
    let k = kernels.shape();
    if k[2..] != [3, 3, 3] {
        return Err(Error::dim(op, "kernel size", 3, k[2]));
    }
    if k[1] != s[1] {
        return Err(Error::dim(op, "in_channels", k[1], s[1]));
    }
    if bias.shape() != [k[0]] {
        return Err(Error::dim(op, "out_channels", k[0], bias.len()));
    }
    Ok((s[0], s[1], k[0], Dims { x: s[2], y: s[3], z: s[4] }))
}

/// Cross-correlation with a 3×3×3 kernel, stride 1, zero padding of one
/// voxel on every face. Spatial dimensions are preserved.
pub fn conv3d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, c_in, c_out, d) = conv_dims("conv3d_forward", input, kernels, bias)?;
    let v = d.volume();
    let x = input.data();
    let w = kernels.data();
    let mut out = vec![0.0; batch * c_out * v];
    for b in 0..batch {
        let padded = pad_all(&x[b * c_in * v..(b + 1) * c_in * v], c_in, d);
        out[b * c_out * v..(b + 1) * c_out * v]
            .par_chunks_mut(CHANNEL_BLOCK * v)
            .enumerate()
            .for_each(|(blk, dst)| {
                let co0 = blk * CHANNEL_BLOCK;
                let n = dst.len() / v;
                for (o, ch) in dst.chunks_exact_mut(v).enumerate() {
                    ch.iter_mut().for_each(|e| *e = bias.data()[co0 + o]);
                }
                let k = &w[co0 * c_in * KERNEL_VOLUME..(co0 + n) * c_in * KERNEL_VOLUME];
                correlate_block(&padded, c_in, k, d, dst);
            });
    }
    Tensor::new(&[batch, c_out, d.x, d.y, d.z], out)
}

/// Returns `(grad_input, grad_kernels, grad_bias)`.
pub fn conv3d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let c_out = kernels.shape()[0];
    let bias = Tensor::zeros(&[c_out]);
    let (batch, c_in, _, d) = conv_dims("conv3d_backward", input, kernels, &bias)?;
    let v = d.volume();
    let (x, w, g) = (input.data(), kernels.data(), grad_out.data());

    // The input gradient is a correlation of the padded output gradient
    // with the spatially reversed kernels, indexed `[ci][co][27]`.
    let mut flipped = vec![0.0; w.len()];
    for co in 0..c_out {
        for ci in 0..c_in {
            let src = &w[(co * c_in + ci) * KERNEL_VOLUME..(co * c_in + ci + 1) * KERNEL_VOLUME];
            let dst = &mut flipped[(ci * c_out + co) * KERNEL_VOLUME..(ci * c_out + co + 1) * KERNEL_VOLUME];
            for (k, o) in dst.iter_mut().enumerate() {
                *o = src[KERNEL_VOLUME - 1 - k];
            }
        }
    }

    let mut grad_in = vec![0.0; batch * c_in * v];
    let mut grad_w = vec![0.0; w.len()];
    for b in 0..batch {
        let g_b = &g[b * c_out * v..(b + 1) * c_out * v];
        let g_pad = pad_all(g_b, c_out, d);
        grad_in[b * c_in * v..(b + 1) * c_in * v]
            .par_chunks_mut(CHANNEL_BLOCK * v)
            .enumerate()
            .for_each(|(blk, dst)| {
                let ci0 = blk * CHANNEL_BLOCK;
                let n = dst.len() / v;
                let k = &flipped[ci0 * c_out * KERNEL_VOLUME..(ci0 + n) * c_out * KERNEL_VOLUME];
                correlate_block(&g_pad, c_out, k, d, dst);
            });
        let padded_in = pad_all(&x[b * c_in * v..(b + 1) * c_in * v], c_in, d);
        grad_w
            .par_chunks_mut(CHANNEL_BLOCK * c_in * KERNEL_VOLUME)
            .enumerate()
            .for_each(|(blk, acc)| {
                let co0 = blk * CHANNEL_BLOCK;
                let n = acc.len() / (c_in * KERNEL_VOLUME);
                weight_grad_block(&padded_in, c_in, &g_b[co0 * v..(co0 + n) * v], d, acc);
            });
    }

    let mut grad_b = vec![0.0; c_out];
    for b in 0..batch {
        for (co, gb) in grad_b.iter_mut().enumerate() {
            *gb += g[(b * c_out + co) * v..(b * c_out + co + 1) * v].iter().sum::<f64>();
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

// ---------------------------------------------------------------------------
// Trilinear upsampling, scale 2, half-pixel sample positions
// ---------------------------------------------------------------------------

/// Doubles axis of length `n` in a `[outer, n, inner]` view.
///
/// With half-pixel centres, output `2i` samples source position `i - 1/4`
/// and `2i + 1` samples `i + 1/4`; positions are clamped to the edge.
fn upsample_axis(src: &[f64], outer: usize, n: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; outer * 2 * n * inner];
    for o in 0..outer {
        let s = &src[o * n * inner..(o + 1) * n * inner];
        let d = &mut out[o * 2 * n * inner..(o + 1) * 2 * n * inner];
        for i in 0..n {
            let here = &s[i * inner..(i + 1) * inner];
            let lo = &s[i.saturating_sub(1) * inner..(i.saturating_sub(1) + 1) * inner];
            let hi_i = (i + 1).min(n - 1);
            let hi = &s[hi_i * inner..(hi_i + 1) * inner];
            let (even, odd) = d[2 * i * inner..(2 * i + 2) * inner].split_at_mut(inner);
            for j in 0..inner {
                even[j] = here[j] + 0.25 * (lo[j] - here[j]);
                odd[j] = here[j] + 0.25 * (hi[j] - here[j]);
            }
        }
    }
    out
}

/// Transpose of [`upsample_axis`].
fn upsample_axis_backward(grad: &[f64], outer: usize, n: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        let g = &grad[o * 2 * n * inner..(o + 1) * 2 * n * inner];
        let d = &mut out[o * n * inner..(o + 1) * n * inner];
        for i in 0..n {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            for j in 0..inner {
                let ge = g[2 * i * inner + j];
                let go = g[(2 * i + 1) * inner + j];
                d[i * inner + j] += 0.75 * ge + 0.75 * go;
                d[lo * inner + j] += 0.25 * ge;
                d[hi * inner + j] += 0.25 * go;
            }
        }
    }
    out
}

pub fn upsample_trilinear_forward(input: &Tensor) -> Result<Tensor> {
    input.expect_rank("upsample_trilinear", 5)?;
    let s = input.shape();
    let (bc, x, y, z) = (s[0] * s[1], s[2], s[3], s[4]);
    let a = upsample_axis(input.data(), bc, x, y * z);
    let a = upsample_axis(&a, bc * 2 * x, y, z);
    let a = upsample_axis(&a, bc * 4 * x * y, z, 1);
    Tensor::new(&[s[0], s[1], 2 * x, 2 * y, 2 * z], a)
}

/// Gradient with respect to the input, given `input_shape` `[b, c, x, y, z]`.
pub fn upsample_trilinear_backward(input_shape: &[usize], grad_out: &Tensor) -> Vec<f64> {
    let (bc, x, y, z) = (
        input_shape[0] * input_shape[1],
        input_shape[2],
        input_shape[3],
        input_shape[4],
    );
    let g = upsample_axis_backward(grad_out.data(), bc * 4 * x * y, z, 1);
    let g = upsample_axis_backward(&g, bc * 2 * x, y, z);
    upsample_axis_backward(&g, bc, x, y * z)
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

pub fn leaky_relu(input: &Tensor, slope: f64) -> Tensor {
    map(input, |x| if x >= 0.0 { x } else { slope * x })
}

pub fn valved_leaky_relu(input: &Tensor, slope: f64, mode: Mode) -> Tensor {
    match mode {
        Mode::Train => leaky_relu(input, slope),
        Mode::Eval => map(input, |x| x.max(0.0)),
    }
}

/// Gradient of the leaky activation given its input.
pub fn leaky_relu_backward(input: &Tensor, slope: f64, grad_out: &Tensor) -> Vec<f64> {
    input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
        .collect()
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    map(input, sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient of the sigmoid given its output.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Vec<f64> {
    output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * y * (1.0 - y))
        .collect()
}

fn map(input: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: input.shape().to_vec(),
        data: input.data().iter().map(|&x| f(x)).collect(),
        grad: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn fc_identity_weights() {
        let out = fc_forward(&t(&[1, 2], &[1., 2.]), &t(&[2, 2], &[1., 0., 0., 1.]), &t(&[2], &[0., 0.])).unwrap();
        assert_eq!(out.data(), &[1., 2.]);
    }

    #[test]
    fn fc_hand_multiply() {
        let out = fc_forward(&t(&[1, 2], &[1., 1.]), &t(&[2, 2], &[2., 3., 4., 5.]), &t(&[2], &[1., 1.])).unwrap();
        assert_eq!(out.data(), &[7., 9.]);
    }

    #[test]
    fn fc_zero_input_passes_bias() {
        let out = fc_forward(&t(&[1, 2], &[0., 0.]), &t(&[2, 2], &[9., -3., 0.5, 2.]), &t(&[2], &[5., -5.])).unwrap();
        assert_eq!(out.data(), &[5., -5.]);
    }

    #[test]
    fn fc_shape_error_names_axis() {
        let err = fc_forward(&t(&[1, 3], &[1., 1., 1.]), &t(&[2, 2], &[0.; 4]), &t(&[2], &[0.; 2])).unwrap_err();
        assert!(err.to_string().contains("in_features"), "{err}");
    }

    #[test]
    fn conv_identity_kernel() {
        let input = t(&[1, 1, 2, 3, 4], &(0..24).map(|v| v as f64 * 0.5 - 3.0).collect::<Vec<_>>());
        let mut k = vec![0.0; 27];
        k[13] = 1.0;
        let out = conv3d_forward(&input, &t(&[1, 1, 3, 3, 3], &k), &t(&[1], &[0.])).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_all_ones_window_sums() {
        let out = conv3d_forward(&Tensor::full(&[1, 1, 3, 3, 3], 1.0), &Tensor::full(&[1, 1, 3, 3, 3], 1.0), &t(&[1], &[0.])).unwrap();
        // Center sees the whole 27-voxel window, a corner sees a 2x2x2 block.
        assert_eq!(out.data()[13], 27.0);
        assert_eq!(out.data()[0], 8.0);
        assert_eq!(out.data()[26], 8.0);
    }

    #[test]
    fn conv_zero_kernel_gives_bias() {
        let input = Tensor::full(&[2, 3, 2, 2, 2], 4.0);
        let out = conv3d_forward(&input, &Tensor::zeros(&[2, 3, 3, 3, 3]), &t(&[2], &[1.5, 1.5])).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.5));
        assert_eq!(out.shape(), &[2, 2, 2, 2, 2]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let err = conv3d_forward(&Tensor::zeros(&[1, 2, 2, 2, 2]), &Tensor::zeros(&[1, 3, 3, 3, 3]), &Tensor::zeros(&[1])).unwrap_err();
        assert!(err.to_string().contains("in_channels"));
    }

    #[test]
    fn upsample_constant() {
        let out = upsample_trilinear_forward(&Tensor::full(&[1, 2, 2, 3, 1], 0.7)).unwrap();
        assert_eq!(out.shape(), &[1, 2, 4, 6, 2]);
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn upsample_ramp_along_x() {
        let out = upsample_trilinear_forward(&t(&[1, 1, 2, 1, 1], &[0., 1.])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4, 2, 2]);
        // y and z are constant; look at the x profile.
        let profile: Vec<f64> = (0..4).map(|x| out.data()[x * 4]).collect();
        assert_eq!(profile, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn upsample_single_voxel() {
        let out = upsample_trilinear_forward(&t(&[1, 1, 1, 1, 1], &[-2.5])).unwrap();
        assert_eq!(out.data(), &[-2.5; 8]);
    }

    #[test]
    fn activations() {
        let x = t(&[3], &[-2., 3., 0.]);
        assert_eq!(leaky_relu(&x, 0.01).data(), &[-0.02, 3., 0.]);
        assert_eq!(valved_leaky_relu(&x, 0.01, Mode::Train).data(), &[-0.02, 3., 0.]);
        assert_eq!(valved_leaky_relu(&x, 0.01, Mode::Eval).data(), &[0., 3., 0.]);
    }

    #[test]
    fn sigmoid_values() {
        let y = sigmoid(&t(&[3], &[0., 10., 1.]));
        assert_eq!(y.data()[0], 0.5);
        assert!(y.data()[1] > 0.999);
        assert!((y.data()[2] - 0.7310585786).abs() < 1e-10);
        let y = sigmoid(&t(&[2], &[-800., 800.]));
        assert!(y.all_finite());
    }

    #[test]
    fn shape_law() {
        let up = LayerSpec::TrilinearUpsample;
        let mut shape = vec![2, 8, 3, 2, 1];
        for _ in 0..3 {
            shape = up.output_shape(&shape).unwrap();
        }
        assert_eq!(shape, vec![2, 8, 24, 16, 8]);
        let conv = LayerSpec::Conv3d { in_channels: 8, out_channels: 4 };
        assert_eq!(conv.output_shape(&shape).unwrap(), vec![2, 4, 24, 16, 8]);
    }
}
