//! Float operators of the network and their reverse-mode counterparts.
//!
//! All convolutions are stride 1 with "same" zero padding, so the spatial size
//! of the output equals the input. [`conv2d_direct`] is the nested-loop
//! reference; [`conv2d`] gathers patches (im2col) and runs a row-major matrix
//! product with the same per-output summation order.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Convolution kernel `(out, in, kh, kw)` plus per-output bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<F> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    /// Index `((o * in + c) * kh + i) * kw + j`.
    pub kernel: Vec<F>,
    pub bias: Vec<F>,
    /// Non-trainable weights are skipped by the optimizer and get no gradient.
    pub trainable: bool,
}

impl<F: Real> ConvWeights<F> {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        kernel: Vec<F>,
        bias: Vec<F>,
        trainable: bool,
    ) -> Result<Self> {
        if !matches!(kh, 1 | 3) || !matches!(kw, 1 | 3) {
            return Err(invalid!("kernel size must be 1 or 3, got {}x{}", kh, kw));
        }
        if out_channels == 0 || in_channels == 0 {
            return Err(invalid!("convolution channel counts must be >= 1"));
        }
        if kernel.len() != out_channels * in_channels * kh * kw {
            return Err(invalid!(
                "kernel length {} does not match {}x{}x{}x{}",
                kernel.len(),
                out_channels,
                in_channels,
                kh,
                kw
            ));
        }
        if bias.len() != out_channels {
            return Err(invalid!(
                "bias length {} != out_channels {}",
                bias.len(),
                out_channels
            ));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kh,
            kw,
            kernel,
            bias,
            trainable,
        })
    }

    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        k: usize,
        trainable: bool,
    ) -> Result<Self> {
        Self::new(
            out_channels,
            in_channels,
            k,
            k,
            vec![F::zero(); out_channels * in_channels * k * k],
            vec![F::zero(); out_channels],
            trainable,
        )
    }

    /// Kernel that copies input channel `o` to output channel `o` (centre tap
    /// for 3x3), with zero bias.
    pub fn identity(channels: usize, k: usize) -> Result<Self> {
        let mut w = Self::zeros(channels, channels, k, true)?;
        let centre = k / 2;
        for o in 0..channels {
            let idx = w.kernel_index(o, o, centre, centre);
            w.kernel[idx] = F::one();
        }
        Ok(w)
    }

    #[inline]
    pub fn kernel_index(&self, o: usize, c: usize, i: usize, j: usize) -> usize {
        ((o * self.in_channels + c) * self.kh + i) * self.kw + j
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    /// Multiply-accumulates per output pixel.
    pub fn macs_per_pixel(&self) -> usize {
        self.kernel.len()
    }

    pub fn cast<G: Real>(&self) -> ConvWeights<G> {
        ConvWeights {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kh: self.kh,
            kw: self.kw,
            kernel: self
                .kernel
                .iter()
                .map(|&v| G::from_f64(v.to_f64()))
                .collect(),
            bias: self.bias.iter().map(|&v| G::from_f64(v.to_f64())).collect(),
            trainable: self.trainable,
        }
    }

    fn check_input(&self, x: Shape) -> Result<()> {
        if x.c != self.in_channels {
            return Err(invalid!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.c
            ));
        }
        Ok(())
    }

    /// Kernel transposed to `[k][o]` with `k = (c * kh + i) * kw + j`.
    fn transposed(&self) -> Vec<F> {
        let k_len = self.in_channels * self.kh * self.kw;
        let mut t = vec![F::zero(); self.kernel.len()];
        for o in 0..self.out_channels {
            for k in 0..k_len {
                t[k * self.out_channels + o] = self.kernel[o * k_len + k];
            }
        }
        t
    }
}

/// Reference convolution: nested loops over every output element.
pub fn conv2d_direct<F: Real>(x: &Tensor<F>, w: &ConvWeights<F>) -> Result<Tensor<F>> {
    let s = x.shape();
    w.check_input(s)?;
    let (ph, pw) = (w.kh / 2, w.kw / 2);
    let out_shape = s.with_c(w.out_channels);
    let mut out = Vec::with_capacity(out_shape.len());
    for n in 0..s.n {
        for y in 0..s.h {
            for xx in 0..s.w {
                for o in 0..w.out_channels {
                    let mut acc = w.bias[o];
                    for c in 0..s.c {
                        for i in 0..w.kh {
                            for j in 0..w.kw {
                                let sy = y as isize + i as isize - ph as isize;
                                let sx = xx as isize + j as isize - pw as isize;
                                if sy < 0 || sx < 0 || sy >= s.h as isize || sx >= s.w as isize {
                                    continue;
                                }
                                acc += x.get(n, sy as usize, sx as usize, c)
                                    * w.kernel[w.kernel_index(o, c, i, j)];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Patch matrix `[pixels][c * kh * kw]`, zero outside the image.
fn im2col<F: Real>(x: &Tensor<F>, kh: usize, kw: usize) -> Vec<F> {
    let s = x.shape();
    let k_len = s.c * kh * kw;
    let (ph, pw) = (kh / 2, kw / 2);
    let mut patches = vec![F::zero(); s.pixels() * k_len];
    let data = x.data();
    for n in 0..s.n {
        for y in 0..s.h {
            for xx in 0..s.w {
                let p = (n * s.h + y) * s.w + xx;
                let row = &mut patches[p * k_len..(p + 1) * k_len];
                for i in 0..kh {
                    let sy = y as isize + i as isize - ph as isize;
                    if sy < 0 || sy >= s.h as isize {
                        continue;
                    }
                    for j in 0..kw {
                        let sx = xx as isize + j as isize - pw as isize;
                        if sx < 0 || sx >= s.w as isize {
                            continue;
                        }
                        let src = s.index(n, sy as usize, sx as usize, 0);
                        for c in 0..s.c {
                            row[(c * kh + i) * kw + j] = data[src + c];
                        }
                    }
                }
            }
        }
    }
    patches
}

/// Scatter-add of a patch-gradient matrix back onto the input grid.
fn col2im<F: Real>(cols: &[F], s: Shape, kh: usize, kw: usize) -> Vec<F> {
    let k_len = s.c * kh * kw;
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![F::zero(); s.len()];
    for n in 0..s.n {
        for y in 0..s.h {
            for xx in 0..s.w {
                let p = (n * s.h + y) * s.w + xx;
                let row = &cols[p * k_len..(p + 1) * k_len];
                for i in 0..kh {
                    let sy = y as isize + i as isize - ph as isize;
                    if sy < 0 || sy >= s.h as isize {
                        continue;
                    }
                    for j in 0..kw {
                        let sx = xx as isize + j as isize - pw as isize;
                        if sx < 0 || sx >= s.w as isize {
                            continue;
                        }
                        let dst = s.index(n, sy as usize, sx as usize, 0);
                        for c in 0..s.c {
                            out[dst + c] += row[(c * kh + i) * kw + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Optimized convolution. Every output accumulates `bias + sum_k patch * w`
/// in the same `(c, i, j)` order as [`conv2d_direct`].
pub fn conv2d<F: Real>(x: &Tensor<F>, w: &ConvWeights<F>) -> Result<Tensor<F>> {
    let s = x.shape();
    w.check_input(s)?;
    let k_len = s.c * w.kh * w.kw;
    let gathered;
    let patches: &[F] = if w.kh == 1 && w.kw == 1 {
        x.data()
    } else {
        gathered = im2col(x, w.kh, w.kw);
        &gathered
    };
    let wt = w.transposed();
    let o_len = w.out_channels;
    let mut out = vec![F::zero(); s.pixels() * o_len];
    for (p, row) in out.chunks_exact_mut(o_len).enumerate() {
        row.copy_from_slice(&w.bias);
        let patch = &patches[p * k_len..(p + 1) * k_len];
        for (k, &v) in patch.iter().enumerate() {
            let wrow = &wt[k * o_len..(k + 1) * o_len];
            for (acc, &wv) in row.iter_mut().zip(wrow) {
                *acc += v * wv;
            }
        }
    }
    Ok(Tensor::from_parts(s.with_c(o_len), out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<F> {
    pub kernel: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> ConvGrads<F> {
    pub fn zeros_like(w: &ConvWeights<F>) -> Self {
        Self {
            kernel: vec![F::zero(); w.kernel.len()],
            bias: vec![F::zero(); w.bias.len()],
        }
    }
}

/// Input gradient and weight gradients, each present only when requested.
pub type ConvBackward<F> = (Option<Tensor<F>>, Option<ConvGrads<F>>);

/// Reverse mode of [`conv2d`]: the input gradient when `input_grad` is set
/// and the kernel and bias gradients when `weight_grads` is set.
pub fn conv2d_backward<F: Real>(
    x: &Tensor<F>,
    w: &ConvWeights<F>,
    grad_out: &Tensor<F>,
    input_grad: bool,
    weight_grads: bool,
) -> Result<ConvBackward<F>> {
    let s = x.shape();
    w.check_input(s)?;
    if grad_out.shape() != s.with_c(w.out_channels) {
        return Err(invalid!(
            "conv backward: upstream gradient {:?} does not match output {:?}",
            grad_out.shape(),
            s.with_c(w.out_channels)
        ));
    }
    let k_len = s.c * w.kh * w.kw;
    let o_len = w.out_channels;
    let pointwise = w.kh == 1 && w.kw == 1;
    let gathered;
    let patches: &[F] = if pointwise {
        x.data()
    } else {
        gathered = im2col(x, w.kh, w.kw);
        &gathered
    };
    let g = grad_out.data();

    let grads = weight_grads.then(|| {
        let mut gwt = vec![F::zero(); k_len * o_len];
        let mut gb = vec![F::zero(); o_len];
        for (p, grow) in g.chunks_exact(o_len).enumerate() {
            for (b, &gv) in gb.iter_mut().zip(grow) {
                *b += gv;
            }
            let patch = &patches[p * k_len..(p + 1) * k_len];
            for (k, &v) in patch.iter().enumerate() {
                let dst = &mut gwt[k * o_len..(k + 1) * o_len];
                for (d, &gv) in dst.iter_mut().zip(grow) {
                    *d += v * gv;
                }
            }
        }
        let mut kernel = vec![F::zero(); k_len * o_len];
        for k in 0..k_len {
            for o in 0..o_len {
                kernel[o * k_len + k] = gwt[k * o_len + o];
            }
        }
        ConvGrads { kernel, bias: gb }
    });

    if !input_grad {
        return Ok((None, grads));
    }
    let wt = w.transposed();
    let mut gcols = vec![F::zero(); s.pixels() * k_len];
    for (p, grow) in g.chunks_exact(o_len).enumerate() {
        let dst = &mut gcols[p * k_len..(p + 1) * k_len];
        for (k, d) in dst.iter_mut().enumerate() {
            let wrow = &wt[k * o_len..(k + 1) * o_len];
            let mut acc = F::zero();
            for (&gv, &wv) in grow.iter().zip(wrow) {
                acc += gv * wv;
            }
            *d = acc;
        }
    }
    let grad_in = if pointwise {
        gcols
    } else {
        col2im(&gcols, s, w.kh, w.kw)
    };
    Ok((Some(Tensor::from_parts(s, grad_in)), grads))
}

/// Heterogeneous group convolution: split channels by branch size, convolve
/// each part with its own weights and concatenate in branch order.
pub fn hetero_group_conv<F: Real>(
    x: &Tensor<F>,
    branches: &[(usize, &ConvWeights<F>)],
) -> Result<Tensor<F>> {
    let sizes: Vec<usize> = branches.iter().map(|(c, _)| *c).collect();
    let parts = x.channel_split(&sizes)?;
    let mut outs = Vec::with_capacity(parts.len());
    for (part, (c, w)) in parts.iter().zip(branches) {
        if w.in_channels != *c || w.out_channels != *c {
            return Err(invalid!(
                "branch of {} channels has weights {}->{}",
                c,
                w.in_channels,
                w.out_channels
            ));
        }
        outs.push(conv2d(part, w)?);
    }
    Tensor::channel_concat(&outs)
}

/// `out[n, h*r + i, w*r + j, c] = in[n, h, w, (i*r + j) * (C/r^2) + c]`.
pub fn depth_to_space<T: Copy>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(invalid!(
            "depth_to_space: {} channels not divisible by {}^2",
            s.c,
            r
        ));
    }
    let oc = s.c / (r * r);
    let out = Shape::new(s.n, s.h * r, s.w * r, oc);
    let src = x.data();
    let mut data = Vec::with_capacity(out.len());
    for n in 0..s.n {
        for oy in 0..out.h {
            let (h, i) = (oy / r, oy % r);
            for ox in 0..out.w {
                let (w, j) = (ox / r, ox % r);
                let base = s.index(n, h, w, (i * r + j) * oc);
                data.extend_from_slice(&src[base..base + oc]);
            }
        }
    }
    Ok(Tensor::from_parts(out, data))
}

/// Inverse permutation of [`depth_to_space`].
pub fn space_to_depth<T: Copy>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(invalid!(
            "space_to_depth: {}x{} not divisible by {}",
            s.h,
            s.w,
            r
        ));
    }
    let out = Shape::new(s.n, s.h / r, s.w / r, s.c * r * r);
    let mut data = Vec::with_capacity(out.len());
    for n in 0..out.n {
        for h in 0..out.h {
            for w in 0..out.w {
                for i in 0..r {
                    for j in 0..r {
                        data.extend_from_slice(x.pixel(n, h * r + i, w * r + j));
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(out, data))
}

pub fn relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient of ReLU given its pre-activation input.
pub fn relu_backward<F: Real>(pre: &Tensor<F>, grad: &Tensor<F>) -> Result<Tensor<F>> {
    pre.zip_map(grad, |p, g| if p > F::zero() { g } else { F::zero() })
}

/// `min(max(x, lo), hi)` elementwise. Requires `lo < hi`.
pub fn clipped_relu<F: Real>(x: &Tensor<F>, lo: F, hi: F) -> Tensor<F> {
    debug_assert!(lo < hi);
    x.map(|v| v.max(lo).min(hi))
}

/// Gradient of [`clipped_relu`]; passes where `lo < x < hi`.
pub fn clipped_relu_backward<F: Real>(
    pre: &Tensor<F>,
    grad: &Tensor<F>,
    lo: F,
    hi: F,
) -> Result<Tensor<F>> {
    pre.zip_map(grad, |p, g| if p > lo && p < hi { g } else { F::zero() })
}

pub fn add<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    a.zip_map(b, |x, y| x + y)
}

/// Nearest-neighbour upsampling: `out[n, y, x, c] = in[n, y / r, x / r, c]`.
pub fn nearest_upsample_reference<T: Copy>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r == 0 {
        return Err(invalid!("upsampling factor must be >= 1"));
    }
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.h * r, s.w * r, s.c), |n, y, xx, c| {
        x.get(n, y / r, xx / r, c)
    })
}
