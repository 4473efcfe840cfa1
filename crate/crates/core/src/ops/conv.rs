//! 2-D convolution with zero padding, lowered to im2col + GEMM.

use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Stride and zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize) -> Self {
        ConvGeometry { stride, padding }
    }

    /// Stride 1 with "same" padding for an odd kernel.
    pub const fn same(k: usize) -> Self {
        ConvGeometry {
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn output_len(&self, len: usize, k: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if self.stride == 0 || padded < k {
            None
        } else {
            Some((padded - k) / self.stride + 1)
        }
    }
}

/// Weight `(out_ch, in_ch, k, k)`, bias `(out_ch, 1, 1, 1)`, geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geometry: ConvGeometry,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, geometry: ConvGeometry) -> Result<Self> {
        let ws = weight.shape();
        if ws.h != ws.w || ws.h % 2 == 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel must be square and odd, got {}x{}", ws.h, ws.w),
            ));
        }
        ensure_dim("conv2d", "bias length", ws.n, bias.numel())?;
        if geometry.stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        Ok(ConvParams {
            weight,
            bias,
            geometry,
        })
    }

    /// Zero-mean uniform fan-in initialization, bias zero.
    ///
    /// `gain` scales the bound `sqrt(3 / fan_in)`; use 1 for linear
    /// outputs and `sqrt(2)` ahead of a rectifier.
    pub fn init<R: Rng>(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        geometry: ConvGeometry,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * k * k) as f64;
        let bound = gain * (3.0 / fan_in).sqrt();
        let weight = Tensor::from_fn(Shape::new(out_ch, in_ch, k, k), |_, _, _, _| {
            T::lit(rng.gen_range(-bound..bound))
        });
        ConvParams {
            weight,
            bias: Tensor::zeros(Shape::new(out_ch, 1, 1, 1)),
            geometry,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape().h
    }
}

/// Shape of `conv2d(input, weight)`; errors name the offending dimension.
pub fn conv2d_output_shape(input: Shape, weight: Shape, geometry: ConvGeometry) -> Result<Shape> {
    ensure_dim("conv2d", "input channels", weight.c, input.c)?;
    if weight.h != weight.w || weight.h % 2 == 0 {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel must be square and odd, got {}x{}", weight.h, weight.w),
        ));
    }
    let oh = geometry.output_len(input.h, weight.h).ok_or_else(|| {
        Error::invalid("conv2d", format!("height {} too small for kernel {}", input.h, weight.h))
    })?;
    let ow = geometry.output_len(input.w, weight.w).ok_or_else(|| {
        Error::invalid("conv2d", format!("width {} too small for kernel {}", input.w, weight.w))
    })?;
    Ok(Shape::new(input.n, weight.n, oh, ow))
}

fn is_pointwise(weight: Shape, geometry: ConvGeometry) -> bool {
    weight.h == 1 && geometry.stride == 1 && geometry.padding == 0
}

/// Writes the `(in_ch * k * k, oh * ow)` patch matrix of one sample.
fn im2col<T: Scalar>(
    sample: &[T],
    in_shape: Shape,
    k: usize,
    geometry: ConvGeometry,
    out: Shape,
    col: &mut [T],
) {
    let (h, w) = (in_shape.h, in_shape.w);
    let p = out.h * out.w;
    let pad = geometry.padding as isize;
    let stride = geometry.stride;
    for ic in 0..in_shape.c {
        let plane = &sample[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ic * k + ky) * k + kx) * p..][..p];
                for oy in 0..out.h {
                    let iy = (oy * stride + ky) as isize - pad;
                    let dst = &mut row[oy * out.w..(oy + 1) * out.w];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch matrix back onto a sample (adjoint of [`im2col`]).
fn col2im<T: Scalar>(
    col: &[T],
    in_shape: Shape,
    k: usize,
    geometry: ConvGeometry,
    out: Shape,
    sample: &mut [T],
) {
    let (h, w) = (in_shape.h, in_shape.w);
    let p = out.h * out.w;
    let pad = geometry.padding as isize;
    let stride = geometry.stride;
    for ic in 0..in_shape.c {
        let plane = &mut sample[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ic * k + ky) * k + kx) * p..][..p];
                for oy in 0..out.h {
                    let iy = (oy * stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &g) in row[oy * out.w..(oy + 1) * out.w].iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + g;
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded 2-D convolution (cross-correlation) plus per-channel bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geometry: ConvGeometry,
) -> Result<Tensor<T>> {
    let in_shape = input.shape();
    let ws = weight.shape();
    let out_shape = conv2d_output_shape(in_shape, ws, geometry)?;
    ensure_dim("conv2d", "bias length", ws.n, bias.numel())?;
    let k = ws.h;
    let p = out_shape.h * out_shape.w;
    let kdim = ws.c * k * k;
    let mut out = Tensor::zeros(out_shape);
    let pointwise = is_pointwise(ws, geometry);
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); kdim * p] };
    for n in 0..in_shape.n {
        let dst = out.sample_mut(n);
        for (oc, &b) in bias.data().iter().enumerate() {
            dst[oc * p..(oc + 1) * p].fill(b);
        }
        let src: &[T] = if pointwise {
            input.sample(n)
        } else {
            im2col(input.sample(n), in_shape, k, geometry, out_shape, &mut col);
            &col
        };
        T::gemm(
            ws.n,
            kdim,
            p,
            T::one(),
            weight.data(),
            kdim as isize,
            1,
            src,
            p as isize,
            1,
            T::one(),
            dst,
            p as isize,
            1,
        );
    }
    Ok(out)
}

pub fn conv2d_with<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d(input, &params.weight, &params.bias, params.geometry)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    geometry: ConvGeometry,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let in_shape = input.shape();
    let ws = weight.shape();
    let out_shape = conv2d_output_shape(in_shape, ws, geometry)?;
    grad_out.ensure_same_shape(&Tensor::zeros(out_shape), "conv2d_backward")?;
    let k = ws.h;
    let p = out_shape.h * out_shape.w;
    let kdim = ws.c * k * k;
    let pointwise = is_pointwise(ws, geometry);

    let mut grad_in = Tensor::zeros(in_shape);
    let mut grad_w = Tensor::zeros(ws);
    let mut grad_b = Tensor::zeros(Shape::new(ws.n, 1, 1, 1));
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); kdim * p] };
    let mut grad_col = if pointwise { Vec::new() } else { vec![T::zero(); kdim * p] };

    for n in 0..in_shape.n {
        let go = grad_out.sample(n);
        for (oc, gb) in grad_b.data_mut().iter_mut().enumerate() {
            *gb = *gb + go[oc * p..(oc + 1) * p].iter().copied().sum::<T>();
        }
        let src: &[T] = if pointwise {
            input.sample(n)
        } else {
            im2col(input.sample(n), in_shape, k, geometry, out_shape, &mut col);
            &col
        };
        // grad_w (oc x kdim) += grad_out (oc x p) * col^T (p x kdim)
        T::gemm(
            ws.n,
            p,
            kdim,
            T::one(),
            go,
            p as isize,
            1,
            src,
            1,
            p as isize,
            T::one(),
            grad_w.data_mut(),
            kdim as isize,
            1,
        );
        // grad_col (kdim x p) = W^T (kdim x oc) * grad_out (oc x p)
        if pointwise {
            T::gemm(
                kdim,
                ws.n,
                p,
                T::one(),
                weight.data(),
                1,
                kdim as isize,
                go,
                p as isize,
                1,
                T::zero(),
                grad_in.sample_mut(n),
                p as isize,
                1,
            );
        } else {
            T::gemm(
                kdim,
                ws.n,
                p,
                T::one(),
                weight.data(),
                1,
                kdim as isize,
                go,
                p as isize,
                1,
                T::zero(),
                &mut grad_col,
                p as isize,
                1,
            );
            col2im(&grad_col, in_shape, k, geometry, out_shape, grad_in.sample_mut(n));
        }
    }
    Ok((grad_in, grad_w, grad_b))
}
