//! Content-adaptive reassembly: every output position is a weighted sum of
//! its zero-padded k x k neighbourhood, with weights taken from a
//! per-position kernel field shared across all channels.
//!
//! ```text
//! out(n, c, y, x) = sum_{u, v} K(n, u*k + v, y, x) * F(n, c, y + u - k/2, x + v - k/2)
//! ```
//!
//! Two forward paths exist: [`reassemble`] is the direct reference loop,
//! [`reassemble_tiled`] walks contiguous rows so the inner loop vectorizes.
//! Both accumulate taps in the same `(u, v)` order.

use crate::error::{ensure_dim, Error, Result};
use crate::ops::{softmax_per_position, square_root_exact};
use crate::tensor::{Scalar, Shape, Tensor};

/// Largest tolerated deviation of a normalized kernel's tap sum from one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Per-position filter bank `(n, k*k, h, w)`; tap `(u, v)` is channel `u*k + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelField<T> {
    tensor: Tensor<T>,
    k: usize,
    normalized: bool,
}

impl<T: Scalar> KernelField<T> {
    fn window(tensor: &Tensor<T>) -> Result<usize> {
        let c = tensor.shape().c;
        match square_root_exact(c) {
            Some(k) if k % 2 == 1 => Ok(k),
            _ => Err(Error::KernelField(format!(
                "channel count {c} is not the square of an odd window size"
            ))),
        }
    }

    /// Softmax-normalizes raw logits into a kernel field.
    pub fn from_logits(logits: &Tensor<T>) -> Result<Self> {
        let k = Self::window(logits)?;
        Ok(KernelField {
            tensor: softmax_per_position(logits)?,
            k,
            normalized: true,
        })
    }

    /// Wraps weights that are already normalized; validates sums and signs.
    pub fn normalized(tensor: Tensor<T>) -> Result<Self> {
        let k = Self::window(&tensor)?;
        let field = KernelField {
            tensor,
            k,
            normalized: true,
        };
        let dev = field.normalization_error();
        if dev > NORMALIZATION_TOLERANCE || field.min_weight() < 0.0 {
            return Err(Error::KernelField(format!(
                "weights are not normalized (max sum deviation {dev:e}, min weight {:e})",
                field.min_weight()
            )));
        }
        Ok(field)
    }

    /// Wraps arbitrary weights without normalization.
    pub fn unnormalized(tensor: Tensor<T>) -> Result<Self> {
        let k = Self::window(&tensor)?;
        Ok(KernelField {
            tensor,
            k,
            normalized: false,
        })
    }

    /// Centre tap 1, every other tap 0.
    pub fn delta(n: usize, k: usize, h: usize, w: usize) -> Self {
        let centre = (k / 2) * k + k / 2;
        let tensor = Tensor::from_fn(Shape::new(n, k * k, h, w), |_, c, _, _| {
            if c == centre {
                T::one()
            } else {
                T::zero()
            }
        });
        KernelField {
            tensor,
            k,
            normalized: true,
        }
    }

    /// Every tap `1 / k^2`.
    pub fn uniform(n: usize, k: usize, h: usize, w: usize) -> Self {
        let v = T::one() / T::from_usize(k * k).unwrap();
        KernelField {
            tensor: Tensor::full(Shape::new(n, k * k, h, w), v),
            k,
            normalized: true,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    /// Largest `|sum of taps - 1|` over all positions, accumulated in f64.
    pub fn normalization_error(&self) -> f64 {
        let s = self.tensor.shape();
        let p = s.plane();
        let mut worst = 0.0f64;
        for n in 0..s.n {
            let sample = self.tensor.sample(n);
            for i in 0..p {
                let total: f64 = (0..s.c).map(|c| sample[c * p + i].to_f64().unwrap()).sum();
                worst = worst.max((total - 1.0).abs());
            }
        }
        worst
    }

    pub fn min_weight(&self) -> f64 {
        self.tensor
            .data()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.to_f64().unwrap()))
    }
}

fn check_operands<T: Scalar>(features: Shape, kernels: &KernelField<T>) -> Result<()> {
    if !kernels.is_normalized() {
        return Err(Error::KernelField("reassembly requires a normalized kernel field".into()));
    }
    check_raw(features, kernels.tensor().shape())
}

fn check_raw(features: Shape, kernels: Shape) -> Result<()> {
    ensure_dim("reassemble", "batch", features.n, kernels.n)?;
    ensure_dim("reassemble", "height", features.h, kernels.h)?;
    ensure_dim("reassemble", "width", features.w, kernels.w)?;
    match square_root_exact(kernels.c) {
        Some(k) if k % 2 == 1 => Ok(()),
        _ => Err(Error::KernelField(format!(
            "kernel channel count {} is not an odd square",
            kernels.c
        ))),
    }
}

/// Reference implementation: one direct loop per output element.
pub fn reassemble<T: Scalar>(features: &Tensor<T>, kernels: &KernelField<T>) -> Result<Tensor<T>> {
    check_operands(features.shape(), kernels)?;
    let fs = features.shape();
    let k = kernels.k();
    let r = (k / 2) as isize;
    let kt = kernels.tensor();
    Ok(Tensor::from_fn(fs, |n, c, y, x| {
        let mut acc = T::zero();
        for u in 0..k {
            for v in 0..k {
                let sy = y as isize + u as isize - r;
                let sx = x as isize + v as isize - r;
                if sy >= 0 && sx >= 0 && (sy as usize) < fs.h && (sx as usize) < fs.w {
                    acc = acc + kt.get(n, u * k + v, y, x) * features.get(n, c, sy as usize, sx as usize);
                }
            }
        }
        acc
    }))
}

/// Reassembly of a mask field (`d` channels) under a kernel field.
///
/// Same operation as [`reassemble`]: each scalar tap weight multiplies the
/// whole `d`-vector at that neighbour.
pub fn reassemble_vector<T: Scalar>(mask_field: &Tensor<T>, kernels: &KernelField<T>) -> Result<Tensor<T>> {
    reassemble(mask_field, kernels)
}

/// Row-tiled reassembly; agrees with [`reassemble`] to rounding.
pub fn reassemble_tiled<T: Scalar>(features: &Tensor<T>, kernels: &KernelField<T>) -> Result<Tensor<T>> {
    check_operands(features.shape(), kernels)?;
    Ok(reassemble_rows(features, kernels.tensor()))
}

/// Valid output column range `[x0, x1)` for a horizontal tap offset.
#[inline]
fn column_span(w: usize, dx: isize) -> (usize, usize) {
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx.max(0)).max(0) as usize;
    (x0.min(w), x1)
}

/// Bilinear reassembly without normalization checks, for the tape.
pub(crate) fn reassemble_unchecked<T: Scalar>(features: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    check_raw(features.shape(), kernels.shape())?;
    Ok(reassemble_rows(features, kernels))
}

fn reassemble_rows<T: Scalar>(features: &Tensor<T>, kernels: &Tensor<T>) -> Tensor<T> {
    let fs = features.shape();
    let k = square_root_exact(kernels.shape().c).unwrap();
    let r = (k / 2) as isize;
    let (h, w) = (fs.h, fs.w);
    let p = h * w;
    let mut out = Tensor::zeros(fs);
    for n in 0..fs.n {
        let ks = kernels.sample(n);
        let fsmp = features.sample(n);
        let osmp = out.sample_mut(n);
        for y in 0..h {
            for c in 0..fs.c {
                let out_row = &mut osmp[c * p + y * w..c * p + (y + 1) * w];
                let fplane = &fsmp[c * p..(c + 1) * p];
                for u in 0..k {
                    let sy = y as isize + u as isize - r;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let frow = &fplane[sy as usize * w..(sy as usize + 1) * w];
                    for v in 0..k {
                        let dx = v as isize - r;
                        let (x0, x1) = column_span(w, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        let krow = &ks[(u * k + v) * p + y * w..(u * k + v) * p + (y + 1) * w];
                        let src = &frow[(x0 as isize + dx) as usize..(x1 as isize + dx) as usize];
                        for ((o, &kw), &f) in out_row[x0..x1].iter_mut().zip(&krow[x0..x1]).zip(src) {
                            *o = *o + kw * f;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of reassembly with respect to both operands.
///
/// Returns `(grad_features, grad_kernels)`.
pub fn reassemble_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    features: &Tensor<T>,
    kernels: &KernelField<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    reassemble_backward_unchecked(grad_out, features, kernels.tensor())
}

pub(crate) fn reassemble_backward_unchecked<T: Scalar>(
    grad_out: &Tensor<T>,
    features: &Tensor<T>,
    kernels: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_raw(features.shape(), kernels.shape())?;
    grad_out.ensure_same_shape(features, "reassemble_backward")?;
    let fs = features.shape();
    let ksh = kernels.shape();
    let k = square_root_exact(ksh.c).unwrap();
    let r = (k / 2) as isize;
    let (h, w) = (fs.h, fs.w);
    let p = h * w;
    let mut grad_f = Tensor::zeros(fs);
    let mut grad_k = Tensor::zeros(ksh);
    for n in 0..fs.n {
        let ks = kernels.sample(n);
        let fsmp = features.sample(n);
        let gsmp = grad_out.sample(n);
        let gf = grad_f.sample_mut(n);
        let gk = grad_k.sample_mut(n);
        for y in 0..h {
            for c in 0..fs.c {
                let grow = &gsmp[c * p + y * w..c * p + (y + 1) * w];
                for u in 0..k {
                    let sy = y as isize + u as isize - r;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let row_off = c * p + sy as usize * w;
                    for v in 0..k {
                        let dx = v as isize - r;
                        let (x0, x1) = column_span(w, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        let tap = (u * k + v) * p + y * w;
                        let s0 = (row_off as isize + x0 as isize + dx) as usize;
                        let s1 = (row_off as isize + x1 as isize + dx) as usize;
                        let krow = &ks[tap + x0..tap + x1];
                        for ((d, &kw), &g) in gf[s0..s1].iter_mut().zip(krow).zip(&grow[x0..x1]) {
                            *d = *d + kw * g;
                        }
                        let frow = &fsmp[s0..s1];
                        for ((d, &g), &f) in gk[tap + x0..tap + x1].iter_mut().zip(&grow[x0..x1]).zip(frow) {
                            *d = *d + g * f;
                        }
                    }
                }
            }
        }
    }
    Ok((grad_f, grad_k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn uniform_kernels_box_filter_constant() {
        let v = 2.0f64;
        let f = Tensor::full(Shape::new(1, 2, 5, 5), v);
        let kf = KernelField::uniform(1, 3, 5, 5);
        let out = reassemble(&f, &kf).unwrap();
        assert!((out.get(0, 1, 2, 2) - v).abs() < 1e-15);
        assert!((out.get(0, 0, 0, 0) - 4.0 * v / 9.0).abs() < 1e-15);
        assert!((out.get(0, 0, 0, 2) - 6.0 * v / 9.0).abs() < 1e-15);
    }

    #[test]
    fn delta_kernels_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random(Shape::new(2, 3, 4, 6), &mut rng);
        for k in [1, 3, 5] {
            let kf = KernelField::delta(2, k, 4, 6);
            assert_eq!(reassemble(&f, &kf).unwrap(), f);
            assert_eq!(reassemble_tiled(&f, &kf).unwrap(), f);
        }
    }

    #[test]
    fn rejects_unnormalized_and_mismatched() {
        let f = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let raw = KernelField::unnormalized(Tensor::ones(Shape::new(1, 9, 4, 4))).unwrap();
        assert!(matches!(reassemble(&f, &raw), Err(Error::KernelField(_))));
        assert!(KernelField::normalized(Tensor::<f32>::ones(Shape::new(1, 9, 4, 4))).is_err());
        assert!(KernelField::<f32>::unnormalized(Tensor::ones(Shape::new(1, 4, 4, 4))).is_err());
        let small = KernelField::<f32>::uniform(1, 3, 3, 4);
        assert!(reassemble(&f, &small).is_err());
    }

    #[test]
    fn tiled_matches_reference_bitwise_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in [3, 5, 7, 9] {
            let f = random(Shape::new(2, 3, 6, 7), &mut rng);
            let kf = KernelField::from_logits(&random(Shape::new(2, k * k, 6, 7), &mut rng)).unwrap();
            let a = reassemble(&f, &kf).unwrap();
            let b = reassemble_tiled(&f, &kf).unwrap();
            assert_eq!(a, b, "k = {k}");
        }
    }

    #[test]
    fn backward_counting_example() {
        // Constant unit features, unit upstream gradient: each kernel tap's
        // gradient counts the channels whose neighbour is in bounds.
        let c = 3;
        let f = Tensor::<f64>::ones(Shape::new(1, c, 5, 5));
        let kf = KernelField::delta(1, 3, 5, 5);
        let g = Tensor::ones(f.shape());
        let (gf, gk) = reassemble_backward(&g, &f, &kf).unwrap();
        assert_eq!(gf, g);
        assert_eq!(gk.get(0, 0, 2, 2), c as f64);
        assert_eq!(gk.get(0, 0, 0, 0), 0.0);
        assert_eq!(gk.get(0, 8, 0, 0), c as f64);
    }

    #[test]
    fn backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random(Shape::new(2, 3, 5, 6), &mut rng);
        let kt = random(Shape::new(2, 25, 5, 6), &mut rng);
        let g = random(f.shape(), &mut rng);
        let out = reassemble_unchecked(&f, &kt).unwrap();
        let (gf, gk) = reassemble_backward_unchecked(&g, &f, &kt).unwrap();
        let lhs = out.mul(&g).unwrap().sum();
        // bilinear: <R(f, K), g> = <f, gf> = <K, gk>
        assert!((lhs - f.mul(&gf).unwrap().sum()).abs() < 1e-10);
        assert!((lhs - kt.mul(&gk).unwrap().sum()).abs() < 1e-10);
    }
}
