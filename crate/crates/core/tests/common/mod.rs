//! Direct nested-loop reference implementations, written independently of
//! the library kernels and evaluated in f64.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scope_core::tensor::{Scalar, Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random<T: Scalar>(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_, _, _, _| T::from(rng.gen_range(lo..hi)).unwrap())
}

pub fn to64<T: Scalar>(t: &Tensor<T>) -> Tensor<f64> {
    t.cast()
}

pub fn max_abs_diff<A: Scalar, B: Scalar>(a: &Tensor<A>, b: &Tensor<B>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64().unwrap() - y.to_f64().unwrap()).abs())
        .fold(0.0, f64::max)
}

pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let oh = (xs.h + 2 * pad - k) / stride + 1;
    let ow = (xs.w + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, oh, ow));
    for n in 0..xs.n {
        for o in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                    acc += w.get(o, c, ky, kx) * x.get(n, c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.set(n, o, oy, ox, acc);
                }
            }
        }
    }
    out
}

pub fn softmax_channels(m: &Tensor<f64>) -> Tensor<f64> {
    let s = m.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let max = (0..s.c).map(|c| m.get(n, c, y, x)).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..s.c).map(|c| (m.get(n, c, y, x) - max).exp()).sum();
                for c in 0..s.c {
                    out.set(n, c, y, x, (m.get(n, c, y, x) - max).exp() / z);
                }
            }
        }
    }
    out
}

/// `out(n,c,y,x) = sum_{u,v} K(n, u*k+v, y, x) * F(n, c, y+u-r, x+v-r)`.
pub fn reassemble(f: &Tensor<f64>, kern: &Tensor<f64>) -> Tensor<f64> {
    let s = f.shape();
    let k = (kern.shape().c as f64).sqrt().round() as usize;
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = 0.0;
                    for u in 0..k {
                        for v in 0..k {
                            let sy = y as isize + u as isize - r;
                            let sx = x as isize + v as isize - r;
                            if sy >= 0 && sx >= 0 && (sy as usize) < s.h && (sx as usize) < s.w {
                                acc += kern.get(n, u * k + v, y, x) * f.get(n, c, sy as usize, sx as usize);
                            }
                        }
                    }
                    out.set(n, c, y, x, acc);
                }
            }
        }
    }
    out
}

pub fn pixel_shuffle(x: &Tensor<f64>, s: usize) -> Tensor<f64> {
    let xs = x.shape();
    let c_out = xs.c / (s * s);
    Tensor::from_fn(Shape::new(xs.n, c_out, xs.h * s, xs.w * s), |n, c, y, xx| {
        x.get(n, c * s * s + (y % s) * s + xx % s, y / s, xx / s)
    })
}

pub fn nearest_upsample(x: &Tensor<f64>, s: usize) -> Tensor<f64> {
    let xs = x.shape();
    Tensor::from_fn(Shape::new(xs.n, xs.c, xs.h * s, xs.w * s), |n, c, y, xx| x.get(n, c, y / s, xx / s))
}

pub fn avg_pool_to(x: &Tensor<f64>, h: usize, w: usize) -> Tensor<f64> {
    let xs = x.shape();
    let (bh, bw) = (xs.h / h, xs.w / w);
    Tensor::from_fn(Shape::new(xs.n, xs.c, h, w), |n, c, y, xx| {
        let mut acc = 0.0;
        for dy in 0..bh {
            for dx in 0..bw {
                acc += x.get(n, c, y * bh + dy, xx * bw + dx);
            }
        }
        acc / (bh * bw) as f64
    })
}

pub fn concat(parts: &[&Tensor<f64>]) -> Tensor<f64> {
    let s0 = parts[0].shape();
    let total: usize = parts.iter().map(|p| p.shape().c).sum();
    Tensor::from_fn(Shape::new(s0.n, total, s0.h, s0.w), |n, c, y, x| {
        let mut c = c;
        for p in parts {
            if c < p.shape().c {
                return p.get(n, c, y, x);
            }
            c -= p.shape().c;
        }
        unreachable!()
    })
}

/// (smooth, enhanced) of the detail extractor with a 3x3 pad-1 encoder.
pub fn sde(f: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> (Tensor<f64>, Tensor<f64>) {
    let kern = softmax_channels(&conv2d(f, w, b, 1, 1));
    let smooth = reassemble(f, &kern);
    let enhanced = Tensor::from_fn(f.shape(), |n, c, y, x| 2.0 * f.get(n, c, y, x) - smooth.get(n, c, y, x));
    (smooth, enhanced)
}

/// Refined output of the semantic refiner.
pub fn ssr(
    hi: &Tensor<f64>,
    lo: &Tensor<f64>,
    lp_w: &Tensor<f64>,
    lp_b: &[f64],
    g_w: &Tensor<f64>,
    g_b: &[f64],
) -> Tensor<f64> {
    let lp_up = pixel_shuffle(&conv2d(lo, lp_w, lp_b, 1, 1), 2);
    let guide = conv2d(hi, g_w, g_b, 1, 1);
    let cross = reassemble(&lp_up, &softmax_channels(&guide));
    let fused = Tensor::from_fn(guide.shape(), |n, c, y, x| guide.get(n, c, y, x) + cross.get(n, c, y, x));
    reassemble(&nearest_upsample(lo, 2), &softmax_channels(&fused))
}
