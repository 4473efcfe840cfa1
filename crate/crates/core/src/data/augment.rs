//! Training-time augmentation: horizontal flip, Gaussian blur, pad and crop.

use rand::Rng;

use crate::tensor::Tensor;

pub const FLIP_PROBABILITY: f64 = 0.5;
pub const BLUR_PROBABILITY: f64 = 0.3;
pub const BLUR_SIGMA_RANGE: (f64, f64) = (0.1, 1.0);

pub fn hflip(img: &Tensor<f32>) -> Tensor<f32> {
    let w = img.shape().w;
    Tensor::from_fn(img.shape(), |n, c, y, x| img.get(n, c, y, w - 1 - x))
}

fn gaussian_taps(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / total) as f32).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &Tensor<f32>, sigma: f64) -> Tensor<f32> {
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as i64;
    let s = img.shape();
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    let horizontal = Tensor::from_fn(s, |n, c, y, x| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * img.get(n, c, y, clamp(x as i64 + i as i64 - r, s.w)))
            .sum::<f32>()
    });
    Tensor::from_fn(s, |n, c, y, x| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * horizontal.get(n, c, clamp(y as i64 + i as i64 - r, s.h), x))
            .sum::<f32>()
    })
}

/// Zero-pads by `pad` on every side and crops back at offset `(oy, ox)`,
/// each in `0..=2 * pad`.
pub fn pad_crop(img: &Tensor<f32>, pad: usize, oy: usize, ox: usize) -> Tensor<f32> {
    let s = img.shape();
    Tensor::from_fn(s, |n, c, y, x| {
        let sy = (y + oy) as i64 - pad as i64;
        let sx = (x + ox) as i64 - pad as i64;
        if sy < 0 || sx < 0 || sy >= s.h as i64 || sx >= s.w as i64 {
            0.0
        } else {
            img.get(n, c, sy as usize, sx as usize)
        }
    })
}

/// Crop padding used for an image of side `size`.
pub fn crop_padding(size: usize) -> usize {
    (size / 16).max(1)
}

/// Random flip, blur and crop; the shape is preserved.
pub fn augment<R: Rng>(img: &Tensor<f32>, rng: &mut R) -> Tensor<f32> {
    let mut out = if rng.gen_bool(FLIP_PROBABILITY) { hflip(img) } else { img.clone() };
    if rng.gen_bool(BLUR_PROBABILITY) {
        let sigma = rng.gen_range(BLUR_SIGMA_RANGE.0..=BLUR_SIGMA_RANGE.1);
        out = gaussian_blur(&out, sigma);
    }
    let pad = crop_padding(img.shape().h.min(img.shape().w));
    let oy = rng.gen_range(0..=2 * pad);
    let ox = rng.gen_range(0..=2 * pad);
    pad_crop(&out, pad, oy, ox)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn ramp() -> Tensor<f32> {
        Tensor::from_fn(Shape::new(1, 3, 5, 6), |_, c, y, x| (c * 30 + y * 6 + x) as f32 / 100.0)
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = ramp();
        let f = hflip(&img);
        assert_eq!(f.get(0, 2, 3, 0), img.get(0, 2, 3, 5));
        assert_eq!(hflip(&f), img);
    }

    #[test]
    fn tiny_sigma_blur_is_identity() {
        let img = ramp();
        assert!(gaussian_blur(&img, 1e-4).max_abs_diff(&img).unwrap() <= 1e-3);
    }

    #[test]
    fn centred_crop_is_identity() {
        let img = ramp();
        assert_eq!(pad_crop(&img, 2, 2, 2), img);
        assert_eq!(pad_crop(&img, 2, 0, 2).get(0, 0, 0, 0), 0.0);
    }
}
