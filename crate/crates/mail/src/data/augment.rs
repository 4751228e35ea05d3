//! Image-level augmentation: rotation, translation and Gaussian blur, plus
//! modality synthesis for single-modality sources.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetContainer, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AugmentSpec {
    /// Maximum rotation magnitude in degrees (uniform draw).
    pub rotation_deg: f64,
    /// Maximum translation per axis in pixels (uniform integer draw).
    pub translation_px: i64,
    /// Std of the 3x3 Gaussian blur kernel.
    pub blur_sigma: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self { rotation_deg: 20.0, translation_px: 5, blur_sigma: 0.8 }
    }
}

/// Bilinear rotation about the image centre with zero fill; a zero angle
/// reproduces the input exactly.
pub fn rotate_bilinear(img: &[f64], channels: usize, h: usize, w: usize, degrees: f64) -> Vec<f64> {
    let rad = degrees.to_radians();
    let (s, c) = (rad.sin(), rad.cos());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; img.len()];
    for ch in 0..channels {
        let src = &img[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // Inverse mapping of a rotation about the centre.
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let sy = c * dy + s * dx + cy;
                let sx = -s * dy + c * dx + cx;
                let y0 = sy.floor();
                let x0 = sx.floor();
                let fy = sy - y0;
                let fx = sx - x0;
                let mut acc = 0.0;
                for (oy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                    for (ox, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                        let py = y0 as i64 + oy;
                        let px = x0 as i64 + ox;
                        let weight = wy * wx;
                        if weight == 0.0 {
                            continue;
                        }
                        if py >= 0 && py < h as i64 && px >= 0 && px < w as i64 {
                            acc += weight * src[py as usize * w + px as usize];
                        }
                    }
                }
                dst[y * w + x] = acc;
            }
        }
    }
    out
}

/// Integer pixel shift with zero fill; overlap pixels are copied exactly.
pub fn translate(img: &[f64], channels: usize, h: usize, w: usize, dx: i64, dy: i64) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for ch in 0..channels {
        let src = &img[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h as i64 {
            let sy = y - dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            for x in 0..w as i64 {
                let sx = x - dx;
                if sx < 0 || sx >= w as i64 {
                    continue;
                }
                dst[y as usize * w as usize + x as usize] = src[sy as usize * w + sx as usize];
            }
        }
    }
    out
}

/// Normalized 3x3 Gaussian kernel for the given sigma.
pub fn blur3_kernel(sigma: f64) -> [f64; 9] {
    let mut k = [0.0; 9];
    let mut sum = 0.0;
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let v = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
            k[((dy + 1) * 3 + dx + 1) as usize] = v;
            sum += v;
        }
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// 3x3 Gaussian blur with replicated borders; constants are fixed points.
pub fn gaussian_blur3(img: &[f64], channels: usize, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = blur3_kernel(sigma);
    let mut out = vec![0.0; img.len()];
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    for ch in 0..channels {
        let src = &img[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let sy = clamp(y as i64 + dy, h);
                        let sx = clamp(x as i64 + dx, w);
                        acc += k[((dy + 1) * 3 + dx + 1) as usize] * src[sy * w + sx];
                    }
                }
                dst[y * w + x] = acc;
            }
        }
    }
    out
}

fn to_f64(plane: &[u8]) -> Vec<f64> {
    plane.iter().map(|&b| b as f64 / 255.0).collect()
}

fn to_u8(plane: &[f64]) -> Vec<u8> {
    plane.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// The three augmented variants of one image plane: random rotation, random
/// translation, Gaussian blur. Labels are inherited by the caller.
pub fn augment_sample(
    plane: &[u8],
    channels: usize,
    h: usize,
    w: usize,
    spec: &AugmentSpec,
    rng: &mut ChaCha8Rng,
) -> [Vec<u8>; 3] {
    let img = to_f64(plane);
    let angle = rng.gen_range(-spec.rotation_deg..=spec.rotation_deg);
    let dx = rng.gen_range(-spec.translation_px..=spec.translation_px);
    let dy = rng.gen_range(-spec.translation_px..=spec.translation_px);
    [
        to_u8(&rotate_bilinear(&img, channels, h, w, angle)),
        to_u8(&translate(&img, channels, h, w, dx, dy)),
        to_u8(&gaussian_blur3(&img, channels, h, w, spec.blur_sigma)),
    ]
}

/// Expand a container to exactly four times its size (original plus three
/// variants per sample, shared random draws across modalities) and shuffle
/// with a seeded permutation.
pub fn augment_dataset(
    input: &DatasetContainer,
    spec: &AugmentSpec,
    rng: &mut ChaCha8Rng,
) -> Result<DatasetContainer> {
    let n = input.len();
    let m = input.modal_shapes.len();
    let mut splits = Vec::with_capacity(4 * n);
    let mut labels = Vec::with_capacity(4 * n);
    let mut pixels: Vec<u8> = Vec::with_capacity(4 * input.pixels.len());

    for i in 0..n {
        // Original first, then the three variants.
        let mut variants: Vec<Vec<Vec<u8>>> = vec![Vec::with_capacity(m); 4];
        let angle = rng.gen_range(-spec.rotation_deg..=spec.rotation_deg);
        let dx = rng.gen_range(-spec.translation_px..=spec.translation_px);
        let dy = rng.gen_range(-spec.translation_px..=spec.translation_px);
        for modality in 0..m {
            let (c, h, w) = input.modal_shapes[modality];
            let plane = input.sample_plane(i, modality);
            let img = to_f64(plane);
            variants[0].push(plane.to_vec());
            variants[1].push(to_u8(&rotate_bilinear(&img, c, h, w, angle)));
            variants[2].push(to_u8(&translate(&img, c, h, w, dx, dy)));
            variants[3].push(to_u8(&gaussian_blur3(&img, c, h, w, spec.blur_sigma)));
        }
        for v in variants {
            splits.push(input.splits[i]);
            labels.push(input.labels[i].clone());
            for plane in v {
                pixels.extend_from_slice(&plane);
            }
        }
    }

    let mut out = DatasetContainer {
        modal_shapes: input.modal_shapes.clone(),
        task_classes: input.task_classes.clone(),
        splits,
        labels,
        pixels,
    };

    // Seeded permutation of the combined set.
    let total = out.len();
    let mut order: Vec<usize> = (0..total).collect();
    for i in (1..total).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let per = out.bytes_per_sample();
    let mut new_pixels = vec![0u8; out.pixels.len()];
    let mut new_splits = Vec::with_capacity(total);
    let mut new_labels = Vec::with_capacity(total);
    for (dst, &src) in order.iter().enumerate() {
        new_pixels[dst * per..(dst + 1) * per].copy_from_slice(&out.pixels[src * per..(src + 1) * per]);
        new_splits.push(out.splits[src]);
        new_labels.push(out.labels[src].clone());
    }
    out.pixels = new_pixels;
    out.splits = new_splits;
    out.labels = new_labels;
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModalityMode {
    Identity,
    Blur,
}

impl ModalityMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(ModalityMode::Identity),
            "blur" => Ok(ModalityMode::Blur),
            other => Err(Error::config(format!("unknown modality synthesis mode '{other}'"))),
        }
    }
}

/// Deterministic second-modality image from a first-modality image.
pub fn modality_synthesize(
    plane: &[u8],
    channels: usize,
    h: usize,
    w: usize,
    mode: ModalityMode,
) -> Vec<u8> {
    match mode {
        ModalityMode::Identity => plane.to_vec(),
        ModalityMode::Blur => {
            let img = to_f64(plane);
            to_u8(&gaussian_blur3(&img, channels, h, w, 0.8))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn zero_rotation_is_identity() {
        let img: Vec<f64> = (0..48).map(|v| v as f64 / 47.0).collect();
        let out = rotate_bilinear(&img, 3, 4, 4, 0.0);
        for (a, b) in out.iter().zip(&img) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_preserves_overlap_exactly() {
        let img: Vec<f64> = (0..36).map(|v| (v as f64).sin().abs()).collect();
        let out = translate(&img, 1, 6, 6, 2, -1);
        for y in 0..6i64 {
            for x in 0..6i64 {
                let sy = y + 1;
                let sx = x - 2;
                if sy >= 0 && sy < 6 && sx >= 0 && sx < 6 {
                    assert_eq!(out[(y * 6 + x) as usize], img[(sy * 6 + sx) as usize]);
                }
            }
        }
    }

    #[test]
    fn blur_of_impulse_stamps_kernel() {
        let mut img = vec![0.0; 25];
        img[12] = 1.0; // centre of a 5x5 field
        let out = gaussian_blur3(&img, 1, 5, 5, 0.8);
        let k = blur3_kernel(0.8);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let got = out[((2 + dy) * 5 + 2 + dx) as usize];
                let expect = k[((dy + 1) * 3 + dx + 1) as usize];
                assert!((got - expect).abs() < 1e-12);
            }
        }
        // Nothing outside the 3x3 stamp.
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn blur_keeps_constants_fixed() {
        let img = vec![0.37; 27];
        let out = gaussian_blur3(&img, 3, 3, 3, 0.8);
        for &v in &out {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn augmented_set_is_four_times_input() {
        let base = crate::data::synth_generate(4, &crate::data::SynthSpec::new(8, 4, 4, 2, 8, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment_dataset(&base, &AugmentSpec::default(), &mut rng).unwrap();
        assert_eq!(out.len(), 4 * base.len());
        // Same label histogram, scaled by four.
        let count = |c: &DatasetContainer, y: u16| c.labels.iter().filter(|r| r[0] == y).count();
        for y in 0..2 {
            assert_eq!(count(&out, y), 4 * count(&base, y));
        }
        // Splits preserved in proportion.
        assert_eq!(out.split_indices(Split::Train).len(), 32);
    }

    #[test]
    fn modality_identity_returns_equal_plane() {
        let plane: Vec<u8> = (0..27).collect();
        assert_eq!(modality_synthesize(&plane, 3, 3, 3, ModalityMode::Identity), plane);
    }

    #[test]
    fn modality_blur_fixes_constant_plane() {
        let plane = vec![128u8; 27];
        assert_eq!(modality_synthesize(&plane, 3, 3, 3, ModalityMode::Blur), plane);
    }
}
