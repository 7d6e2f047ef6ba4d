//! Image-space augmentation: color jitter, random resized crop and affine warps.
//!
//! Coordinates are pixel indices: `x` is the column, `y` the row, and pixel centers sit
//! on integers. Every random draw comes from the caller's rng, so a pipeline run is a
//! pure function of (image, config, rng state).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, Rng};
use rand::SeedableRng;

/// RGB image with channel values in `[0, 1]`, stored row-major as `h * w * 3` floats.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    h: usize,
    w: usize,
    pixels: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(h: usize, w: usize, pixels: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!("image must be non-empty, got {h}x{w}")));
        }
        if pixels.len() != h * w * 3 {
            return Err(Error::DimensionMismatch {
                expected: h * w * 3,
                got: pixels.len(),
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("pixel values must be finite and in [0, 1]"));
        }
        Ok(ImageBuffer { h, w, pixels })
    }

    pub fn filled(h: usize, w: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::new(h, w, rgb.iter().copied().cycle().take(h * w * 3).collect())
    }

    fn zeros(h: usize, w: usize) -> Self {
        ImageBuffer {
            h,
            w,
            pixels: vec![0.0; h * w * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.w + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.w + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at a point already known to lie inside the image.
    fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        if fx == 0.0 && fy == 0.0 {
            return self.get(x0, y0);
        }
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (p00, p10, p01, p11) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let top = (1.0 - fx) * f64::from(p00[c]) + fx * f64::from(p10[c]);
            let bottom = (1.0 - fx) * f64::from(p01[c]) + fx * f64::from(p11[c]);
            out[c] = (((1.0 - fy) * top + fy * bottom) as f32).clamp(0.0, 1.0);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Fraction of the hue circle, in `[0, 0.5]`.
    pub hue: f64,
    pub crop_scale: (f64, f64),
    pub crop_ratio: (f64, f64),
    pub affine_degrees: f64,
    pub affine_translate: f64,
    pub affine_scale: (f64, f64),
    /// `(height, width)` of the output image.
    pub out_size: (usize, usize),
    /// Base seed; sample `i` draws from [`AugmentConfig::rng_for_sample`].
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            crop_scale: (0.6, 1.0),
            crop_ratio: (0.75, 1.333),
            affine_degrees: 15.0,
            affine_translate: 0.1,
            affine_scale: (0.9, 1.1),
            out_size: (224, 224),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Independent stream per sample index, so images can be augmented in any order.
    pub fn rng_for_sample(&self, index: u64) -> Rng {
        Rng::seed_from_u64(derive_seed(self.seed, "augment") ^ index)
    }

    /// Same geometry, color jitter switched off.
    pub fn without_jitter(&self) -> Self {
        AugmentConfig {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.brightness,
            self.contrast,
            self.saturation,
            self.hue,
            self.crop_scale.0,
            self.crop_scale.1,
            self.crop_ratio.0,
            self.crop_ratio.1,
            self.affine_degrees,
            self.affine_translate,
            self.affine_scale.0,
            self.affine_scale.1,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("augment config values must be finite"));
        }
        if self.brightness < 0.0 || self.contrast < 0.0 || self.saturation < 0.0 {
            return Err(Error::invalid("jitter magnitudes must be >= 0"));
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(Error::invalid(format!("hue must be in [0, 0.5], got {}", self.hue)));
        }
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("crop_scale must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})")));
        }
        let (lo, hi) = self.crop_ratio;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::invalid(format!("crop_ratio must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
        }
        if self.affine_degrees < 0.0 {
            return Err(Error::invalid("affine_degrees must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.affine_translate) {
            return Err(Error::invalid("affine_translate must be in [0, 1)"));
        }
        let (lo, hi) = self.affine_scale;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::invalid(format!("affine_scale must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
        }
        if self.out_size.0 == 0 || self.out_size.1 == 0 {
            return Err(Error::invalid("out_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue rotation as a fraction of the circle, in `[-0.5, 0.5]`.
    pub hue_shift: f64,
}

impl JitterFactors {
    pub const IDENTITY: JitterFactors = JitterFactors {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue_shift: 0.0,
    };
}

fn luma(p: [f32; 3]) -> f64 {
    0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
}

fn clamp01(v: f64) -> f32 {
    (v as f32).clamp(0.0, 1.0)
}

/// Standard hexagonal RGB to HSV; all components in `[0, 1]`.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    let h = if c == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / c).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / c + 2.0) / 6.0
    } else {
        ((r - g) / c + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { c / max };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Applies brightness, contrast, saturation and hue in that order, clamping after each.
/// A factor at its identity value skips its step, so unit factors return the input
/// bit-for-bit.
pub fn color_jitter(img: &ImageBuffer, f: JitterFactors) -> Result<ImageBuffer> {
    let JitterFactors {
        brightness,
        contrast,
        saturation,
        hue_shift,
    } = f;
    if ![brightness, contrast, saturation, hue_shift].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("jitter factors must be finite"));
    }
    if brightness < 0.0 || contrast < 0.0 || saturation < 0.0 {
        return Err(Error::invalid("jitter factors must be non-negative"));
    }
    if !(-0.5..=0.5).contains(&hue_shift) {
        return Err(Error::invalid(format!("hue shift must be in [-0.5, 0.5], got {hue_shift}")));
    }
    let mut out = img.clone();
    if brightness != 1.0 {
        for p in &mut out.pixels {
            *p = clamp01(f64::from(*p) * brightness);
        }
    }
    if contrast != 1.0 {
        let n = (out.h * out.w) as f64;
        let mean = out.pixels.chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).sum::<f64>() / n;
        for p in &mut out.pixels {
            *p = clamp01(mean + (f64::from(*p) - mean) * contrast);
        }
    }
    if saturation != 1.0 {
        for px in out.pixels.chunks_exact_mut(3) {
            let gray = luma([px[0], px[1], px[2]]);
            for p in px.iter_mut() {
                *p = clamp01(gray + (f64::from(*p) - gray) * saturation);
            }
        }
    }
    if hue_shift != 0.0 {
        for px in out.pixels.chunks_exact_mut(3) {
            let [h, s, v] = rgb_to_hsv([f64::from(px[0]), f64::from(px[1]), f64::from(px[2])]);
            let rgb = hsv_to_rgb([h + hue_shift, s, v]);
            for (p, c) in px.iter_mut().zip(rgb) {
                *p = clamp01(c);
            }
        }
    }
    Ok(out)
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

pub fn sample_jitter_factors(cfg: &AugmentConfig, rng: &mut Rng) -> JitterFactors {
    let mut factor = |m: f64| uniform(rng, (1.0 - m).max(0.0), 1.0 + m);
    let brightness = factor(cfg.brightness);
    let contrast = factor(cfg.contrast);
    let saturation = factor(cfg.saturation);
    let hue_shift = uniform(rng, -cfg.hue, cfg.hue);
    JitterFactors {
        brightness,
        contrast,
        saturation,
        hue_shift,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Crops `rect` and resizes it to `out_size = (h, w)` with half-pixel-centered bilinear
/// sampling. A crop whose size equals `out_size` is copied exactly.
pub fn crop_resize(img: &ImageBuffer, rect: CropRect, out_size: (usize, usize)) -> Result<ImageBuffer> {
    let (oh, ow) = out_size;
    if oh == 0 || ow == 0 {
        return Err(Error::invalid("output size must be positive"));
    }
    if rect.w == 0 || rect.h == 0 || rect.x + rect.w > img.w || rect.y + rect.h > img.h {
        return Err(Error::invalid(format!(
            "crop {rect:?} does not fit a {}x{} image",
            img.h, img.w
        )));
    }
    let (sx, sy) = (rect.w as f64 / ow as f64, rect.h as f64 / oh as f64);
    let (x_max, y_max) = ((rect.x + rect.w - 1) as f64, (rect.y + rect.h - 1) as f64);
    let mut out = ImageBuffer::zeros(oh, ow);
    for oy in 0..oh {
        let y = (rect.y as f64 + (oy as f64 + 0.5) * sy - 0.5).clamp(rect.y as f64, y_max);
        for ox in 0..ow {
            let x = (rect.x as f64 + (ox as f64 + 0.5) * sx - 0.5).clamp(rect.x as f64, x_max);
            out.set(ox, oy, img.sample(x, y));
        }
    }
    Ok(out)
}

pub fn resize(img: &ImageBuffer, out_size: (usize, usize)) -> Result<ImageBuffer> {
    crop_resize(
        img,
        CropRect {
            x: 0,
            y: 0,
            w: img.w,
            h: img.h,
        },
        out_size,
    )
}

/// Draws a crop of random area and aspect ratio (10 attempts), falling back to the
/// largest centered crop whose aspect ratio lies within `crop_ratio`.
pub fn sample_crop(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut Rng) -> CropRect {
    let area = (h * w) as f64;
    let (log_lo, log_hi) = (cfg.crop_ratio.0.ln(), cfg.crop_ratio.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, cfg.crop_scale.0, cfg.crop_scale.1);
        let ratio = if cfg.crop_ratio.0 >= cfg.crop_ratio.1 {
            cfg.crop_ratio.0
        } else {
            uniform(rng, log_lo, log_hi).exp()
        };
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let x = rng.gen_range(0..=w - cw);
            let y = rng.gen_range(0..=h - ch);
            return CropRect { x, y, w: cw, h: ch };
        }
    }
    let in_ratio = w as f64 / h as f64;
    let (cw, ch) = if in_ratio < cfg.crop_ratio.0 {
        (w, ((w as f64 / cfg.crop_ratio.0).round() as usize).clamp(1, h))
    } else if in_ratio > cfg.crop_ratio.1 {
        (((h as f64 * cfg.crop_ratio.1).round() as usize).clamp(1, w), h)
    } else {
        (w, h)
    };
    CropRect {
        x: (w - cw) / 2,
        y: (h - ch) / 2,
        w: cw,
        h: ch,
    }
}

pub fn random_resized_crop(img: &ImageBuffer, cfg: &AugmentConfig, rng: &mut Rng) -> Result<ImageBuffer> {
    if img.h < 2 || img.w < 2 {
        return Err(Error::invalid("random_resized_crop needs at least a 2x2 image"));
    }
    let rect = sample_crop(img.h, img.w, cfg, rng);
    crop_resize(img, rect, cfg.out_size)
}

/// Forward affine map `[[a, b, tx], [c, d, ty]]` from input to output coordinates.
pub type AffineMatrix = [[f64; 3]; 2];

pub const IDENTITY_AFFINE: AffineMatrix = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

/// Composition `second ∘ first` (apply `first`, then `second`).
pub fn compose(second: &AffineMatrix, first: &AffineMatrix) -> AffineMatrix {
    let [[a2, b2, e2], [c2, d2, f2]] = *second;
    let [[a1, b1, e1], [c1, d1, f1]] = *first;
    [
        [a2 * a1 + b2 * c1, a2 * b1 + b2 * d1, a2 * e1 + b2 * f1 + e2],
        [c2 * a1 + d2 * c1, c2 * b1 + d2 * d1, c2 * e1 + d2 * f1 + f2],
    ]
}

fn invert(m: &AffineMatrix) -> Result<AffineMatrix> {
    let [[a, b, e], [c, d, f]] = *m;
    if ![a, b, c, d, e, f].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("affine matrix must be finite"));
    }
    let det = a * d - b * c;
    if det.abs() <= 1e-12 {
        return Err(Error::invalid("degenerate affine: singular 2x2 block"));
    }
    let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
    Ok([[ia, ib, -(ia * e + ib * f)], [ic, id, -(ic * e + id * f)]])
}

/// Inverse-warps `img` through `m`: each output pixel samples the input bilinearly at
/// `m⁻¹ · (x, y)`. Samples falling outside the input are 0.
pub fn affine(img: &ImageBuffer, m: &AffineMatrix) -> Result<ImageBuffer> {
    let inv = invert(m)?;
    if *m == IDENTITY_AFFINE {
        return Ok(img.clone());
    }
    const EDGE: f64 = 1e-9;
    let (x_max, y_max) = ((img.w - 1) as f64, (img.h - 1) as f64);
    let mut out = ImageBuffer::zeros(img.h, img.w);
    for y in 0..img.h {
        for x in 0..img.w {
            let (xf, yf) = (x as f64, y as f64);
            let sx = inv[0][0] * xf + inv[0][1] * yf + inv[0][2];
            let sy = inv[1][0] * xf + inv[1][1] * yf + inv[1][2];
            if sx < -EDGE || sy < -EDGE || sx > x_max + EDGE || sy > y_max + EDGE {
                continue;
            }
            out.set(x, y, img.sample(sx, sy));
        }
    }
    Ok(out)
}

/// Rotation (degrees) and isotropic scale about the image center, followed by a
/// translation in pixels.
pub fn rotation_scale_translate(h: usize, w: usize, degrees: f64, scale: f64, tx: f64, ty: f64) -> AffineMatrix {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (a, b, c, d) = (scale * cos, -scale * sin, scale * sin, scale * cos);
    [
        [a, b, cx - a * cx - b * cy + tx],
        [c, d, cy - c * cx - d * cy + ty],
    ]
}

pub fn sample_affine(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut Rng) -> AffineMatrix {
    let degrees = uniform(rng, -cfg.affine_degrees, cfg.affine_degrees);
    let max_tx = cfg.affine_translate * w as f64;
    let max_ty = cfg.affine_translate * h as f64;
    let tx = uniform(rng, -max_tx, max_tx);
    let ty = uniform(rng, -max_ty, max_ty);
    let scale = uniform(rng, cfg.affine_scale.0, cfg.affine_scale.1);
    rotation_scale_translate(h, w, degrees, scale, tx, ty)
}

/// Random resized crop, then a random affine warp, then color jitter.
pub fn augment_pipeline(img: &ImageBuffer, cfg: &AugmentConfig, rng: &mut Rng) -> Result<ImageBuffer> {
    cfg.validate()?;
    let cropped = random_resized_crop(img, cfg, rng)?;
    let m = sample_affine(cropped.h, cropped.w, cfg, rng);
    let warped = affine(&cropped, &m)?;
    color_jitter(&warped, sample_jitter_factors(cfg, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn random_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
        let mut r = rng(seed);
        ImageBuffer::new(h, w, (0..h * w * 3).map(|_| r.gen::<f32>()).collect()).unwrap()
    }

    fn smooth_image(h: usize, w: usize) -> ImageBuffer {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                px.push((0.5 + 0.4 * (3.0 * u).sin() * (2.0 * v).cos()) as f32);
                px.push((0.3 + 0.5 * u * v) as f32);
                px.push((0.5 + 0.3 * (2.0 * v + u).sin()) as f32);
            }
        }
        ImageBuffer::new(h, w, px).unwrap()
    }

    #[test]
    fn unit_jitter_is_identity() {
        let img = random_image(9, 7, 1);
        assert_eq!(color_jitter(&img, JitterFactors::IDENTITY).unwrap(), img);
    }

    #[test]
    fn brightness_scales() {
        let img = ImageBuffer::filled(3, 3, [0.25; 3]).unwrap();
        let out = color_jitter(&img, JitterFactors { brightness: 2.0, ..JitterFactors::IDENTITY }).unwrap();
        assert!(out.pixels().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn half_turn_hue_maps_red_to_cyan() {
        let img = ImageBuffer::filled(1, 1, [1.0, 0.0, 0.0]).unwrap();
        let out = color_jitter(&img, JitterFactors { hue_shift: 0.5, ..JitterFactors::IDENTITY }).unwrap();
        assert_eq!(out.get(0, 0), [0.0, 1.0, 1.0]);
    }

    #[test]
    fn contrast_and_saturation_formulas() {
        let img = ImageBuffer::new(1, 2, vec![0.2, 0.4, 0.6, 0.8, 0.6, 0.4]).unwrap();
        let mean = (luma([0.2, 0.4, 0.6]) + luma([0.8, 0.6, 0.4])) / 2.0;
        let out = color_jitter(&img, JitterFactors { contrast: 0.5, ..JitterFactors::IDENTITY }).unwrap();
        for (o, i) in out.pixels().iter().zip(img.pixels()) {
            assert!((f64::from(*o) - (mean + (f64::from(*i) - mean) * 0.5)).abs() < 1e-6);
        }
        let out = color_jitter(&img, JitterFactors { saturation: 0.0, ..JitterFactors::IDENTITY }).unwrap();
        let g = luma([0.2, 0.4, 0.6]) as f32;
        assert!(out.get(0, 0).iter().all(|&c| (c - g).abs() < 1e-6));
    }

    #[test]
    fn jitter_rejects_non_finite() {
        let img = random_image(2, 2, 0);
        assert!(color_jitter(&img, JitterFactors { brightness: f64::NAN, ..JitterFactors::IDENTITY }).is_err());
        assert!(color_jitter(&img, JitterFactors { hue_shift: f64::INFINITY, ..JitterFactors::IDENTITY }).is_err());
    }

    #[test]
    fn hue_roundtrip() {
        let img = random_image(16, 16, 5);
        let there = color_jitter(&img, JitterFactors { hue_shift: 0.17, ..JitterFactors::IDENTITY }).unwrap();
        let back = color_jitter(&there, JitterFactors { hue_shift: -0.17, ..JitterFactors::IDENTITY }).unwrap();
        for (i, px) in img.pixels().chunks_exact(3).enumerate() {
            let hsv = rgb_to_hsv([px[0].into(), px[1].into(), px[2].into()]);
            if hsv[1] <= 0.1 {
                continue;
            }
            for (b, p) in back.pixels()[3 * i..3 * i + 3].iter().zip(px) {
                assert!((b - p).abs() <= 1e-6, "pixel {i}");
            }
        }
    }

    #[test]
    fn jitter_sampling_ranges() {
        let cfg = AugmentConfig {
            brightness: 0.0,
            hue: 0.0,
            ..AugmentConfig::default()
        };
        let mut r = rng(3);
        for _ in 0..100 {
            let f = sample_jitter_factors(&cfg, &mut r);
            assert_eq!(f.brightness, 1.0);
            assert_eq!(f.hue_shift, 0.0);
            assert!((0.6..1.4).contains(&f.contrast));
        }
        let a = sample_jitter_factors(&AugmentConfig::default(), &mut rng(9));
        let b = sample_jitter_factors(&AugmentConfig::default(), &mut rng(9));
        assert_eq!(a, b);
    }

    #[test]
    fn full_crop_is_identity() {
        let img = random_image(6, 8, 2);
        let cfg = AugmentConfig {
            crop_scale: (1.0, 1.0),
            crop_ratio: (8.0 / 6.0, 8.0 / 6.0),
            out_size: (6, 8),
            ..AugmentConfig::default()
        };
        assert_eq!(random_resized_crop(&img, &cfg, &mut rng(0)).unwrap(), img);
    }

    #[test]
    fn forced_crop_extracts_quadrant() {
        let img = random_image(4, 4, 4);
        let out = crop_resize(&img, CropRect { x: 0, y: 0, w: 2, h: 2 }, (2, 2)).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(out.get(x, y), img.get(x, y));
            }
        }
    }

    #[test]
    fn crop_output_shape() {
        let img = random_image(13, 21, 4);
        let cfg = AugmentConfig {
            out_size: (8, 8),
            ..AugmentConfig::default()
        };
        for seed in 0..20 {
            let out = random_resized_crop(&img, &cfg, &mut rng(seed)).unwrap();
            assert_eq!((out.height(), out.width()), (8, 8));
        }
        assert!(random_resized_crop(&random_image(1, 5, 0), &cfg, &mut rng(0)).is_err());
    }

    #[test]
    fn crop_fallback_is_centered() {
        let cfg = AugmentConfig {
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            ..AugmentConfig::default()
        };
        // A 4x10 image cannot hold a square of its own area, so every attempt fails.
        let rect = sample_crop(4, 10, &cfg, &mut rng(0));
        assert_eq!(rect, CropRect { x: 3, y: 0, w: 4, h: 4 });
    }

    #[test]
    fn affine_identity_and_translation() {
        let img = random_image(5, 6, 6);
        assert_eq!(affine(&img, &IDENTITY_AFFINE).unwrap(), img);
        let shifted = affine(&img, &[[1.0, 0.0, 6.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!(shifted.pixels().iter().all(|&p| p == 0.0));
        let err = affine(&img, &[[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]).unwrap_err();
        assert!(err.to_string().contains("degenerate affine"));
    }

    #[test]
    fn quarter_turn_permutes_corners() {
        let (a, b, c, d) = ([0.1f32; 3], [0.4f32; 3], [0.7f32; 3], [0.9f32; 3]);
        // Input layout: (0,0)=a, (1,0)=b, (1,1)=c, (0,1)=d.
        let mut px = Vec::new();
        for p in [a, b, d, c] {
            px.extend(p);
        }
        let img = ImageBuffer::new(2, 2, px).unwrap();
        let out = affine(&img, &rotation_scale_translate(2, 2, 90.0, 1.0, 0.0, 0.0)).unwrap();
        // Rotating +90° about (0.5, 0.5) sends (0,0)->(1,0), (1,0)->(1,1), (1,1)->(0,1), (0,1)->(0,0).
        let expect = [((1, 0), a), ((1, 1), b), ((0, 1), c), ((0, 0), d)];
        for ((x, y), want) in expect {
            let got = out.get(x, y);
            for ch in 0..3 {
                assert!((got[ch] - want[ch]).abs() < 1e-6, "({x},{y})");
            }
        }
    }

    #[test]
    fn affine_composition() {
        let img = smooth_image(40, 40);
        let m1 = rotation_scale_translate(40, 40, 7.0, 1.05, 1.5, -0.5);
        let m2 = rotation_scale_translate(40, 40, -4.0, 0.97, -1.0, 2.0);
        let twice = affine(&affine(&img, &m1).unwrap(), &m2).unwrap();
        let once = affine(&img, &compose(&m2, &m1)).unwrap();
        let inv2 = invert(&m2).unwrap();
        let inv12 = invert(&compose(&m2, &m1)).unwrap();
        let inside = |m: &AffineMatrix, x: f64, y: f64| {
            let sx = m[0][0] * x + m[0][1] * y + m[0][2];
            let sy = m[1][0] * x + m[1][1] * y + m[1][2];
            (1.0..=38.0).contains(&sx) && (1.0..=38.0).contains(&sy)
        };
        let mut checked = 0;
        for y in 0..40 {
            for x in 0..40 {
                let (xf, yf) = (x as f64, y as f64);
                if inside(&inv2, xf, yf) && inside(&inv12, xf, yf) {
                    checked += 1;
                    for c in 0..3 {
                        assert!((twice.get(x, y)[c] - once.get(x, y)[c]).abs() <= 2.0 / 255.0);
                    }
                }
            }
        }
        assert!(checked > 800);
    }

    #[test]
    fn degenerate_pipeline_is_resize() {
        let img = random_image(10, 15, 8);
        let cfg = AugmentConfig {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.5, 1.5),
            affine_degrees: 0.0,
            affine_translate: 0.0,
            affine_scale: (1.0, 1.0),
            out_size: (6, 7),
            seed: 0,
        };
        let out = augment_pipeline(&img, &cfg, &mut rng(11)).unwrap();
        assert_eq!(out, resize(&img, (6, 7)).unwrap());
    }

    #[test]
    fn pipeline_seeding() {
        let img = random_image(32, 32, 12);
        let cfg = AugmentConfig {
            out_size: (16, 16),
            ..AugmentConfig::default()
        };
        let a = augment_pipeline(&img, &cfg, &mut rng(1)).unwrap();
        assert_eq!(a, augment_pipeline(&img, &cfg, &mut rng(1)).unwrap());
        let outs: Vec<_> = (0..10).map(|s| augment_pipeline(&img, &cfg, &mut rng(100 + s)).unwrap()).collect();
        for i in 0..outs.len() {
            for j in i + 1..outs.len() {
                assert_ne!(outs[i], outs[j]);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        assert!(AugmentConfig { hue: 0.6, ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { crop_scale: (0.9, 0.5), ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { affine_translate: 1.0, ..Default::default() }.validate().is_err());
    }
}
