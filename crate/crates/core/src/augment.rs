//! Stochastic augmentation pipeline: random resized crop, axis flips,
//! rotation, optional cutout. Produces the two or three views per slice
//! that the contrastive and combined objectives consume.
//!
//! Augmentation is training-only; inference paths feed original images.
//!
//! Every view owns a derived RNG stream keyed by (global seed, epoch,
//! sample index, view index), so the view stream is reproducible and safe
//! to evaluate in parallel.

use crate::cohort::SliceImage;
use crate::seeding::{self, domain};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Minimum crop side, in pixels (clamped to the image side for tiny inputs).
const MIN_CROP_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AugmentConfig {
    pub crop_scale_low: f64,
    pub crop_scale_high: f64,
    pub rotation_degrees: f64,
    pub flip_prob: f64,
    pub cutout_enabled: bool,
    pub cutout_size_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_scale_low: 0.5,
            crop_scale_high: 1.0,
            rotation_degrees: 30.0,
            flip_prob: 0.5,
            cutout_enabled: false,
            cutout_size_fraction: 0.25,
        }
    }
}

impl AugmentConfig {
    /// Identity pipeline: every view is a copy of the source.
    pub fn identity() -> Self {
        AugmentConfig {
            crop_scale_low: 1.0,
            crop_scale_high: 1.0,
            rotation_degrees: 0.0,
            flip_prob: 0.0,
            cutout_enabled: false,
            cutout_size_fraction: 0.25,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.crop_scale_low > 0.0 && self.crop_scale_low <= 1.0) {
            return Err(format!(
                "aug.crop_low must be in (0,1], got {}",
                self.crop_scale_low
            ));
        }
        if !(self.crop_scale_high > 0.0 && self.crop_scale_high <= 1.0) {
            return Err(format!(
                "aug.crop_high must be in (0,1], got {}",
                self.crop_scale_high
            ));
        }
        if self.crop_scale_low > self.crop_scale_high {
            return Err(format!(
                "aug.crop_low ({}) exceeds aug.crop_high ({})",
                self.crop_scale_low, self.crop_scale_high
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(format!("aug.flip_p must be in [0,1], got {}", self.flip_prob));
        }
        if self.rotation_degrees < 0.0 {
            return Err(format!(
                "aug.rot_deg must be non-negative, got {}",
                self.rotation_degrees
            ));
        }
        if !(self.cutout_size_fraction > 0.0 && self.cutout_size_fraction < 1.0) {
            return Err(format!(
                "aug.cutout_frac must be in (0,1), got {}",
                self.cutout_size_fraction
            ));
        }
        Ok(())
    }
}

/// Two or three augmented views of one source slice.
#[derive(Debug, Clone)]
pub struct ViewSet {
    pub views: Vec<Array2<f32>>,
    pub origin_patient: String,
    pub origin_slice: usize,
}

/// Coordinates identifying one sample's position in the view stream.
#[derive(Debug, Clone, Copy)]
pub struct ViewStreamKey {
    pub global_seed: u64,
    pub epoch: u64,
    pub sample_index: u64,
}

impl ViewStreamKey {
    pub fn rng(&self, view_index: u64) -> ChaCha8Rng {
        seeding::stream(&[
            self.global_seed,
            domain::AUGMENT,
            self.epoch,
            self.sample_index,
            view_index,
        ])
    }
}

/// Extract a random sub-rectangle (area fraction uniform in `scale_range`)
/// and bilinearly resize it back to the source shape. The resample is
/// skipped entirely when the drawn crop is the full frame.
pub fn random_resized_crop(
    img: &Array2<f32>,
    rng: &mut ChaCha8Rng,
    scale_range: (f64, f64),
) -> Array2<f32> {
    let (h, w) = img.dim();
    let scale = rng.gen_range(scale_range.0..=scale_range.1);
    let side_factor = scale.sqrt();
    let crop_h = ((h as f64 * side_factor).round() as usize)
        .clamp(MIN_CROP_SIDE.min(h), h);
    let crop_w = ((w as f64 * side_factor).round() as usize)
        .clamp(MIN_CROP_SIDE.min(w), w);
    let y0 = rng.gen_range(0..=h - crop_h);
    let x0 = rng.gen_range(0..=w - crop_w);
    if crop_h == h && crop_w == w {
        return img.clone();
    }
    resize_bilinear(img, y0, x0, crop_h, crop_w, h, w)
}

/// Bilinear resize of img[y0.., x0..][..crop_h, ..crop_w] to (out_h, out_w).
fn resize_bilinear(
    img: &Array2<f32>,
    y0: usize,
    x0: usize,
    crop_h: usize,
    crop_w: usize,
    out_h: usize,
    out_w: usize,
) -> Array2<f32> {
    let sy = crop_h as f32 / out_h as f32;
    let sx = crop_w as f32 / out_w as f32;
    Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        // Half-pixel centers, clamped to the crop.
        let fy = ((r as f32 + 0.5) * sy - 0.5).clamp(0.0, (crop_h - 1) as f32);
        let fx = ((c as f32 + 0.5) * sx - 0.5).clamp(0.0, (crop_w - 1) as f32);
        let yb = fy.floor() as usize;
        let xb = fx.floor() as usize;
        let yt = (yb + 1).min(crop_h - 1);
        let xt = (xb + 1).min(crop_w - 1);
        let wy = fy - yb as f32;
        let wx = fx - xb as f32;
        let v00 = img[[y0 + yb, x0 + xb]];
        let v01 = img[[y0 + yb, x0 + xt]];
        let v10 = img[[y0 + yt, x0 + xb]];
        let v11 = img[[y0 + yt, x0 + xt]];
        let top = v00 * (1.0 - wx) + v01 * wx;
        let bot = v10 * (1.0 - wx) + v11 * wx;
        (top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0)
    })
}

/// Mirror horizontally and vertically, each with independent probability.
pub fn random_flip(img: &Array2<f32>, rng: &mut ChaCha8Rng, flip_prob: f64) -> Array2<f32> {
    let horizontal = rng.gen_bool(flip_prob);
    let vertical = rng.gen_bool(flip_prob);
    let mut out = img.clone();
    if horizontal {
        out.invert_axis(ndarray::Axis(1));
    }
    if vertical {
        out.invert_axis(ndarray::Axis(0));
    }
    out
}

/// Rotate about the image center by an angle uniform in [-max, +max]
/// degrees, bilinear interpolation, zero fill outside the source.
pub fn random_rotate(img: &Array2<f32>, rng: &mut ChaCha8Rng, max_degrees: f64) -> Array2<f32> {
    let angle_deg = rng.gen_range(-max_degrees..=max_degrees);
    if angle_deg == 0.0 {
        return img.clone();
    }
    rotate_bilinear(img, angle_deg as f32)
}

fn rotate_bilinear(img: &Array2<f32>, angle_deg: f32) -> Array2<f32> {
    let (h, w) = img.dim();
    let theta = angle_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    let sample = |fy: f32, fx: f32| -> f32 {
        // Zero-fill: out-of-range neighbours contribute nothing.
        if fy <= -1.0 || fx <= -1.0 || fy >= h as f32 || fx >= w as f32 {
            return 0.0;
        }
        let yb = fy.floor();
        let xb = fx.floor();
        let wy = fy - yb;
        let wx = fx - xb;
        let mut acc = 0.0;
        for (dy, wy_k) in [(0i64, 1.0 - wy), (1, wy)] {
            for (dx, wx_k) in [(0i64, 1.0 - wx), (1, wx)] {
                let y = yb as i64 + dy;
                let x = xb as i64 + dx;
                if y >= 0 && (y as usize) < h && x >= 0 && (x as usize) < w {
                    acc += img[[y as usize, x as usize]] * wy_k * wx_k;
                }
            }
        }
        acc
    };
    Array2::from_shape_fn((h, w), |(r, c)| {
        let dy = r as f32 - cy;
        let dx = c as f32 - cx;
        let src_y = cy + cos_t * dy - sin_t * dx;
        let src_x = cx + sin_t * dy + cos_t * dx;
        sample(src_y, src_x).clamp(0.0, 1.0)
    })
}

/// Zero one random square with side `size_fraction * min(H, W)`, placed
/// fully inside the image.
pub fn cutout(img: &Array2<f32>, rng: &mut ChaCha8Rng, size_fraction: f64) -> Array2<f32> {
    let (h, w) = img.dim();
    let side = ((h.min(w) as f64 * size_fraction).round() as usize).max(1);
    let side = side.min(h).min(w);
    let y0 = rng.gen_range(0..=h - side);
    let x0 = rng.gen_range(0..=w - side);
    let mut out = img.clone();
    out.slice_mut(ndarray::s![y0..y0 + side, x0..x0 + side])
        .fill(0.0);
    out
}

/// One full pipeline draw: crop -> flip -> rotate -> [cutout].
pub fn apply_pipeline(
    img: &Array2<f32>,
    rng: &mut ChaCha8Rng,
    config: &AugmentConfig,
) -> Array2<f32> {
    let out = random_resized_crop(img, rng, (config.crop_scale_low, config.crop_scale_high));
    let out = random_flip(&out, rng, config.flip_prob);
    let out = random_rotate(&out, rng, config.rotation_degrees);
    if config.cutout_enabled {
        cutout(&out, rng, config.cutout_size_fraction)
    } else {
        out
    }
}

/// Draw `n_views` independent views of one preprocessed slice.
pub fn make_views(
    img: &SliceImage,
    key: ViewStreamKey,
    n_views: usize,
    config: &AugmentConfig,
) -> ViewSet {
    assert!(
        (2..=3).contains(&n_views),
        "contrastive objectives use 2 or 3 views, got {n_views}"
    );
    let views = (0..n_views)
        .map(|v| {
            let mut rng = key.rng(v as u64);
            apply_pipeline(&img.pixels, &mut rng, config)
        })
        .collect();
    ViewSet {
        views,
        origin_patient: img.source_patient.clone(),
        origin_slice: img.slice_index,
    }
}
