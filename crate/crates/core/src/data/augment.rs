//! Geometric and sharpening augmentations. All resampling is nearest
//! neighbour with zero fill, so results are bit-reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::ImageSample;
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentationOp {
    /// Counter-clockwise rotation about the image centre, degrees in (-180, 180].
    Rotate { degrees: f64 },
    Reflect { axis: Axis },
    /// Moves content right by `dx` and down by `dy`.
    Shift { dx: i32, dy: i32 },
    /// 3×3 kernel `[[0,-1,0],[-1,5,-1],[0,-1,0]]`, edges replicated.
    Sharpen,
    Crop { x: usize, y: usize, width: usize, height: usize },
    /// Centre zoom; factor > 1 magnifies.
    Zoom { factor: f64 },
}

impl AugmentationOp {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        match *self {
            AugmentationOp::Rotate { degrees } if !(degrees > -180.0 && degrees <= 180.0) => {
                Err(Error::input(format!("rotation {degrees} outside (-180, 180]")))
            }
            AugmentationOp::Zoom { factor } if !(factor > 0.0 && factor.is_finite()) => {
                Err(Error::input(format!("zoom factor {factor} must be positive")))
            }
            AugmentationOp::Crop {
                x,
                y,
                width: cw,
                height: ch,
            } if cw == 0 || ch == 0 || x + cw > width || y + ch > height => Err(Error::input(format!(
                "crop box ({x}, {y}, {cw}x{ch}) outside {width}x{height} image"
            ))),
            _ => Ok(()),
        }
    }
}

pub fn augment(sample: &ImageSample, op: &AugmentationOp) -> Result<ImageSample> {
    let (w, h) = (sample.width(), sample.height());
    op.validate(w, h)?;
    match *op {
        AugmentationOp::Rotate { degrees } => {
            let (sin, cos) = exact_sin_cos(degrees);
            // Output (x, y) samples the source at R(-θ)(p - c) + c; y points down,
            // so a counter-clockwise turn on screen is a clockwise turn in (x, y).
            Ok(resample(sample, |x, y| {
                (cos * x - sin * y, sin * x + cos * y)
            }))
        }
        AugmentationOp::Zoom { factor } => Ok(resample(sample, |x, y| (x / factor, y / factor))),
        AugmentationOp::Reflect { axis } => {
            let mut out = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    out.push(match axis {
                        Axis::Horizontal => sample.get(w - 1 - x, y),
                        Axis::Vertical => sample.get(x, h - 1 - y),
                    });
                }
            }
            sample.with_pixels(w, h, out)
        }
        AugmentationOp::Shift { dx, dy } => {
            let mut out = vec![0u8; w * h];
            for y in 0..h {
                for x in 0..w {
                    let sx = x as i64 - dx as i64;
                    let sy = y as i64 - dy as i64;
                    if (0..w as i64).contains(&sx) && (0..h as i64).contains(&sy) {
                        out[y * w + x] = sample.get(sx as usize, sy as usize);
                    }
                }
            }
            sample.with_pixels(w, h, out)
        }
        AugmentationOp::Sharpen => {
            let at = |x: i64, y: i64| -> i32 {
                sample.get(x.clamp(0, w as i64 - 1) as usize, y.clamp(0, h as i64 - 1) as usize) as i32
            };
            let mut out = Vec::with_capacity(w * h);
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let v = 5 * at(x, y) - at(x - 1, y) - at(x + 1, y) - at(x, y - 1) - at(x, y + 1);
                    out.push(v.clamp(0, 255) as u8);
                }
            }
            sample.with_pixels(w, h, out)
        }
        AugmentationOp::Crop {
            x,
            y,
            width,
            height,
        } => {
            let mut out = Vec::with_capacity(width * height);
            for yy in y..y + height {
                out.extend_from_slice(&sample.pixels()[yy * w + x..yy * w + x + width]);
            }
            sample.with_pixels(width, height, out)
        }
    }
}

/// sin/cos with exact values at multiples of 90°, so quarter turns of square
/// images are exact permutations.
fn exact_sin_cos(degrees: f64) -> (f64, f64) {
    let quarter = degrees / 90.0;
    if quarter.fract() == 0.0 {
        match (quarter as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        let r = degrees.to_radians();
        (r.sin(), r.cos())
    }
}

/// Fills each output pixel from the source location given by `map` applied
/// to centre-relative coordinates; outside samples are zero.
fn resample(sample: &ImageSample, map: impl Fn(f64, f64) -> (f64, f64)) -> ImageSample {
    let (w, h) = (sample.width(), sample.height());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64 - cx, y as f64 - cy);
            let (sx, sy) = ((sx + cx).round(), (sy + cy).round());
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out[y * w + x] = sample.get(sx as usize, sy as usize);
            }
        }
    }
    sample.with_pixels(w, h, out).expect("same dimensions")
}

/// Magnitudes for randomly drawn augmentations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub max_rotation_degrees: f64,
    pub max_shift: i32,
    pub zoom_range: (f64, f64),
    /// Crop keeps at least this fraction of each side, then resizes back.
    pub min_crop_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_degrees: 15.0,
            max_shift: 3,
            zoom_range: (0.9, 1.15),
            min_crop_fraction: 0.8,
        }
    }
}

/// Draws one operation for a `width`×`height` image.
pub fn random_op<R: Rng + ?Sized>(config: &AugmentConfig, width: usize, height: usize, rng: &mut R) -> AugmentationOp {
    match rng.random_range(0..6) {
        0 => {
            let m = config.max_rotation_degrees.clamp(0.0, 179.0);
            AugmentationOp::Rotate {
                degrees: if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 },
            }
        }
        1 => AugmentationOp::Reflect {
            axis: if rng.random_bool(0.5) { Axis::Horizontal } else { Axis::Vertical },
        },
        2 => {
            let s = config.max_shift.max(0);
            AugmentationOp::Shift {
                dx: rng.random_range(-s..=s),
                dy: rng.random_range(-s..=s),
            }
        }
        3 => AugmentationOp::Sharpen,
        4 => {
            let f = config.min_crop_fraction.clamp(0.1, 1.0);
            let cw = ((width as f64 * rng.random_range(f..=1.0)).round() as usize).clamp(1, width);
            let ch = ((height as f64 * rng.random_range(f..=1.0)).round() as usize).clamp(1, height);
            AugmentationOp::Crop {
                x: rng.random_range(0..=width - cw),
                y: rng.random_range(0..=height - ch),
                width: cw,
                height: ch,
            }
        }
        _ => {
            let (lo, hi) = config.zoom_range;
            AugmentationOp::Zoom {
                factor: if hi > lo { rng.random_range(lo..=hi) } else { lo },
            }
        }
    }
}

/// Applies one seeded random augmentation; crops are resized back so the
/// output keeps the input dimensions.
pub fn augment_random(sample: &ImageSample, config: &AugmentConfig, seed: u64) -> Result<ImageSample> {
    let mut rng = rng_from(seed, &[]);
    let op = random_op(config, sample.width(), sample.height(), &mut rng);
    augment(sample, &op)?.resize(sample.width(), sample.height())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> ImageSample {
        ImageSample::new("r", w, h, (0..w * h).map(|i| (i * 7 % 251) as u8 + 1).collect(), None).unwrap()
    }

    #[test]
    fn rotate_zero_is_identity() {
        let img = ramp(9, 12);
        assert_eq!(augment(&img, &AugmentationOp::Rotate { degrees: 0.0 }).unwrap(), img);
    }

    #[test]
    fn reflect_twice_is_identity() {
        let img = ramp(10, 8);
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let op = AugmentationOp::Reflect { axis };
            let once = augment(&img, &op).unwrap();
            assert_ne!(once, img);
            assert_eq!(augment(&once, &op).unwrap(), img);
        }
    }

    #[test]
    fn shift_moves_columns_with_zero_fill() {
        let img = ramp(8, 8);
        let out = augment(&img, &AugmentationOp::Shift { dx: 1, dy: 0 }).unwrap();
        for y in 0..8 {
            assert_eq!(out.get(0, y), 0);
            for x in 1..8 {
                assert_eq!(out.get(x, y), img.get(x - 1, y));
            }
        }
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let img = ImageSample::from_rows("t", &[&[1, 2], &[3, 4]], None).unwrap();
        let out = augment(&img, &AugmentationOp::Rotate { degrees: 90.0 }).unwrap();
        // The top-right pixel moves to the top-left.
        assert_eq!(out.pixels(), &[2, 4, 1, 3]);
    }

    #[test]
    fn sharpen_keeps_flat_regions() {
        let img = ImageSample::new("f", 8, 8, vec![100; 64], None).unwrap();
        assert_eq!(augment(&img, &AugmentationOp::Sharpen).unwrap(), img);
    }

    #[test]
    fn crop_bounds_checked() {
        let img = ramp(8, 8);
        let bad = AugmentationOp::Crop { x: 4, y: 0, width: 5, height: 8 };
        assert!(matches!(augment(&img, &bad), Err(Error::Input(_))));
        let ok = AugmentationOp::Crop { x: 1, y: 2, width: 3, height: 4 };
        let out = augment(&img, &ok).unwrap();
        assert_eq!((out.width(), out.height()), (3, 4));
        assert_eq!(out.get(0, 0), img.get(1, 2));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let img = ramp(8, 8);
        assert!(augment(&img, &AugmentationOp::Rotate { degrees: -180.0 }).is_err());
        assert!(augment(&img, &AugmentationOp::Rotate { degrees: 180.0 }).is_ok());
        assert!(augment(&img, &AugmentationOp::Zoom { factor: 0.0 }).is_err());
    }

    #[test]
    fn random_augmentation_is_seeded() {
        let img = ramp(16, 16);
        let cfg = AugmentConfig::default();
        for seed in 0..20 {
            let a = augment_random(&img, &cfg, seed).unwrap();
            assert_eq!(a, augment_random(&img, &cfg, seed).unwrap());
            assert_eq!((a.width(), a.height()), (16, 16));
        }
    }

    proptest! {
        #[test]
        fn quarter_and_half_turns_invert(n in 1usize..14, seed in any::<u64>(), quarter in prop::bool::ANY) {
            let pixels: Vec<u8> = (0..n * n).map(|i| (seed.wrapping_mul(i as u64 + 3) >> 17) as u8).collect();
            let img = ImageSample::new("s", n, n, pixels, None).unwrap();
            let a = if quarter { 90.0 } else { 180.0 };
            let fwd = augment(&img, &AugmentationOp::Rotate { degrees: a }).unwrap();
            let back = augment(&fwd, &AugmentationOp::Rotate { degrees: -a + if quarter { 0.0 } else { 360.0 } }).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
