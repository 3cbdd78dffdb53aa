//! Parametric synthetic datasets: each class is a mixture of distinct
//! pattern templates (bars, blobs, rings) plus Gaussian pixel noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::{ImageSample, MIN_TRAIN_SIDE};
use crate::error::{Error, Result};
use crate::rng::{rng_from, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    /// Standard deviation of the additive noise, in grey levels.
    pub noise_sigma: f64,
    pub intra_class_modes: usize,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::input("synthetic dataset needs at least 2 classes"));
        }
        if self.intra_class_modes < 1 {
            return Err(Error::input("intra_class_modes must be at least 1"));
        }
        if self.image_size < MIN_TRAIN_SIDE {
            return Err(Error::input(format!(
                "image_size {} too small for the pattern generator (minimum {MIN_TRAIN_SIDE})",
                self.image_size
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::input("noise_sigma must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pattern {
    /// Parallel stripes; `angle` in radians.
    Bars { angle: f64, period: f64, width: f64, phase: f64 },
    Blob { cx: f64, cy: f64, sigma: f64 },
    Ring { cx: f64, cy: f64, radius: f64, width: f64 },
}

impl Pattern {
    fn random<R: Rng + ?Sized>(size: f64, rng: &mut R) -> Self {
        let centre = |rng: &mut R| rng.random_range(0.25 * size..0.75 * size);
        match rng.random_range(0..3) {
            0 => {
                let period = rng.random_range(0.25 * size..0.5 * size);
                Pattern::Bars {
                    angle: rng.random_range(0..4) as f64 * std::f64::consts::FRAC_PI_4,
                    period,
                    width: rng.random_range(0.3..0.55) * period,
                    phase: rng.random_range(0.0..period),
                }
            }
            1 => Pattern::Blob {
                cx: centre(rng),
                cy: centre(rng),
                sigma: rng.random_range(0.08 * size..0.2 * size),
            },
            _ => Pattern::Ring {
                cx: centre(rng),
                cy: centre(rng),
                radius: rng.random_range(0.15 * size..0.3 * size),
                width: rng.random_range(0.06 * size..0.12 * size).max(1.0),
            },
        }
    }

    /// Foreground weight in `[0, 1]` at pixel centre `(x, y)`.
    fn weight(&self, x: f64, y: f64) -> f64 {
        match *self {
            Pattern::Bars {
                angle,
                period,
                width,
                phase,
            } => {
                let t = (x * angle.cos() + y * angle.sin() + phase).rem_euclid(period);
                if t < width {
                    1.0
                } else {
                    0.0
                }
            }
            Pattern::Blob { cx, cy, sigma } => {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
            Pattern::Ring { cx, cy, radius, width } => {
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                (1.0 - ((d - radius).abs() / width)).clamp(0.0, 1.0)
            }
        }
    }

    fn render(&self, size: usize, background: f64, foreground: f64) -> Vec<u8> {
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let w = self.weight(x as f64 + 0.5, y as f64 + 0.5);
                out.push((background + w * (foreground - background)).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

/// Minimum mean absolute pixel difference between any two templates.
const MIN_TEMPLATE_DISTANCE: f64 = 12.0;

fn mean_abs_diff(a: &[u8], b: &[u8]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / a.len() as f64
}

/// Noise-free templates, indexed `[class][mode]`.
pub fn synth_templates(spec: &SynthSpec, seed: u64) -> Result<Vec<Vec<ImageSample>>> {
    spec.validate()?;
    let size = spec.image_size;
    let mut rng = rng_from(seed, &[tag("synth-templates")]);
    let mut accepted: Vec<Vec<u8>> = vec![];
    let mut out = vec![];
    for class in 0..spec.classes {
        let mut modes = vec![];
        for mode in 0..spec.intra_class_modes {
            let mut attempts = 0;
            let pixels = loop {
                let pattern = Pattern::random(size as f64, &mut rng);
                let background = rng.random_range(0.0..40.0);
                let foreground = rng.random_range(170.0..255.0);
                let candidate = pattern.render(size, background, foreground);
                if accepted.iter().all(|t| mean_abs_diff(t, &candidate) >= MIN_TEMPLATE_DISTANCE) {
                    break candidate;
                }
                attempts += 1;
                if attempts > 1000 {
                    return Err(Error::input(format!(
                        "could not draw {} distinct templates at {size}x{size}",
                        spec.classes * spec.intra_class_modes
                    )));
                }
            };
            accepted.push(pixels.clone());
            modes.push(ImageSample::new(format!("template-c{class}-m{mode}"), size, size, pixels, Some(class))?);
        }
        out.push(modes);
    }
    Ok(out)
}

/// Sample `i` of a class uses mode `i % intra_class_modes`. Ids are
/// `c<class>-<index>`, zero-padded so lexical order matches generation order.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<Vec<ImageSample>> {
    synth_from_templates(spec, &synth_templates(spec, seed)?, seed)
}

/// Noisy samples drawn around fixed `templates`, with noise seeded by
/// `noise_seed`. Lets a second pool share the classes of a dataset.
pub fn synth_from_templates(spec: &SynthSpec, templates: &[Vec<ImageSample>], noise_seed: u64) -> Result<Vec<ImageSample>> {
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut out = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for (class, modes) in templates.iter().enumerate() {
        let mut rng = rng_from(noise_seed, &[tag("synth-noise"), class as u64]);
        for i in 0..spec.samples_per_class {
            let t = &modes[i % modes.len()];
            let pixels = t
                .pixels()
                .iter()
                .map(|&p| {
                    if spec.noise_sigma == 0.0 {
                        p
                    } else {
                        (p as f64 + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8
                    }
                })
                .collect();
            out.push(ImageSample::new(
                format!("c{class:02}-{i:05}"),
                spec.image_size,
                spec.image_size,
                pixels,
                Some(class),
            )?);
        }
    }
    Ok(out)
}

/// Mode index of sample `i` within its class.
pub fn synth_mode(spec: &SynthSpec, i: usize) -> usize {
    i % spec.intra_class_modes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(classes: usize, modes: usize, sigma: f64) -> SynthSpec {
        SynthSpec {
            classes,
            samples_per_class: 20,
            image_size: 32,
            noise_sigma: sigma,
            intra_class_modes: modes,
        }
    }

    #[test]
    fn noiseless_single_mode_classes_are_constant() {
        let data = synth_dataset(&spec(3, 1, 0.0), 4).unwrap();
        for c in 0..3 {
            let class: Vec<_> = data.iter().filter(|s| s.label == Some(c)).collect();
            assert_eq!(class.len(), 20);
            assert!(class.iter().all(|s| s.pixels() == class[0].pixels()));
        }
    }

    #[test]
    fn template_count_is_classes_times_modes() {
        let t = synth_templates(&spec(3, 5, 0.0), 9).unwrap();
        let flat: Vec<_> = t.iter().flatten().collect();
        assert_eq!(flat.len(), 15);
        for i in 0..flat.len() {
            for j in i + 1..flat.len() {
                assert_ne!(flat[i].pixels(), flat[j].pixels());
            }
        }
    }

    #[test]
    fn too_small_image_rejected() {
        let mut s = spec(2, 1, 0.0);
        s.image_size = 4;
        assert!(matches!(synth_dataset(&s, 0), Err(Error::Input(_))));
    }

    #[test]
    fn deterministic_under_seed() {
        let s = spec(2, 3, 10.0);
        assert_eq!(synth_dataset(&s, 1).unwrap(), synth_dataset(&s, 1).unwrap());
        assert_ne!(synth_dataset(&s, 1).unwrap(), synth_dataset(&s, 2).unwrap());
    }
}
