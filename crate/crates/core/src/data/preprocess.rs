use super::image::ImageSample;

/// Global histogram equalisation.
///
/// `out(v) = round((cdf(v) - cdf_min) / (N - cdf_min) * 255)` where `cdf_min`
/// is the smallest non-zero cumulative count. Constant images are returned
/// unchanged.
pub fn histogram_equalize(sample: &ImageSample) -> ImageSample {
    let mut hist = [0usize; 256];
    for &p in sample.pixels() {
        hist[p as usize] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let n = sample.pixels().len();
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if n == cdf_min {
        return sample.clone();
    }
    let denom = (n - cdf_min) as f64;
    let lut: Vec<u8> = cdf
        .iter()
        .map(|&c| {
            let v = (c.saturating_sub(cdf_min)) as f64 / denom * 255.0;
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    let pixels = sample.pixels().iter().map(|&p| lut[p as usize]).collect();
    sample
        .with_pixels(sample.width(), sample.height(), pixels)
        .expect("same dimensions")
}
