use super::{Raster, StimulusError};
use crate::par::{self, Execution};

/// Normalized 1-D Gaussian weights for offsets `-radius..=radius`,
/// with `radius = ceil(3 * sigma)`.
pub(crate) fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub fn apply_blur(image: &Raster, sigma: f64) -> Result<Raster, StimulusError> {
    apply_blur_with(image, sigma, Execution::default())
}

/// Gaussian blur with clamp-to-edge borders. The 2-D kernel is separable, so
/// rows then columns are convolved in floating point and rounded once.
pub fn apply_blur_with(image: &Raster, sigma: f64, exec: Execution) -> Result<Raster, StimulusError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(StimulusError::Domain(format!("blur sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let k = kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h, c) = (image.width as usize, image.height as usize, image.channels as usize);
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;

    let mut horiz = vec![0f64; w * h * c];
    par::for_each_chunk_mut(exec, &mut horiz, w * c, |y, row| {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, kv) in k.iter().enumerate() {
                    let sx = clamp(x as i64 + ki as i64 - r, w);
                    acc += kv * image.data[(y * w + sx) * c + ch] as f64;
                }
                row[x * c + ch] = acc;
            }
        }
    });

    let mut out = vec![0u8; w * h * c];
    par::for_each_chunk_mut(exec, &mut out, w * c, |y, row| {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, kv) in k.iter().enumerate() {
                    let sy = clamp(y as i64 + ki as i64 - r, h);
                    acc += kv * horiz[(sy * w + x) * c + ch];
                }
                row[x * c + ch] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    Ok(Raster { width: image.width, height: image.height, channels: image.channels, data: out })
}
