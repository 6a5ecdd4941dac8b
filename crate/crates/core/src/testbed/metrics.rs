use super::image::Image;
use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_SENTINEL_DB: f64 = 99.0;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )))
    }
}

/// Peak signal-to-noise ratio in dB for unit peak.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    // Compensated sum, so constant-offset images give the exact closed form.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (x, y) in a.pixels().iter().zip(b.pixels()) {
        let v = (x - y) * (x - y);
        let t = sum + v;
        comp += if sum.abs() >= v { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    let mse = (sum + comp) / a.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_SENTINEL_DB);
    }
    // `+ 0.0` turns the -0.0 of a full-range error into 0.0.
    Ok(-10.0 * mse.log10() + 0.0)
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx);
        }
    }
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean structural similarity over every fully-contained 11x11 Gaussian
/// window (sigma 1.5), unit dynamic range.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let window = gaussian_window();
    let (h, w) = (a.height(), a.width());
    let mut total = 0.0;
    let mut n = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb) = (0.0, 0.0);
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let g = window[dy * SSIM_WINDOW + dx];
                    let (pa, pb) = (a.get(y0 + dy, x0 + dx), b.get(y0 + dy, x0 + dx));
                    ma += g * pa;
                    mb += g * pb;
                    saa += g * pa * pa;
                    sbb += g * pb * pb;
                    sab += g * pa * pb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            n += 1;
        }
    }
    Ok(total / n as f64)
}
