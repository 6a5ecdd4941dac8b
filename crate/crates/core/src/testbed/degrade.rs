use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

/// A synthetic degradation standing in for one restoration task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DegradationOp {
    /// Additive white Gaussian noise with standard deviation `sigma`.
    AdditiveGaussianNoise { sigma: f64 },
    /// Truncated Gaussian blur, `(2 * radius + 1)` taps per axis.
    GaussianBlur { radius: usize, sigma: f64 },
    /// `x -> x^gamma`.
    GammaDarken { gamma: f64 },
    /// Box-downsample by `factor`, then upsample back to the original grid.
    DownUp { factor: usize, interpolation: Interpolation },
}

impl DegradationOp {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DegradationOp::AdditiveGaussianNoise { sigma } if !(sigma.is_finite() && sigma >= 0.0) => {
                Err(Error::invalid(format!("noise sigma = {sigma} must be >= 0")))
            }
            DegradationOp::GaussianBlur { sigma, .. } if !(sigma.is_finite() && sigma >= 0.0) => {
                Err(Error::invalid(format!("blur sigma = {sigma} must be >= 0")))
            }
            DegradationOp::GammaDarken { gamma } if !(gamma.is_finite() && gamma > 0.0) => {
                Err(Error::invalid(format!("gamma = {gamma} must be > 0")))
            }
            DegradationOp::DownUp { factor, .. } if factor != 2 && factor != 4 => {
                Err(Error::invalid(format!("down-up factor = {factor} must be 2 or 4")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DegradationOp::AdditiveGaussianNoise { sigma } => format!("noise(sigma={sigma})"),
            DegradationOp::GaussianBlur { radius, sigma } => format!("blur(r={radius},sigma={sigma})"),
            DegradationOp::GammaDarken { gamma } => format!("darken(gamma={gamma})"),
            DegradationOp::DownUp { factor, interpolation } => {
                format!("downup(f={factor},{})", match interpolation {
                    Interpolation::Nearest => "nearest",
                    Interpolation::Bilinear => "bilinear",
                })
            }
        }
    }
}

/// Degrades `img`. Output is clamped to `[0, 1]`; `seed` only matters for noise.
pub fn apply_degradation(img: &Image, op: &DegradationOp, seed: u64) -> Result<Image> {
    op.validate()?;
    let (h, w) = (img.height(), img.width());
    let out = match *op {
        DegradationOp::AdditiveGaussianNoise { sigma } => {
            if sigma == 0.0 {
                return Ok(img.clone());
            }
            let mut rng = SeededRng::new(seed);
            img.pixels().iter().map(|p| p + sigma * rng.standard_normal()).collect()
        }
        DegradationOp::GaussianBlur { radius, sigma } => {
            if radius == 0 || sigma == 0.0 {
                return Ok(img.clone());
            }
            blur(img, &gaussian_taps(radius, sigma))
        }
        DegradationOp::GammaDarken { gamma } => {
            if gamma == 1.0 {
                return Ok(img.clone());
            }
            img.pixels().iter().map(|p| p.powf(gamma)).collect()
        }
        DegradationOp::DownUp { factor, interpolation } => down_up(img, factor, interpolation),
    };
    Ok(Image::from_clamped(h, w, out))
}

fn gaussian_taps(radius: usize, sigma: f64) -> Vec<f64> {
    let r = radius as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable convolution with edge replication.
fn blur(img: &Image, taps: &[f64]) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let r = (taps.len() / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * img.get_clamped(y as isize, x as isize + i as isize - r))
                .sum();
        }
    }
    let tmp = Image::from_clamped(h, w, rows);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp.get_clamped(y as isize + i as isize - r, x as isize))
                .sum();
        }
    }
    out
}

fn down_up(img: &Image, factor: usize, interpolation: Interpolation) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let (sh, sw) = (h.div_ceil(factor), w.div_ceil(factor));
    let mut small = vec![0.0; sh * sw];
    for sy in 0..sh {
        for sx in 0..sw {
            let (mut acc, mut n) = (0.0, 0usize);
            for y in sy * factor..((sy + 1) * factor).min(h) {
                for x in sx * factor..((sx + 1) * factor).min(w) {
                    acc += img.get(y, x);
                    n += 1;
                }
            }
            small[sy * sw + sx] = acc / n as f64;
        }
    }
    let at = |y: usize, x: usize| small[y * sw + x];
    let f = factor as f64;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = match interpolation {
                Interpolation::Nearest => at(y / factor, x / factor),
                Interpolation::Bilinear => {
                    // Half-pixel centres, clamped at the border.
                    let fy = ((y as f64 + 0.5) / f - 0.5).clamp(0.0, (sh - 1) as f64);
                    let fx = ((x as f64 + 0.5) / f - 0.5).clamp(0.0, (sw - 1) as f64);
                    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(sh - 1), (x0 + 1).min(sw - 1));
                    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                    let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                    let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                    top * (1.0 - ty) + bottom * ty
                }
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::generate_scene;

    #[test]
    fn identity_parameters_are_exact() {
        let img = generate_scene(5, 24, 24).unwrap();
        for op in [
            DegradationOp::AdditiveGaussianNoise { sigma: 0.0 },
            DegradationOp::GaussianBlur { radius: 0, sigma: 1.0 },
            DegradationOp::GammaDarken { gamma: 1.0 },
        ] {
            assert_eq!(apply_degradation(&img, &op, 9).unwrap(), img, "{op:?}");
        }
    }

    #[test]
    fn gamma_two_on_half() {
        let img = Image::constant(16, 16, 0.5).unwrap();
        let out = apply_degradation(&img, &DegradationOp::GammaDarken { gamma: 2.0 }, 0).unwrap();
        assert!(out.pixels().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Image::constant(16, 16, 0.3).unwrap();
        let out = apply_degradation(&img, &DegradationOp::GaussianBlur { radius: 2, sigma: 1.0 }, 0).unwrap();
        assert!(out.pixels().iter().all(|&p| (p - 0.3).abs() < 1e-15));
    }

    #[test]
    fn noise_is_seeded_and_clamped() {
        let img = generate_scene(1, 16, 16).unwrap();
        let op = DegradationOp::AdditiveGaussianNoise { sigma: 0.5 };
        let a = apply_degradation(&img, &op, 3).unwrap();
        assert_eq!(a, apply_degradation(&img, &op, 3).unwrap());
        assert_ne!(a, apply_degradation(&img, &op, 4).unwrap());
        assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn down_up_keeps_block_constant_images() {
        // A 2x2-block image survives nearest down-up exactly.
        let px: Vec<f64> = (0..16 * 16).map(|i| (((i / 16) / 2 + (i % 16) / 2) % 3) as f64 / 2.0).collect();
        let img = Image::new(16, 16, px).unwrap();
        let op = DegradationOp::DownUp { factor: 2, interpolation: Interpolation::Nearest };
        assert_eq!(apply_degradation(&img, &op, 0).unwrap(), img);
        let bil = DegradationOp::DownUp { factor: 4, interpolation: Interpolation::Bilinear };
        let out = apply_degradation(&img, &bil, 0).unwrap();
        assert_eq!((out.height(), out.width()), (16, 16));
        assert_ne!(out, img);
    }

    #[test]
    fn invalid_parameters() {
        let img = Image::constant(16, 16, 0.5).unwrap();
        for op in [
            DegradationOp::AdditiveGaussianNoise { sigma: -1.0 },
            DegradationOp::GammaDarken { gamma: 0.0 },
            DegradationOp::DownUp { factor: 3, interpolation: Interpolation::Nearest },
        ] {
            assert!(apply_degradation(&img, &op, 0).is_err());
        }
    }

    #[test]
    fn json_shape() {
        let op: DegradationOp = serde_json::from_str(r#"{"kind":"gaussian_blur","radius":2,"sigma":1.0}"#).unwrap();
        assert_eq!(op, DegradationOp::GaussianBlur { radius: 2, sigma: 1.0 });
        let op: DegradationOp = serde_json::from_str(r#"{"kind":"down_up","factor":2,"interpolation":"bilinear"}"#).unwrap();
        assert!(matches!(op, DegradationOp::DownUp { factor: 2, .. }));
    }
}
