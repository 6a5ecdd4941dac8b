use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

pub const MIN_SCENE_SIDE: usize = 16;
const MIN_SCENE_VARIANCE: f64 = 0.01;

/// Single-channel image, row-major, pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    /// Wraps `pixels`, clamping every value to `[0, 1]`.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("image has non-finite pixels"));
        }
        Ok(Self::from_clamped(height, width, pixels))
    }

    pub(crate) fn from_clamped(height: usize, width: usize, mut pixels: Vec<f64>) -> Self {
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Pixel with coordinates clamped to the border.
    pub fn get_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.pixels[y * self.width + x]
    }

    pub fn transposed(&self) -> Self {
        let mut out = vec![0.0; self.pixels.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                out[x * self.height + y] = self.get(y, x);
            }
        }
        Self {
            height: self.width,
            width: self.height,
            pixels: out,
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.pixels.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Procedural test scene: smooth Gaussian blobs over a flat background,
/// overlaid with hard-edged rectangles.
///
/// Scenes flatter than variance 0.01 are redrawn from a derived seed.
pub fn generate_scene(seed: u64, height: usize, width: usize) -> Result<Image> {
    if height < MIN_SCENE_SIDE || width < MIN_SCENE_SIDE {
        return Err(Error::invalid(format!(
            "scene must be at least {MIN_SCENE_SIDE}x{MIN_SCENE_SIDE}, got {height}x{width}"
        )));
    }
    let mut attempt_seed = seed;
    for attempt in 0u64.. {
        let img = draw_scene(attempt_seed, height, width);
        if img.variance() >= MIN_SCENE_VARIANCE {
            return Ok(img);
        }
        attempt_seed = derive_seed(seed, attempt + 1);
    }
    unreachable!()
}

fn draw_scene(seed: u64, height: usize, width: usize) -> Image {
    let mut rng = SeededRng::new(seed);
    let (h, w) = (height as f64, width as f64);
    let mut px = vec![0.15 + 0.35 * rng.uniform_f64(); height * width];

    let blobs = 3 + rng.below(4);
    for _ in 0..blobs {
        let cy = rng.uniform_f64() * h;
        let cx = rng.uniform_f64() * w;
        let sigma = 1.5 + rng.uniform_f64() * w.min(h) / 4.0;
        let amp = -0.35 + 0.85 * rng.uniform_f64();
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in 0..height {
            for x in 0..width {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                px[y * width + x] += amp * (-d2 * inv).exp();
            }
        }
    }

    let rects = 2 + rng.below(3);
    for _ in 0..rects {
        let rh = 3 + rng.below_usize(height / 2 - 2);
        let rw = 3 + rng.below_usize(width / 2 - 2);
        let y0 = rng.below_usize(height - rh + 1);
        let x0 = rng.below_usize(width - rw + 1);
        let level = rng.uniform_f64();
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                px[y * width + x] = level;
            }
        }
    }
    Image::from_clamped(height, width, px)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(generate_scene(11, 32, 32).unwrap(), generate_scene(11, 32, 32).unwrap());
    }

    #[test]
    fn neighbouring_seeds_differ() {
        for s in 0..50u64 {
            let a = generate_scene(s, 32, 32).unwrap();
            let b = generate_scene(s + 1, 32, 32).unwrap();
            let differing = a.pixels().iter().zip(b.pixels()).filter(|(x, y)| x != y).count();
            assert!(differing * 100 >= a.pixels().len(), "seed {s}: {differing}");
        }
    }

    #[test]
    fn size_bounds_and_variance() {
        assert!(generate_scene(0, 16, 16).is_ok());
        assert!(generate_scene(0, 15, 16).is_err());
        assert!(generate_scene(0, 16, 15).is_err());
        for s in 0..100 {
            let img = generate_scene(s, 16, 24).unwrap();
            assert!(img.variance() >= 0.01);
            assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let img = generate_scene(3, 16, 20).unwrap();
        let t = img.transposed();
        assert_eq!((t.height(), t.width()), (20, 16));
        assert_eq!(t.transposed(), img);
    }
}
