use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};
use crate::gradcheck::{central_difference, relative_error};

/// One linear filter shared by every task:
/// `predict(x) = clamp(conv(x, kernel) + bias, 0, 1)` with edge replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterModel {
    radius: usize,
    kernel: Vec<f64>,
    bias: f64,
    learning_rate: f64,
}

impl FilterModel {
    pub fn new(radius: usize, kernel: Vec<f64>, bias: f64, learning_rate: f64) -> Result<Self> {
        let side = 2 * radius + 1;
        if kernel.len() != side * side {
            return Err(Error::invalid(format!(
                "kernel of radius {radius} needs {} taps, got {}",
                side * side,
                kernel.len()
            )));
        }
        if kernel.iter().any(|k| !k.is_finite()) || !bias.is_finite() {
            return Err(Error::invalid("filter parameters must be finite"));
        }
        if !(learning_rate.is_finite() && learning_rate >= 0.0) {
            return Err(Error::invalid(format!("learning_rate = {learning_rate} must be >= 0")));
        }
        Ok(Self {
            radius,
            kernel,
            bias,
            learning_rate,
        })
    }

    /// Pass-through filter: unit centre tap, zero bias.
    pub fn identity(radius: usize, learning_rate: f64) -> Result<Self> {
        let side = 2 * radius + 1;
        let mut kernel = vec![0.0; side * side];
        kernel[radius * side + radius] = 1.0;
        Self::new(radius, kernel, 0.0, learning_rate)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Kernel taps followed by the bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.kernel.clone();
        p.push(self.bias);
        p
    }

    fn with_parameters(&self, params: &[f64]) -> Self {
        let n = self.kernel.len();
        Self {
            radius: self.radius,
            kernel: params[..n].to_vec(),
            bias: params[n],
            learning_rate: self.learning_rate,
        }
    }

    /// Filter response before clamping.
    fn response(&self, img: &Image) -> Vec<f64> {
        self.response_padded(&pad(img, self.radius), img.height(), img.width())
    }

    fn response_padded(&self, padded: &[f64], h: usize, w: usize) -> Vec<f64> {
        let side = 2 * self.radius + 1;
        let pw = w + 2 * self.radius;
        let mut out = vec![self.bias; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..side {
                    let src = &padded[(y + ky) * pw + x..][..side];
                    let taps = &self.kernel[ky * side..][..side];
                    for (k, v) in taps.iter().zip(src) {
                        acc += k * v;
                    }
                }
                out[y * w + x] += acc;
            }
        }
        out
    }

    pub fn predict(&self, img: &Image) -> Image {
        Image::from_clamped(img.height(), img.width(), self.response(img))
    }
}

/// Edge-replicated copy of `img` with `r` extra pixels on every side.
fn pad(img: &Image, r: usize) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let (ri, pw) = (r as isize, w + 2 * r);
    let mut out = Vec::with_capacity((h + 2 * r) * pw);
    for y in 0..(h + 2 * r) as isize {
        for x in 0..pw as isize {
            out.push(img.get_clamped(y - ri, x - ri));
        }
    }
    out
}

/// Mean L1 loss over all pixels of all pairs, and its subgradient with
/// respect to [`FilterModel::parameters`].
///
/// The subgradient of `|r|` is taken as 0 at `r = 0`, and pixels whose
/// response is clamped (at or outside `[0, 1]`) contribute no gradient.
/// Pairs are reduced in slice order.
pub fn loss_and_gradient(model: &FilterModel, pairs: &[(&Image, &Image)]) -> Result<(f64, Vec<f64>)> {
    let (loss, grad, _) = evaluate(model, pairs, false)?;
    Ok((loss, grad))
}

/// Returns loss, gradient and (optionally) the per-pixel kink pattern.
fn evaluate(model: &FilterModel, pairs: &[(&Image, &Image)], pattern: bool) -> Result<(f64, Vec<f64>, Vec<i8>)> {
    let Some((lq0, _)) = pairs.first() else {
        return Err(Error::invalid("empty batch"));
    };
    let n_params = model.kernel.len() + 1;
    let mut grad = vec![0.0; n_params];
    let mut loss = 0.0;
    let mut kinks = Vec::new();
    let mut count = 0usize;
    let side = 2 * model.radius + 1;
    for (lq, hq) in pairs {
        if !lq.same_shape(hq) || !lq.same_shape(lq0) {
            return Err(Error::invalid("all images in a batch must share one size"));
        }
        let padded = pad(lq, model.radius);
        let w = lq.width();
        let pw = w + 2 * model.radius;
        let resp = model.response_padded(&padded, lq.height(), w);
        for (i, &pre) in resp.iter().enumerate() {
            let pred = pre.clamp(0.0, 1.0);
            let residual = hq.pixels()[i] - pred;
            loss += residual.abs();
            count += 1;
            let inside = pre > 0.0 && pre < 1.0;
            if pattern {
                let sign = if residual > 0.0 { 1 } else if residual < 0.0 { -1 } else { 0 };
                kinks.push(if inside { sign } else { 2 + sign });
            }
            if !inside || residual == 0.0 {
                continue;
            }
            // d|hq - pred|/dpred = -sign(residual)
            let g = -residual.signum();
            let (y, x) = (i / w, i % w);
            for ky in 0..side {
                let src = &padded[(y + ky) * pw + x..][..side];
                for (gk, v) in grad[ky * side..][..side].iter_mut().zip(src) {
                    *gk += g * v;
                }
            }
            grad[n_params - 1] += g;
        }
    }
    let n = count as f64;
    for g in &mut grad {
        *g /= n;
    }
    Ok((loss / n, grad, kinks))
}

/// One full-batch subgradient step. Returns the updated model and the loss
/// measured before the step.
pub fn train_step_filter(model: &FilterModel, pairs: &[(&Image, &Image)]) -> Result<(FilterModel, f64)> {
    let (loss, grad) = loss_and_gradient(model, pairs)?;
    if model.learning_rate == 0.0 {
        return Ok((model.clone(), loss));
    }
    let params: Vec<f64> = model
        .parameters()
        .iter()
        .zip(&grad)
        .map(|(p, g)| p - model.learning_rate * g)
        .collect();
    Ok((model.with_parameters(&params), loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterGradCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation crossed a kink (zero residual or clamp
    /// boundary); central differences are meaningless there.
    pub skipped: usize,
}

/// Compares [`loss_and_gradient`] against central differences.
pub fn filter_gradient_check(model: &FilterModel, pairs: &[(&Image, &Image)], epsilon: f64) -> Result<FilterGradCheck> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon = {epsilon} outside [1e-7, 1e-3]")));
    }
    let (_, grad, base_pattern) = evaluate(model, pairs, true)?;
    let params = model.parameters();
    let mut report = FilterGradCheck {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + epsilon;
        let (plus, _, pat_plus) = evaluate(&model.with_parameters(&p), pairs, true)?;
        p[i] = params[i] - epsilon;
        let (minus, _, pat_minus) = evaluate(&model.with_parameters(&p), pairs, true)?;
        if pat_plus != base_pattern || pat_minus != base_pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = central_difference(plus, minus, epsilon);
        report.max_relative_error = report.max_relative_error.max(relative_error(grad[i], numeric));
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::generate_scene;

    #[test]
    fn perfect_prediction_is_stationary() {
        let hq = generate_scene(2, 16, 16).unwrap();
        let m = FilterModel::identity(1, 0.1).unwrap();
        let (next, loss) = train_step_filter(&m, &[(&hq, &hq)]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(next, m);
    }

    #[test]
    fn bias_moves_by_learning_rate() {
        let hq = Image::constant(16, 16, 0.6).unwrap();
        let lq = Image::constant(16, 16, 0.5).unwrap();
        let lr = 0.01;
        let m = FilterModel::identity(0, lr).unwrap();
        let (next, loss) = train_step_filter(&m, &[(&lq, &hq)]).unwrap();
        assert!((loss - 0.1).abs() < 1e-12);
        assert!((next.bias() - lr).abs() < 1e-15);
        assert!((next.kernel()[0] - (1.0 + lr * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_bit_identical() {
        let hq = generate_scene(4, 16, 16).unwrap();
        let lq = generate_scene(5, 16, 16).unwrap();
        let m = FilterModel::new(1, vec![0.1; 9], 0.05, 0.0).unwrap();
        let (next, _) = train_step_filter(&m, &[(&lq, &hq)]).unwrap();
        assert_eq!(next, m);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let hq = generate_scene(8, 16, 16).unwrap();
        let lq = generate_scene(9, 16, 16).unwrap();
        let hq2 = generate_scene(10, 16, 16).unwrap();
        let lq2 = generate_scene(11, 16, 16).unwrap();
        let m = FilterModel::new(1, vec![0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05], 0.02, 0.1).unwrap();
        let rep = filter_gradient_check(&m, &[(&lq, &hq), (&lq2, &hq2)], 1e-5).unwrap();
        assert!(rep.checked > 0);
        assert!(rep.max_relative_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn bad_inputs() {
        let a = Image::constant(16, 16, 0.5).unwrap();
        let b = Image::constant(17, 16, 0.5).unwrap();
        let m = FilterModel::identity(1, 0.1).unwrap();
        assert!(loss_and_gradient(&m, &[]).is_err());
        assert!(loss_and_gradient(&m, &[(&a, &b)]).is_err());
        assert!(FilterModel::new(1, vec![0.0; 4], 0.0, 0.1).is_err());
        assert!(filter_gradient_check(&m, &[(&a, &a)], 1e-2).is_err());
    }
}
