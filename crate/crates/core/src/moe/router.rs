use super::tensor::{FeatureTensor, Matrix};
use crate::error::{Error, Result};
use crate::mixture::SIMPLEX_TOLERANCE;

/// One gating vector per expert, stacked as rows: `[n][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterParams {
    gates: Matrix,
}

impl RouterParams {
    pub fn new(gates: Matrix) -> Result<Self> {
        if !gates.is_finite() {
            return Err(Error::invalid("router gates must be finite"));
        }
        Ok(Self { gates })
    }

    pub fn gates(&self) -> &Matrix {
        &self.gates
    }

    pub(crate) fn gates_mut(&mut self) -> &mut Matrix {
        &mut self.gates
    }

    pub fn experts(&self) -> usize {
        self.gates.rows()
    }

    pub fn pooled_dim(&self) -> usize {
        self.gates.cols()
    }

    /// Adds `shift` to every gate vector.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        let gates = Matrix::from_fn(self.gates.rows(), self.gates.cols(), |r, c| self.gates.get(r, c) + shift[c]);
        Self { gates }
    }

    /// Logits `g_i · mean_tokens(z)`.
    pub fn logits(&self, z: &FeatureTensor) -> Result<Vec<f64>> {
        if z.dim() != self.pooled_dim() {
            return Err(Error::invalid(format!(
                "router expects dim {}, input has {}",
                self.pooled_dim(),
                z.dim()
            )));
        }
        if !z.is_finite() {
            return Err(Error::invalid("router input has non-finite entries"));
        }
        let pooled = z.mean_rows();
        Ok((0..self.experts())
            .map(|i| self.gates.row(i).iter().zip(&pooled).map(|(g, p)| g * p).sum())
            .collect())
    }
}

/// Non-negative expert weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertWeights {
    w: Vec<f64>,
}

impl ExpertWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("no expert weights"));
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("expert weights must be finite and >= 0"));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::invalid(format!("expert weights sum to {s}")));
        }
        Ok(Self { w })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Max-subtracted softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Softmax routing over the token-pooled input.
pub fn router_weights(params: &RouterParams, z: &FeatureTensor) -> Result<ExpertWeights> {
    if params.experts() == 0 {
        return Err(Error::invalid("router has no experts"));
    }
    ExpertWeights::new(softmax(&params.logits(z)?))
}

/// Exponentiated logits without the softmax denominator. Only exists as a
/// negative control for the invariant checks.
#[doc(hidden)]
pub fn router_weights_unnormalized(params: &RouterParams, z: &FeatureTensor) -> Result<Vec<f64>> {
    let logits = params.logits(z)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(logits.iter().map(|l| (l - max).exp()).collect())
}
