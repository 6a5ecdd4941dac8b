use super::tensor::{FeatureTensor, Matrix};
use crate::error::{Error, Result};

/// Sparsity used when a sparse expert is built without one.
pub const DEFAULT_KEEP_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpertKind {
    /// Attention across tokens.
    Spatial,
    /// Attention across feature channels (the transposed view).
    Channel,
    /// Token attention keeping only the top fraction of scores per query.
    Sparse,
}

/// Query/key/value projections of one attention expert, each `[dim][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertParams {
    kind: ExpertKind,
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    keep_fraction: f64,
}

impl ExpertParams {
    pub fn new(kind: ExpertKind, wq: Matrix, wk: Matrix, wv: Matrix) -> Result<Self> {
        Self::build(kind, wq, wk, wv, DEFAULT_KEEP_FRACTION)
    }

    pub fn sparse(wq: Matrix, wk: Matrix, wv: Matrix, keep_fraction: f64) -> Result<Self> {
        Self::build(ExpertKind::Sparse, wq, wk, wv, keep_fraction)
    }

    fn build(kind: ExpertKind, wq: Matrix, wk: Matrix, wv: Matrix, keep_fraction: f64) -> Result<Self> {
        let d = wq.rows();
        for (name, w) in [("wq", &wq), ("wk", &wk), ("wv", &wv)] {
            if w.shape() != (d, d) {
                return Err(Error::invalid(format!("{name} must be {d}x{d}, got {:?}", w.shape())));
            }
            if !w.is_finite() {
                return Err(Error::invalid(format!("{name} has non-finite entries")));
            }
        }
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return Err(Error::invalid(format!("keep fraction {keep_fraction} outside (0, 1]")));
        }
        Ok(Self {
            kind,
            wq,
            wk,
            wv,
            keep_fraction,
        })
    }

    pub fn kind(&self) -> ExpertKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn keep_fraction(&self) -> f64 {
        self.keep_fraction
    }

    pub fn projections(&self) -> [&Matrix; 3] {
        [&self.wq, &self.wk, &self.wv]
    }

    pub(crate) fn projections_mut(&mut self) -> [&mut Matrix; 3] {
        [&mut self.wq, &mut self.wk, &mut self.wv]
    }

    /// Same projections with a different expert type.
    pub fn with_kind(&self, kind: ExpertKind) -> Self {
        Self { kind, ..self.clone() }
    }
}

/// Row-softmax attention with an optional per-row top-`keep` mask.
pub(crate) struct Attention {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Attention probabilities; masked entries are exactly 0.
    pub p: Matrix,
    pub scale: f64,
    /// Kept key indices per row, sorted; empty when nothing is masked.
    pub mask: Vec<Vec<usize>>,
}

impl Attention {
    fn compute(q: Matrix, k: Matrix, v: Matrix, scale: f64, keep: Option<usize>) -> Self {
        let n = q.rows();
        let scores = q.matmul_t(&k).scale(scale);
        let mut p = Matrix::zeros(n, n);
        let mut mask = Vec::new();
        for i in 0..n {
            let row = scores.row(i);
            let kept: Option<Vec<usize>> = keep.filter(|&c| c < n).map(|c| {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                let mut kept = order[..c].to_vec();
                kept.sort_unstable();
                kept
            });
            let max = match &kept {
                Some(ks) => ks.iter().map(|&j| row[j]).fold(f64::NEG_INFINITY, f64::max),
                None => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            let dst = &mut p.data_mut()[i * n..(i + 1) * n];
            match &kept {
                Some(ks) => {
                    for &j in ks {
                        dst[j] = (row[j] - max).exp();
                    }
                }
                None => {
                    for (d, s) in dst.iter_mut().zip(row) {
                        *d = (s - max).exp();
                    }
                }
            }
            let sum: f64 = dst.iter().sum();
            for d in dst.iter_mut() {
                *d /= sum;
            }
            if let Some(ks) = kept {
                mask.push(ks);
            }
        }
        Self { q, k, v, p, scale, mask }
    }

    fn output(&self) -> Matrix {
        self.p.matmul(&self.v)
    }

    /// Gradients of `<G, P V>` with respect to Q, K and V.
    fn backward(&self, g: &Matrix) -> (Matrix, Matrix, Matrix) {
        let dv = self.p.t_matmul(g);
        let dp = g.matmul_t(&self.v);
        let n = self.p.rows();
        let mut ds = Matrix::zeros(n, n);
        for i in 0..n {
            let prow = self.p.row(i);
            let dprow = dp.row(i);
            let inner: f64 = prow.iter().zip(dprow).map(|(a, b)| a * b).sum();
            let dst = &mut ds.data_mut()[i * n..(i + 1) * n];
            for j in 0..n {
                dst[j] = prow[j] * (dprow[j] - inner) * self.scale;
            }
        }
        let dq = ds.matmul(&self.k);
        let dk = ds.t_matmul(&self.q);
        (dq, dk, dv)
    }
}

/// Forward state kept for the backward pass.
pub(crate) struct ExpertTrace {
    attention: Attention,
    /// The input in the orientation attention ran on.
    input: Matrix,
    channel: bool,
    pub output: FeatureTensor,
}

impl ExpertTrace {
    pub fn mask(&self) -> &[Vec<usize>] {
        &self.attention.mask
    }

    /// Parameter gradients `(dWq, dWk, dWv)` for upstream gradient `g`
    /// (shaped like the output).
    pub fn backward(&self, g: &Matrix) -> [Matrix; 3] {
        if self.channel {
            // q = Wq · Y, so dWq = dQ · Yᵀ.
            let (dq, dk, dv) = self.attention.backward(&g.transpose());
            [dq.matmul_t(&self.input), dk.matmul_t(&self.input), dv.matmul_t(&self.input)]
        } else {
            // q = X · Wq, so dWq = Xᵀ · dQ.
            let (dq, dk, dv) = self.attention.backward(g);
            [self.input.t_matmul(&dq), self.input.t_matmul(&dk), self.input.t_matmul(&dv)]
        }
    }
}

pub(crate) fn expert_trace(expert: &ExpertParams, z: &FeatureTensor) -> Result<ExpertTrace> {
    if z.dim() != expert.dim() {
        return Err(Error::invalid(format!(
            "expert expects dim {}, input has {}",
            expert.dim(),
            z.dim()
        )));
    }
    match expert.kind {
        ExpertKind::Spatial | ExpertKind::Sparse => {
            let keep = match expert.kind {
                ExpertKind::Sparse => Some((expert.keep_fraction * z.tokens() as f64).ceil() as usize),
                _ => None,
            };
            let scale = 1.0 / (z.dim() as f64).sqrt();
            let att = Attention::compute(z.matmul(&expert.wq), z.matmul(&expert.wk), z.matmul(&expert.wv), scale, keep);
            let output = att.output();
            Ok(ExpertTrace {
                attention: att,
                input: z.clone(),
                channel: false,
                output,
            })
        }
        ExpertKind::Channel => {
            let y = z.transpose();
            let scale = 1.0 / (z.tokens() as f64).sqrt();
            let att = Attention::compute(expert.wq.matmul(&y), expert.wk.matmul(&y), expert.wv.matmul(&y), scale, None);
            let output = att.output().transpose();
            Ok(ExpertTrace {
                attention: att,
                input: y,
                channel: true,
                output,
            })
        }
    }
}

/// Applies one attention expert; the output has the input's shape.
///
/// Spatial: `softmax(Q Kᵀ / √dim) V` with `Q = z Wq` etc. Channel: the same
/// on `zᵀ` with `Q = Wq zᵀ`, scaled by `1/√tokens`, transposed back. Sparse:
/// as spatial, but each query row keeps only its `⌈p · tokens⌉` highest
/// scores (lower index wins ties) before the softmax.
pub fn expert_forward(expert: &ExpertParams, z: &FeatureTensor) -> Result<FeatureTensor> {
    Ok(expert_trace(expert, z)?.output)
}
