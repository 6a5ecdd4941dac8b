use serde::{Deserialize, Serialize};

use super::experts::{expert_trace, ExpertParams, ExpertTrace};
use super::router::{router_weights, softmax, ExpertWeights, RouterParams};
use super::tensor::{FeatureTensor, Matrix};
use crate::error::{Error, Result};
use crate::gradcheck::{central_difference, relative_error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingMode {
    /// Weighted sum over every expert.
    Soft,
    /// Only the `k` highest-weighted experts, weights renormalized over them.
    TopK(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeOutput {
    pub output: FeatureTensor,
    /// Weights actually applied; zero for experts dropped by top-k.
    pub weights: ExpertWeights,
}

/// Router plus experts, the full trainable state of the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeParams {
    pub router: RouterParams,
    pub experts: Vec<ExpertParams>,
}

impl MoeParams {
    pub fn parameter_count(&self) -> usize {
        self.router.gates().data().len()
            + self
                .experts
                .iter()
                .map(|e| e.projections().iter().map(|m| m.data().len()).sum::<usize>())
                .sum::<usize>()
    }

    /// Mutable reference to flat parameter `index` (router first, then each
    /// expert's Wq, Wk, Wv).
    pub(crate) fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        let n = self.router.gates().data().len();
        if index < n {
            return &mut self.router.gates_mut().data_mut()[index];
        }
        index -= n;
        for e in &mut self.experts {
            for m in e.projections_mut() {
                let len = m.data().len();
                if index < len {
                    return &mut m.data_mut()[index];
                }
                index -= len;
            }
        }
        panic!("parameter index out of range")
    }
}

/// Indices of the `k` largest weights (lower index wins ties), sorted.
fn top_k_indices(w: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let mut sel = order[..k.min(w.len())].to_vec();
    sel.sort_unstable();
    sel
}

/// Selected experts, then each expert's sparse-attention keep masks.
type Signature = (Vec<usize>, Vec<Vec<Vec<usize>>>);

pub(crate) struct MoeTrace {
    pub logits: Vec<f64>,
    pub pooled: Vec<f64>,
    /// Experts taking part in the combination, ascending.
    pub selected: Vec<usize>,
    /// Applied weights over all experts.
    pub weights: Vec<f64>,
    /// Forward traces of the selected experts, parallel to `selected`.
    pub experts: Vec<ExpertTrace>,
    pub output: FeatureTensor,
}

impl MoeTrace {
    /// Discrete choices made in the forward pass: expert selection and
    /// sparse-attention masks.
    pub fn signature(&self) -> Signature {
        (
            self.selected.clone(),
            self.experts.iter().map(|e| e.mask().to_vec()).collect(),
        )
    }
}

pub(crate) fn moe_trace(
    z: &FeatureTensor,
    experts: &[ExpertParams],
    router: &RouterParams,
    mode: GatingMode,
) -> Result<MoeTrace> {
    let n = experts.len();
    if n == 0 {
        return Err(Error::invalid("at least one expert is required"));
    }
    if router.experts() != n {
        return Err(Error::invalid(format!(
            "router has {} gates for {n} experts",
            router.experts()
        )));
    }
    let logits = router.logits(z)?;
    let soft = router_weights(router, z)?.weights().to_vec();
    let (selected, weights) = match mode {
        GatingMode::Soft => ((0..n).collect(), soft),
        GatingMode::TopK(k) if k == 0 || k > n => {
            return Err(Error::invalid(format!("top-k needs 1 <= k <= {n}, got {k}")));
        }
        // Keeping every expert is soft gating; skipping the renormalization
        // keeps the two bit-identical.
        GatingMode::TopK(k) if k == n => ((0..n).collect(), soft),
        GatingMode::TopK(k) => {
            let sel = top_k_indices(&soft, k);
            let kept: f64 = sel.iter().map(|&i| soft[i]).sum();
            let mut w = vec![0.0; n];
            for &i in &sel {
                w[i] = soft[i] / kept;
            }
            (sel, w)
        }
    };
    let mut traces = Vec::with_capacity(selected.len());
    let mut output = Matrix::zeros(z.tokens(), z.dim());
    for &i in &selected {
        let tr = expert_trace(&experts[i], z)?;
        output.add_scaled(&tr.output, weights[i]);
        traces.push(tr);
    }
    Ok(MoeTrace {
        logits,
        pooled: z.mean_rows(),
        selected,
        weights,
        experts: traces,
        output,
    })
}

/// `F(z) = Σ_i w_i E_i(z)` with router weights `w`, or its top-k variant.
pub fn moe_forward(
    z: &FeatureTensor,
    experts: &[ExpertParams],
    router: &RouterParams,
    mode: GatingMode,
) -> Result<MoeOutput> {
    let tr = moe_trace(z, experts, router, mode)?;
    Ok(MoeOutput {
        output: tr.output,
        weights: ExpertWeights::new(tr.weights)?,
    })
}

/// Which parameter groups receive gradients. Frozen groups get zeros, as in
/// a scheduler-only or backbone-only training phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub router: bool,
    pub experts: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        router: true,
        experts: true,
    };
}

/// Gradients laid out like [`MoeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MoeGradients {
    pub router: Matrix,
    pub experts: Vec<[Matrix; 3]>,
}

impl MoeGradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.router.data().to_vec();
        for e in &self.experts {
            for m in e {
                out.extend_from_slice(m.data());
            }
        }
        out
    }
}

/// Gradients of `<upstream, F(z)>` with respect to all parameters.
pub fn moe_backward(
    z: &FeatureTensor,
    params: &MoeParams,
    mode: GatingMode,
    upstream: &Matrix,
    trainable: Trainable,
) -> Result<MoeGradients> {
    let tr = moe_trace(z, &params.experts, &params.router, mode)?;
    if upstream.shape() != tr.output.shape() {
        return Err(Error::invalid("upstream gradient shape differs from the output"));
    }
    let n = params.experts.len();
    let d = z.dim();
    let mut experts: Vec<[Matrix; 3]> = (0..n)
        .map(|_| [Matrix::zeros(d, d), Matrix::zeros(d, d), Matrix::zeros(d, d)])
        .collect();
    let mut router = Matrix::zeros(n, d);

    // dL/dw_i over selected experts.
    let dw: Vec<f64> = tr.experts.iter().map(|e| upstream.dot(&e.output)).collect();
    if trainable.experts {
        for (slot, &i) in tr.selected.iter().enumerate() {
            let g = upstream.scale(tr.weights[i]);
            experts[i] = tr.experts[slot].backward(&g);
        }
    }
    if trainable.router {
        // Applied weights are a softmax over the selected logits, so the
        // softmax Jacobian applies within the selection.
        let sel_w: Vec<f64> = softmax(&tr.selected.iter().map(|&i| tr.logits[i]).collect::<Vec<_>>());
        let inner: f64 = sel_w.iter().zip(&dw).map(|(w, g)| w * g).sum();
        for (slot, &i) in tr.selected.iter().enumerate() {
            let dl = sel_w[slot] * (dw[slot] - inner);
            for c in 0..d {
                router.data_mut()[i * d + c] = dl * tr.pooled[c];
            }
        }
    }
    Ok(MoeGradients { router, experts })
}

/// What a gradient check differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradComponent {
    /// Router gates under the loss `Σ_i (i + 1) w_i`. The plain sum of the
    /// weights is identically 1, so it carries no gradient.
    Router,
    /// All projections of one expert under `Σ E(z)`.
    Expert(usize),
    /// Only the value projection of one expert; the loss is linear in it.
    ValueProjection(usize),
    /// The whole layer under `Σ F(z)`.
    Moe(GatingMode),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters skipped because a ±ε perturbation changed a discrete
    /// choice (top-k selection or sparse mask).
    pub skipped: usize,
}

impl GradCheckReport {
    /// True when the check ran into a non-differentiable point.
    pub fn hit_nondifferentiable(&self) -> bool {
        self.skipped > 0
    }
}

/// Compares analytic gradients against central finite differences and
/// reports the largest relative error over the checked parameters.
pub fn gradient_check(
    component: GradComponent,
    z: &FeatureTensor,
    params: &MoeParams,
    epsilon: f64,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon = {epsilon} outside [1e-7, 1e-3]")));
    }
    let n = params.experts.len();
    let router_len = params.router.gates().data().len();
    let d = z.dim();
    let block = d * d;
    let expert_offset = |i: usize| router_len + i * 3 * block;

    let (upstream_w, range): (Option<Vec<f64>>, std::ops::Range<usize>) = match component {
        GradComponent::Router => (Some((1..=n).map(|i| i as f64).collect()), 0..router_len),
        GradComponent::Expert(i) | GradComponent::ValueProjection(i) => {
            if i >= n {
                return Err(Error::invalid(format!("expert {i} out of range")));
            }
            let start = expert_offset(i);
            let start = if matches!(component, GradComponent::ValueProjection(_)) {
                start + 2 * block
            } else {
                start
            };
            (None, start..expert_offset(i) + 3 * block)
        }
        GradComponent::Moe(_) => (None, 0..params.parameter_count()),
    };

    // Scalar loss and its analytic gradient.
    let loss_of = |p: &MoeParams| -> Result<(f64, Signature)> {
        match component {
            GradComponent::Router => {
                let w = router_weights(&p.router, z)?;
                let c = upstream_w.as_ref().unwrap();
                Ok((w.weights().iter().zip(c).map(|(a, b)| a * b).sum(), Default::default()))
            }
            GradComponent::Expert(i) | GradComponent::ValueProjection(i) => {
                let tr = expert_trace(&p.experts[i], z)?;
                Ok((tr.output.sum(), (vec![], vec![tr.mask().to_vec()])))
            }
            GradComponent::Moe(mode) => {
                let tr = moe_trace(z, &p.experts, &p.router, mode)?;
                Ok((tr.output.sum(), tr.signature()))
            }
        }
    };

    let analytic: Vec<f64> = match component {
        GradComponent::Router => {
            let w = router_weights(&params.router, z)?;
            let c = upstream_w.as_ref().unwrap();
            let w = w.weights();
            let inner: f64 = w.iter().zip(c).map(|(a, b)| a * b).sum();
            let pooled = z.mean_rows();
            let mut g = Vec::with_capacity(router_len);
            for i in 0..n {
                for p in &pooled {
                    g.push(w[i] * (c[i] - inner) * p);
                }
            }
            g
        }
        GradComponent::Expert(i) | GradComponent::ValueProjection(i) => {
            let tr = expert_trace(&params.experts[i], z)?;
            let ones = Matrix::from_fn(z.tokens(), d, |_, _| 1.0);
            let mut full = vec![0.0; params.parameter_count()];
            let grads = tr.backward(&ones);
            let mut at = expert_offset(i);
            for m in &grads {
                full[at..at + block].copy_from_slice(m.data());
                at += block;
            }
            full
        }
        GradComponent::Moe(mode) => {
            let ones = Matrix::from_fn(z.tokens(), d, |_, _| 1.0);
            moe_backward(z, params, mode, &ones, Trainable::ALL)?.flatten()
        }
    };

    let (_, base_sig) = loss_of(params)?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for idx in range {
        let mut plus = params.clone();
        *plus.parameter_mut(idx) += epsilon;
        let mut minus = params.clone();
        *minus.parameter_mut(idx) -= epsilon;
        let (lp, sp) = loss_of(&plus)?;
        let (lm, sm) = loss_of(&minus)?;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = central_difference(lp, lm, epsilon);
        report.max_relative_error = report.max_relative_error.max(relative_error(analytic[idx], numeric));
        report.checked += 1;
    }
    Ok(report)
}
