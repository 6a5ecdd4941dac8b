use mixsched::moe::{
    expert_forward, gradient_check, moe_forward, random_matrix, random_params, router_weights,
    router_weights_unnormalized, ExpertKind, FeatureTensor, GatingMode, GradComponent, MoeParams, RouterParams,
    STANDARD_EXPERTS,
};
use mixsched::rng::{derive_seed, SeededRng};

use crate::config::MoeCheckConfig;
use crate::report::{GradientResult, InvariantResult, MoeReport, OutputSet};
use crate::{CliError, CommonArgs};

const SIMPLEX_TOLERANCE: f64 = 1e-9;
const SHIFT_TOLERANCE: f64 = 1e-12;
/// Relative agreement with the independent recomputation: a few ulps.
const RECOMPUTE_TOLERANCE: f64 = 1e-14;

pub fn run(cfg: &MoeCheckConfig, args: &CommonArgs, broken_router: bool) -> Result<(), CliError> {
    let report = execute(cfg, args, broken_router)?;
    let mut out = OutputSet::default();
    out.add_json("moe_report.json", &report)?;
    out.write_to(&args.out)?;
    for inv in report.invariants.iter().filter(|i| !i.passed) {
        eprintln!("FAILED {}: max deviation {:e} (tolerance {:e})", inv.name, inv.max_deviation, inv.tolerance);
    }
    for g in report.gradients.iter().filter(|g| !g.passed) {
        eprintln!("FAILED gradient {} seed {}: {:e}", g.component, g.seed, g.max_relative_error);
    }
    if report.passed {
        args.progress(format!("moe-check passed; max gradient error {:e}", report.max_gradient_error));
        Ok(())
    } else {
        Err(CliError::Runtime("moe-check: one or more checks failed; see moe_report.json".into()))
    }
}

/// Accumulates the worst deviation of one invariant over many cases.
struct Check {
    name: &'static str,
    cases: usize,
    max_deviation: f64,
    tolerance: f64,
    violated: bool,
}

impl Check {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            cases: 0,
            max_deviation: 0.0,
            tolerance,
            violated: false,
        }
    }

    fn observe(&mut self, deviation: f64) {
        self.cases += 1;
        if deviation.is_nan() || deviation > self.tolerance {
            self.violated = true;
        }
        if deviation.is_nan() || deviation > self.max_deviation {
            self.max_deviation = deviation;
        }
    }

    fn finish(self) -> InvariantResult {
        InvariantResult {
            name: self.name.to_string(),
            passed: !self.violated && self.cases > 0,
            cases: self.cases,
            max_deviation: self.max_deviation,
            tolerance: self.tolerance,
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `Σ_i w_i E_i(z)` recomputed from the router logits without the layer code.
fn reference_output(z: &FeatureTensor, p: &MoeParams) -> mixsched::Result<Vec<f64>> {
    let logits = p.router.logits(z)?;
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = e.iter().sum();
    let outs = p
        .experts
        .iter()
        .map(|x| expert_forward(x, z))
        .collect::<mixsched::Result<Vec<_>>>()?;
    Ok((0..z.data().len())
        .map(|idx| (0..outs.len()).map(|i| e[i] / total * outs[i].data()[idx]).sum())
        .collect())
}

pub fn execute(cfg: &MoeCheckConfig, args: &CommonArgs, broken_router: bool) -> Result<MoeReport, CliError> {
    if cfg.tokens == 0 || cfg.dim == 0 {
        return Err(CliError::Config(".tokens: tokens and dim must be >= 1".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Config(".seeds: at least one seed is required".into()));
    }
    if !(1e-7..=1e-3).contains(&cfg.epsilon) {
        return Err(CliError::Config(".epsilon: must be in [1e-7, 1e-3]".into()));
    }
    let seeds: Vec<u64> = cfg.seeds.iter().map(|&s| args.seed(s)).collect();
    args.progress(format!("moe-check: tokens={} dim={} seeds={:?}", cfg.tokens, cfg.dim, seeds));

    let mut simplex = Check::new("router_weights_on_simplex", SIMPLEX_TOLERANCE);
    let mut shift = Check::new("logit_shift_invariance", SHIFT_TOLERANCE);
    let mut top_all = Check::new("top_k_all_equals_soft", 0.0);
    let mut single = Check::new("single_expert_reduction", 0.0);
    let mut recompute = Check::new("weighted_sum_recomputation", RECOMPUTE_TOLERANCE);
    let mut shapes = Check::new("output_shape", 0.0);
    let mut gradients = Vec::new();

    for &seed in &seeds {
        let mut rng = SeededRng::new(seed);
        for _ in 0..cfg.router_cases {
            let tokens = 1 + rng.below_usize(cfg.tokens);
            let n = 1 + rng.below_usize(4);
            let z = random_matrix(tokens, cfg.dim, 3.0, &mut rng);
            let router = RouterParams::new(random_matrix(n, cfg.dim, 3.0, &mut rng))?;
            let w: Vec<f64> = if broken_router {
                router_weights_unnormalized(&router, &z)?
            } else {
                router_weights(&router, &z)?.weights().to_vec()
            };
            let sum_err = (w.iter().sum::<f64>() - 1.0).abs();
            let negative = w.iter().fold(0.0f64, |acc, x| acc.max(-x));
            simplex.observe(sum_err.max(negative));

            let offset: Vec<f64> = (0..cfg.dim).map(|_| 10.0 * (2.0 * rng.uniform_f64() - 1.0)).collect();
            let shifted = router.shifted(&offset);
            let w2: Vec<f64> = if broken_router {
                router_weights_unnormalized(&shifted, &z)?
            } else {
                router_weights(&shifted, &z)?.weights().to_vec()
            };
            shift.observe(max_abs_diff(&w, &w2));
        }

        let z = random_matrix(cfg.tokens, cfg.dim, 1.0, &mut SeededRng::new(derive_seed(seed, 1)));
        let params = random_params(&STANDARD_EXPERTS, cfg.dim, derive_seed(seed, 2))?;
        let soft = moe_forward(&z, &params.experts, &params.router, GatingMode::Soft)?;
        let hard = moe_forward(&z, &params.experts, &params.router, GatingMode::TopK(params.experts.len()))?;
        top_all.observe(if soft == hard { 0.0 } else { max_abs_diff(soft.output.data(), hard.output.data()).max(f64::MIN_POSITIVE) });

        let reference = reference_output(&z, &params)?;
        let rel = soft
            .output
            .data()
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0, f64::max);
        recompute.observe(rel);

        shapes.observe(if soft.output.shape() == z.shape() { 0.0 } else { 1.0 });
        for kind in [ExpertKind::Spatial, ExpertKind::Channel, ExpertKind::Sparse] {
            let one = random_params(&[kind], cfg.dim, derive_seed(seed, 3))?;
            let out = moe_forward(&z, &one.experts, &one.router, GatingMode::Soft)?;
            let direct = expert_forward(&one.experts[0], &z)?;
            single.observe(if out.output == direct { 0.0 } else { max_abs_diff(out.output.data(), direct.data()).max(f64::MIN_POSITIVE) });
            shapes.observe(if direct.shape() == z.shape() { 0.0 } else { 1.0 });
        }

        let mut components = vec![
            ("moe_soft".to_string(), GradComponent::Moe(GatingMode::Soft)),
            ("router".to_string(), GradComponent::Router),
        ];
        for (i, kind) in STANDARD_EXPERTS.iter().enumerate() {
            components.push((format!("expert_{kind:?}").to_lowercase(), GradComponent::Expert(i)));
        }
        if params.experts.len() > 1 {
            components.push(("moe_top_k_2".to_string(), GradComponent::Moe(GatingMode::TopK(2))));
        }
        for (name, component) in components {
            let r = gradient_check(component, &z, &params, cfg.epsilon)?;
            gradients.push(GradientResult {
                component: name,
                seed,
                max_relative_error: r.max_relative_error,
                checked: r.checked,
                skipped: r.skipped,
                passed: r.max_relative_error < cfg.gradient_tolerance && r.checked > 0,
            });
        }
    }

    let invariants: Vec<InvariantResult> = [simplex, shift, top_all, single, recompute, shapes]
        .into_iter()
        .map(Check::finish)
        .collect();
    let max_gradient_error = gradients.iter().map(|g| g.max_relative_error).fold(0.0, f64::max);
    let passed = invariants.iter().all(|i| i.passed) && gradients.iter().all(|g| g.passed);
    Ok(MoeReport {
        passed,
        tokens: cfg.tokens,
        dim: cfg.dim,
        seeds,
        invariants,
        gradients,
        max_gradient_error,
    })
}
