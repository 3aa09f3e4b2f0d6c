//! Central finite-difference checks of the analytic gradients, both of the
//! objective with respect to `Z` and end to end through the backbone.

use serde::Serialize;

use crate::backbone::{backward, forward, BackboneParams, ParamVector, ShapeManifest};
use crate::mcr2::{grad_mcr2, grad_parts, mcr2_objective, Mcr2Params, RepresentationBatch};
use crate::tensor::{derive_seed, Matrix, Rng};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Denominator floor of the relative error, so that entries where both
/// gradients vanish compare absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub configs: usize,
    pub max_dim: usize,
    pub max_samples: usize,
    pub max_classes: usize,
    /// Test hook: scales `∂R/∂Z` by this factor in the analytic gradient.
    pub rate_fault: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            configs: 50,
            max_dim: 12,
            max_samples: 12,
            max_classes: 4,
            rate_fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseConfig {
    pub index: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub samples: usize,
    pub classes: usize,
    pub epsilon: f64,
    pub input_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub config: CaseConfig,
    /// Max relative error of `∂f/∂Z`.
    pub objective_error: f64,
    /// Max relative error of `∂f/∂φ` through the backbone.
    pub backbone_error: f64,
}

impl CaseResult {
    pub fn max_error(&self) -> f64 {
        self.objective_error.max(self.backbone_error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub options: GradcheckOptions,
    pub cases: Vec<CaseResult>,
    pub max_error: f64,
    pub worst_case: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_error < TOLERANCE
    }

    pub fn worst(&self) -> &CaseResult {
        &self.cases[self.worst_case]
    }
}

pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(RELATIVE_FLOOR)
}

fn analytic_grad(batch: &RepresentationBatch, mcr: &Mcr2Params, fault: Option<f64>) -> Matrix {
    match fault {
        None => grad_mcr2(batch, mcr),
        Some(scale) => {
            let (grad_rate, grad_class) = grad_parts(batch, mcr);
            grad_class.sub(&grad_rate.scale(scale))
        }
    }
}

fn draw_case(index: usize, opts: &GradcheckOptions) -> CaseConfig {
    let seed = derive_seed(opts.seed, &format!("gradcheck/{index}"));
    let mut rng = Rng::new(seed);
    CaseConfig {
        index,
        seed,
        embed_dim: 1 + rng.below(opts.max_dim),
        samples: 1 + rng.below(opts.max_samples),
        classes: 1 + rng.below(opts.max_classes),
        epsilon: 0.3 + 1.2 * rng.uniform(),
        input_dim: 1 + rng.below(6),
        hidden: 1 + rng.below(6),
    }
}

fn check_case(config: CaseConfig, fault: Option<f64>) -> CaseResult {
    let mut rng = Rng::new(config.seed ^ 0x5eed);
    let (d, m, k) = (config.embed_dim, config.samples, config.classes);
    let mcr = Mcr2Params::new(config.epsilon).expect("epsilon is positive");
    let labels: Vec<usize> = (0..m).map(|_| rng.below(k)).collect();

    // ∂f/∂Z on unconstrained Z.
    let z = Matrix::from_fn(d, m, |_, _| rng.normal());
    let batch = RepresentationBatch::new(z.clone(), labels.clone(), k).expect("valid batch");
    let g = analytic_grad(&batch, &mcr, fault);
    let f_at = |zz: Matrix| mcr2_objective(&batch.with_z(zz).expect("finite perturbation"), &mcr).f;
    let mut objective_error: f64 = 0.0;
    for i in 0..d {
        for j in 0..m {
            let mut plus = z.clone();
            plus[(i, j)] += FD_STEP;
            let mut minus = z.clone();
            minus[(i, j)] -= FD_STEP;
            let fd = (f_at(plus) - f_at(minus)) / (2.0 * FD_STEP);
            objective_error = objective_error.max(relative_error(fd, g[(i, j)]));
        }
    }

    // ∂f/∂φ through the sphere-projected MLP.
    let shape = ShapeManifest::mlp(config.input_dim, &[config.hidden], d);
    let mut params = BackboneParams::init(&shape, &mut rng).expect("valid shape");
    for layer in params.layers_mut() {
        layer.bias.iter_mut().for_each(|b| *b = 0.3 * rng.normal());
    }
    let x = Matrix::from_fn(config.input_dim, m, |_, _| rng.normal());
    let objective = |p: &BackboneParams| {
        let (z, _) = forward(p, &x).expect("input matches");
        mcr2_objective(
            &RepresentationBatch::new(z, labels.clone(), k).expect("valid batch"),
            &mcr,
        )
        .f
    };
    let (z, tape) = forward(&params, &x).expect("input matches");
    let reps = RepresentationBatch::new(z, labels.clone(), k).expect("valid batch");
    let grad = backward(&params, &tape, &analytic_grad(&reps, &mcr, fault)).expect("tape matches");
    let flat = params.flatten();
    let mut backbone_error: f64 = 0.0;
    for idx in 0..flat.len() {
        let shifted = |delta: f64| -> f64 {
            let mut v = flat.as_slice().to_vec();
            v[idx] += delta;
            let p = ParamVector::new(v, shape.clone()).expect("same length");
            objective(&BackboneParams::from_flat(&p).expect("finite"))
        };
        let fd = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
        backbone_error = backbone_error.max(relative_error(fd, grad.as_slice()[idx]));
    }

    CaseResult {
        config,
        objective_error,
        backbone_error,
    }
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> GradcheckReport {
    assert!(opts.configs > 0, "at least one configuration");
    let cases: Vec<CaseResult> = (0..opts.configs)
        .map(|i| check_case(draw_case(i, opts), opts.rate_fault))
        .collect();
    let (worst_case, max_error) = cases
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c.max_error()))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    GradcheckReport {
        options: *opts,
        cases,
        max_error,
        worst_case,
    }
}
