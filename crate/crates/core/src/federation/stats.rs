use rayon::prelude::*;

use super::{fedavg, ClientState, FederationError};
use crate::backbone::{backward, forward, BackboneParams, ParamVector};
use crate::mcr2::{value_and_grad, Mcr2Params, RepresentationBatch};

/// Spread of full-batch client gradients `g_n` at shared parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStats {
    /// `ḡ = (1/N) Σ_n g_n`.
    pub mean_grad: ParamVector,
    /// `‖ḡ‖²`.
    pub grad_norm_sq: f64,
    /// `(1/N) Σ_n ‖g_n − ḡ‖²`.
    pub sigma2_hat: f64,
    /// `μ̂_n = g_n − ḡ`, in client order.
    pub bias: Vec<ParamVector>,
    /// `max_n |μ̂_nᵀ ḡ|`.
    pub delta_hat: f64,
    /// Full-batch local objective of each client.
    pub local_f: Vec<f64>,
}

pub fn estimate_gradient_stats(
    clients: &[ClientState],
    params: &BackboneParams,
    mcr: &Mcr2Params,
) -> Result<GradientStats, FederationError> {
    let per_client: Vec<(f64, ParamVector)> = clients
        .par_iter()
        .map(|c| {
            let (z, tape) = forward(params, c.x())?;
            let reps = RepresentationBatch::new(z, c.labels().to_vec(), c.num_classes())?;
            let (value, grad_z) = value_and_grad(&reps, mcr);
            Ok((value.f, backward(params, &tape, &grad_z)?))
        })
        .collect::<Result<_, FederationError>>()?;
    let (local_f, grads): (Vec<f64>, Vec<ParamVector>) = per_client.into_iter().unzip();

    let mean_grad = fedavg(&grads, None)?;
    let bias: Vec<ParamVector> = grads.iter().map(|g| g.sub(&mean_grad)).collect();
    let sigma2_hat = bias.iter().map(ParamVector::norm_sq).sum::<f64>() / bias.len() as f64;
    let delta_hat = bias
        .iter()
        .map(|b| b.dot(&mean_grad).abs())
        .fold(0.0, f64::max);
    Ok(GradientStats {
        grad_norm_sq: mean_grad.norm_sq(),
        mean_grad,
        sigma2_hat,
        bias,
        delta_hat,
        local_f,
    })
}
