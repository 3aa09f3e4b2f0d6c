use super::FederationError;
use crate::backbone::ParamVector;

/// Weighted elementwise mean, uniform when `weights` is `None`.
///
/// Accumulated as a running mean in slice order, so identical inputs return
/// that input bit for bit.
pub fn fedavg(
    params: &[ParamVector],
    weights: Option<&[f64]>,
) -> Result<ParamVector, FederationError> {
    let first = params
        .first()
        .ok_or_else(|| FederationError::InvalidConfig("no parameter vectors to average".into()))?;
    for p in params {
        if p.len() != first.len() {
            return Err(FederationError::ShapeMismatch {
                expected: first.len(),
                found: p.len(),
            });
        }
    }
    if let Some(w) = weights {
        let sum: f64 = w.iter().sum();
        if w.len() != params.len()
            || w.iter().any(|&x| x.is_nan() || x < 0.0)
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(FederationError::InvalidWeights);
        }
    }

    let mut mean: Option<ParamVector> = None;
    let mut seen = 0.0;
    for (n, p) in params.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[n]);
        if w == 0.0 {
            continue;
        }
        seen += w;
        match mean.as_mut() {
            None => mean = Some(p.clone()),
            Some(mean) => {
                let share = w / seen;
                for (m, &x) in mean.as_mut_slice().iter_mut().zip(p.as_slice()) {
                    *m += share * (x - *m);
                }
            }
        }
    }
    Ok(mean.expect("weights sum to one, so at least one is positive"))
}
