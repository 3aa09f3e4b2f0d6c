//! Local SGD on per-client MCR² objectives with periodic parameter averaging.
//!
//! One round is one minibatch step on every client. After every `tau`
//! rounds the client parameters are averaged and broadcast back.

mod aggregate;
mod client;
mod log;
mod run;
mod stats;

pub use aggregate::fedavg;
pub use client::ClientState;
pub use log::{RoundLog, RoundWriter, CSV_HEADER};
pub use run::{
    client_tag, init_params, run, run_with, threads_from_env, RoundSink, RunOutput, EVAL_TAG,
    INIT_TAG, THREADS_ENV,
};
pub use stats::{estimate_gradient_stats, GradientStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::BackboneError;
use crate::datagen::DataError;
use crate::mcr2::Mcr2Error;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
    #[error("partition does not match the run: {0}")]
    PlanMismatch(String),
    #[error("client {client} produced non-finite parameters in round {round}; try a smaller eta")]
    NonFiniteParameters { round: usize, client: usize },
    #[error(
        "the averaged model gives non-finite representations in round {round}; try a smaller eta"
    )]
    NonFiniteModel { round: usize },
    #[error("parameter vectors have different lengths ({expected} vs {found})")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("aggregation weights must be nonnegative and sum to 1")]
    InvalidWeights,
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Mcr2(#[from] Mcr2Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("writing round log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Federated,
    /// A single client holding every sample, averaged after every step.
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub num_clients: usize,
    /// Local steps between averages. When absent it is derived from
    /// `local_epochs`.
    pub tau: Option<usize>,
    /// Passes over the mean shard per aggregation period, used only when
    /// `tau` is absent.
    pub local_epochs: Option<usize>,
    pub eta: f64,
    pub rounds: usize,
    pub batch_size: usize,
    pub epsilon: f64,
    pub mode: Mode,
    pub dirichlet_alpha: f64,
    pub min_per_client: usize,
    /// Average by shard size instead of uniformly.
    pub weighted: bool,
    /// Size cap of the seeded subset the global objective is logged on.
    pub eval_cap: usize,
    /// Fill `wall_ms` in the round log. Off by default so logs are
    /// reproducible byte for byte.
    pub record_timing: bool,
}

pub const DEFAULT_TAU: usize = 5;

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 8,
            tau: None,
            local_epochs: None,
            eta: 0.05,
            rounds: 400,
            batch_size: 64,
            epsilon: 0.5,
            mode: Mode::Federated,
            dirichlet_alpha: 5.0,
            min_per_client: 2,
            weighted: false,
            eval_cap: 512,
            record_timing: false,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        let bad = |m: String| Err(FederationError::InvalidConfig(m));
        if self.num_clients == 0 {
            return bad("num_clients must be at least 1".into());
        }
        if self.tau == Some(0) {
            return bad("tau must be at least 1".into());
        }
        if self.local_epochs == Some(0) {
            return bad("local_epochs must be at least 1".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return bad(format!(
                "dirichlet_alpha must be positive, got {}",
                self.dirichlet_alpha
            ));
        }
        if self.eval_cap == 0 {
            return bad("eval_cap must be at least 1".into());
        }
        Ok(())
    }

    /// Aggregation period for shards of the given sizes.
    pub fn resolve_tau(&self, shard_sizes: &[usize]) -> usize {
        if self.mode == Mode::Centralized {
            return 1;
        }
        match (self.tau, self.local_epochs) {
            (Some(tau), _) => tau,
            (None, Some(epochs)) => {
                let mean =
                    shard_sizes.iter().sum::<usize>() as f64 / shard_sizes.len().max(1) as f64;
                let per_epoch = (mean / self.batch_size as f64).ceil().max(1.0) as usize;
                epochs * per_epoch
            }
            (None, None) => DEFAULT_TAU,
        }
    }

    /// Clients actually simulated.
    pub fn effective_clients(&self) -> usize {
        match self.mode {
            Mode::Federated => self.num_clients,
            Mode::Centralized => 1,
        }
    }
}
