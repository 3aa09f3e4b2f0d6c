use std::io;
use std::time::Instant;

use rayon::prelude::*;

use super::{
    estimate_gradient_stats, fedavg, ClientState, FederationConfig, FederationError, RoundLog,
};
use crate::backbone::{forward, BackboneError, BackboneParams, ShapeManifest};
use crate::datagen::{Dataset, PartitionPlan};
use crate::mcr2::{mcr2_objective, Mcr2Params, RepresentationBatch};
use crate::tensor::{derive_seed, Rng};

/// Seed tag of the initial backbone parameters.
pub const INIT_TAG: &str = "init";
/// Seed tag of the evaluation subset.
pub const EVAL_TAG: &str = "eval";

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "FLOWSIM_THREADS";

pub fn client_tag(n: usize) -> String {
    format!("client/{n}")
}

/// Receives each round's log as soon as it is complete.
pub trait RoundSink {
    fn record(&mut self, log: &RoundLog) -> io::Result<()>;
}

impl RoundSink for Vec<RoundLog> {
    fn record(&mut self, log: &RoundLog) -> io::Result<()> {
        self.push(log.clone());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Average of the client parameters after the last round.
    pub params: BackboneParams,
    pub tau: usize,
    pub aggregations: usize,
    /// Dataset indices the global objective is logged on, ascending.
    pub eval_indices: Vec<usize>,
}

pub fn init_params(shape: &ShapeManifest, seed: u64) -> Result<BackboneParams, FederationError> {
    Ok(BackboneParams::init(
        shape,
        &mut Rng::new(derive_seed(seed, INIT_TAG)),
    )?)
}

/// Runs training and collects every round's log.
pub fn run(
    config: &FederationConfig,
    dataset: &Dataset,
    plan: &PartitionPlan,
    shape: &ShapeManifest,
    seed: u64,
) -> Result<(RunOutput, Vec<RoundLog>), FederationError> {
    let mut logs = Vec::with_capacity(config.rounds);
    let out = run_with(config, dataset, plan, shape, seed, &mut logs)?;
    Ok((out, logs))
}

/// Runs training, streaming round logs into `sink`.
pub fn run_with(
    config: &FederationConfig,
    dataset: &Dataset,
    plan: &PartitionPlan,
    shape: &ShapeManifest,
    seed: u64,
    sink: &mut dyn RoundSink,
) -> Result<RunOutput, FederationError> {
    config.validate()?;
    shape.validate()?;
    if shape.input_dim() != dataset.input_dim() {
        return Err(FederationError::InvalidConfig(format!(
            "backbone takes {} inputs but the dataset has dimension {}",
            shape.input_dim(),
            dataset.input_dim()
        )));
    }
    check_plan(plan, dataset.len(), config.effective_clients())?;

    let mcr = Mcr2Params::new(config.epsilon)?;
    let init = init_params(shape, seed)?;
    let mut clients = plan
        .clients
        .iter()
        .enumerate()
        .map(|(n, idx)| {
            ClientState::new(
                n,
                idx.clone(),
                dataset,
                init.clone(),
                derive_seed(seed, &client_tag(n)),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sizes = plan.sizes();
    let tau = config.resolve_tau(&sizes);
    let weights: Option<Vec<f64>> = config.weighted.then(|| {
        let total = sizes.iter().sum::<usize>() as f64;
        sizes.iter().map(|&s| s as f64 / total).collect()
    });

    let eval_indices = Rng::new(derive_seed(seed, EVAL_TAG))
        .sample_indices(dataset.len(), dataset.len().min(config.eval_cap));
    let (x_eval, labels_eval) = dataset.subset(&eval_indices);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads_from_env())
        .build()
        .map_err(|e| FederationError::InvalidConfig(format!("thread pool: {e}")))?;

    let mut global = init;
    let mut aggregations = 0;
    for round in 1..=config.rounds {
        let start = Instant::now();
        let results: Vec<Result<f64, FederationError>> = pool.install(|| {
            clients
                .par_iter_mut()
                .map(|c| c.local_update(1, config.eta, config.batch_size, &mcr, round))
                .collect()
        });
        // First failure in client order, independent of scheduling.
        let client_step_f = results.into_iter().collect::<Result<Vec<f64>, _>>()?;

        let flats: Vec<_> = clients.iter().map(|c| c.params().flatten()).collect();
        global = BackboneParams::from_flat(&fedavg(&flats, weights.as_deref())?)?;
        let aggregated = round % tau == 0;
        if aggregated {
            aggregations += 1;
            for c in &mut clients {
                c.set_params(global.clone());
            }
        }
        let global_flat = global.flatten();
        let client_drift = clients
            .iter()
            .map(|c| c.params().flatten().sub(&global_flat).norm_sq())
            .fold(0.0, f64::max);

        let diverged = |e: FederationError| match e {
            FederationError::Backbone(BackboneError::NonFiniteOutput { .. }) => {
                FederationError::NonFiniteModel { round }
            }
            other => other,
        };
        let (z, _) = forward(&global, &x_eval).map_err(|e| diverged(e.into()))?;
        let value = mcr2_objective(
            &RepresentationBatch::new(z, labels_eval.clone(), dataset.num_classes())?,
            &mcr,
        );
        let stats = pool
            .install(|| estimate_gradient_stats(&clients, &global, &mcr))
            .map_err(diverged)?;
        let wall_ms = if config.record_timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        sink.record(&RoundLog {
            round,
            f: value.f,
            rate: value.rate,
            class_rate: value.class_rate,
            grad_norm_sq: stats.grad_norm_sq,
            sigma2_hat: stats.sigma2_hat,
            delta_hat: stats.delta_hat,
            wall_ms,
            aggregated,
            client_step_f,
            client_f: stats.local_f,
            client_drift,
        })?;
    }
    Ok(RunOutput {
        params: global,
        tau,
        aggregations,
        eval_indices,
    })
}

fn check_plan(plan: &PartitionPlan, m: usize, clients: usize) -> Result<(), FederationError> {
    if plan.clients.len() != clients {
        return Err(FederationError::PlanMismatch(format!(
            "plan has {} clients, run expects {clients}",
            plan.clients.len()
        )));
    }
    let mut seen = vec![false; m];
    for (n, idx) in plan.clients.iter().enumerate() {
        for &i in idx {
            if i >= m || seen[i] {
                return Err(FederationError::PlanMismatch(format!(
                    "client {n}: index {i} is out of range or assigned twice"
                )));
            }
            seen[i] = true;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(FederationError::PlanMismatch(format!(
            "sample {i} is unassigned"
        )));
    }
    Ok(())
}

/// Worker count from the environment; 0 lets rayon use every core.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{dirichlet_partition, gen_union_of_subspaces, SyntheticSpec};
    use crate::federation::Mode;

    fn small() -> (Dataset, ShapeManifest) {
        let ds = gen_union_of_subspaces(&SyntheticSpec {
            classes: 3,
            per_class_dim: 2,
            samples_per_class: 30,
            ambient_dim: 8,
            noise_sigma: 0.05,
            seed: 5,
        })
        .unwrap();
        (ds, ShapeManifest::mlp(8, &[12], 6))
    }

    fn config(n: usize, tau: usize, rounds: usize) -> FederationConfig {
        FederationConfig {
            num_clients: n,
            tau: Some(tau),
            rounds,
            batch_size: 20,
            eta: 0.05,
            ..FederationConfig::default()
        }
    }

    #[test]
    fn schedule_counts_aggregations() {
        let (ds, shape) = small();
        let cfg = config(3, 4, 10);
        let plan = dirichlet_partition(ds.labels(), 3, 5.0, 1, 2).unwrap();
        let (out, logs) = run(&cfg, &ds, &plan, &shape, 1).unwrap();
        assert_eq!(out.aggregations, 2);
        assert_eq!(logs.iter().filter(|l| l.aggregated).count(), 2);
        let rounds: Vec<usize> = logs.iter().map(|l| l.round).collect();
        assert_eq!(rounds, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_logs() {
        let (ds, shape) = small();
        let cfg = config(3, 2, 6);
        let plan = dirichlet_partition(ds.labels(), 3, 5.0, 1, 2).unwrap();
        let (a, la) = run(&cfg, &ds, &plan, &shape, 7).unwrap();
        let (b, lb) = run(&cfg, &ds, &plan, &shape, 7).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn centralized_matches_single_client() {
        let (ds, shape) = small();
        let plan = dirichlet_partition(ds.labels(), 1, 5.0, 1, 2).unwrap();
        let fed = config(1, 1, 8);
        let cen = FederationConfig {
            mode: Mode::Centralized,
            num_clients: 5,
            tau: None,
            ..fed.clone()
        };
        let (a, la) = run(&fed, &ds, &plan, &shape, 3).unwrap();
        let (b, lb) = run(&cen, &ds, &plan, &shape, 3).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(la, lb);
    }

    #[test]
    fn plan_must_match() {
        let (ds, shape) = small();
        let plan = dirichlet_partition(ds.labels(), 2, 5.0, 1, 2).unwrap();
        assert!(matches!(
            run(&config(3, 1, 1), &ds, &plan, &shape, 0),
            Err(FederationError::PlanMismatch(_))
        ));
        let mut broken = plan.clone();
        let dup = broken.clients[0][0];
        broken.clients[1].push(dup);
        assert!(matches!(
            run(&config(2, 1, 1), &ds, &broken, &shape, 0),
            Err(FederationError::PlanMismatch(_))
        ));
    }

    #[test]
    fn zero_rounds_rejected() {
        let (ds, shape) = small();
        let plan = dirichlet_partition(ds.labels(), 2, 5.0, 1, 2).unwrap();
        assert!(matches!(
            run(&config(2, 1, 0), &ds, &plan, &shape, 0),
            Err(FederationError::InvalidConfig(_))
        ));
    }

    #[test]
    fn objective_decreases() {
        let (ds, shape) = small();
        let plan = dirichlet_partition(ds.labels(), 3, 5.0, 2, 2).unwrap();
        let (_, logs) = run(&config(3, 5, 150), &ds, &plan, &shape, 2).unwrap();
        let first = logs[0].f;
        let last = logs[logs.len() - 1].f;
        assert!(last < first - 0.1, "f went from {first} to {last}");
    }
}
