use super::FederationError;
use crate::backbone::{backward, forward, BackboneError, BackboneParams};
use crate::datagen::Dataset;
use crate::mcr2::{value_and_grad, Mcr2Params, RepresentationBatch};
use crate::tensor::{Matrix, Rng};

/// One simulated client: its shard, its local parameters and its sampler.
#[derive(Debug, Clone)]
pub struct ClientState {
    id: usize,
    params: BackboneParams,
    indices: Vec<usize>,
    x: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    rng: Rng,
    /// Shard positions in the current epoch's order.
    order: Vec<usize>,
    cursor: usize,
}

impl ClientState {
    pub fn new(
        id: usize,
        indices: Vec<usize>,
        dataset: &Dataset,
        params: BackboneParams,
        seed: u64,
    ) -> Result<Self, FederationError> {
        if indices.is_empty() {
            return Err(FederationError::PlanMismatch(format!(
                "client {id} has no samples"
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
            return Err(FederationError::PlanMismatch(format!(
                "client {id} references sample {bad} of {}",
                dataset.len()
            )));
        }
        let (x, labels) = dataset.subset(&indices);
        Ok(Self {
            id,
            params,
            indices,
            x,
            labels,
            num_classes: dataset.num_classes(),
            rng: Rng::new(seed),
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn params(&self) -> &BackboneParams {
        &self.params
    }

    pub fn set_params(&mut self, params: BackboneParams) {
        self.params = params;
    }

    /// Global dataset indices of the shard.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Shard positions of the next minibatch. Batches are drawn without
    /// replacement from a per-epoch shuffle; a tail shorter than the batch
    /// is dropped and the shard reshuffled.
    fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        let b = batch_size.min(self.len());
        if self.order.is_empty() || self.cursor + b > self.order.len() {
            self.order = (0..self.len()).collect();
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + b].to_vec();
        self.cursor += b;
        batch
    }

    /// Runs `steps` minibatch SGD steps on the local objective and returns
    /// the minibatch objective of the last step, evaluated before its update.
    /// `round` only labels a divergence error.
    pub fn local_update(
        &mut self,
        steps: usize,
        eta: f64,
        batch_size: usize,
        mcr: &Mcr2Params,
        round: usize,
    ) -> Result<f64, FederationError> {
        let mut last_f = f64::NAN;
        for _ in 0..steps {
            let batch = self.next_batch(batch_size);
            let xb = self.x.select_columns(&batch);
            let labels = batch.iter().map(|&i| self.labels[i]).collect();
            let (z, tape) = forward(&self.params, &xb).map_err(|e| match e {
                BackboneError::NonFiniteOutput { .. } => FederationError::NonFiniteParameters {
                    round,
                    client: self.id,
                },
                other => other.into(),
            })?;
            let reps = RepresentationBatch::new(z, labels, self.num_classes)?;
            let (value, grad_z) = value_and_grad(&reps, mcr);
            let grad = backward(&self.params, &tape, &grad_z)?;
            let mut flat = self.params.flatten();
            flat.axpy(-eta, &grad);
            if !flat.is_finite() {
                return Err(FederationError::NonFiniteParameters {
                    round,
                    client: self.id,
                });
            }
            self.params = BackboneParams::from_flat(&flat)?;
            last_f = value.f;
        }
        Ok(last_f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ShapeManifest;
    use crate::datagen::{gen_union_of_subspaces, SyntheticSpec};

    fn setup() -> (Dataset, BackboneParams) {
        let ds = gen_union_of_subspaces(&SyntheticSpec {
            classes: 2,
            per_class_dim: 2,
            samples_per_class: 20,
            ambient_dim: 6,
            noise_sigma: 0.1,
            seed: 1,
        })
        .unwrap();
        let p = BackboneParams::init(&ShapeManifest::mlp(6, &[8], 4), &mut Rng::new(2)).unwrap();
        (ds, p)
    }

    fn mcr() -> Mcr2Params {
        Mcr2Params::new(0.5).unwrap()
    }

    #[test]
    fn zero_eta_leaves_params() {
        let (ds, p) = setup();
        let mut c = ClientState::new(0, (0..40).collect(), &ds, p.clone(), 3).unwrap();
        c.local_update(3, 0.0, 8, &mcr(), 1).unwrap();
        assert_eq!(c.params(), &p);
    }

    #[test]
    fn single_class_shard_has_zero_gradient() {
        let (ds, p) = setup();
        let mut c = ClientState::new(0, (0..20).collect(), &ds, p.clone(), 3).unwrap();
        c.local_update(1, 0.5, 10, &mcr(), 1).unwrap();
        assert_eq!(c.params(), &p);
    }

    #[test]
    fn identical_clients_stay_identical() {
        let (ds, p) = setup();
        let mut a = ClientState::new(0, (0..40).collect(), &ds, p.clone(), 7).unwrap();
        let mut b = ClientState::new(1, (0..40).collect(), &ds, p, 7).unwrap();
        a.local_update(5, 0.1, 8, &mcr(), 1).unwrap();
        b.local_update(5, 0.1, 8, &mcr(), 1).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn sgd_step_descends_on_average() {
        let (ds, p) = setup();
        let mut c = ClientState::new(0, (0..40).collect(), &ds, p, 5).unwrap();
        let first = c.local_update(1, 0.05, 40, &mcr(), 1).unwrap();
        let later = c.local_update(20, 0.05, 40, &mcr(), 2).unwrap();
        assert!(later < first, "{later} !< {first}");
    }

    #[test]
    fn batches_cover_epoch_without_replacement() {
        let (ds, p) = setup();
        let mut c = ClientState::new(0, (0..40).collect(), &ds, p, 5).unwrap();
        let mut seen: Vec<usize> = (0..4).flat_map(|_| c.next_batch(10)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn divergence_is_reported() {
        let (ds, p) = setup();
        let mut c = ClientState::new(3, (0..40).collect(), &ds, p, 5).unwrap();
        // An infinite step overflows every coordinate with a nonzero gradient.
        let err = c.local_update(1, f64::INFINITY, 40, &mcr(), 9).unwrap_err();
        assert!(matches!(
            err,
            FederationError::NonFiniteParameters {
                round: 9,
                client: 3
            }
        ));
    }

    #[test]
    fn rejects_bad_shards() {
        let (ds, p) = setup();
        assert!(ClientState::new(0, vec![], &ds, p.clone(), 0).is_err());
        assert!(ClientState::new(0, vec![40], &ds, p, 0).is_err());
    }
}
