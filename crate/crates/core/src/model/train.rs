use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, NetworkState};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Plain minibatch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss seen during the epoch, measured before each update.
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: NetworkState,
    pub trace: Vec<EpochRecord>,
}

fn check_compatible(arch: &Architecture, data: &Dataset) -> Result<()> {
    match (arch, data) {
        (Architecture::Mlp(s), Dataset::Tabular(d)) if d.dim() != s.n_inputs => Err(Error::Dimension(format!(
            "dataset has {} features but the network expects {}",
            d.dim(),
            s.n_inputs
        ))),
        (Architecture::Lstm(s), Dataset::Tokens(d)) if d.vocab_size() > s.vocab_size => Err(Error::Dimension(format!(
            "dataset vocabulary {} exceeds the embedding table {}",
            d.vocab_size(),
            s.vocab_size
        ))),
        (Architecture::Mlp(_), Dataset::Tabular(_)) | (Architecture::Lstm(_), Dataset::Tokens(_)) => {
            if data.class_count() > arch.n_outputs() {
                return Err(Error::Dimension(format!(
                    "dataset has {} classes but the network has {} outputs",
                    data.class_count(),
                    arch.n_outputs()
                )));
            }
            Ok(())
        }
        _ => Err(Error::Input("dataset kind does not match the network architecture".into())),
    }
}

pub(crate) fn accuracy_of(state: &NetworkState, data: &Dataset) -> Result<f64> {
    let pred = state.predict(data)?;
    let hits = pred.iter().zip(data.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Initializes from `cfg.seed` and trains. See [`sgd_train_from`].
pub fn sgd_train(arch: Architecture, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let state = NetworkState::initialize(arch, cfg.seed)?;
    sgd_train_from(state, train, val, cfg)
}

/// Minibatch SGD over seeded per-epoch shuffles. The trace holds one record per epoch.
pub fn sgd_train_from(
    mut state: NetworkState,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    state.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    check_compatible(&state.arch, train)?;
    if let Some(v) = val {
        check_compatible(&state.arch, v)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (grads, loss) = state.loss_and_gradients(train, batch)?;
            loss_sum += loss * batch.len() as f64;
            state.apply_gradients(&grads, cfg.learning_rate);
        }
        let val_accuracy = val.map(|v| accuracy_of(&state, v)).transpose()?;
        trace.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            val_accuracy,
        });
    }
    Ok(TrainOutcome { state, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::model::MlpSpec;

    fn blobs() -> Dataset {
        make_blobs(2, 40, 2, 1.0, 3).unwrap().into()
    }

    fn cfg(lr: f64) -> TrainConfig {
        TrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: lr,
            seed: 11,
        }
    }

    #[test]
    fn zero_rate_leaves_state_untouched() {
        let arch = Architecture::Mlp(MlpSpec::new(2, 8, 2));
        let out = sgd_train(arch, &blobs(), None, &cfg(0.0)).unwrap();
        assert_eq!(out.state, NetworkState::initialize(arch, 11).unwrap());
        assert_eq!(out.trace.len(), 5);
    }

    #[test]
    fn same_seed_same_trace() {
        let arch = Architecture::Mlp(MlpSpec::new(2, 8, 2));
        let data = blobs();
        let a = sgd_train(arch, &data, Some(&data), &cfg(0.05)).unwrap();
        let b = sgd_train(arch, &data, Some(&data), &cfg(0.05)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let arch = Architecture::Mlp(MlpSpec::new(3, 8, 2));
        assert!(matches!(sgd_train(arch, &blobs(), None, &cfg(0.1)), Err(Error::Dimension(_))));
        let mut bad = cfg(0.1);
        bad.epochs = 0;
        let arch = Architecture::Mlp(MlpSpec::new(2, 8, 2));
        assert!(matches!(sgd_train(arch, &blobs(), None, &bad), Err(Error::Config(_))));
    }
}
