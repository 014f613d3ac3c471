//! Seeded gradient-descent training and warm-start retraining.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{full_gradient, grad_w_mean_loss};
use crate::error::{Error, Result};
use crate::net::{Dataset, Network};

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// `None` means full-batch gradient descent.
    pub batch_size: Option<usize>,
    /// Stop once the full-data gradient norm falls to this value.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            max_epochs: 100_000,
            batch_size: None,
            tolerance: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub epochs: usize,
    pub grad_norm: f64,
    pub loss: f64,
    pub converged: bool,
    /// Mean loss after every epoch (entry 0 is the initial loss).
    pub loss_history: Vec<f64>,
}

pub fn sgd_train(init: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let all = data.all_indices();
    let shape = init.shape();
    let output = init.output_vector().clone();
    let mut w = init.flatten();
    let mut net = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = all.clone();

    let mut loss = net.mean_loss(data, &all)?;
    let mut grad = full_gradient(&net, data)?.values;
    let mut history = vec![loss];
    let mut epochs = 0;
    while grad.norm() > cfg.tolerance && epochs < cfg.max_epochs {
        match cfg.batch_size {
            None => w.axpy(-cfg.learning_rate, &grad, 1.0),
            Some(bs) => {
                order.shuffle(&mut rng);
                for batch in order.chunks(bs) {
                    let g = grad_w_mean_loss(&net, data, batch)?.values;
                    w.axpy(-cfg.learning_rate, &g, 1.0);
                    net = Network::unflatten(&w, shape, output.clone())?;
                }
            }
        }
        net = Network::unflatten(&w, shape, output.clone())?;
        epochs += 1;
        loss = net.mean_loss(data, &all)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { epoch: epochs, loss });
        }
        history.push(loss);
        grad = full_gradient(&net, data)?.values;
    }
    let grad_norm = grad.norm();
    Ok(TrainOutcome {
        network: net,
        epochs,
        grad_norm,
        loss,
        converged: grad_norm <= cfg.tolerance,
        loss_history: history,
    })
}

/// Warm-started training on (typically perturbed) data.
pub fn retrain_from(start: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    sgd_train(start, data, cfg)
}

/// `‖a − b‖ / ‖a‖`.
pub fn relative_difference(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm()
}
