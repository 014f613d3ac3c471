//! Lipschitz-like moduli of the layerwise solution maps and an empirical check
//! of the inclusion `F_h(x') ∩ U ⊂ F_h(x) + κ_h ‖x − x'‖ B` by retraining.
//!
//! The per-point, per-layer modulus is the ratio
//!
//! ```text
//! κ_h(x_k) = ‖∂f/∂x (x_k)‖₂ / ‖∂f/∂W^(h) (x_k)‖_F
//! ```
//!
//! and the multi-point modulus is `√n · max_i κ_h(x_i)`.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::{input_jacobian, layer_jacobian};
use crate::error::{Error, Result};
use crate::net::{Dataset, Network};
use crate::sensitivity::PerturbationSpec;
use crate::set_metrics::{contained_in_expansion, point_to_set, SolutionSet};
use crate::trainer::{retrain_from, TrainConfig, TrainOutcome};

fn dead_layer(net: &Network, x: &DVector<f64>, h: usize) -> Result<usize> {
    let fp = net.forward(x)?;
    // x^(h-1) = 0 means a layer below h switched everything off
    let below = (1..h).find(|&k| fp.pattern.layer_is_dead(k));
    let above = (h..=net.depth()).find(|&k| fp.pattern.layer_is_dead(k));
    Ok(below.or(above).unwrap_or(h))
}

fn kappa_at(net: &Network, x: &DVector<f64>, h: usize, index: Option<usize>) -> Result<f64> {
    let den = layer_jacobian(net, x, h)?.norm();
    if den == 0.0 {
        return Err(Error::DegeneratePoint {
            index,
            layer: dead_layer(net, x, h)?,
        });
    }
    Ok(input_jacobian(net, x)?.norm() / den)
}

/// `κ_h` at a single input.
pub fn kappa_layer(net: &Network, x: &DVector<f64>, h: usize) -> Result<f64> {
    kappa_at(net, x, h, None)
}

/// `κ_h` for every layer `h = 1..=H` at a single input.
pub fn kappa_all_layers(net: &Network, x: &DVector<f64>) -> Result<Vec<f64>> {
    (1..=net.depth()).map(|h| kappa_layer(net, x, h)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub layer: usize,
    /// `κ_h(x_i)` for every point, in dataset order.
    pub per_point: Vec<f64>,
    /// Index attaining the maximum.
    pub worst_index: usize,
    /// `√n · max_i κ_h(x_i)`.
    pub aggregate: f64,
}

impl LipschitzCertificate {
    pub fn max_point(&self) -> f64 {
        self.per_point[self.worst_index]
    }
}

pub fn kappa_global(net: &Network, data: &Dataset, layer: usize) -> Result<LipschitzCertificate> {
    let per_point = data
        .inputs()
        .iter()
        .enumerate()
        .map(|(i, x)| kappa_at(net, x, layer, Some(i)))
        .collect::<Result<Vec<_>>>()?;
    let (worst_index, max) = per_point
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, k)| if k > acc.1 { (i, k) } else { acc });
    Ok(LipschitzCertificate {
        layer,
        per_point,
        worst_index,
        aggregate: (data.len() as f64).sqrt() * max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionConfig {
    pub trials: usize,
    /// Data perturbation size per perturbed point.
    pub delta: f64,
    /// Layer whose weights are compared (1-based).
    pub layer: usize,
    pub points_per_trial: usize,
    /// Neighbourhood radius `ρ = trust_factor · κ · ‖x − x'‖` around `w̄`.
    pub trust_factor: f64,
    /// Also retrain each perturbed solution on the unperturbed data and add
    /// the result to that trial's sample of the original set.
    pub back_project: bool,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for InclusionConfig {
    fn default() -> Self {
        InclusionConfig {
            trials: 20,
            delta: 1e-3,
            layer: 1,
            points_per_trial: 1,
            trust_factor: 10.0,
            back_project: true,
            train: TrainConfig {
                tolerance: 1e-8,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub indices: Vec<usize>,
    pub delta: f64,
    /// Aggregate modulus `√n · max_i κ_h(x_i)`.
    pub kappa: f64,
    /// Largest per-point modulus among the perturbed points.
    pub kappa_points: f64,
    /// `κ ‖x − x'‖`.
    pub radius: f64,
    /// Distance of the retrained layer weights to the original set sample.
    pub distance: f64,
    /// `radius − distance`.
    pub margin: f64,
    pub passed: bool,
    pub grad_norm: f64,
    pub converged: bool,
    pub in_neighborhood: bool,
    pub epochs: usize,
    /// Distance of the retrained layer weights to those of `w̄`.
    pub distance_to_wbar: f64,
    /// Whether the back-projection onto the original set converged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub back_projected: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    /// Trials that count towards the pass fraction.
    pub fn counted(&self) -> bool {
        self.converged && self.in_neighborhood && self.error.is_none() && self.back_projected != Some(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionReport {
    pub layer: usize,
    /// `κ_h` at every data point, for every layer: `kappa_per_layer[h-1][i]`.
    pub kappa_per_layer: Vec<Vec<f64>>,
    /// `√n · max_i κ_h(x_i)` for the checked layer.
    pub kappa_global: f64,
    pub trials: Vec<TrialRecord>,
    pub counted: usize,
    pub pass_fraction: f64,
    pub worst_margin: f64,
}

fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(d, |_, _| -> f64 { StandardNormal.sample(rng) });
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

struct TrialRun {
    indices: Vec<usize>,
    shift: f64,
    outcome: std::result::Result<(TrainOutcome, Option<Option<Network>>), String>,
}

fn run_trial(net: &Network, data: &Dataset, cfg: &InclusionConfig, t: usize) -> TrialRun {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(t as u64);
    let mut indices = sample(&mut rng, data.len(), cfg.points_per_trial).into_vec();
    indices.sort_unstable();
    let directions = indices.iter().map(|_| random_unit(data.dim(), &mut rng)).collect();
    let spec = PerturbationSpec::new(indices.clone(), directions, cfg.delta).expect("random directions are unit");
    let outcome = spec
        .apply(data)
        .and_then(|perturbed| retrain_from(net, &perturbed, &cfg.train))
        .map(|out| {
            let back = cfg.back_project.then(|| {
                retrain_from(&out.network, data, &cfg.train)
                    .ok()
                    .filter(|b| b.converged)
                    .map(|b| b.network)
            });
            (out, back)
        })
        .map_err(|e| e.to_string());
    TrialRun {
        indices,
        shift: spec.total_norm(),
        outcome,
    }
}

/// Retrain from `w̄` under random data perturbations and test whether the
/// retrained layer weights fall within `κ ‖x − x'‖` of the original set.
///
/// `original` samples the unperturbed solution set (full weight vectors); `w̄`
/// itself is always included.
pub fn verify_inclusion(
    net: &Network,
    data: &Dataset,
    original: Option<&SolutionSet>,
    cfg: &InclusionConfig,
) -> Result<InclusionReport> {
    Ok(verify_inclusion_layers(net, data, original, cfg, &[cfg.layer])?.remove(0))
}

/// [`verify_inclusion`] for several layers over the same retrained trials;
/// `cfg.layer` is ignored.
pub fn verify_inclusion_layers(
    net: &Network,
    data: &Dataset,
    original: Option<&SolutionSet>,
    cfg: &InclusionConfig,
    layers: &[usize],
) -> Result<Vec<InclusionReport>> {
    if cfg.trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    if cfg.points_per_trial == 0 || cfg.points_per_trial > data.len() {
        return Err(Error::invalid(format!(
            "points per trial must be in 1..={}",
            data.len()
        )));
    }
    if !(cfg.delta >= 0.0) {
        return Err(Error::invalid("delta must be >= 0"));
    }
    cfg.train.validate()?;
    let shape = net.shape();
    if layers.is_empty() {
        return Err(Error::invalid("no layer to check"));
    }
    if let Some(h) = layers.iter().find(|&&h| h == 0 || h > shape.depth) {
        return Err(Error::invalid(format!("layer {h} out of range")));
    }
    let w_bar = net.flatten();
    let mut samples = vec![w_bar.clone()];
    if let Some(extra) = original {
        if extra.dim() != w_bar.len() {
            return Err(Error::invalid("original set sample has wrong dimension"));
        }
        samples.extend(extra.samples().iter().cloned());
    }
    let full_reference = SolutionSet::new(samples, "original")?;
    let kappa_per_layer = (1..=shape.depth)
        .map(|h| Ok(kappa_global(net, data, h)?.per_point))
        .collect::<Result<Vec<_>>>()?;

    let runs: Vec<TrialRun> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(net, data, cfg, t))
        .collect();

    layers
        .iter()
        .map(|&layer| {
            let block = shape.layer_offset(layer)..shape.layer_offset(layer) + shape.layer_params(layer);
            let reference = full_reference.restrict(block.clone())?;
            let cert = kappa_global(net, data, layer)?;
            let trials: Vec<TrialRecord> = runs
                .iter()
                .enumerate()
                .map(|(t, run)| layer_record(t, run, cfg, &cert, &w_bar, &block, &reference))
                .collect();
            let counted: Vec<&TrialRecord> = trials.iter().filter(|t| t.counted()).collect();
            let passed = counted.iter().filter(|t| t.passed).count();
            let pass_fraction = if counted.is_empty() {
                0.0
            } else {
                passed as f64 / counted.len() as f64
            };
            let worst_margin = counted.iter().map(|t| t.margin).fold(f64::INFINITY, f64::min);
            Ok(InclusionReport {
                layer,
                kappa_per_layer: kappa_per_layer.clone(),
                kappa_global: cert.aggregate,
                counted: counted.len(),
                trials,
                pass_fraction,
                worst_margin,
            })
        })
        .collect()
}

fn layer_record(
    t: usize,
    run: &TrialRun,
    cfg: &InclusionConfig,
    cert: &LipschitzCertificate,
    w_bar: &DVector<f64>,
    block: &std::ops::Range<usize>,
    reference: &SolutionSet,
) -> TrialRecord {
    // retraining uses all points, so the joint map's modulus applies
    let kappa = cert.aggregate;
    let kappa_points = run.indices.iter().map(|&i| cert.per_point[i]).fold(0.0, f64::max);
    let radius = kappa * run.shift;
    let mut record = TrialRecord {
        trial: t,
        indices: run.indices.clone(),
        delta: cfg.delta,
        kappa,
        kappa_points,
        radius,
        distance: f64::NAN,
        margin: f64::NAN,
        passed: false,
        grad_norm: f64::NAN,
        converged: false,
        in_neighborhood: false,
        epochs: 0,
        distance_to_wbar: f64::NAN,
        back_projected: None,
        error: None,
    };
    let (out, back) = match &run.outcome {
        Err(e) => {
            record.error = Some(e.clone());
            return record;
        }
        Ok(o) => o,
    };
    let w = out.network.flatten();
    let layer_w = w.rows(block.start, block.len()).into_owned();
    let mut local = reference.clone();
    if let Some(back) = back {
        record.back_projected = Some(back.is_some());
        if let Some(b) = back {
            let b = b.flatten().rows(block.start, block.len()).into_owned();
            local = local.with_sample(b).expect("dimensions agree");
        }
    }
    let distance = point_to_set(&layer_w, &local).expect("dimensions agree");
    record.distance = distance;
    record.distance_to_wbar = (&layer_w - w_bar.rows(block.start, block.len())).norm();
    record.margin = radius - distance;
    record.passed = contained_in_expansion(&SolutionSet::singleton(layer_w, "retrained"), &local, radius)
        .expect("radius >= 0");
    record.grad_norm = out.grad_norm;
    record.converged = out.converged;
    record.epochs = out.epochs;
    record.in_neighborhood = (&w - w_bar).norm() <= cfg.trust_factor * radius || radius == 0.0;
    record
}
