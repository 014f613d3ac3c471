use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use setsens::io::{self, write_json, write_text};
use setsens::landscape::{landscape_slice, GridAxis};
use setsens::lipschitz::{kappa_global, verify_inclusion_layers, InclusionConfig, InclusionReport, LipschitzCertificate};
use setsens::scenarios::{random_spec, seeded_rng, teacher_student, TrainSummary};
use setsens::sensitivity::PerturbationSpecFile;
use setsens::trainer::{sgd_train, TrainConfig};
use setsens::verify::{run_oracle_suite, OracleReport};
use setsens::{
    algorithm1, estimate_solution_set, graphical_derivative, toy, Dataset, GraphicalDerivativeConfig,
    MixedScaling, Network, PerturbationSpec, SensitivityReport, Shape, SolutionSet,
};

use crate::{CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Consistent,
    PerSubset,
}

impl From<Scaling> for MixedScaling {
    fn from(s: Scaling) -> Self {
        match s {
            Scaling::Consistent => MixedScaling::Consistent,
            Scaling::PerSubset => MixedScaling::PerSubset,
        }
    }
}

#[derive(Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Output directory for data.csv and teacher.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Where the trained checkpoint is written.
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this checkpoint instead of a seeded random network.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop when the full gradient norm falls to this value.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_epochs: usize,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct KappaArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Single layer (1-based); every layer when omitted.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the spec's magnitudes by a common δ.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative tolerance of the least-squares solver.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum, default_value_t = Scaling::Consistent)]
    pub scaling: Scaling,
    /// Also report the layer's aggregate modulus.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Write the estimated solution set here.
    #[arg(long)]
    pub set_out: Option<PathBuf>,
    /// Proceed even when the checkpoint is not stationary.
    #[arg(long)]
    pub allow_nonstationary: bool,
}

#[derive(Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Perturbation for the pseudo-inverse check; a seeded one-point spec of
    /// size δ otherwise.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    pub delta: f64,
    /// Single layer (1-based); every layer when omitted.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Retraining trials.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub points_per_trial: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Retraining gradient-norm tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 200_000)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 10.0)]
    pub trust_factor: f64,
    /// Extra samples of the unperturbed solution set.
    #[arg(long)]
    pub original: Option<PathBuf>,
    #[arg(long)]
    pub no_back_project: bool,
}

#[derive(Args, Serialize, Deserialize)]
pub struct ToyArgs {
    #[arg(long, default_value = "toy-output")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Landscape grid points per axis over [0, 3].
    #[arg(long, default_value_t = 61)]
    pub grid: usize,
}

fn emit<T: Serialize>(out: Option<&Path>, report: &T) -> CliResult<()> {
    match out {
        Some(p) => write_json(p, report)?,
        None => println!("{}", io::to_json_string(report)?),
    }
    Ok(())
}

fn load_spec(path: &Path, delta: Option<f64>) -> CliResult<PerturbationSpec> {
    let mut file: PerturbationSpecFile = io::read_json(path)?;
    if let Some(d) = delta {
        file.delta = Some(d);
        file.magnitudes = None;
    }
    Ok(PerturbationSpec::try_from(file)?)
}

fn check_dims(net: &Network, data: &Dataset) -> CliResult<()> {
    let d = net.shape().input_dim;
    if d != data.dim() {
        return Err(setsens::Error::InvalidInput(format!(
            "checkpoint expects inputs of dimension {d}, data has {}",
            data.dim()
        ))
        .into());
    }
    Ok(())
}

fn load_pair(data: &Path, checkpoint: &Path) -> CliResult<(Network, Dataset)> {
    let data = io::load_dataset(data)?;
    let net = io::load_network(checkpoint)?;
    check_dims(&net, &data)?;
    Ok((net, data))
}

fn layers_of(net: &Network, layer: Option<usize>) -> Vec<usize> {
    layer.map_or_else(|| (1..=net.depth()).collect(), |h| vec![h])
}

#[derive(Serialize)]
struct SynthReport<'a> {
    config: &'a SynthArgs,
    data: PathBuf,
    teacher: PathBuf,
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    let shape = Shape::new(args.depth, args.width, args.input_dim)?;
    let ts = teacher_student(shape, args.points, args.seed)?;
    let data = args.out.join("data.csv");
    let teacher = args.out.join("teacher.json");
    io::save_dataset(&data, &ts.data)?;
    io::save_network(&teacher, &ts.teacher)?;
    emit(None, &SynthReport { config: &args, data, teacher })
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a TrainArgs,
    checkpoint: &'a Path,
    train: TrainSummary,
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let data = io::load_dataset(&args.data)?;
    let init = match &args.checkpoint {
        Some(p) => io::load_network(p)?,
        None => {
            let shape = Shape::new(args.depth, args.width, data.dim())?;
            Network::random(shape, &mut seeded_rng(args.seed, 1))
        }
    };
    check_dims(&init, &data)?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        max_epochs: args.max_epochs,
        batch_size: args.batch_size,
        tolerance: args.tol,
        seed: args.seed,
    };
    let out = sgd_train(&init, &data, &cfg)?;
    io::save_network(&args.out, &out.network)?;
    let report = TrainReport {
        config: &args,
        checkpoint: &args.out,
        train: TrainSummary {
            epochs: out.epochs,
            grad_norm: out.grad_norm,
            loss: out.loss,
            converged: out.converged,
        },
    };
    emit(None, &report)
}

#[derive(Serialize)]
struct KappaReport<'a> {
    config: &'a KappaArgs,
    certificates: Vec<LipschitzCertificate>,
}

pub fn kappa(args: KappaArgs) -> CliResult<()> {
    let (net, data) = load_pair(&args.data, &args.checkpoint)?;
    let certificates = layers_of(&net, args.layer)
        .into_iter()
        .map(|h| kappa_global(&net, &data, h))
        .collect::<setsens::Result<Vec<_>>>()?;
    emit(args.out.as_deref(), &KappaReport { config: &args, certificates })
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    config: &'a EstimateArgs,
    report: SensitivityReport,
}

pub fn estimate(args: EstimateArgs) -> CliResult<()> {
    let (net, data) = load_pair(&args.data, &args.checkpoint)?;
    let spec = load_spec(&args.spec, args.delta)?;
    let cfg = GraphicalDerivativeConfig {
        samples: args.samples,
        seed: args.seed,
        rel_tol: args.tol,
        max_iter: args.max_iter,
        scaling: args.scaling.into(),
        require_stationary: !args.allow_nonstationary,
        ..GraphicalDerivativeConfig::default()
    };
    let mut report = algorithm1(&net, &data, &spec, &cfg)?;
    if let Some(h) = args.layer {
        report.kappa = Some(kappa_global(&net, &data, h)?.aggregate);
    }
    if let Some(p) = &args.set_out {
        let gd = graphical_derivative(&net, &data, &spec, &cfg)?;
        io::save_solution_set(p, &estimate_solution_set(&net.flatten(), &gd)?)?;
    }
    emit(args.out.as_deref(), &EstimateReport { config: &args, report })
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    config: &'a VerifyArgs,
    oracle: OracleReport,
    inclusion: Vec<InclusionReport>,
}

pub fn verify(args: VerifyArgs) -> CliResult<()> {
    let (net, data) = load_pair(&args.data, &args.checkpoint)?;
    let spec = match &args.spec {
        Some(p) => load_spec(p, None)?,
        None => random_spec(&data, 1, args.delta, &mut seeded_rng(args.seed, 0))?,
    };
    let oracle = run_oracle_suite(&net, &data, Some(&spec), args.seed)?;
    let original = args.original.as_deref().map(io::load_solution_set).transpose()?;
    let cfg = InclusionConfig {
        trials: args.samples,
        delta: args.delta,
        points_per_trial: args.points_per_trial,
        trust_factor: args.trust_factor,
        back_project: !args.no_back_project,
        train: TrainConfig {
            learning_rate: args.lr,
            max_epochs: args.max_epochs,
            batch_size: None,
            tolerance: args.tol,
            seed: args.seed,
        },
        seed: args.seed,
        ..InclusionConfig::default()
    };
    let layers = layers_of(&net, args.layer);
    let inclusion = verify_inclusion_layers(&net, &data, original.as_ref(), &cfg, &layers)?;
    emit(args.out.as_deref(), &VerifyReport { config: &args, oracle, inclusion })
}

#[derive(Serialize)]
struct ToyReport<'a> {
    config: &'a ToyArgs,
    report: SensitivityReport,
    published_loss_before: f64,
    published_loss_after: f64,
    published_kappa: f64,
    published_radius: f64,
    kappa: Vec<LipschitzCertificate>,
    /// `√n · max κ_1 · ‖x − x^p‖`.
    radius: f64,
}

pub fn toy(args: ToyArgs) -> CliResult<()> {
    if args.grid < 2 {
        return Err(Failure::config("grid needs at least 2 points per axis"));
    }
    let net = toy::solution();
    let pristine = toy::pristine_data();
    let poisoned = toy::poisoned_data();
    let spec = toy::poisoning_spec();
    let cfg = GraphicalDerivativeConfig {
        samples: args.samples,
        seed: args.seed,
        ..GraphicalDerivativeConfig::default()
    };
    let report = algorithm1(&net, &pristine, &spec, &cfg)?;
    let gd = graphical_derivative(&net, &pristine, &spec, &cfg)?;
    let estimated = estimate_solution_set(&net.flatten(), &gd)?;
    let kappa = (1..=2)
        .map(|h| kappa_global(&net, &pristine, h))
        .collect::<setsens::Result<Vec<_>>>()?;
    let radius = kappa[0].aggregate * spec.total_norm();

    let out = &args.out;
    let origin = toy::network(0.0, 0.0);
    let e1 = DVector::from_row_slice(&[1.0, 0.0]);
    let e2 = DVector::from_row_slice(&[0.0, 1.0]);
    let axis = GridAxis::new(0.0, 3.0, args.grid)?;
    for (name, data) in [("landscape_poisoned.csv", &poisoned), ("landscape_original.csv", &pristine)] {
        let grid = landscape_slice(&origin, data, &e1, &e2, axis, axis)?;
        write_text(&out.join(name), &grid.to_csv())?;
    }
    let original = SolutionSet::new(toy::hyperbola_samples(2.0, 0.5, 3.0, 101), "original w1 w2 = 2")?;
    let poisoned_set = SolutionSet::new(toy::hyperbola_samples(2.5, 0.5, 3.0, 101), "poisoned w1 w2 = 2.5")?;
    io::save_solution_set(&out.join("original_set.json"), &original)?;
    io::save_solution_set(&out.join("poisoned_set.json"), &poisoned_set)?;
    io::save_solution_set(&out.join("estimated_set.json"), &estimated)?;

    let toy_report = ToyReport {
        config: &args,
        report,
        published_loss_before: toy::PUBLISHED_LOSS_BEFORE,
        published_loss_after: toy::PUBLISHED_LOSS_AFTER,
        published_kappa: toy::PUBLISHED_KAPPA,
        published_radius: toy::PUBLISHED_RADIUS,
        kappa,
        radius,
    };
    write_json(&out.join("report.json"), &toy_report)?;
    emit(None, &toy_report)
}
