//! Solution-set sensitivity to training-data perturbations.
//!
//! For a stationary `w̄` of the mean training loss, the graphical derivative of
//! the solution map in data direction `μ` is the affine subspace
//!
//! ```text
//! DS(x̄ | w̄)(μ) = { v : H v + b(μ) = 0 },   H = ∇²_w L̄(w̄),   b(μ) = ∇_x ∇_w L̄ μ
//! ```
//!
//! and the perturbed solution set is estimated by `w̄ + DS(x̄ | w̄)(δ Δx)`.
//! Elements of `DS` are found by matrix-free least squares on `H v = −b`: the
//! zero start gives the minimum-norm element `−H† b`, random starts add
//! components from the null space of `H`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{dense_hessian, solve_nonsingular};
use crate::diff::{full_gradient, mixed_jvp, mixed_matrix, HvpOperator};
use crate::error::{Error, Result};
use crate::net::{Dataset, Network};
use crate::set_metrics::{hausdorff, SolutionSet};
use crate::solver::{cgls, default_max_iter, CglsConfig, LinearOperator, LS_TOL};

/// Residual bound every returned element must satisfy:
/// `‖H v + b‖ ≤ RESIDUAL_TOL (1 + ‖b‖)`.
pub const RESIDUAL_TOL: f64 = 1e-6;
/// `w̄` counts as stationary when `‖∇ L̄(w̄)‖ ≤ STATIONARITY_TOL (1 + ‖w̄‖)`.
pub const STATIONARITY_TOL: f64 = 1e-6;
/// Largest parameter count the dense influence-function route accepts.
pub const INFLUENCE_MAX_PARAMS: usize = 200;
/// Smallest singular value of `H` the influence function accepts.
pub const INFLUENCE_MIN_SIGMA: f64 = 1e-8;
const UNIT_TOL: f64 = 1e-12;

/// Which points move, in which unit directions, and by how much.
///
/// `x_i^p = x̄_i + δ_i Δx_i` for `i ∈ K`; all other points are untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    indices: Vec<usize>,
    directions: Vec<DVector<f64>>,
    magnitudes: Vec<f64>,
}

impl PerturbationSpec {
    /// Common magnitude `δ` for every perturbed point.
    pub fn new(indices: Vec<usize>, directions: Vec<DVector<f64>>, delta: f64) -> Result<Self> {
        let n = indices.len();
        PerturbationSpec::with_magnitudes(indices, directions, vec![delta; n])
    }

    pub fn with_magnitudes(
        indices: Vec<usize>,
        directions: Vec<DVector<f64>>,
        magnitudes: Vec<f64>,
    ) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("perturbation index set K is empty"));
        }
        if directions.len() != indices.len() || magnitudes.len() != indices.len() {
            return Err(Error::invalid(format!(
                "{} indices, {} directions, {} magnitudes",
                indices.len(),
                directions.len(),
                magnitudes.len()
            )));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("perturbation indices must be distinct"));
        }
        let d = directions[0].len();
        for (i, dir) in indices.iter().zip(&directions) {
            if dir.len() != d {
                return Err(Error::invalid(format!("direction for point {i} has inconsistent dimension")));
            }
            if (dir.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::invalid(format!(
                    "direction for point {i} has norm {}, expected 1",
                    dir.norm()
                )));
            }
        }
        if let Some(m) = magnitudes.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            return Err(Error::invalid(format!("perturbation magnitude must be finite and >= 0, got {m}")));
        }
        Ok(PerturbationSpec {
            indices,
            directions,
            magnitudes,
        })
    }

    /// Build from raw shifts `x_i^p − x̄_i`; a zero shift gets direction `e_1`
    /// and magnitude 0.
    pub fn from_displacements(indices: Vec<usize>, shifts: Vec<DVector<f64>>) -> Result<Self> {
        let mut directions = Vec::with_capacity(shifts.len());
        let mut magnitudes = Vec::with_capacity(shifts.len());
        for s in shifts {
            let n = s.norm();
            if n > 0.0 {
                directions.push(s / n);
                magnitudes.push(n);
            } else {
                let mut e = DVector::zeros(s.len().max(1));
                e[0] = 1.0;
                directions.push(e);
                magnitudes.push(0.0);
            }
        }
        PerturbationSpec::with_magnitudes(indices, directions, magnitudes)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn directions(&self) -> &[DVector<f64>] {
        &self.directions
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    /// The common magnitude, when all points share one.
    pub fn delta(&self) -> Option<f64> {
        let first = self.magnitudes[0];
        self.magnitudes.iter().all(|&m| m == first).then_some(first)
    }

    /// `δ_i Δx_i` per perturbed point.
    pub fn displacements(&self) -> Vec<DVector<f64>> {
        self.directions
            .iter()
            .zip(&self.magnitudes)
            .map(|(d, m)| d * *m)
            .collect()
    }

    /// `‖x^p − x̄‖` over the stacked data vector.
    pub fn total_norm(&self) -> f64 {
        self.magnitudes.iter().map(|m| m * m).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        PerturbationSpec::with_magnitudes(
            self.indices.clone(),
            self.directions.clone(),
            self.magnitudes.iter().map(|m| m * factor).collect(),
        )
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let shifts: Vec<_> = self
            .indices
            .iter()
            .copied()
            .zip(self.displacements())
            .collect();
        data.shifted(&shifts)
    }

    pub(crate) fn check_against(&self, data: &Dataset) -> Result<()> {
        data.check_indices(&self.indices)?;
        if self.directions[0].len() != data.dim() {
            return Err(Error::invalid(format!(
                "directions have dimension {}, data has {}",
                self.directions[0].len(),
                data.dim()
            )));
        }
        Ok(())
    }
}

/// Serialised form of a [`PerturbationSpec`]; give either `delta` or
/// per-point `magnitudes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpecFile {
    pub indices: Vec<usize>,
    pub directions: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitudes: Option<Vec<f64>>,
}

impl From<&PerturbationSpec> for PerturbationSpecFile {
    fn from(s: &PerturbationSpec) -> Self {
        let delta = s.delta();
        PerturbationSpecFile {
            indices: s.indices.clone(),
            directions: s.directions.iter().map(|d| d.as_slice().to_vec()).collect(),
            delta,
            magnitudes: if delta.is_some() {
                None
            } else {
                Some(s.magnitudes.clone())
            },
        }
    }
}

impl TryFrom<PerturbationSpecFile> for PerturbationSpec {
    type Error = Error;

    fn try_from(f: PerturbationSpecFile) -> Result<Self> {
        let directions: Vec<_> = f.directions.into_iter().map(DVector::from_vec).collect();
        match (f.delta, f.magnitudes) {
            (Some(d), None) => PerturbationSpec::new(f.indices, directions, d),
            (None, Some(m)) => PerturbationSpec::with_magnitudes(f.indices, directions, m),
            _ => Err(Error::invalid("perturbation spec needs exactly one of `delta` or `magnitudes`")),
        }
    }
}

/// Normalisation of the mixed data/weight term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixedScaling {
    /// `(1/|I|) Σ_{i∈K}`: the exact derivative of `∇_w (1/|I|) Σ_{i∈I} L = 0`.
    #[default]
    Consistent,
    /// `(1/|K|) Σ_{i∈K}`, averaging over the perturbed points only.
    PerSubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphicalDerivativeConfig {
    /// Number of elements of `DS(x̄ | w̄)(μ)` to produce; the first is the
    /// minimum-norm one.
    pub samples: usize,
    pub seed: u64,
    pub rel_tol: f64,
    /// `None` means `50 √p`.
    pub max_iter: Option<usize>,
    pub scaling: MixedScaling,
    /// Random starts are drawn uniformly from the ball of radius
    /// `init_scale · ‖v_min‖`.
    pub init_scale: f64,
    pub require_stationary: bool,
}

impl Default for GraphicalDerivativeConfig {
    fn default() -> Self {
        GraphicalDerivativeConfig {
            samples: 1,
            seed: 0,
            rel_tol: 1e-10,
            max_iter: None,
            scaling: MixedScaling::Consistent,
            init_scale: 1.0,
            require_stationary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSample {
    pub v: DVector<f64>,
    /// `‖H v + b‖`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub min_norm: bool,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphicalDerivativeResult {
    pub samples: Vec<DerivativeSample>,
    /// The right-hand side `b` of `H v + b = 0`.
    pub rhs: DVector<f64>,
    pub seed: u64,
    /// Set when some sample misses the residual bound.
    pub warning: bool,
}

impl GraphicalDerivativeResult {
    pub fn min_norm(&self) -> &DVector<f64> {
        &self.samples[0].v
    }

    pub fn residual_bound(&self) -> f64 {
        RESIDUAL_TOL * (1.0 + self.rhs.norm())
    }
}

/// Precondition check for the sensitivity operations.
pub fn check_stationary(net: &Network, data: &Dataset) -> Result<f64> {
    let g = full_gradient(net, data)?.norm();
    let bound = STATIONARITY_TOL * (1.0 + net.flatten().norm());
    if g > bound {
        return Err(Error::Precondition(format!(
            "w̄ is not stationary: ‖∇L̄‖ = {g:e} exceeds {bound:e}"
        )));
    }
    Ok(g)
}

/// `b = ∇_x ∇_w L̄ (δ Δx)` under the chosen normalisation.
pub fn mixed_rhs(net: &Network, data: &Dataset, spec: &PerturbationSpec, scaling: MixedScaling) -> Result<DVector<f64>> {
    spec.check_against(data)?;
    let b = mixed_jvp(net, data, spec.indices(), &spec.displacements())?;
    Ok(match scaling {
        MixedScaling::PerSubset => b,
        MixedScaling::Consistent => b * (spec.indices().len() as f64 / data.len() as f64),
    })
}

fn random_in_ball(p: usize, radius: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    if radius == 0.0 {
        return DVector::zeros(p);
    }
    let g = DVector::from_fn(p, |_, _| -> f64 { StandardNormal.sample(rng) });
    let n = g.norm();
    let u: f64 = Uniform::new(0.0, 1.0).unwrap().sample(rng);
    g * (radius * u.powf(1.0 / p as f64) / n)
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn graphical_derivative(
    net: &Network,
    data: &Dataset,
    spec: &PerturbationSpec,
    cfg: &GraphicalDerivativeConfig,
) -> Result<GraphicalDerivativeResult> {
    if cfg.samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    spec.check_against(data)?;
    if cfg.require_stationary {
        check_stationary(net, data)?;
    }
    let op = HvpOperator::full(net, data)?;
    let p = op.dim();
    let b = mixed_rhs(net, data, spec, cfg.scaling)?;
    let rhs = -&b;
    let solver = CglsConfig {
        rel_tol: cfg.rel_tol,
        ls_tol: LS_TOL,
        max_iter: cfg.max_iter.unwrap_or_else(|| default_max_iter(p)),
    };
    let bound = RESIDUAL_TOL * (1.0 + b.norm());
    let to_sample = |out: crate::solver::CglsOutcome, min_norm: bool| DerivativeSample {
        within_bound: out.residual <= bound,
        residual: out.residual,
        iterations: out.iterations,
        converged: out.converged,
        min_norm,
        v: out.solution,
    };

    let first = cgls(&op, &rhs, &DVector::zeros(p), solver)?;
    let radius = cfg.init_scale * first.solution.norm();
    let mut samples = vec![to_sample(first, true)];
    let rest: Vec<Result<DerivativeSample>> = (1..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, i);
            let start = random_in_ball(p, radius, &mut rng);
            Ok(to_sample(cgls(&op, &rhs, &start, solver)?, false))
        })
        .collect();
    for s in rest {
        samples.push(s?);
    }
    let warning = samples.iter().any(|s| !s.within_bound);
    Ok(GraphicalDerivativeResult {
        samples,
        rhs: b,
        seed: cfg.seed,
        warning,
    })
}

/// `{w̄ + v : v ∈ samples}`.
pub fn estimate_solution_set(w_bar: &DVector<f64>, gd: &GraphicalDerivativeResult) -> Result<SolutionSet> {
    let p = w_bar.len();
    if let Some(s) = gd.samples.iter().find(|s| s.v.len() != p) {
        return Err(Error::invalid(format!(
            "derivative sample has dimension {}, weights have {p}",
            s.v.len()
        )));
    }
    SolutionSet::new(gd.samples.iter().map(|s| w_bar + &s.v).collect(), "estimated")
}

/// `−H⁻¹ b` by a dense solve; valid only at isolated minima.
pub fn influence_function(
    net: &Network,
    data: &Dataset,
    spec: &PerturbationSpec,
    scaling: MixedScaling,
) -> Result<DVector<f64>> {
    let p = net.param_count();
    if p > INFLUENCE_MAX_PARAMS {
        return Err(Error::invalid(format!(
            "dense influence function limited to p <= {INFLUENCE_MAX_PARAMS}, got {p}"
        )));
    }
    let b = mixed_rhs(net, data, spec, scaling)?;
    let h = dense_hessian(&HvpOperator::full(net, data)?)?;
    solve_nonsingular(&h, &(-b), INFLUENCE_MIN_SIGMA)
}

/// The vector a coderivative is evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub enum CoderivativeArg {
    /// `p ∈ R^p`, all weights.
    Full(DVector<f64>),
    /// `p ∈ R^{p^(h)}`, weights of one layer (1-based); the other rows of the
    /// adjoint system are unconstrained.
    Layer { layer: usize, value: DVector<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoderivativeResult {
    /// Sampled elements `q`; empty when the adjoint system is inconsistent.
    pub elements: Vec<DVector<f64>>,
    /// Adjoint vectors `y` behind each element.
    pub adjoints: Vec<DVector<f64>>,
    /// Least-squares residual of the adjoint system at the minimum-norm `y`.
    pub adjoint_residual: f64,
    pub consistent: bool,
}

/// Rows `range` of a square operator.
struct RowBlock<'a, A: LinearOperator> {
    inner: &'a A,
    start: usize,
    len: usize,
}

impl<A: LinearOperator> LinearOperator for RowBlock<'_, A> {
    fn nrows(&self) -> usize {
        self.len
    }

    fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.apply(x).rows(self.start, self.len).into_owned()
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.inner.nrows());
        full.rows_mut(self.start, self.len).copy_from(y);
        self.inner.apply_transpose(&full)
    }
}

/// `D*F(x̄_k | w̄)(p) = { ∇_{x_k}R(x̄, w̄)ᵀ y : p + ∇_w R(x̄, w̄)ᵀ y = 0 }` with
/// `R = ∇_w (1/n) Σ L`. The affine solution set in `y` is sampled like the
/// graphical derivative: minimum-norm `y` first, then random starts.
pub fn coderivative_apply(
    net: &Network,
    data: &Dataset,
    k: usize,
    arg: &CoderivativeArg,
    cfg: &GraphicalDerivativeConfig,
) -> Result<CoderivativeResult> {
    data.check_indices(&[k])?;
    if cfg.samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if cfg.require_stationary {
        check_stationary(net, data)?;
    }
    let op = HvpOperator::full(net, data)?;
    let p = op.dim();
    let shape = net.shape();
    let (start, len, target) = match arg {
        CoderivativeArg::Full(v) => (0, p, v),
        CoderivativeArg::Layer { layer, value } => {
            if *layer == 0 || *layer > shape.depth {
                return Err(Error::invalid(format!("layer {layer} out of range")));
            }
            (shape.layer_offset(*layer), shape.layer_params(*layer), value)
        }
    };
    if target.len() != len {
        return Err(Error::invalid(format!(
            "coderivative argument has length {}, expected {len}",
            target.len()
        )));
    }
    let block = RowBlock {
        inner: &op,
        start,
        len,
    };
    let rhs = -target;
    let solver = CglsConfig {
        rel_tol: cfg.rel_tol,
        ls_tol: LS_TOL,
        max_iter: cfg.max_iter.unwrap_or_else(|| default_max_iter(p)),
    };
    let first = cgls(&block, &rhs, &DVector::zeros(p), solver)?;
    let adjoint_residual = first.residual;
    if adjoint_residual > RESIDUAL_TOL * (1.0 + target.norm()) {
        return Ok(CoderivativeResult {
            elements: vec![],
            adjoints: vec![],
            adjoint_residual,
            consistent: false,
        });
    }
    let radius = cfg.init_scale * first.solution.norm().max(1.0);
    let mut adjoints = vec![first.solution];
    let rest: Vec<Result<DVector<f64>>> = (1..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, i);
            let start = random_in_ball(p, radius, &mut rng);
            Ok(cgls(&block, &rhs, &start, solver)?.solution)
        })
        .collect();
    for y in rest {
        adjoints.push(y?);
    }
    let mixed = mixed_matrix(net, data, k)? / data.len() as f64;
    let elements = adjoints.iter().map(|y| mixed.tr_mul(y)).collect();
    Ok(CoderivativeResult {
        elements,
        adjoints,
        adjoint_residual,
        consistent: true,
    })
}

/// `∇_{x_k} R(x̄, w̄) = (1/n) ∇_{x_k} ∇_w L(x_k, y_k, w̄)` as a dense `p × d`
/// matrix.
pub fn data_jacobian_of_stationarity(net: &Network, data: &Dataset, k: usize) -> Result<DMatrix<f64>> {
    Ok(mixed_matrix(net, data, k)? / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub residual: f64,
    pub norm: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub iterations: usize,
    pub converged: bool,
    pub min_norm: bool,
}

/// Output of [`algorithm1`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub seed: u64,
    pub spec: PerturbationSpecFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    pub hausdorff_to_wbar: f64,
    /// Summed loss `Σ_{i∈K} L(x_i^p, y_i, w̄)` on the perturbed points.
    pub loss_before: f64,
    pub per_sample: Vec<SampleReport>,
    pub warning: bool,
    pub config: GraphicalDerivativeConfig,
}

impl SensitivityReport {
    /// Largest perturbed-point loss over the estimated solutions.
    pub fn worst_loss_after(&self) -> f64 {
        self.per_sample
            .iter()
            .map(|s| s.loss_after)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_norm_loss_after(&self) -> f64 {
        self.per_sample[0].loss_after
    }
}

/// Graphical derivative, estimated solution set, and its Pompeiu-Hausdorff
/// distance to `{w̄}`, with perturbed-point losses before and after.
pub fn algorithm1(
    net: &Network,
    data: &Dataset,
    spec: &PerturbationSpec,
    cfg: &GraphicalDerivativeConfig,
) -> Result<SensitivityReport> {
    let gd = graphical_derivative(net, data, spec, cfg)?;
    let w_bar = net.flatten();
    let estimated = estimate_solution_set(&w_bar, &gd)?;
    let origin = SolutionSet::singleton(w_bar.clone(), "original");
    let distance = hausdorff(&estimated, &origin)?;
    let poisoned = spec.apply(data)?;
    let loss_before = net.total_loss(&poisoned, spec.indices())?;
    let per_sample = gd
        .samples
        .iter()
        .zip(estimated.samples())
        .map(|(s, w)| {
            let moved = net.with_weights(w)?;
            Ok(SampleReport {
                residual: s.residual,
                norm: s.v.norm(),
                loss_before,
                loss_after: moved.total_loss(&poisoned, spec.indices())?,
                iterations: s.iterations,
                converged: s.converged,
                min_norm: s.min_norm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityReport {
        seed: cfg.seed,
        spec: spec.into(),
        kappa: None,
        hausdorff_to_wbar: distance,
        loss_before,
        per_sample,
        warning: gd.warning,
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;

    fn toy_cfg(samples: usize) -> GraphicalDerivativeConfig {
        GraphicalDerivativeConfig {
            samples,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn spec_validation() {
        let e = DVector::from_element(1, 1.0);
        assert!(PerturbationSpec::new(vec![], vec![], 0.1).is_err());
        assert!(PerturbationSpec::new(vec![0], vec![e.clone() * 2.0], 0.1).is_err());
        assert!(PerturbationSpec::new(vec![0, 0], vec![e.clone(), e.clone()], 0.1).is_err());
        assert!(PerturbationSpec::new(vec![0], vec![e.clone()], -0.1).is_err());
        let s = PerturbationSpec::new(vec![1], vec![e], 0.5).unwrap();
        assert_eq!(s.delta(), Some(0.5));
        assert!(s.check_against(&toy::pristine_data()).is_ok());
        let out_of_range = PerturbationSpec::new(vec![5], vec![DVector::from_element(1, 1.0)], 0.5).unwrap();
        assert!(out_of_range.check_against(&toy::pristine_data()).is_err());
    }

    #[test]
    fn toy_spec_shape() {
        let s = toy::poisoning_spec();
        assert_eq!(s.delta(), None);
        assert!((s.total_norm() - 0.2 * 5f64.sqrt()).abs() < 1e-15);
        let p = s.apply(&toy::pristine_data()).unwrap();
        assert!((p.inputs()[0][0] - 0.8).abs() < 1e-15);
        assert!((p.inputs()[1][0] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn spec_file_round_trip() {
        let s = toy::poisoning_spec();
        let f = PerturbationSpecFile::from(&s);
        assert!(f.magnitudes.is_some());
        assert_eq!(PerturbationSpec::try_from(f).unwrap(), s);
        let bad = PerturbationSpecFile {
            indices: vec![0],
            directions: vec![vec![1.0]],
            delta: None,
            magnitudes: None,
        };
        assert!(PerturbationSpec::try_from(bad).is_err());
    }

    #[test]
    fn toy_minimum_norm_by_hand() {
        // H = [[10,5],[5,2.5]], b = (−2,−1); min-norm solution of H v = −b is
        // 0.08 (2, 1)
        let gd = graphical_derivative(&toy::solution(), &toy::pristine_data(), &toy::poisoning_spec(), &toy_cfg(1)).unwrap();
        assert!((gd.rhs.clone() - DVector::from_row_slice(&[-2.0, -1.0])).norm() < 1e-12);
        let v = gd.min_norm();
        assert!((v - DVector::from_row_slice(&[0.16, 0.08])).norm() < 1e-10);
        assert!(!gd.warning);
    }

    #[test]
    fn zero_perturbation_gives_zero() {
        let spec = toy::poisoning_spec().scaled(0.0).unwrap();
        let gd = graphical_derivative(&toy::solution(), &toy::pristine_data(), &spec, &toy_cfg(3)).unwrap();
        assert!(gd.samples.iter().all(|s| s.v.norm() == 0.0));
        let set = estimate_solution_set(&toy::solution().flatten(), &gd).unwrap();
        assert!(set.samples().iter().all(|w| w == &toy::solution().flatten()));
        let rep = algorithm1(&toy::solution(), &toy::pristine_data(), &spec, &toy_cfg(3)).unwrap();
        assert_eq!(rep.hausdorff_to_wbar, 0.0);
    }

    #[test]
    fn random_starts_spread_along_null_space() {
        let gd = graphical_derivative(&toy::solution(), &toy::pristine_data(), &toy::poisoning_spec(), &toy_cfg(5)).unwrap();
        let v0 = gd.min_norm().clone();
        for s in &gd.samples[1..] {
            assert!(s.within_bound);
            // difference lies along the null direction (1, −2)
            let diff = &s.v - &v0;
            assert!((2.0 * diff[0] + diff[1]).abs() < 1e-8);
            assert!(diff.norm() > 1e-6);
        }
    }

    #[test]
    fn nonstationary_point_rejected() {
        let r = graphical_derivative(&toy::network(1.0, 1.0), &toy::pristine_data(), &toy::poisoning_spec(), &toy_cfg(1));
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn toy_influence_is_singular() {
        let r = influence_function(&toy::solution(), &toy::pristine_data(), &toy::poisoning_spec(), MixedScaling::Consistent);
        assert!(matches!(r, Err(Error::SingularHessian { .. })));
    }

    #[test]
    fn report_distance_is_largest_step() {
        let rep = algorithm1(&toy::solution(), &toy::pristine_data(), &toy::poisoning_spec(), &toy_cfg(4)).unwrap();
        let largest = rep.per_sample.iter().map(|s| s.norm).fold(0.0, f64::max);
        assert!((rep.hausdorff_to_wbar - largest).abs() < 1e-15);
        assert!((rep.loss_before - 0.4).abs() < 1e-12);
        assert!(rep.worst_loss_after() < rep.loss_before);
    }

    #[test]
    fn coderivative_at_zero_is_zero_for_toy() {
        // null(H) = span(1, −2) and ∇_{x_k}Rᵀ (1, −2) = 0, so D*F(0) = {0}.
        let cfg = GraphicalDerivativeConfig {
            samples: 4,
            ..Default::default()
        };
        for k in 0..2 {
            let r = coderivative_apply(&toy::solution(), &toy::pristine_data(), k, &CoderivativeArg::Full(DVector::zeros(2)), &cfg).unwrap();
            assert!(r.consistent);
            for q in &r.elements {
                assert!(q.norm() < 1e-12);
            }
            assert!(r.adjoints[1..].iter().any(|y| y.norm() > 1e-3));
        }
    }

    #[test]
    fn coderivative_inconsistent_argument_is_empty() {
        // (1, 0) is not in range(H) = span(2, 1)
        let r = coderivative_apply(
            &toy::solution(),
            &toy::pristine_data(),
            0,
            &CoderivativeArg::Full(DVector::from_row_slice(&[1.0, 0.0])),
            &GraphicalDerivativeConfig::default(),
        )
        .unwrap();
        assert!(!r.consistent);
        assert!(r.elements.is_empty());
        assert!(r.adjoint_residual > 0.1);
    }

    #[test]
    fn coderivative_layer_variant() {
        // Layer 1 only: need (H y)_1 = −p1 → 10 y1 + 5 y2 = −p1, always solvable.
        let r = coderivative_apply(
            &toy::solution(),
            &toy::pristine_data(),
            0,
            &CoderivativeArg::Layer {
                layer: 1,
                value: DVector::from_element(1, 1.0),
            },
            &GraphicalDerivativeConfig::default(),
        )
        .unwrap();
        assert!(r.consistent);
        let y = &r.adjoints[0];
        assert!((10.0 * y[0] + 5.0 * y[1] + 1.0).abs() < 1e-9);
        // q = ½ (4, 2) · y
        assert!((r.elements[0][0] - 0.5 * (4.0 * y[0] + 2.0 * y[1])).abs() < 1e-12);
    }
}
