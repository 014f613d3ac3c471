//! Reusable problem instances.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::input_jacobian;
use crate::error::{Error, Result};
use crate::net::{Dataset, Network, Shape};
use crate::sensitivity::{algorithm1, GraphicalDerivativeConfig, PerturbationSpec, SensitivityReport};
use crate::trainer::{sgd_train, TrainConfig};

/// Shape and size of the desk-scale stand-in for the image-classifier runs.
pub const TABLE_SHAPE: (usize, usize, usize) = (3, 32, 16);
pub const TABLE_POINTS: usize = 200;
pub const TABLE_TOLERANCE: f64 = 1e-7;
pub const TABLE_LEARNING_RATE: f64 = 0.4;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian_inputs<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| DVector::from_fn(d, |_, _| -> f64 { StandardNormal.sample(rng) }))
        .collect()
}

pub fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(d, |_, _| -> f64 { StandardNormal.sample(rng) });
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

/// A random network labelling Gaussian inputs, so every weight vector of the
/// teacher is a zero-loss solution.
#[derive(Debug, Clone)]
pub struct TeacherStudent {
    pub teacher: Network,
    pub data: Dataset,
    /// Independent random initialisation for a student of the same shape.
    pub student: Network,
}

pub fn teacher_student(shape: Shape, n: usize, seed: u64) -> Result<TeacherStudent> {
    let mut rng = seeded_rng(seed, 0);
    let teacher = Network::random(shape, &mut rng);
    let inputs = gaussian_inputs(n, shape.input_dim, &mut rng);
    let data = Dataset::labelled_by(&teacher, inputs)?;
    let student = Network::random(shape, &mut seeded_rng(seed, 1));
    Ok(TeacherStudent { teacher, data, student })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub grad_norm: f64,
    pub loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct TrainedInstance {
    pub network: Network,
    pub data: Dataset,
    pub train: TrainSummary,
}

/// Teacher-student data, student trained by full-batch gradient descent.
/// Fails when training stops short of `cfg.tolerance`.
pub fn trained_instance(shape: Shape, n: usize, cfg: &TrainConfig) -> Result<TrainedInstance> {
    let ts = teacher_student(shape, n, cfg.seed)?;
    let out = sgd_train(&ts.student, &ts.data, cfg)?;
    if !out.converged {
        return Err(Error::Precondition(format!(
            "training stopped after {} epochs at gradient norm {:e}",
            out.epochs, out.grad_norm
        )));
    }
    Ok(TrainedInstance {
        network: out.network,
        data: ts.data,
        train: TrainSummary {
            epochs: out.epochs,
            grad_norm: out.grad_norm,
            loss: out.loss,
            converged: out.converged,
        },
    })
}

pub fn table_instance(seed: u64) -> Result<TrainedInstance> {
    let (h, m, d) = TABLE_SHAPE;
    let cfg = TrainConfig {
        learning_rate: TABLE_LEARNING_RATE,
        max_epochs: 50_000,
        batch_size: None,
        tolerance: TABLE_TOLERANCE,
        seed,
    };
    trained_instance(Shape::new(h, m, d)?, TABLE_POINTS, &cfg)
}

/// `k` distinct indices out of `0..n`, sorted.
pub fn choose_points<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot choose {k} of {n} points")));
    }
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Move each chosen point by `step · ‖x_i‖` along `sign(∇_x L_i) / √d`, the
/// loss-increasing sign direction. Coordinates where `∇_x L_i` vanishes
/// fall back to the sign of `∂f/∂x`.
pub fn sign_gradient_spec(net: &Network, data: &Dataset, indices: &[usize], step: f64) -> Result<PerturbationSpec> {
    let d = data.dim();
    let mut directions = Vec::with_capacity(indices.len());
    let mut magnitudes = Vec::with_capacity(indices.len());
    for &i in indices {
        let (x, y) = data.get(i)?;
        let jx = input_jacobian(net, x)?;
        let r = net.predict(x)? - y;
        let dir = DVector::from_fn(d, |j, _| {
            let g = r * jx[j];
            if g != 0.0 {
                g.signum()
            } else if jx[j] != 0.0 {
                jx[j].signum()
            } else {
                1.0
            }
        });
        directions.push(dir / (d as f64).sqrt());
        magnitudes.push(step * x.norm());
    }
    PerturbationSpec::with_magnitudes(indices.to_vec(), directions, magnitudes)
}

/// One row of a perturbed-point loss table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedPointRow {
    pub points: usize,
    pub step: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub worst_loss_after: f64,
    /// `loss_before / loss_after` at the minimum-norm estimate.
    pub factor: f64,
    pub hausdorff_to_wbar: f64,
    pub iterations: usize,
    pub residual: f64,
    pub warning: bool,
}

impl PerturbedPointRow {
    pub fn from_report(points: usize, step: f64, rep: &SensitivityReport) -> Self {
        let first = &rep.per_sample[0];
        PerturbedPointRow {
            points,
            step,
            loss_before: rep.loss_before,
            loss_after: first.loss_after,
            worst_loss_after: rep.worst_loss_after(),
            factor: rep.loss_before / first.loss_after,
            hausdorff_to_wbar: rep.hausdorff_to_wbar,
            iterations: first.iterations,
            residual: first.residual,
            warning: rep.warning,
        }
    }
}

/// Perturb `points` seeded points by the sign-gradient rule and run the
/// estimation pipeline.
pub fn perturbed_point_row(
    inst: &TrainedInstance,
    points: usize,
    step: f64,
    cfg: &GraphicalDerivativeConfig,
) -> Result<PerturbedPointRow> {
    let indices = choose_points(inst.data.len(), points, &mut seeded_rng(cfg.seed, points as u64))?;
    let spec = sign_gradient_spec(&inst.network, &inst.data, &indices, step)?;
    let rep = algorithm1(&inst.network, &inst.data, &spec, cfg)?;
    Ok(PerturbedPointRow::from_report(points, step, &rep))
}

/// One-layer linear regression written as a width-1 DFCNN with `a = 1`:
/// `f(x) = relu(wᵀx)`. Inputs and the generating weights are positive, so
/// at the least-squares fit every prediction is positive and the model is
/// exactly linear there.
#[derive(Debug, Clone)]
pub struct LeastSquaresInstance {
    pub network: Network,
    pub data: Dataset,
}

pub fn least_squares_instance(d: usize, n: usize, seed: u64) -> Result<LeastSquaresInstance> {
    if n < d {
        return Err(Error::invalid(format!("need n >= d for a unique fit, got n={n}, d={d}")));
    }
    let mut rng = seeded_rng(seed, 0);
    let truth = DVector::from_fn(d, |_, _| rng.random_range(0.5..1.5));
    let inputs: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(d, |_, _| rng.random_range(0.5..1.5)))
        .collect();
    let labels: Vec<f64> = inputs
        .iter()
        .map(|x| truth.dot(x) + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| inputs[i][j]);
    let y = DVector::from_vec(labels.clone());
    let w = (x.transpose() * &x)
        .cholesky()
        .ok_or_else(|| Error::invalid("design matrix is rank deficient"))?
        .solve(&(x.transpose() * y));
    if inputs.iter().any(|xi| w.dot(xi) <= 0.0) {
        return Err(Error::Precondition("least-squares fit leaves the linear region".into()));
    }
    let network = Network::new(vec![DMatrix::from_row_slice(1, d, w.as_slice())], DVector::from_element(1, 1.0))?;
    Ok(LeastSquaresInstance {
        network,
        data: Dataset::new(inputs, labels)?,
    })
}

/// Textbook least-squares influence of moving inputs:
/// `−(XᵀX)⁻¹ Σ_{k∈K} (x_k (wᵀs_k) + r_k s_k)` with residual `r_k = wᵀx_k − y_k`
/// and shift `s_k`.
pub fn least_squares_influence(inst: &LeastSquaresInstance, spec: &PerturbationSpec) -> Result<DVector<f64>> {
    let data = &inst.data;
    let d = data.dim();
    let w = DVector::from_row_slice(inst.network.layer(1).as_slice());
    let x = DMatrix::from_fn(data.len(), d, |i, j| data.inputs()[i][j]);
    let mut rhs = DVector::zeros(d);
    for (&k, s) in spec.indices().iter().zip(spec.displacements()) {
        let (xk, yk) = data.get(k)?;
        let r = w.dot(xk) - yk;
        rhs += xk * w.dot(&s) + &s * r;
    }
    let chol = (x.transpose() * x)
        .cholesky()
        .ok_or_else(|| Error::invalid("design matrix is rank deficient"))?;
    Ok(-chol.solve(&rhs))
}

/// A random network and Gaussian inputs labelled by that same network, so the
/// network sits at zero loss and is exactly stationary.
pub fn zero_loss_instance(shape: Shape, n: usize, seed: u64) -> Result<(Network, Dataset)> {
    let mut rng = seeded_rng(seed, 0);
    let net = Network::random(shape, &mut rng);
    let data = Dataset::labelled_by(&net, gaussian_inputs(n, shape.input_dim, &mut rng))?;
    Ok((net, data))
}

/// `k` seeded points moved by `delta` along random unit directions.
pub fn random_spec<R: Rng + ?Sized>(data: &Dataset, k: usize, delta: f64, rng: &mut R) -> Result<PerturbationSpec> {
    let indices = choose_points(data.len(), k, rng)?;
    let directions = indices.iter().map(|_| random_unit(data.dim(), rng)).collect();
    PerturbationSpec::new(indices, directions, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::full_gradient;
    use crate::sensitivity::{influence_function, MixedScaling};

    #[test]
    fn teacher_labels_are_exact() {
        let ts = teacher_student(Shape::new(2, 3, 2).unwrap(), 5, 4).unwrap();
        let all = ts.data.all_indices();
        assert_eq!(ts.teacher.mean_loss(&ts.data, &all).unwrap(), 0.0);
        assert_ne!(ts.teacher, ts.student);
    }

    #[test]
    fn sign_spec_directions() {
        let (net, data) = zero_loss_instance(Shape::new(2, 4, 3).unwrap(), 6, 3).unwrap();
        let spec = sign_gradient_spec(&net, &data, &[1, 4], 0.01).unwrap();
        for (dir, &i) in spec.directions().iter().zip(spec.indices()) {
            assert!(dir.iter().all(|v| (v.abs() - 1.0 / 3f64.sqrt()).abs() < 1e-15));
            let m = spec.magnitudes()[spec.indices().iter().position(|&j| j == i).unwrap()];
            assert!((m - 0.01 * data.inputs()[i].norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn least_squares_fit_is_stationary_and_matches_influence() {
        let inst = least_squares_instance(4, 12, 8).unwrap();
        assert!(full_gradient(&inst.network, &inst.data).unwrap().norm() < 1e-12);
        let spec = random_spec(&inst.data, 3, 0.05, &mut seeded_rng(1, 0)).unwrap();
        let a = influence_function(&inst.network, &inst.data, &spec, MixedScaling::Consistent).unwrap();
        let b = least_squares_influence(&inst, &spec).unwrap();
        assert!((&a - &b).norm() <= 1e-8 * b.norm());
    }

    #[test]
    fn choose_points_bounds() {
        let mut rng = seeded_rng(0, 0);
        assert!(choose_points(3, 0, &mut rng).is_err());
        assert!(choose_points(3, 4, &mut rng).is_err());
        assert_eq!(choose_points(3, 3, &mut rng).unwrap(), vec![0, 1, 2]);
    }
}
