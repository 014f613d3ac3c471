//! Exact first- and second-order derivatives of the quadratic training loss.
//!
//! Gradients are assembled from the layerwise Jacobians
//! `∂f/∂W^(h) = diag(D_h) [Π_{k>h} W^(k)ᵀ diag(D_k)] a x^(h-1)ᵀ` and
//! `∂f/∂x = [Π_k W^(k)ᵀ diag(D_k)] a`. Second-order products (Hessian-vector
//! and mixed data/weight products) push a tangent through the forward pass and
//! the backward recursion at the same time, with the activation masks frozen.
//! Nothing of size `p × p` is ever formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::net::{Dataset, ForwardPass, Network, Shape};
use crate::solver::LinearOperator;

/// Gradient of a mean loss with respect to the flattened weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: DVector<f64>,
    /// Number of points the mean was taken over.
    pub point_count: usize,
}

impl GradientVector {
    pub fn norm(&self) -> f64 {
        self.values.norm()
    }
}

/// `δ_h = ∂f/∂z_h` for `h = 1..=H` (index `h - 1`), plus `∂f/∂x`.
fn backprop_output(net: &Network, fp: &ForwardPass) -> (Vec<DVector<f64>>, DVector<f64>) {
    let depth = net.depth();
    let mut deltas = vec![DVector::zeros(0); depth];
    let mut g = net.output_vector().clone();
    for h in (1..=depth).rev() {
        let mask = &fp.pattern.masks[h - 1];
        let delta = DVector::from_fn(g.len(), |i, _| if mask[i] { g[i] } else { 0.0 });
        g = net.layer(h).tr_mul(&delta);
        deltas[h - 1] = delta;
    }
    (deltas, g)
}

/// `∂f/∂W^(h)` as an `m × cols(h)` matrix.
pub fn layer_jacobian(net: &Network, x: &DVector<f64>, h: usize) -> Result<DMatrix<f64>> {
    if h == 0 || h > net.depth() {
        return Err(Error::invalid(format!(
            "layer {h} out of range 1..={}",
            net.depth()
        )));
    }
    let fp = net.forward(x)?;
    let (deltas, _) = backprop_output(net, &fp);
    Ok(&deltas[h - 1] * fp.hidden[h - 1].transpose())
}

/// `∂f/∂x ∈ R^d`.
pub fn input_jacobian(net: &Network, x: &DVector<f64>) -> Result<DVector<f64>> {
    let fp = net.forward(x)?;
    Ok(backprop_output(net, &fp).1)
}

/// `∂f/∂w ∈ R^p` in the flatten layout.
pub fn weight_jacobian(net: &Network, x: &DVector<f64>) -> Result<DVector<f64>> {
    let fp = net.forward(x)?;
    let (deltas, _) = backprop_output(net, &fp);
    let shape = net.shape();
    let mut out = vec![0.0; shape.param_count()];
    for h in 1..=net.depth() {
        let off = shape.layer_offset(h);
        let cols = shape.layer_cols(h);
        let prev = &fp.hidden[h - 1];
        for (i, d) in deltas[h - 1].iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &mut out[off + i * cols..off + (i + 1) * cols];
            for (o, a) in row.iter_mut().zip(prev.iter()) {
                *o = d * a;
            }
        }
    }
    Ok(DVector::from_vec(out))
}

fn accumulate_gradient(
    net: &Network,
    x: &DVector<f64>,
    y: f64,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    let fp = net.forward(x)?;
    let r = fp.output - y;
    if r == 0.0 {
        return Ok(());
    }
    let (deltas, _) = backprop_output(net, &fp);
    let shape = net.shape();
    for h in 1..=net.depth() {
        let off = shape.layer_offset(h);
        let cols = shape.layer_cols(h);
        let prev = &fp.hidden[h - 1];
        for (i, d) in deltas[h - 1].iter().enumerate() {
            let c = scale * r * d;
            if c == 0.0 {
                continue;
            }
            let row = &mut out[off + i * cols..off + (i + 1) * cols];
            for (o, a) in row.iter_mut().zip(prev.iter()) {
                *o += c * a;
            }
        }
    }
    Ok(())
}

/// `(1/|idx|) Σ_{i∈idx} (f(x_i, w) − y_i) ∇_w f(x_i, w)`.
pub fn grad_w_mean_loss(net: &Network, data: &Dataset, indices: &[usize]) -> Result<GradientVector> {
    data.check_indices(indices)?;
    check_data_dim(net, data)?;
    let mut out = vec![0.0; net.param_count()];
    let scale = 1.0 / indices.len() as f64;
    for &i in indices {
        let (x, y) = data.get(i)?;
        accumulate_gradient(net, x, y, scale, &mut out)?;
    }
    Ok(GradientVector {
        values: DVector::from_vec(out),
        point_count: indices.len(),
    })
}

/// Gradient of the mean loss over the whole dataset.
pub fn full_gradient(net: &Network, data: &Dataset) -> Result<GradientVector> {
    grad_w_mean_loss(net, data, &data.all_indices())
}

fn check_data_dim(net: &Network, data: &Dataset) -> Result<()> {
    let d = net.shape().input_dim;
    if data.dim() != d {
        return Err(Error::invalid(format!(
            "dataset has dimension {}, network expects {d}",
            data.dim()
        )));
    }
    Ok(())
}

pub(crate) fn split_layers(shape: Shape, v: &[f64]) -> Vec<DMatrix<f64>> {
    let mut offset = 0;
    (1..=shape.depth)
        .map(|h| {
            let n = shape.layer_params(h);
            let m = DMatrix::from_row_slice(shape.width, shape.layer_cols(h), &v[offset..offset + n]);
            offset += n;
            m
        })
        .collect()
}

/// Directional derivative of the per-point loss gradient `(f − y) ∇_w f`
/// along a weight tangent `dw` and/or an input tangent `dx`, scaled and added
/// into `out`.
fn accumulate_gradient_tangent(
    net: &Network,
    x: &DVector<f64>,
    y: f64,
    dw: Option<&[DMatrix<f64>]>,
    dx: Option<&DVector<f64>>,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    let fp = net.forward(x)?;
    let depth = net.depth();
    let shape = net.shape();
    let r = fp.output - y;

    let mut tangents = Vec::with_capacity(depth + 1);
    tangents.push(match dx {
        Some(t) => t.clone(),
        None => DVector::zeros(x.len()),
    });
    for h in 1..=depth {
        let prev = &tangents[h - 1];
        let mut z = net.layer(h) * prev;
        if let Some(dw) = dw {
            z += &dw[h - 1] * &fp.hidden[h - 1];
        }
        let mask = &fp.pattern.masks[h - 1];
        for (i, v) in z.iter_mut().enumerate() {
            if !mask[i] {
                *v = 0.0;
            }
        }
        tangents.push(z);
    }
    let r_dot = net.output_vector().dot(&tangents[depth]);

    let mut g = net.output_vector().clone();
    let mut g_dot = DVector::zeros(g.len());
    for h in (1..=depth).rev() {
        let mask = &fp.pattern.masks[h - 1];
        let delta = DVector::from_fn(g.len(), |i, _| if mask[i] { g[i] } else { 0.0 });
        let delta_dot = DVector::from_fn(g.len(), |i, _| if mask[i] { g_dot[i] } else { 0.0 });
        let off = shape.layer_offset(h);
        let cols = shape.layer_cols(h);
        let prev = &fp.hidden[h - 1];
        let prev_dot = &tangents[h - 1];
        for i in 0..delta.len() {
            let c1 = scale * (r_dot * delta[i] + r * delta_dot[i]);
            let c2 = scale * r * delta[i];
            if c1 == 0.0 && c2 == 0.0 {
                continue;
            }
            let row = &mut out[off + i * cols..off + (i + 1) * cols];
            for j in 0..cols {
                row[j] += c1 * prev[j] + c2 * prev_dot[j];
            }
        }
        let mut g_next_dot = net.layer(h).tr_mul(&delta_dot);
        if let Some(dw) = dw {
            g_next_dot += dw[h - 1].tr_mul(&delta);
        }
        g = net.layer(h).tr_mul(&delta);
        g_dot = g_next_dot;
    }
    Ok(())
}

/// Hessian of the mean loss over an index set, applied matrix-free.
#[derive(Debug, Clone)]
pub struct HvpOperator<'a> {
    net: &'a Network,
    data: &'a Dataset,
    indices: Vec<usize>,
}

impl<'a> HvpOperator<'a> {
    pub fn new(net: &'a Network, data: &'a Dataset, indices: Vec<usize>) -> Result<Self> {
        data.check_indices(&indices)?;
        check_data_dim(net, data)?;
        Ok(HvpOperator { net, data, indices })
    }

    /// Hessian of the mean loss over every point of `data`.
    pub fn full(net: &'a Network, data: &'a Dataset) -> Result<Self> {
        HvpOperator::new(net, data, data.all_indices())
    }

    pub fn dim(&self) -> usize {
        self.net.param_count()
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    pub fn dataset(&self) -> &Dataset {
        self.data
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `∇²_w L̄(w) v`.
    pub fn hvp(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.dim();
        if v.len() != p {
            return Err(Error::invalid(format!(
                "vector has dimension {}, Hessian is {p}x{p}",
                v.len()
            )));
        }
        let mut out = vec![0.0; p];
        if v.iter().all(|&c| c == 0.0) {
            return Ok(DVector::from_vec(out));
        }
        let dw = split_layers(self.net.shape(), v.as_slice());
        let scale = 1.0 / self.indices.len() as f64;
        for &i in &self.indices {
            let (x, y) = self.data.get(i)?;
            accumulate_gradient_tangent(self.net, x, y, Some(&dw), None, scale, &mut out)?;
        }
        Ok(DVector::from_vec(out))
    }
}

impl LinearOperator for HvpOperator<'_> {
    fn nrows(&self) -> usize {
        self.dim()
    }

    fn ncols(&self) -> usize {
        self.dim()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.hvp(v).expect("dimension checked by solver")
    }

    fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply(v)
    }
}

/// `∇_x ∇_w (1/|K|) Σ_{i∈K} L(x_i, y_i, w) Δx`, where `directions[j]` is the
/// data direction for point `indices[j]`.
pub fn mixed_jvp(
    net: &Network,
    data: &Dataset,
    indices: &[usize],
    directions: &[DVector<f64>],
) -> Result<DVector<f64>> {
    data.check_indices(indices)?;
    check_data_dim(net, data)?;
    if directions.len() != indices.len() {
        return Err(Error::invalid(format!(
            "{} directions for {} perturbed points",
            directions.len(),
            indices.len()
        )));
    }
    let mut out = vec![0.0; net.param_count()];
    let scale = 1.0 / indices.len() as f64;
    for (&i, dx) in indices.iter().zip(directions) {
        let (x, y) = data.get(i)?;
        if dx.len() != x.len() {
            return Err(Error::invalid(format!(
                "direction for point {i} has dimension {}, expected {}",
                dx.len(),
                x.len()
            )));
        }
        if dx.iter().all(|&c| c == 0.0) {
            continue;
        }
        accumulate_gradient_tangent(net, x, y, None, Some(dx), scale, &mut out)?;
    }
    Ok(DVector::from_vec(out))
}

/// Dense `∇_{x_k} ∇_w L(x_k, y_k, w) ∈ R^{p×d}` for one point (unnormalised).
pub fn mixed_matrix(net: &Network, data: &Dataset, k: usize) -> Result<DMatrix<f64>> {
    let d = data.dim();
    let mut m = DMatrix::zeros(net.param_count(), d);
    for j in 0..d {
        let mut e = DVector::zeros(d);
        e[j] = 1.0;
        let col = mixed_jvp(net, data, &[k], &[e])?;
        m.set_column(j, &col);
    }
    Ok(m)
}
