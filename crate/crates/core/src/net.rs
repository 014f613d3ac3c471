//! Deep fully-connected ReLU networks with a fixed linear read-out.
//!
//! A network of depth `H` and width `m` on inputs of dimension `d` computes
//!
//! ```text
//! x^(0) = x,   x^(h) = relu(W^(h) x^(h-1)),   f(x, w) = a · x^(H)
//! ```
//!
//! with `W^(1)` of shape `m × d`, `W^(h)` of shape `m × m` for `h ≥ 2` and a
//! fixed read-out vector `a ∈ R^m`. The read-out is not a trainable parameter:
//! the flattened weight vector `w` only covers the hidden layers, laid out
//! row-major, layer after layer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Layer geometry of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
}

impl Shape {
    pub fn new(depth: usize, width: usize, input_dim: usize) -> Result<Self> {
        if depth == 0 || width == 0 || input_dim == 0 {
            return Err(Error::invalid(format!(
                "shape needs depth, width and input_dim >= 1 (got {depth}, {width}, {input_dim})"
            )));
        }
        Ok(Shape {
            depth,
            width,
            input_dim,
        })
    }

    /// Column count of layer `h` (1-based).
    pub fn layer_cols(&self, h: usize) -> usize {
        if h == 1 {
            self.input_dim
        } else {
            self.width
        }
    }

    /// Number of scalar weights in layer `h` (1-based).
    pub fn layer_params(&self, h: usize) -> usize {
        self.width * self.layer_cols(h)
    }

    /// Total flattened dimension `p = m d + (H - 1) m²`.
    pub fn param_count(&self) -> usize {
        (1..=self.depth).map(|h| self.layer_params(h)).sum()
    }

    /// Offset of layer `h` (1-based) inside the flattened vector.
    pub fn layer_offset(&self, h: usize) -> usize {
        (1..h).map(|k| self.layer_params(k)).sum()
    }
}

/// A DFCNN: hidden weight matrices plus the fixed read-out vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DMatrix<f64>>,
    output: DVector<f64>,
}

/// Per-layer activity masks; `masks[h-1][j]` is true iff the pre-activation of
/// unit `j` in layer `h` is strictly positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    pub masks: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn layer_is_dead(&self, h: usize) -> bool {
        !self.masks[h - 1].iter().any(|&on| on)
    }
}

/// Everything a forward pass records for reuse by the derivative code.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: f64,
    pub pattern: ActivationPattern,
    /// `hidden[0] = x`, `hidden[h] = x^(h)` for `h = 1..=H`.
    pub hidden: Vec<DVector<f64>>,
    /// `pre[h-1] = W^(h) x^(h-1)`.
    pub pre: Vec<DVector<f64>>,
}

impl ForwardPass {
    /// Smallest absolute pre-activation over all units; small values mean the
    /// input sits close to a ReLU kink.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
    }
}

impl Network {
    pub fn new(layers: Vec<DMatrix<f64>>, output: DVector<f64>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::invalid("network needs at least one layer"));
        };
        let width = first.nrows();
        let input_dim = first.ncols();
        if width == 0 || input_dim == 0 {
            return Err(Error::invalid("layer 1 has an empty dimension"));
        }
        for (i, layer) in layers.iter().enumerate().skip(1) {
            if layer.nrows() != width || layer.ncols() != width {
                return Err(Error::invalid(format!(
                    "layer {} is {}x{}, expected {width}x{width}",
                    i + 1,
                    layer.nrows(),
                    layer.ncols()
                )));
            }
        }
        if output.len() != width {
            return Err(Error::invalid(format!(
                "output vector has length {}, expected width {width}",
                output.len()
            )));
        }
        Ok(Network { layers, output })
    }

    /// He-initialised hidden layers and an `N(0, 1/m)` read-out.
    pub fn random<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let layers = (1..=shape.depth)
            .map(|h| {
                let cols = shape.layer_cols(h);
                let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).unwrap();
                DMatrix::from_fn(shape.width, cols, |_, _| normal.sample(rng))
            })
            .collect();
        let normal = Normal::new(0.0, (1.0 / shape.width as f64).sqrt()).unwrap();
        let output = DVector::from_fn(shape.width, |_, _| normal.sample(rng));
        Network { layers, output }
    }

    pub fn shape(&self) -> Shape {
        Shape {
            depth: self.layers.len(),
            width: self.output.len(),
            input_dim: self.layers[0].ncols(),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.shape().param_count()
    }

    /// Layer `h` (1-based).
    pub fn layer(&self, h: usize) -> &DMatrix<f64> {
        &self.layers[h - 1]
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn output_vector(&self) -> &DVector<f64> {
        &self.output
    }

    pub fn with_output_vector(&self, output: DVector<f64>) -> Result<Self> {
        Network::new(self.layers.clone(), output)
    }

    pub(crate) fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        let d = self.layers[0].ncols();
        if x.len() != d {
            return Err(Error::invalid(format!(
                "input has dimension {}, network expects {d}",
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<ForwardPass> {
        self.check_input(x)?;
        let mut hidden = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        hidden.push(x.clone());
        for layer in &self.layers {
            let z = layer * hidden.last().unwrap();
            masks.push(z.iter().map(|&v| v > 0.0).collect());
            hidden.push(z.map(|v| if v > 0.0 { v } else { 0.0 }));
            pre.push(z);
        }
        let output = self.output.dot(hidden.last().unwrap());
        Ok(ForwardPass {
            output,
            pattern: ActivationPattern { masks },
            hidden,
            pre,
        })
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.forward(x)?.output)
    }

    /// `½ (f(x, w) − y)²`.
    pub fn quadratic_loss(&self, x: &DVector<f64>, y: f64) -> Result<f64> {
        let r = self.predict(x)? - y;
        Ok(0.5 * r * r)
    }

    /// Mean quadratic loss over the given indices of `data`.
    pub fn mean_loss(&self, data: &Dataset, indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Err(Error::invalid("mean loss over an empty index set"));
        }
        Ok(self.total_loss(data, indices)? / indices.len() as f64)
    }

    /// Sum of quadratic losses over the given indices of `data`.
    pub fn total_loss(&self, data: &Dataset, indices: &[usize]) -> Result<f64> {
        let mut acc = 0.0;
        for &i in indices {
            let (x, y) = data.get(i)?;
            acc += self.quadratic_loss(x, y)?;
        }
        Ok(acc)
    }

    /// Row-major, layer-ordered flattening of the hidden weights.
    pub fn flatten(&self) -> DVector<f64> {
        let p = self.param_count();
        let mut w = Vec::with_capacity(p);
        for layer in &self.layers {
            for r in 0..layer.nrows() {
                w.extend(layer.row(r).iter());
            }
        }
        DVector::from_vec(w)
    }

    /// Inverse of [`Network::flatten`] for the given shape and read-out.
    pub fn unflatten(w: &DVector<f64>, shape: Shape, output: DVector<f64>) -> Result<Self> {
        if w.len() != shape.param_count() {
            return Err(Error::invalid(format!(
                "flat vector has length {}, shape needs {}",
                w.len(),
                shape.param_count()
            )));
        }
        let mut layers = Vec::with_capacity(shape.depth);
        let mut offset = 0;
        for h in 1..=shape.depth {
            let cols = shape.layer_cols(h);
            let n = shape.layer_params(h);
            layers.push(DMatrix::from_row_slice(
                shape.width,
                cols,
                &w.as_slice()[offset..offset + n],
            ));
            offset += n;
        }
        Network::new(layers, output)
    }

    /// Same architecture and read-out with new flattened weights.
    pub fn with_weights(&self, w: &DVector<f64>) -> Result<Self> {
        Network::unflatten(w, self.shape(), self.output.clone())
    }
}

/// Training points `(x_i, y_i)` with scalar labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<DVector<f64>>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<DVector<f64>>, labels: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("dataset needs at least one point"));
        }
        if inputs.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let d = inputs[0].len();
        if d == 0 {
            return Err(Error::invalid("inputs must have dimension >= 1"));
        }
        if let Some(i) = inputs.iter().position(|x| x.len() != d) {
            return Err(Error::invalid(format!(
                "point {i} has dimension {}, expected {d}",
                inputs[i].len()
            )));
        }
        Ok(Dataset { inputs, labels })
    }

    /// Convenience constructor for scalar inputs.
    pub fn from_scalars(pairs: &[(f64, f64)]) -> Result<Self> {
        Dataset::new(
            pairs.iter().map(|&(x, _)| DVector::from_element(1, x)).collect(),
            pairs.iter().map(|&(_, y)| y).collect(),
        )
    }

    /// Labels generated by `net` itself, so `net` fits the data exactly.
    pub fn labelled_by(net: &Network, inputs: Vec<DVector<f64>>) -> Result<Self> {
        let labels = inputs
            .iter()
            .map(|x| net.predict(x))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> Result<(&DVector<f64>, f64)> {
        match self.inputs.get(i) {
            Some(x) => Ok((x, self.labels[i])),
            None => Err(Error::invalid(format!(
                "index {i} out of range for dataset of {} points",
                self.len()
            ))),
        }
    }

    /// All indices `0..n`.
    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    /// Copy with `x_i ← x_i + shift_i` for every `(i, shift_i)` given.
    pub fn shifted(&self, shifts: &[(usize, DVector<f64>)]) -> Result<Self> {
        let mut inputs = self.inputs.clone();
        for (i, s) in shifts {
            let x = inputs
                .get_mut(*i)
                .ok_or_else(|| Error::invalid(format!("index {i} out of range")))?;
            if s.len() != x.len() {
                return Err(Error::invalid(format!(
                    "shift for point {i} has dimension {}, expected {}",
                    s.len(),
                    x.len()
                )));
            }
            *x += s;
        }
        Ok(Dataset {
            inputs,
            labels: self.labels.clone(),
        })
    }

    pub(crate) fn check_indices(&self, indices: &[usize]) -> Result<()> {
        if indices.is_empty() {
            return Err(Error::invalid("index set is empty"));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!(
                "index {i} out of range for dataset of {} points",
                self.len()
            )));
        }
        Ok(())
    }
}
