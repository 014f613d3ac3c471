//! Two-dimensional loss-landscape slices `w = c + α d₁ + β d₂`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Dataset, Network};

/// `count` evenly spaced values from `min` to `max`; a single value sits at `min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if count == 0 || !min.is_finite() || !max.is_finite() || max < min {
            return Err(Error::invalid(format!("bad grid axis [{min}, {max}] x {count}")));
        }
        Ok(GridAxis { min, max, count })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.min + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `losses[j][i]` is the mean loss at `(alphas[i], betas[j])`.
    pub losses: Vec<Vec<f64>>,
}

impl LandscapeGrid {
    /// `(i, j, loss)` of the smallest cell.
    pub fn argmin(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::INFINITY);
        for (j, row) in self.losses.iter().enumerate() {
            for (i, &l) in row.iter().enumerate() {
                if l < best.2 {
                    best = (i, j, l);
                }
            }
        }
        best
    }

    /// Header row of α values, then one row per β: `β, loss, loss, ...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta\\alpha");
        for a in &self.alphas {
            out.push(',');
            out.push_str(&a.to_string());
        }
        out.push('\n');
        for (b, row) in self.betas.iter().zip(&self.losses) {
            out.push_str(&b.to_string());
            for l in row {
                out.push(',');
                out.push_str(&l.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Mean loss over the whole dataset on the grid spanned by `dir1`, `dir2`
/// around `center`.
pub fn landscape_slice(
    center: &Network,
    data: &Dataset,
    dir1: &DVector<f64>,
    dir2: &DVector<f64>,
    alpha: GridAxis,
    beta: GridAxis,
) -> Result<LandscapeGrid> {
    let w = center.flatten();
    if dir1.len() != w.len() || dir2.len() != w.len() {
        return Err(Error::invalid("slice directions must match the weight dimension"));
    }
    let alphas = alpha.values();
    let betas = beta.values();
    let all = data.all_indices();
    let losses = betas
        .par_iter()
        .map(|&b| {
            alphas
                .iter()
                .map(|&a| center.with_weights(&(&w + dir1 * a + dir2 * b))?.mean_loss(data, &all))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeGrid {
        alphas,
        betas,
        losses,
    })
}

/// Two Gaussian directions, Gram-Schmidt orthonormalised, then rescaled row
/// by row so each neuron's direction has the norm of that neuron's weights.
pub fn random_directions<R: Rng + ?Sized>(
    net: &Network,
    rng: &mut R,
    filter_normalize: bool,
) -> (DVector<f64>, DVector<f64>) {
    let p = net.param_count();
    let mut d1 = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut d2 = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    d1 /= d1.norm();
    d2 -= &d1 * d1.dot(&d2);
    d2 /= d2.norm();
    if filter_normalize {
        let w = net.flatten();
        filter_normalise(net, &w, &mut d1);
        filter_normalise(net, &w, &mut d2);
    }
    (d1, d2)
}

fn filter_normalise(net: &Network, w: &DVector<f64>, d: &mut DVector<f64>) {
    let shape = net.shape();
    for h in 1..=shape.depth {
        let off = shape.layer_offset(h);
        let cols = shape.layer_cols(h);
        for r in 0..shape.width {
            let range = off + r * cols..off + (r + 1) * cols;
            let wn = w.as_slice()[range.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
            let row = &mut d.as_mut_slice()[range];
            let dn = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dn > 0.0 {
                row.iter_mut().for_each(|v| *v *= wn / dn);
            }
        }
    }
}
