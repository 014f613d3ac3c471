//! Distances between finite samples of solution sets.
//!
//! Solution sets of over-parameterised networks are manifolds; here they are
//! always represented by finitely many points, so every infimum below is a
//! minimum over samples.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack used by containment tests.
pub const CONTAINMENT_TOL: f64 = 1e-9;

/// A nonempty finite sample of weight vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSet {
    samples: Vec<DVector<f64>>,
    provenance: String,
}

impl SolutionSet {
    pub fn new(samples: Vec<DVector<f64>>, provenance: impl Into<String>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::invalid("solution set needs at least one sample"));
        };
        let dim = first.len();
        if let Some(i) = samples.iter().position(|s| s.len() != dim) {
            return Err(Error::invalid(format!(
                "sample {i} has dimension {}, expected {dim}",
                samples[i].len()
            )));
        }
        Ok(SolutionSet {
            samples,
            provenance: provenance.into(),
        })
    }

    pub fn singleton(w: DVector<f64>, provenance: impl Into<String>) -> Self {
        SolutionSet {
            samples: vec![w],
            provenance: provenance.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_sample(mut self, sample: DVector<f64>) -> Result<Self> {
        check_dim(self.dim(), sample.len())?;
        self.samples.push(sample);
        Ok(self)
    }

    /// Same samples restricted to coordinates `range`.
    pub fn restrict(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.dim() || range.start >= range.end {
            return Err(Error::invalid(format!(
                "cannot restrict {}-dimensional set to {range:?}",
                self.dim()
            )));
        }
        Ok(SolutionSet {
            samples: self
                .samples
                .iter()
                .map(|s| s.rows(range.start, range.end - range.start).into_owned())
                .collect(),
            provenance: self.provenance.clone(),
        })
    }
}

fn check_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// `d(w, C) = min_{c∈C} ‖w − c‖`.
pub fn point_to_set(w: &DVector<f64>, set: &SolutionSet) -> Result<f64> {
    check_dim(w.len(), set.dim())?;
    Ok(set
        .samples
        .iter()
        .map(|c| (w - c).norm())
        .fold(f64::INFINITY, f64::min))
}

/// `e(C, D) = max_{c∈C} d(c, D)`.
pub fn excess(c: &SolutionSet, d: &SolutionSet) -> Result<f64> {
    check_dim(c.dim(), d.dim())?;
    let mut worst = 0.0f64;
    for w in &c.samples {
        worst = worst.max(point_to_set(w, d)?);
    }
    Ok(worst)
}

/// Pompeiu-Hausdorff distance `max{e(C, D), e(D, C)}`.
pub fn hausdorff(c: &SolutionSet, d: &SolutionSet) -> Result<f64> {
    Ok(excess(c, d)?.max(excess(d, c)?))
}

/// `C ⊂ D + r B`, up to [`CONTAINMENT_TOL`].
pub fn contained_in_expansion(c: &SolutionSet, d: &SolutionSet, radius: f64) -> Result<bool> {
    if !(radius >= 0.0) {
        return Err(Error::invalid(format!("expansion radius must be >= 0, got {radius}")));
    }
    check_dim(c.dim(), d.dim())?;
    for w in &c.samples {
        if point_to_set(w, d)? > radius + CONTAINMENT_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Plain-data form of a [`SolutionSet`] for serialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSetFile {
    pub dim: usize,
    pub provenance: String,
    pub samples: Vec<Vec<f64>>,
}

impl From<&SolutionSet> for SolutionSetFile {
    fn from(s: &SolutionSet) -> Self {
        SolutionSetFile {
            dim: s.dim(),
            provenance: s.provenance.clone(),
            samples: s.samples.iter().map(|v| v.as_slice().to_vec()).collect(),
        }
    }
}

impl TryFrom<SolutionSetFile> for SolutionSet {
    type Error = Error;

    fn try_from(f: SolutionSetFile) -> Result<Self> {
        let set = SolutionSet::new(
            f.samples.into_iter().map(DVector::from_vec).collect(),
            f.provenance,
        )?;
        check_dim(set.dim(), f.dim)?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(points: &[&[f64]]) -> SolutionSet {
        SolutionSet::new(
            points.iter().map(|p| DVector::from_row_slice(p)).collect(),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn point_distances() {
        let c = set(&[&[1.0, 0.0], &[0.0, 2.0]]);
        assert_eq!(point_to_set(&DVector::from_row_slice(&[0.0, 0.0]), &c).unwrap(), 1.0);
        assert_eq!(point_to_set(&DVector::from_row_slice(&[0.0, 2.0]), &c).unwrap(), 0.0);
        let single = set(&[&[3.0, 4.0]]);
        assert_eq!(point_to_set(&DVector::zeros(2), &single).unwrap(), 5.0);
        assert!(point_to_set(&DVector::zeros(3), &c).is_err());
    }

    #[test]
    fn one_sided_excess() {
        let c = set(&[&[0.0]]);
        let d = set(&[&[0.0], &[3.0]]);
        assert_eq!(excess(&c, &d).unwrap(), 0.0);
        assert_eq!(excess(&d, &c).unwrap(), 3.0);
        assert_eq!(hausdorff(&c, &d).unwrap(), 3.0);
        assert_eq!(hausdorff(&d, &d).unwrap(), 0.0);
    }

    #[test]
    fn segment_grids_take_larger_excess() {
        // C: segment (0,0)-(1,0); D: segment (0,0)-(2,0) shifted up by 0.5.
        let c = SolutionSet::new(
            (0..=10).map(|i| DVector::from_row_slice(&[i as f64 / 10.0, 0.0])).collect(),
            "C",
        )
        .unwrap();
        let d = SolutionSet::new(
            (0..=20).map(|i| DVector::from_row_slice(&[i as f64 / 10.0, 0.5])).collect(),
            "D",
        )
        .unwrap();
        let e_cd = excess(&c, &d).unwrap();
        let e_dc = excess(&d, &c).unwrap();
        assert!((e_cd - 0.5).abs() < 1e-12);
        assert!((e_dc - (1.0f64 + 0.25).sqrt()).abs() < 1e-12);
        assert_eq!(hausdorff(&c, &d).unwrap(), e_dc);
    }

    #[test]
    fn containment() {
        let c = set(&[&[2.0]]);
        let d = set(&[&[0.0]]);
        assert!(!contained_in_expansion(&c, &d, 1.0).unwrap());
        assert!(contained_in_expansion(&c, &d, 2.0).unwrap());
        assert!(contained_in_expansion(&d, &set(&[&[0.0], &[5.0]]), 0.0).unwrap());
        assert!(contained_in_expansion(&c, &d, -1.0).is_err());
    }

    #[test]
    fn empty_and_ragged_sets_rejected() {
        assert!(SolutionSet::new(vec![], "x").is_err());
        assert!(SolutionSet::new(vec![DVector::zeros(1), DVector::zeros(2)], "x").is_err());
    }

    #[test]
    fn restrict_to_block() {
        let s = set(&[&[1.0, 2.0, 3.0]]);
        let r = s.restrict(1..3).unwrap();
        assert_eq!(r.samples()[0].as_slice(), &[2.0, 3.0]);
    }

    fn arb_set(dim: usize) -> impl Strategy<Value = SolutionSet> {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 1..6).prop_map(|pts| {
            SolutionSet::new(pts.into_iter().map(DVector::from_vec).collect(), "arb").unwrap()
        })
    }

    proptest! {
        #[test]
        fn metric_axioms((a, b, c) in (arb_set(3), arb_set(3), arb_set(3))) {
            let ab = hausdorff(&a, &b).unwrap();
            prop_assert_eq!(ab, hausdorff(&b, &a).unwrap());
            prop_assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
            let ac = hausdorff(&a, &c).unwrap();
            let bc = hausdorff(&b, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn excess_bounds(a in arb_set(2), b in arb_set(2), r in 0.0f64..5.0) {
            let e = excess(&a, &b).unwrap();
            prop_assert!(e <= hausdorff(&a, &b).unwrap());
            prop_assert_eq!(contained_in_expansion(&a, &b, r).unwrap(), e <= r + CONTAINMENT_TOL);
        }
    }
}
