//! Per-coordinate affine maps between physical units and the normalized
//! coordinates used by the identification and control stages.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y = (x - offset) / span`, applied coordinate-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineScaling {
    pub offset: Vec<f64>,
    pub span: Vec<f64>,
}

impl AffineScaling {
    pub fn identity(dim: usize) -> Self {
        Self {
            offset: vec![0.0; dim],
            span: vec![1.0; dim],
        }
    }

    pub fn new(offset: Vec<f64>, span: Vec<f64>) -> Result<Self> {
        if offset.len() != span.len() {
            return Err(Error::dim("affine scaling", offset.len(), span.len()));
        }
        if let Some(s) = span.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "scaling span must be finite and positive, got {s}"
            )));
        }
        Ok(Self { offset, span })
    }

    /// Maps `[lower, upper]` onto `[0, 1]`.
    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("bounds scaling", lower.len(), upper.len()));
        }
        let span = lower.iter().zip(upper).map(|(l, u)| u - l).collect();
        Self::new(lower.to_vec(), span)
    }

    /// Min/max normalization fitted on sample rows. Coordinates with (near)
    /// zero range fall back to unit span so the map stays invertible.
    pub fn from_samples<'a, I>(dim: usize, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut count = 0usize;
        for s in samples {
            if s.len() != dim {
                return Err(Error::dim("scaling sample", dim, s.len()));
            }
            for i in 0..dim {
                lo[i] = lo[i].min(s[i]);
                hi[i] = hi[i].max(s[i]);
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::InvalidArgument(
                "cannot fit a scaling on zero samples".into(),
            ));
        }
        let span = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| {
                let s = h - l;
                if s > 1e-12 * l.abs().max(1.0) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self::new(lo, span)
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn is_identity(&self) -> bool {
        self.offset.iter().all(|o| *o == 0.0) && self.span.iter().all(|s| *s == 1.0)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.offset.iter().zip(&self.span))
            .map(|(v, (o, s))| (v - o) / s)
            .collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.offset.iter().zip(&self.span))
            .map(|(v, (o, s))| v * s + o)
            .collect()
    }

    pub fn apply_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.apply(x.as_slice()))
    }

    pub fn invert_vec(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.invert(y.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_map_to_unit_interval() {
        let s = AffineScaling::from_bounds(&[2.0, -1.0], &[4.0, 1.0]).unwrap();
        assert_eq!(s.apply(&[2.0, 1.0]), vec![0.0, 1.0]);
        assert_eq!(s.invert(&[0.5, 0.5]), vec![3.0, 0.0]);
    }

    #[test]
    fn constant_coordinate_gets_unit_span() {
        let rows = [[1.0, 5.0], [2.0, 5.0]];
        let s = AffineScaling::from_samples(2, rows.iter().map(|r| &r[..])).unwrap();
        assert_eq!(s.span, vec![1.0, 1.0]);
    }

    #[test]
    fn rejects_nonpositive_span() {
        assert!(AffineScaling::new(vec![0.0], vec![0.0]).is_err());
    }
}
