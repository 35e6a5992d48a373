use crate::error::{Error, Result};

/// Per-feature affine map between `[min, max]` and `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(Error::Shape {
                expected: min.len(),
                got: max.len(),
            });
        }
        if let Some(i) = (0..min.len()).find(|&i| !(max[i] > min[i])) {
            return Err(Error::Degenerate(format!(
                "feature {i} has range [{}, {}]",
                min[i], max[i]
            )));
        }
        Ok(Self { min, max })
    }

    /// Fit to row-major samples. A feature that never varies gets a unit
    /// half-width around its value so it maps to zero.
    pub fn fit(rows: &[f64], n_features: usize) -> Result<Self> {
        if n_features == 0 || rows.is_empty() || !rows.len().is_multiple_of(n_features) {
            return Err(Error::Degenerate("cannot fit a scaler to no data".into()));
        }
        let mut min = vec![f64::INFINITY; n_features];
        let mut max = vec![f64::NEG_INFINITY; n_features];
        for row in rows.chunks_exact(n_features) {
            for (i, &v) in row.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        for i in 0..n_features {
            if !(max[i] - min[i] > 1e-12 * (1.0 + min[i].abs())) {
                let c = 0.5 * (min[i] + max[i]);
                min[i] = c - 1.0;
                max[i] = c + 1.0;
            }
        }
        Self::new(min, max)
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    #[inline]
    pub fn scale_one(&self, i: usize, v: f64) -> f64 {
        2.0 * (v - self.min[i]) / (self.max[i] - self.min[i]) - 1.0
    }

    #[inline]
    pub fn unscale_one(&self, i: usize, s: f64) -> f64 {
        self.min[i] + 0.5 * (s + 1.0) * (self.max[i] - self.min[i])
    }

    pub fn scale(&self, row: &[f64], out: &mut [f64]) {
        for (i, (o, &v)) in out.iter_mut().zip(row).enumerate() {
            *o = self.scale_one(i, v);
        }
    }

    pub fn unscale(&self, row: &[f64], out: &mut [f64]) {
        for (i, (o, &s)) in out.iter_mut().zip(row).enumerate() {
            *o = self.unscale_one(i, s);
        }
    }

    /// Scale all rows of a row-major block.
    pub fn scale_rows(&self, rows: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rows.len()];
        for (src, dst) in rows.chunks_exact(self.len()).zip(out.chunks_exact_mut(self.len())) {
            self.scale(src, dst);
        }
        out
    }
}
