use nalgebra::DMatrix;

use crate::error::{RdError, Result};

/// A regression discontinuity sample with the running variable centered at the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    /// `n × p`, column major.
    z: DMatrix<f64>,
    t_obs: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: DMatrix<f64>, t_obs: Option<Vec<f64>>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(RdError::InvalidData("empty sample".into()));
        }
        if x.len() != n || z.nrows() != n {
            return Err(RdError::InvalidData(format!(
                "length mismatch: y has {n}, x has {}, z has {} rows",
                x.len(),
                z.nrows()
            )));
        }
        if let Some(t) = &t_obs {
            if t.len() != n {
                return Err(RdError::InvalidData("treatment length mismatch".into()));
            }
        }
        let finite = y.iter().chain(&x).chain(z.iter()).all(|v| v.is_finite())
            && t_obs.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(RdError::InvalidData("non-finite value".into()));
        }
        Ok(Dataset { y, x, z, t_obs })
    }

    /// Dataset without covariates.
    pub fn without_covariates(y: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        let n = y.len();
        Dataset::new(y, x, DMatrix::zeros(n, 0), None)
    }

    /// Build from row-major covariate rows.
    pub fn from_rows(y: Vec<f64>, x: Vec<f64>, rows: &[Vec<f64>], t_obs: Option<Vec<f64>>) -> Result<Self> {
        let n = y.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.len() != n && !(rows.is_empty() && p == 0) {
            return Err(RdError::InvalidData("covariate row count mismatch".into()));
        }
        if rows.iter().any(|r| r.len() != p) {
            return Err(RdError::InvalidData("ragged covariate rows".into()));
        }
        let z = DMatrix::from_fn(n, p, |i, k| rows[i][k]);
        Dataset::new(y, x, z, t_obs)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn covariate(&self, k: usize) -> &[f64] {
        let n = self.n();
        &self.z.as_slice()[k * n..(k + 1) * n]
    }

    pub fn t_obs(&self) -> Option<&[f64]> {
        self.t_obs.as_deref()
    }

    /// Sharp assignment `1(x ≥ 0)`.
    #[inline]
    pub fn assigned(x: f64) -> f64 {
        if x >= 0.0 {
            1.0
        } else {
            0.0
        }
    }

    /// Observed treatment if present, otherwise the sharp assignment.
    pub fn treatment(&self) -> Vec<f64> {
        match &self.t_obs {
            Some(t) => t.clone(),
            None => self.x.iter().map(|&x| Dataset::assigned(x)).collect(),
        }
    }

    /// Same running variable and covariates with a different outcome.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        Dataset::new(y, self.x.clone(), self.z.clone(), self.t_obs.clone())
    }

    pub fn with_covariates(&self, z: DMatrix<f64>) -> Result<Self> {
        Dataset::new(self.y.clone(), self.x.clone(), z, self.t_obs.clone())
    }

    pub fn with_running(&self, x: Vec<f64>) -> Result<Self> {
        Dataset::new(self.y.clone(), x, self.z.clone(), self.t_obs.clone())
    }

    pub fn with_treatment(&self, t: Option<Vec<f64>>) -> Result<Self> {
        Dataset::new(self.y.clone(), self.x.clone(), self.z.clone(), t)
    }

    /// Number of observations with `|x| ≤ h`.
    pub fn count_within(&self, h: f64) -> usize {
        self.x.iter().filter(|x| x.abs() <= h).count()
    }
}
