//! Linear-algebra substrate shared by every agent: feature vectors, the ridge
//! Gram matrix with a cached inverse, ridge solves and the UCB bonus.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute tolerance for the sum-to-one check on simplex features.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Sherman–Morrison updates between two full re-inversions.
const REFRESH_EVERY: usize = 64;

/// A feature vector `φ(s, a)`.
///
/// Features built with [`FeatureVector::new`] lie on the probability simplex.
/// [`FeatureVector::relaxed`] only requires finite non-negative entries; it
/// exists for environments whose feature map is not normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(DVector<f64>);

impl FeatureVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        let phi = Self::relaxed(entries)?;
        let sum = phi.0.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotOnSimplex(format!("entries sum to {sum}")));
        }
        Ok(phi)
    }

    pub fn relaxed(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::NotOnSimplex("empty feature vector".into()));
        }
        if let Some(bad) = entries.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::NotOnSimplex(format!("entry {bad} is negative or not finite")));
        }
        Ok(Self(DVector::from_vec(entries)))
    }

    /// The `i`-th standard basis vector of dimension `dim`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn dot(&self, w: &DVector<f64>) -> f64 {
        self.0.dot(w)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

/// Regression sample for one step: features and scalar targets of equal length.
#[derive(Debug, Clone, Copy)]
pub struct RegressionTargets<'a> {
    features: &'a [FeatureVector],
    targets: &'a [f64],
}

impl<'a> RegressionTargets<'a> {
    pub fn new(features: &'a [FeatureVector], targets: &'a [f64]) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                got: targets.len(),
            });
        }
        Ok(Self { features, targets })
    }

    pub fn features(&self) -> &'a [FeatureVector] {
        self.features
    }

    pub fn targets(&self) -> &'a [f64] {
        self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Regularized design matrix `λI + Σ φφᵀ` together with its inverse.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    ridge: f64,
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    count: usize,
    since_refresh: usize,
}

impl GramMatrix {
    pub fn new(dim: usize, ridge: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if !(ridge > 0.0 && ridge.is_finite()) {
            return Err(Error::invalid("lambda", format!("ridge must be > 0, got {ridge}")));
        }
        Ok(Self {
            ridge,
            matrix: DMatrix::identity(dim, dim) * ridge,
            inverse: DMatrix::identity(dim, dim) / ridge,
            count: 0,
            since_refresh: 0,
        })
    }

    /// Builds the matrix in one pass from a sample and inverts it directly.
    pub fn from_features(dim: usize, ridge: f64, features: &[FeatureVector]) -> Result<Self> {
        let mut g = Self::new(dim, ridge)?;
        for phi in features {
            phi.check_dim(dim)?;
            g.matrix += phi.as_vector() * phi.as_vector().transpose();
        }
        g.count = features.len();
        g.refresh_inverse();
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Number of rank-one updates folded in.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds `φφᵀ` to the matrix and refreshes the inverse.
    pub fn update(&mut self, phi: &FeatureVector) -> Result<()> {
        phi.check_dim(self.dim())?;
        let x = phi.as_vector();
        self.matrix += x * x.transpose();
        self.count += 1;
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_EVERY {
            self.refresh_inverse();
        } else {
            let ax = &self.inverse * x;
            let denom = 1.0 + x.dot(&ax);
            self.inverse -= (&ax * ax.transpose()) / denom;
        }
        Ok(())
    }

    /// Functional form of [`GramMatrix::update`].
    pub fn with_update(&self, phi: &FeatureVector) -> Result<Self> {
        let mut g = self.clone();
        g.update(phi)?;
        Ok(g)
    }

    fn refresh_inverse(&mut self) {
        // λ > 0 keeps the matrix positive definite.
        let chol = self
            .matrix
            .clone()
            .cholesky()
            .expect("ridge Gram matrix is positive definite");
        let inv = chol.inverse();
        self.inverse = (&inv + inv.transpose()) * 0.5;
        self.since_refresh = 0;
    }

    /// `sqrt(diag(Λ⁻¹))`, the per-coordinate bonus widths.
    pub fn inverse_diag_sqrt(&self) -> DVector<f64> {
        self.inverse.diagonal().map(f64::sqrt)
    }

    /// `Λ⁻¹ Σ_τ φ_τ y_τ`; the zero vector for an empty sample.
    pub fn ridge_solve(&self, data: &RegressionTargets<'_>) -> Result<DVector<f64>> {
        let mut rhs = DVector::zeros(self.dim());
        for (phi, &y) in data.features().iter().zip(data.targets()) {
            phi.check_dim(self.dim())?;
            rhs.axpy(y, phi.as_vector(), 1.0);
        }
        Ok(&self.inverse * rhs)
    }

    /// `β Σ_i φ_i sqrt((Λ⁻¹)_ii)`.
    pub fn ucb_bonus(&self, phi: &FeatureVector, beta: f64) -> Result<f64> {
        if !(beta >= 0.0) {
            return Err(Error::invalid("beta", format!("must be >= 0, got {beta}")));
        }
        phi.check_dim(self.dim())?;
        if beta == 0.0 {
            return Ok(0.0);
        }
        let widths = self.inverse_diag_sqrt();
        Ok(beta * phi.dot(&widths))
    }
}
