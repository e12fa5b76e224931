//! Moment algebra on aggregated sigma-point vectors.
//!
//! A node's sigma points are stacked into one long vector
//! `x = [x^(1); ...; x^(n_s)]`. Centralization (`z = x - mean replicated`),
//! the weighted mean, the square-root covariance and the axis-wise
//! standardized moments are all functions of that vector; the first three are
//! linear, the standardized moments are differentiable with a sparse analytic
//! Jacobian. Point-selector and coordinate-selector matrices are realized as
//! index arithmetic; dense Boolean selectors exist only in the naive Jacobian
//! oracle kept for cross-checking the fast path.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cut::SigmaSet;

/// Variance floor guarding the E[Z^2]^(-m/2) singularity, in scaled units.
pub const VARIANCE_FLOOR: f64 = 1e-30;

#[derive(Debug, Error)]
pub enum MomentError {
    #[error("aggregated data length {len} is not a multiple of state dimension {n_x}")]
    BadAggregateLength { len: usize, n_x: usize },
    #[error("weight count {weights} does not match point count {points}")]
    WeightCountMismatch { weights: usize, points: usize },
    #[error("negative weight {value:.6e} at point {index} makes sqrt-covariance undefined")]
    NegativeWeight { index: usize, value: f64 },
    #[error("axis {axis} is degenerate: weighted variance {variance:.3e} below floor")]
    DegenerateAxis { axis: usize, variance: f64 },
    #[error("standardized-moment order {order} is out of range (need m >= {min})")]
    InvalidOrder { order: u32, min: u32 },
    #[error("axis {axis} out of range for state dimension {n_x}")]
    AxisOutOfRange { axis: usize, n_x: usize },
    #[error("aggregated states have mismatched shapes")]
    ShapeMismatch,
}

/// Sigma points of one node stacked into a single vector, with their weights.
///
/// Point `i` occupies the slice `[i*n_x, (i+1)*n_x)`; the selector `E_i` and
/// the coordinate selector `e_j` are realized as index computations.
#[derive(Debug, Clone)]
pub struct AggregatedState {
    n_x: usize,
    n_s: usize,
    pub data: DVector<f64>,
    pub weights: DVector<f64>,
}

impl AggregatedState {
    pub fn new(n_x: usize, data: DVector<f64>, weights: DVector<f64>) -> Result<Self, MomentError> {
        if n_x == 0 || data.len() % n_x != 0 {
            return Err(MomentError::BadAggregateLength {
                len: data.len(),
                n_x,
            });
        }
        let n_s = data.len() / n_x;
        if weights.len() != n_s {
            return Err(MomentError::WeightCountMismatch {
                weights: weights.len(),
                points: n_s,
            });
        }
        Ok(Self {
            n_x,
            n_s,
            data,
            weights,
        })
    }

    /// Stack a sigma set's columns in canonical order.
    pub fn from_sigma_set(set: &SigmaSet) -> Self {
        let n_x = set.dimension();
        let n_s = set.count();
        let mut data = DVector::zeros(n_x * n_s);
        for i in 0..n_s {
            data.rows_mut(i * n_x, n_x).copy_from(&set.points.column(i));
        }
        Self {
            n_x,
            n_s,
            data,
            weights: set.weights.clone(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.n_x
    }

    pub fn point_count(&self) -> usize {
        self.n_s
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.len() == 0
    }

    /// View of point i.
    pub fn point(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        self.data.rows(i * self.n_x, self.n_x)
    }

    /// Coordinate j of point i (the `e_j E_i` selector as index arithmetic).
    pub fn coord(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_x + j]
    }

    /// Points as an n_x x n_s matrix (columns are points).
    pub fn points_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n_x, self.n_s, self.data.as_slice())
    }

    pub fn with_data(&self, data: DVector<f64>) -> Result<Self, MomentError> {
        if data.len() != self.data.len() {
            return Err(MomentError::ShapeMismatch);
        }
        Self::new(self.n_x, data, self.weights.clone())
    }
}

/// The linear maps A^(z) (centralizer) and A^(mu) (weighted mean) for a fixed
/// weight vector, applied implicitly.
///
/// Identities: `A_mu . A_z = 0` and `A_z . A_z = A_z`.
#[derive(Debug, Clone)]
pub struct CentralizerMaps {
    n_x: usize,
    weights: DVector<f64>,
}

impl CentralizerMaps {
    pub fn new(n_x: usize, weights: DVector<f64>) -> Self {
        Self { n_x, weights }
    }

    pub fn for_state(state: &AggregatedState) -> Self {
        Self::new(state.n_x, state.weights.clone())
    }

    /// A^(mu) v: the weighted mean of the stacked points.
    pub fn apply_mean(&self, v: &DVector<f64>) -> DVector<f64> {
        let n_s = self.weights.len();
        let mut mean = DVector::zeros(self.n_x);
        for i in 0..n_s {
            mean.axpy(self.weights[i], &v.rows(i * self.n_x, self.n_x), 1.0);
        }
        mean
    }

    /// A^(z) v = v with the replicated weighted mean subtracted.
    pub fn apply_centralizer(&self, v: &DVector<f64>) -> DVector<f64> {
        let mean = self.apply_mean(v);
        let mut out = v.clone();
        for i in 0..self.weights.len() {
            let mut block = out.rows_mut(i * self.n_x, self.n_x);
            block -= &mean;
        }
        out
    }

    /// Dense A^(z) for tests and the naive oracle.
    pub fn materialize_centralizer(&self) -> DMatrix<f64> {
        let n = self.n_x * self.weights.len();
        let mut a = DMatrix::identity(n, n);
        for i in 0..self.weights.len() {
            for l in 0..self.weights.len() {
                for j in 0..self.n_x {
                    a[(i * self.n_x + j, l * self.n_x + j)] -= self.weights[l];
                }
            }
        }
        a
    }

    /// Dense A^(mu) for tests and the naive oracle.
    pub fn materialize_mean(&self) -> DMatrix<f64> {
        let n = self.n_x * self.weights.len();
        let mut a = DMatrix::zeros(self.n_x, n);
        for l in 0..self.weights.len() {
            for j in 0..self.n_x {
                a[(j, l * self.n_x + j)] = self.weights[l];
            }
        }
        a
    }
}

/// Weighted mean of the aggregated cloud: `mu = A^(mu) x`.
pub fn mean(x: &AggregatedState) -> DVector<f64> {
    CentralizerMaps::for_state(x).apply_mean(&x.data)
}

/// Centralize the cloud: `z = A^(z) x`, so raw moments of z equal central
/// moments of x. Idempotent; the result has zero weighted mean.
pub fn centralize(x: &AggregatedState) -> AggregatedState {
    let data = CentralizerMaps::for_state(x).apply_centralizer(&x.data);
    AggregatedState {
        n_x: x.n_x,
        n_s: x.n_s,
        data,
        weights: x.weights.clone(),
    }
}

/// Square-root covariance of a centralized cloud: the n_x x n_s matrix whose
/// i-th column is `sqrt(w_i) z^(i)`, so that M M^T equals the weighted
/// outer-product covariance. Negative weights are rejected.
pub fn sqrt_covariance(z: &AggregatedState) -> Result<DMatrix<f64>, MomentError> {
    let mut m = DMatrix::zeros(z.n_x, z.n_s);
    for i in 0..z.n_s {
        let w = z.weights[i];
        if w < 0.0 {
            return Err(MomentError::NegativeWeight { index: i, value: w });
        }
        m.set_column(i, &(z.point(i) * w.sqrt()));
    }
    Ok(m)
}

/// Largest singular value of a matrix, i.e. sqrt(lambda_max(M M^T)).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values()[0]
}

/// Exact weighted outer-product covariance of a centralized cloud.
pub fn full_covariance(z: &AggregatedState) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(z.n_x, z.n_x);
    for i in 0..z.n_s {
        let zi = z.point(i);
        for a in 0..z.n_x {
            for b in 0..z.n_x {
                p[(a, b)] += z.weights[i] * zi[a] * zi[b];
            }
        }
    }
    p
}

/// First-order covariance at `z* + dz`, dropping the dz dz^T term:
/// `P* + dP + dP^T` with `dP = sum_i w_i z*^(i) dz^(i)^T`.
pub fn covariance_delta_form(z_ref: &AggregatedState, dz: &DVector<f64>) -> Result<DMatrix<f64>, MomentError> {
    if dz.len() != z_ref.len() {
        return Err(MomentError::ShapeMismatch);
    }
    let mut p = full_covariance(z_ref);
    for i in 0..z_ref.n_s {
        let zi = z_ref.point(i);
        let di = dz.rows(i * z_ref.n_x, z_ref.n_x);
        for a in 0..z_ref.n_x {
            for b in 0..z_ref.n_x {
                let dp = z_ref.weights[i] * zi[a] * di[b];
                p[(a, b)] += dp;
                p[(b, a)] += dp;
            }
        }
    }
    Ok(p)
}

/// Weighted raw moment sums S_p = sum_i w_i z_{j,i}^p along one axis.
fn axis_power_sum(z: &AggregatedState, axis: usize, p: u32) -> f64 {
    let mut s = 0.0;
    for i in 0..z.n_s {
        s += z.weights[i] * z.coord(i, axis).powi(p as i32);
    }
    s
}

/// m-th standardized moment along an axis of a centralized cloud:
/// `E[Z^m] / E[Z^2]^(m/2)`. m = 3 is skewness, m = 4 kurtosis.
pub fn standardized_moment(z: &AggregatedState, m: u32, axis: usize) -> Result<f64, MomentError> {
    if m < 2 {
        return Err(MomentError::InvalidOrder { order: m, min: 2 });
    }
    if axis >= z.n_x {
        return Err(MomentError::AxisOutOfRange { axis, n_x: z.n_x });
    }
    let s2 = axis_power_sum(z, axis, 2);
    if s2 <= VARIANCE_FLOOR {
        return Err(MomentError::DegenerateAxis { axis, variance: s2 });
    }
    let sm = axis_power_sum(z, axis, m);
    Ok(sm / s2.powf(m as f64 / 2.0))
}

/// Gradient matrix of the axis-wise m-th standardized moments with respect to
/// the aggregated centralized vector, evaluated at `z*`. Row j is nonzero only
/// at coordinate j of each point block. m = 3 gives A^(gamma), m = 4 A^(kappa).
#[derive(Debug, Clone)]
pub struct MomentJacobian {
    pub order: u32,
    /// n_x x (n_x * n_s) gradient matrix.
    pub matrix: DMatrix<f64>,
    /// Evaluation point.
    pub at: DVector<f64>,
}

impl MomentJacobian {
    /// Row j dotted with an aggregated perturbation.
    pub fn row_dot(&self, j: usize, dz: &DVector<f64>) -> f64 {
        self.matrix.row(j).transpose().dot(dz)
    }

    /// Coefficient of coordinate j of point i in row j (the only nonzero
    /// pattern of the fast path).
    pub fn coeff(&self, j: usize, i: usize, n_x: usize) -> f64 {
        self.matrix[(j, i * n_x + j)]
    }
}

/// Analytic moment Jacobian via the element-wise fast path.
///
/// Row j entries at coordinate j of point i:
/// `m w_i z^(m-1) S2^(-m/2) - m S_m S2^(-m/2-1) w_i z`.
pub fn moment_jacobian(z: &AggregatedState, m: u32) -> Result<MomentJacobian, MomentError> {
    if m < 3 {
        return Err(MomentError::InvalidOrder { order: m, min: 3 });
    }
    let mut matrix = DMatrix::zeros(z.n_x, z.len());
    for j in 0..z.n_x {
        let s2 = axis_power_sum(z, j, 2);
        if s2 <= VARIANCE_FLOOR {
            return Err(MomentError::DegenerateAxis { axis: j, variance: s2 });
        }
        let sm = axis_power_sum(z, j, m);
        let mf = m as f64;
        let s2_pow = s2.powf(-mf / 2.0);
        let s2_pow1 = s2.powf(-mf / 2.0 - 1.0);
        for i in 0..z.n_s {
            let zji = z.coord(i, j);
            let g = mf * z.weights[i] * zji.powi(m as i32 - 1) * s2_pow
                - mf * sm * s2_pow1 * z.weights[i] * zji;
            matrix[(j, i * z.n_x + j)] = g;
        }
    }
    Ok(MomentJacobian {
        order: m,
        matrix,
        at: z.data.clone(),
    })
}

/// Naive moment Jacobian using explicit dense selector matrices, the
/// summation baseline the fast path is checked against:
/// `m (sum_i w_i (e_j E_i z)^(m-1) e_j E_i) S2^(-m/2)
///  - m S_m S2^(-m/2-1) (sum_i w_i (e_j E_i z) e_j E_i)`.
pub fn moment_jacobian_naive(z: &AggregatedState, m: u32) -> Result<MomentJacobian, MomentError> {
    if m < 3 {
        return Err(MomentError::InvalidOrder { order: m, min: 3 });
    }
    let n = z.len();
    // Dense selectors: E_i is n_x x n, e_j is 1 x n_x.
    let selectors: Vec<DMatrix<f64>> = (0..z.n_s)
        .map(|i| {
            let mut e = DMatrix::zeros(z.n_x, n);
            for j in 0..z.n_x {
                e[(j, i * z.n_x + j)] = 1.0;
            }
            e
        })
        .collect();
    let coords: Vec<DMatrix<f64>> = (0..z.n_x)
        .map(|j| {
            let mut e = DMatrix::zeros(1, z.n_x);
            e[(0, j)] = 1.0;
            e
        })
        .collect();

    let mut matrix = DMatrix::zeros(z.n_x, n);
    let mf = m as f64;
    for j in 0..z.n_x {
        let mut s2 = 0.0;
        let mut sm = 0.0;
        let mut grad_m = DMatrix::zeros(1, n);
        let mut grad_2 = DMatrix::zeros(1, n);
        for i in 0..z.n_s {
            let sel = &coords[j] * &selectors[i];
            let zji = (&sel * &z.data)[(0, 0)];
            s2 += z.weights[i] * zji * zji;
            sm += z.weights[i] * zji.powi(m as i32);
            grad_m += z.weights[i] * zji.powi(m as i32 - 1) * &sel;
            grad_2 += z.weights[i] * zji * &sel;
        }
        if s2 <= VARIANCE_FLOOR {
            return Err(MomentError::DegenerateAxis { axis: j, variance: s2 });
        }
        let row = mf * s2.powf(-mf / 2.0) * grad_m - mf * sm * s2.powf(-mf / 2.0 - 1.0) * grad_2;
        matrix.row_mut(j).copy_from(&row.row(0));
    }
    Ok(MomentJacobian {
        order: m,
        matrix,
        at: z.data.clone(),
    })
}
