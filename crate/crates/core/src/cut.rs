//! Conjugate Unscented Transformation (CUT) sigma-set construction.
//!
//! A CUT set is a weighted point cloud whose weighted raw moments reproduce
//! the moments of a standard Gaussian up to a chosen order: degree 4 for
//! CUT-4G, degree 6 for CUT-6G. Points live on scaled copies of the principal
//! axes (one nonzero entry) and the m-th conjugate axes (exactly m nonzero
//! entries, all sign permutations). Standard sets are mapped onto arbitrary
//! Gaussians by the affine transform `y = S x + mu` with `S S^T = P`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CutError {
    #[error("conjugate order {order} is invalid for dimension {dim}: require 1 <= m <= n")]
    InvalidOrder { dim: usize, order: usize },
    #[error("CUT-{cut_order} is unsupported for dimension {dim}: {reason}")]
    UnsupportedDimension {
        cut_order: u8,
        dim: usize,
        reason: &'static str,
    },
    #[error(
        "CUT-6 scaling system did not converge for n = {dim}: residual {residual:.3e} after {iterations} iterations"
    )]
    RootFinding {
        dim: usize,
        residual: f64,
        iterations: usize,
    },
    #[error(
        "CUT-6 scalings for n = {dim} are not all positive: a = ({a1:.6e}, {a2:.6e}, {a3:.6e})"
    )]
    NonpositiveScaling { dim: usize, a1: f64, a2: f64, a3: f64 },
    #[error("CUT-6 central weight for n = {dim} is negative: w0 = {w0:.6e}")]
    NegativeCentralWeight { dim: usize, w0: f64 },
    #[error("dimension mismatch: sigma set has dimension {set_dim}, transform has dimension {transform_dim}")]
    ShapeMismatch { set_dim: usize, transform_dim: usize },
    #[error("transform contains non-finite entries")]
    NonFiniteTransform,
}

/// CUT order of a sigma set: the highest Gaussian moment degree reproduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CutOrder {
    Four,
    Six,
}

impl TryFrom<u8> for CutOrder {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            4 => Ok(CutOrder::Four),
            6 => Ok(CutOrder::Six),
            other => Err(format!("unsupported CUT order {other}; expected 4 or 6")),
        }
    }
}

impl From<CutOrder> for u8 {
    fn from(o: CutOrder) -> u8 {
        match o {
            CutOrder::Four => 4,
            CutOrder::Six => 6,
        }
    }
}

/// The m-th conjugate axis family in R^n: sign-permuted vectors with exactly
/// m nonzero entries of +-1. The principal axes are the m = 1 family.
#[derive(Debug, Clone)]
pub struct AxisFamily {
    pub dimension: usize,
    pub order: usize,
    pub axes: Vec<DVector<f64>>,
}

impl AxisFamily {
    /// Number of members: C(n, m) * 2^m.
    pub fn expected_len(dimension: usize, order: usize) -> usize {
        binomial(dimension, order) * (1usize << order)
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Generate the m-th conjugate axis family of R^n.
///
/// Ordering is deterministic: support index sets in lexicographic order, then
/// sign patterns in binary order with + before -.
pub fn generate_axes(dimension: usize, order: usize) -> Result<AxisFamily, CutError> {
    if order < 1 || order > dimension {
        return Err(CutError::InvalidOrder {
            dim: dimension,
            order,
        });
    }
    let supports = combinations(dimension, order);
    let mut axes = Vec::with_capacity(AxisFamily::expected_len(dimension, order));
    for support in &supports {
        for signs in 0..(1usize << order) {
            let mut axis = DVector::zeros(dimension);
            for (bit, &idx) in support.iter().enumerate() {
                let sign = if signs & (1 << bit) == 0 { 1.0 } else { -1.0 };
                axis[idx] = sign;
            }
            axes.push(axis);
        }
    }
    Ok(AxisFamily {
        dimension,
        order,
        axes,
    })
}

/// Lexicographic k-combinations of {0, .., n-1}.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            rec(i + 1, n, k, current, out);
            current.pop();
        }
    }
    rec(0, n, k, &mut current, &mut out);
    out
}

/// A weighted sigma-point cloud. Points are the columns of `points`; weights
/// sum to one. Standard sets are symmetric under negation, with points ordered
/// canonically: principal shell first, then the n-th conjugate shell, then
/// (CUT-6 only) the 2nd conjugate shell and the central point last.
#[derive(Debug, Clone)]
pub struct SigmaSet {
    pub points: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub order: CutOrder,
}

impl SigmaSet {
    pub fn dimension(&self) -> usize {
        self.points.nrows()
    }

    pub fn count(&self) -> usize {
        self.points.ncols()
    }

    /// Weighted mean of the cloud.
    pub fn weighted_mean(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.dimension());
        for i in 0..self.count() {
            mean += self.weights[i] * self.points.column(i);
        }
        mean
    }

    /// Weighted covariance about the weighted mean.
    pub fn weighted_covariance(&self) -> DMatrix<f64> {
        let mean = self.weighted_mean();
        let n = self.dimension();
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..self.count() {
            let d = self.points.column(i) - &mean;
            cov += self.weights[i] * &d * d.transpose();
        }
        cov
    }
}

/// CUT-4G sigma set for a standard Gaussian in R^n, n >= 3.
///
/// 2n points on the principal axes scaled by r1 and 2^n points on the n-th
/// conjugate axes scaled by r2, n_s = 2n + 2^n in total. n = 2 makes the
/// conjugate scaling r2 = sqrt((n+2)/(n-2)) undefined and n = 1 degenerates
/// the same way, so both are rejected rather than silently dropping a shell.
pub fn cut4_standard(n: usize) -> Result<SigmaSet, CutError> {
    if n < 3 {
        return Err(CutError::UnsupportedDimension {
            cut_order: 4,
            dim: n,
            reason: "conjugate-shell scaling sqrt((n+2)/(n-2)) requires n >= 3",
        });
    }
    let nf = n as f64;
    let r1 = ((nf + 2.0) / 2.0).sqrt();
    let r2 = ((nf + 2.0) / (nf - 2.0)).sqrt();
    let w1 = 4.0 / ((nf + 2.0) * (nf + 2.0));
    let w2 = (nf - 2.0) * (nf - 2.0) / ((1u64 << n) as f64 * (nf + 2.0) * (nf + 2.0));

    let principal = generate_axes(n, 1)?;
    let conjugate = generate_axes(n, n)?;
    let n_s = principal.axes.len() + conjugate.axes.len();
    let mut points = DMatrix::zeros(n, n_s);
    let mut weights = DVector::zeros(n_s);
    let mut col = 0;
    for axis in &principal.axes {
        points.set_column(col, &(axis * r1));
        weights[col] = w1;
        col += 1;
    }
    for axis in &conjugate.axes {
        points.set_column(col, &(axis * r2));
        weights[col] = w2;
        col += 1;
    }
    Ok(SigmaSet {
        points,
        weights,
        order: CutOrder::Four,
    })
}

/// Solve the CUT-6 scaling system for (a1, a2, a3), where r_i = 1/sqrt(a_i):
///
/// ```text
/// 2(8-n) a1^2 + a2^2 + 2(n-1) a3^2 = 1
/// 2(8-n) a1   + a2   + 2(n-1) a3   = 3
///               a2   + 2 a3        = 1
/// ```
///
/// Damped Newton iteration from a = (0.1, 0.5, 0.25), at most 200 iterations,
/// residual tolerance 1e-14. The system is low-dimensional polynomial and
/// well-conditioned for n <= 6.
fn solve_cut6_scalings(n: usize) -> Result<(f64, f64, f64), CutError> {
    let nf = n as f64;
    let residual = |a: &[f64; 3]| -> [f64; 3] {
        [
            2.0 * (8.0 - nf) * a[0] * a[0] + a[1] * a[1] + 2.0 * (nf - 1.0) * a[2] * a[2] - 1.0,
            2.0 * (8.0 - nf) * a[0] + a[1] + 2.0 * (nf - 1.0) * a[2] - 3.0,
            a[1] + 2.0 * a[2] - 1.0,
        ]
    };
    let norm = |f: &[f64; 3]| f.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut a = [0.1, 0.5, 0.25];
    let mut f = residual(&a);
    let tol = 1e-14;
    let max_iterations = 200;
    for iteration in 0..max_iterations {
        if norm(&f) <= tol {
            break;
        }
        let jac = nalgebra::Matrix3::new(
            4.0 * (8.0 - nf) * a[0],
            2.0 * a[1],
            4.0 * (nf - 1.0) * a[2],
            2.0 * (8.0 - nf),
            1.0,
            2.0 * (nf - 1.0),
            0.0,
            1.0,
            2.0,
        );
        let rhs = nalgebra::Vector3::new(f[0], f[1], f[2]);
        let step = jac.lu().solve(&rhs).ok_or(CutError::RootFinding {
            dim: n,
            residual: norm(&f),
            iterations: iteration,
        })?;
        // Backtracking damping: halve until the residual norm decreases.
        let mut alpha = 1.0;
        let mut advanced = false;
        for _ in 0..60 {
            let trial = [a[0] - alpha * step[0], a[1] - alpha * step[1], a[2] - alpha * step[2]];
            let ft = residual(&trial);
            if norm(&ft) < norm(&f) {
                a = trial;
                f = ft;
                advanced = true;
                break;
            }
            alpha *= 0.5;
        }
        if !advanced {
            return Err(CutError::RootFinding {
                dim: n,
                residual: norm(&f),
                iterations: iteration,
            });
        }
    }
    if norm(&f) > tol {
        return Err(CutError::RootFinding {
            dim: n,
            residual: norm(&f),
            iterations: max_iterations,
        });
    }
    if a[0] <= 0.0 || a[1] <= 0.0 || a[2] <= 0.0 {
        return Err(CutError::NonpositiveScaling {
            dim: n,
            a1: a[0],
            a2: a[1],
            a3: a[2],
        });
    }
    Ok((a[0], a[1], a[2]))
}

/// CUT-6G sigma set for a standard Gaussian in R^n, 3 <= n <= 6.
///
/// Shells: 2n principal points scaled by r1, 2^n n-th conjugate points scaled
/// by r2, 2n(n-1) 2nd-conjugate points scaled by r3 and one central point,
/// n_s = 2n^2 + 2^n + 1. The scalings solve the three-equation system above;
/// weights follow `w1 = (8-n)/r1^6`, `w2 = 1/(2^n r2^6)`, `w3 = 1/(2 r3^6)`
/// and the central weight closes the sum to one.
pub fn cut6_standard(n: usize) -> Result<SigmaSet, CutError> {
    if !(3..=6).contains(&n) {
        return Err(CutError::UnsupportedDimension {
            cut_order: 6,
            dim: n,
            reason: "scaling system is defined for 3 <= n <= 6",
        });
    }
    let (a1, a2, a3) = solve_cut6_scalings(n)?;
    let nf = n as f64;
    let r1 = 1.0 / a1.sqrt();
    let r2 = 1.0 / a2.sqrt();
    let r3 = 1.0 / a3.sqrt();
    let w1 = (8.0 - nf) * a1.powi(3);
    let w2 = a2.powi(3) / (1u64 << n) as f64;
    let w3 = a3.powi(3) / 2.0;
    let w0 = 1.0
        - 2.0 * nf * w1
        - (1u64 << n) as f64 * w2
        - 2.0 * nf * (nf - 1.0) * w3;
    // The square-root covariance map needs sqrt(w0); a negative central
    // weight would leave it undefined, so construction aborts.
    if w0 < 0.0 {
        return Err(CutError::NegativeCentralWeight { dim: n, w0 });
    }

    let principal = generate_axes(n, 1)?;
    let conj_n = generate_axes(n, n)?;
    let conj_2 = generate_axes(n, 2)?;
    let n_s = principal.axes.len() + conj_n.axes.len() + conj_2.axes.len() + 1;
    let mut points = DMatrix::zeros(n, n_s);
    let mut weights = DVector::zeros(n_s);
    let mut col = 0;
    for axis in &principal.axes {
        points.set_column(col, &(axis * r1));
        weights[col] = w1;
        col += 1;
    }
    for axis in &conj_n.axes {
        points.set_column(col, &(axis * r2));
        weights[col] = w2;
        col += 1;
    }
    for axis in &conj_2.axes {
        points.set_column(col, &(axis * r3));
        weights[col] = w3;
        col += 1;
    }
    // Central point: zero column.
    weights[col] = w0;
    Ok(SigmaSet {
        points,
        weights,
        order: CutOrder::Six,
    })
}

/// Map a standard sigma set onto N(mean, S S^T): `y_i = S x_i + mean`.
/// Weights are unchanged. Any factor S with S S^T = P is accepted; the
/// lower-triangular Cholesky factor is the conventional choice.
pub fn transform_to_gaussian(
    set: &SigmaSet,
    mean: &DVector<f64>,
    sqrt_cov: &DMatrix<f64>,
) -> Result<SigmaSet, CutError> {
    let n = set.dimension();
    if sqrt_cov.nrows() != n || sqrt_cov.ncols() != n || mean.len() != n {
        return Err(CutError::ShapeMismatch {
            set_dim: n,
            transform_dim: sqrt_cov.nrows(),
        });
    }
    if !sqrt_cov.iter().all(|v| v.is_finite()) || !mean.iter().all(|v| v.is_finite()) {
        return Err(CutError::NonFiniteTransform);
    }
    let mut points = sqrt_cov * &set.points;
    for mut col in points.column_iter_mut() {
        col += mean;
    }
    Ok(SigmaSet {
        points,
        weights: set.weights.clone(),
        order: set.order,
    })
}
