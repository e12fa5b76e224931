//! Nonlinear propagation and per-segment linearization for two-body and
//! CR3BP dynamics under impulsive control.
//!
//! All propagation happens in scaled units: the two-body family scales
//! lengths by a characteristic length and times by the reciprocal mean motion
//! at that length, the CR3BP family is already nondimensional. Impulses act
//! at segment start (the node), then the state coasts to the next node; the
//! final node carries no maneuver.
//!
//! The integrator backend is an adaptive Runge-Kutta of order 8(5,3)
//! ([`ode_solvers::Dop853`]); state-transition matrices come from the
//! variational equations integrated alongside the state.

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use ode_solvers::dop_shared::IntegrationError;
use ode_solvers::{Dop853, System};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod halo;
pub mod kepler;

pub type State6 = Vector6<f64>;
pub type Control3 = Vector3<f64>;
pub type Matrix3x6 = SMatrix<f64, 3, 6>;

/// Default integrator relative/absolute tolerance in scaled units.
pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("propagation failed at t = {time_reached:.6e}: {detail}")]
    Propagation { time_reached: f64, detail: String },
    #[error("state became non-finite during propagation near t = {time_reached:.6e}")]
    NonFiniteState { time_reached: f64 },
    #[error("negative propagation span dt = {dt:.6e}")]
    NegativeSpan { dt: f64 },
    #[error(transparent)]
    Kepler(#[from] kepler::KeplerError),
    #[error("state is not on a periodic orbit: period-return residual {residual:.3e}")]
    PeriodicityViolation { residual: f64 },
    #[error("periodic-orbit correction failed: {detail}")]
    CorrectionFailed { detail: String },
    #[error("invalid model parameter: {detail}")]
    InvalidModel { detail: String },
    #[error("node grid invalid: {detail}")]
    InvalidGrid { detail: String },
    #[error("policy invalid: {detail}")]
    InvalidPolicy { detail: String },
}

/// Characteristic scales tying config units (km, s) to the scaled state.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct UnitScales {
    pub length_km: f64,
    pub time_s: f64,
}

impl UnitScales {
    pub fn velocity_km_s(&self) -> f64 {
        self.length_km / self.time_s
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    TwoBody { mu_km3_s2: f64 },
    Cr3bp { mass_ratio: f64 },
}

/// Dynamics model plus the unit scales its scaled state refers to.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DynamicsModel {
    pub kind: ModelKind,
    pub scales: UnitScales,
}

impl DynamicsModel {
    /// Two-body model scaled so that the gravitational parameter is exactly
    /// one: characteristic time = sqrt(L^3 / mu).
    pub fn two_body(mu_km3_s2: f64, char_length_km: f64) -> Result<Self, DynamicsError> {
        if mu_km3_s2 <= 0.0 || char_length_km <= 0.0 {
            return Err(DynamicsError::InvalidModel {
                detail: format!("two-body requires mu > 0 and length > 0, got mu = {mu_km3_s2}, L = {char_length_km}"),
            });
        }
        let time_s = (char_length_km.powi(3) / mu_km3_s2).sqrt();
        Ok(Self {
            kind: ModelKind::TwoBody { mu_km3_s2 },
            scales: UnitScales {
                length_km: char_length_km,
                time_s,
            },
        })
    }

    pub fn cr3bp(mass_ratio: f64, length_km: f64, time_s: f64) -> Result<Self, DynamicsError> {
        if !(0.0..0.5).contains(&mass_ratio) || mass_ratio == 0.0 {
            return Err(DynamicsError::InvalidModel {
                detail: format!("CR3BP mass ratio must lie in (0, 0.5), got {mass_ratio}"),
            });
        }
        Ok(Self {
            kind: ModelKind::Cr3bp { mass_ratio },
            scales: UnitScales { length_km, time_s },
        })
    }

    /// Gravitational parameter in scaled units (exactly 1 for the standard
    /// two-body scaling).
    pub fn mu_scaled(&self) -> f64 {
        match self.kind {
            ModelKind::TwoBody { mu_km3_s2 } => {
                mu_km3_s2 * self.scales.time_s.powi(2) / self.scales.length_km.powi(3)
            }
            ModelKind::Cr3bp { .. } => 1.0,
        }
    }

    /// Equation of motion in scaled units.
    pub fn derivative(&self, y: &State6) -> State6 {
        match self.kind {
            ModelKind::TwoBody { .. } => {
                let mu = self.mu_scaled();
                let r = Vector3::new(y[0], y[1], y[2]);
                let rn = r.norm();
                let a = -mu / (rn * rn * rn) * r;
                Vector6::new(y[3], y[4], y[5], a[0], a[1], a[2])
            }
            ModelKind::Cr3bp { mass_ratio: mu } => {
                let (x, yy, z, vx, vy, vz) = (y[0], y[1], y[2], y[3], y[4], y[5]);
                let d2 = (x + mu).powi(2) + yy * yy + z * z;
                let r2 = (x - 1.0 + mu).powi(2) + yy * yy + z * z;
                let d3 = d2 * d2.sqrt();
                let r3 = r2 * r2.sqrt();
                let ux = x - (1.0 - mu) * (x + mu) / d3 - mu * (x - 1.0 + mu) / r3;
                let uy = yy - (1.0 - mu) * yy / d3 - mu * yy / r3;
                let uz = -(1.0 - mu) * z / d3 - mu * z / r3;
                Vector6::new(vx, vy, vz, 2.0 * vy + ux, -2.0 * vx + uy, uz)
            }
        }
    }

    /// Jacobian of the equation of motion with respect to the state.
    pub fn jacobian(&self, y: &State6) -> Matrix6<f64> {
        let mut f = Matrix6::zeros();
        f.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&Matrix3::identity());
        match self.kind {
            ModelKind::TwoBody { .. } => {
                let mu = self.mu_scaled();
                let r = Vector3::new(y[0], y[1], y[2]);
                let rn = r.norm();
                let g = mu * (3.0 * r * r.transpose() / rn.powi(5) - Matrix3::identity() / rn.powi(3));
                f.fixed_view_mut::<3, 3>(3, 0).copy_from(&g);
            }
            ModelKind::Cr3bp { mass_ratio: mu } => {
                let s1 = Vector3::new(y[0] + mu, y[1], y[2]);
                let s2 = Vector3::new(y[0] - 1.0 + mu, y[1], y[2]);
                let d = s1.norm();
                let r = s2.norm();
                let mut g = Matrix3::zeros();
                g[(0, 0)] = 1.0;
                g[(1, 1)] = 1.0;
                g += (1.0 - mu)
                    * (3.0 * s1 * s1.transpose() / d.powi(5) - Matrix3::identity() / d.powi(3));
                g += mu * (3.0 * s2 * s2.transpose() / r.powi(5) - Matrix3::identity() / r.powi(3));
                f.fixed_view_mut::<3, 3>(3, 0).copy_from(&g);
                f[(3, 4)] = 2.0;
                f[(4, 3)] = -2.0;
            }
        }
        f
    }

    /// Symplectic structure matrix the state-transition matrix preserves:
    /// the standard form for the inertial two-body state, the rotating-frame
    /// form (Coriolis block) for CR3BP.
    pub fn symplectic_form(&self) -> Matrix6<f64> {
        let mut j = Matrix6::zeros();
        j.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&Matrix3::identity());
        j.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-Matrix3::identity()));
        if let ModelKind::Cr3bp { .. } = self.kind {
            j[(0, 1)] = -2.0;
            j[(1, 0)] = 2.0;
        }
        j
    }
}

/// Jacobi constant 2U - v^2 of a CR3BP state; None for other models.
pub fn jacobi_constant(model: &DynamicsModel, y: &State6) -> Option<f64> {
    match model.kind {
        ModelKind::Cr3bp { mass_ratio: mu } => {
            let (x, yy, z) = (y[0], y[1], y[2]);
            let d = ((x + mu).powi(2) + yy * yy + z * z).sqrt();
            let r = ((x - 1.0 + mu).powi(2) + yy * yy + z * z).sqrt();
            let u = 0.5 * (x * x + yy * yy) + (1.0 - mu) / d + mu / r;
            let v2 = y[3] * y[3] + y[4] * y[4] + y[5] * y[5];
            Some(2.0 * u - v2)
        }
        _ => None,
    }
}

struct PointOde<'a> {
    model: &'a DynamicsModel,
}

impl System<f64, SVector<f64, 6>> for &PointOde<'_> {
    fn system(&self, _t: f64, y: &SVector<f64, 6>, dy: &mut SVector<f64, 6>) {
        *dy = self.model.derivative(y);
    }
}

struct StmOde<'a> {
    model: &'a DynamicsModel,
}

impl System<f64, SVector<f64, 42>> for &StmOde<'_> {
    fn system(&self, _t: f64, y: &SVector<f64, 42>, dy: &mut SVector<f64, 42>) {
        let state: State6 = y.fixed_rows::<6>(0).into_owned();
        let f = self.model.jacobian(&state);
        dy.fixed_rows_mut::<6>(0)
            .copy_from(&self.model.derivative(&state));
        for c in 0..6 {
            let col: State6 = y.fixed_rows::<6>(6 + 6 * c).into_owned();
            dy.fixed_rows_mut::<6>(6 + 6 * c).copy_from(&(f * col));
        }
    }
}

fn integration_detail(err: &IntegrationError) -> String {
    format!("{err:?}")
}

/// Propagate a state over dt >= 0 at the given integrator tolerance.
pub fn propagate(
    model: &DynamicsModel,
    state: &State6,
    dt: f64,
    tol: f64,
) -> Result<State6, DynamicsError> {
    if dt < 0.0 {
        return Err(DynamicsError::NegativeSpan { dt });
    }
    if dt == 0.0 {
        return Ok(*state);
    }
    let ode = PointOde { model };
    let mut solver = Dop853::new(&ode, 0.0, dt, dt, *state, tol, tol);
    match solver.integrate() {
        Ok(_) => {
            let y = *solver
                .y_out()
                .last()
                .expect("integrator produced no output");
            if !y.iter().all(|v| v.is_finite()) {
                return Err(DynamicsError::NonFiniteState { time_reached: dt });
            }
            Ok(y)
        }
        Err(e) => {
            let t_last = solver.x_out().last().copied().unwrap_or(0.0);
            Err(DynamicsError::Propagation {
                time_reached: t_last,
                detail: integration_detail(&e),
            })
        }
    }
}

/// Propagate a state and its state-transition matrix (variational equations).
pub fn propagate_with_stm(
    model: &DynamicsModel,
    state: &State6,
    dt: f64,
    tol: f64,
) -> Result<(State6, Matrix6<f64>), DynamicsError> {
    if dt < 0.0 {
        return Err(DynamicsError::NegativeSpan { dt });
    }
    if dt == 0.0 {
        return Ok((*state, Matrix6::identity()));
    }
    let mut y0 = SVector::<f64, 42>::zeros();
    y0.fixed_rows_mut::<6>(0).copy_from(state);
    for c in 0..6 {
        y0[6 + 6 * c + c] = 1.0;
    }
    let ode = StmOde { model };
    let mut solver = Dop853::new(&ode, 0.0, dt, dt, y0, tol, tol);
    match solver.integrate() {
        Ok(_) => {
            let y = *solver
                .y_out()
                .last()
                .expect("integrator produced no output");
            if !y.iter().all(|v| v.is_finite()) {
                return Err(DynamicsError::NonFiniteState { time_reached: dt });
            }
            let end: State6 = y.fixed_rows::<6>(0).into_owned();
            let mut stm = Matrix6::zeros();
            for c in 0..6 {
                stm.column_mut(c)
                    .copy_from(&y.fixed_rows::<6>(6 + 6 * c).into_owned());
            }
            Ok((end, stm))
        }
        Err(e) => {
            let t_last = solver.x_out().last().copied().unwrap_or(0.0);
            Err(DynamicsError::Propagation {
                time_reached: t_last,
                detail: integration_detail(&e),
            })
        }
    }
}

/// Apply an impulsive maneuver: position unchanged, velocity incremented.
pub fn apply_impulse(state: &State6, u: &Control3) -> State6 {
    let mut out = *state;
    out[3] += u[0];
    out[4] += u[1];
    out[5] += u[2];
    out
}

/// Discrete-time linearization of one coast segment about an impulsed
/// reference: `x_{k+1} ~ A x_k + B u_k + c` with A the state-transition
/// matrix along the impulsed reference, B = A [0; I] and c the affine
/// remainder that makes the expansion exact at the reference.
#[derive(Debug, Clone)]
pub struct SegmentLinearization {
    pub a: Matrix6<f64>,
    pub b: SMatrix<f64, 6, 3>,
    pub c: State6,
    /// Propagated endpoint of the reference, `phi(x*, u*)`.
    pub endpoint: State6,
}

pub fn linearize_segment(
    model: &DynamicsModel,
    x_ref: &State6,
    u_ref: &Control3,
    dt: f64,
    tol: f64,
) -> Result<SegmentLinearization, DynamicsError> {
    let impulsed = apply_impulse(x_ref, u_ref);
    let (endpoint, stm) = propagate_with_stm(model, &impulsed, dt, tol)?;
    let b: SMatrix<f64, 6, 3> = stm.fixed_view::<6, 3>(0, 3).into_owned();
    let c = endpoint - stm * x_ref - b * u_ref;
    Ok(SegmentLinearization {
        a: stm,
        b,
        c,
        endpoint,
    })
}

/// Strictly increasing node epochs in scaled time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeGrid {
    epochs: Vec<f64>,
}

impl NodeGrid {
    pub fn new(epochs: Vec<f64>) -> Result<Self, DynamicsError> {
        if epochs.len() < 2 {
            return Err(DynamicsError::InvalidGrid {
                detail: format!("need at least 2 nodes, got {}", epochs.len()),
            });
        }
        if !epochs.windows(2).all(|w| w[1] > w[0]) {
            return Err(DynamicsError::InvalidGrid {
                detail: "epochs must be strictly increasing".into(),
            });
        }
        Ok(Self { epochs })
    }

    pub fn uniform(t0: f64, tf: f64, node_count: usize) -> Result<Self, DynamicsError> {
        if node_count < 2 || tf <= t0 {
            return Err(DynamicsError::InvalidGrid {
                detail: format!("uniform grid needs node_count >= 2 and tf > t0 (got {node_count}, [{t0}, {tf}])"),
            });
        }
        let n = node_count;
        let epochs = (0..n)
            .map(|k| t0 + (tf - t0) * k as f64 / (n - 1) as f64)
            .collect();
        Self::new(epochs)
    }

    pub fn node_count(&self) -> usize {
        self.epochs.len()
    }

    pub fn segment_count(&self) -> usize {
        self.epochs.len() - 1
    }

    pub fn epoch(&self, k: usize) -> f64 {
        self.epochs[k]
    }

    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    pub fn dt(&self, segment: usize) -> f64 {
        self.epochs[segment + 1] - self.epochs[segment]
    }
}

/// Per-node feedforward impulse and feedback gain; maneuvers exist at nodes
/// 0..N-2 only (the final node carries none).
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulsivePolicy {
    pub feedforward: Vec<Control3>,
    pub gains: Vec<Matrix3x6>,
}

impl ImpulsivePolicy {
    pub fn new(feedforward: Vec<Control3>, gains: Vec<Matrix3x6>) -> Result<Self, DynamicsError> {
        if feedforward.len() != gains.len() {
            return Err(DynamicsError::InvalidPolicy {
                detail: format!(
                    "feedforward count {} != gain count {}",
                    feedforward.len(),
                    gains.len()
                ),
            });
        }
        let finite = feedforward.iter().all(|u| u.iter().all(|v| v.is_finite()))
            && gains.iter().all(|k| k.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(DynamicsError::InvalidPolicy {
                detail: "policy contains non-finite entries".into(),
            });
        }
        Ok(Self { feedforward, gains })
    }

    pub fn zero(maneuver_count: usize) -> Self {
        Self {
            feedforward: vec![Control3::zeros(); maneuver_count],
            gains: vec![Matrix3x6::zeros(); maneuver_count],
        }
    }

    pub fn maneuver_count(&self) -> usize {
        self.feedforward.len()
    }

    /// Control at node k for mean deviation z: `ubar_k + K_k z`.
    pub fn control(&self, k: usize, z: &State6) -> Control3 {
        self.feedforward[k] + self.gains[k] * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn earth_two_body() -> DynamicsModel {
        DynamicsModel::two_body(398600.0, 5000.0).unwrap()
    }

    fn earth_moon_cr3bp() -> DynamicsModel {
        DynamicsModel::cr3bp(0.0121505856, 384400.0, 375699.81).unwrap()
    }

    #[test]
    fn two_body_scaling_normalizes_mu() {
        let model = earth_two_body();
        assert_abs_diff_eq!(model.mu_scaled(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn circular_orbit_returns_after_one_period() {
        let model = earth_two_body();
        // r = 8000 km circular: speed sqrt(mu/r), period 2 pi sqrt(r^3/mu).
        let r = 8000.0 / 5000.0;
        let v = (model.mu_scaled() / r).sqrt();
        let state = Vector6::new(r, 0.0, 0.0, 0.0, v, 0.0);
        let period = 2.0 * std::f64::consts::PI * (r.powi(3) / model.mu_scaled()).sqrt();
        let end = propagate(&model, &state, period, 1e-12).unwrap();
        let err_km = (end - state).norm() * model.scales.length_km;
        assert!(err_km <= 1e-8, "period-return error {err_km:.3e} km");
    }

    #[test]
    fn two_body_conserves_energy_and_momentum() {
        let model = earth_two_body();
        let state = Vector6::new(1.6, 0.1, -0.2, 0.05, 0.75, 0.31);
        let energy = |s: &State6| {
            let r = Vector3::new(s[0], s[1], s[2]).norm();
            let v2 = s[3] * s[3] + s[4] * s[4] + s[5] * s[5];
            0.5 * v2 - model.mu_scaled() / r
        };
        let momentum = |s: &State6| {
            Vector3::new(s[0], s[1], s[2]).cross(&Vector3::new(s[3], s[4], s[5]))
        };
        let end = propagate(&model, &state, 12.0, 1e-12).unwrap();
        assert!((energy(&end) - energy(&state)).abs() / energy(&state).abs() <= 1e-10);
        assert!((momentum(&end) - momentum(&state)).norm() / momentum(&state).norm() <= 1e-10);
    }

    #[test]
    fn zero_span_is_identity_with_identity_stm() {
        let model = earth_two_body();
        let state = Vector6::new(1.6, 0.0, 0.0, 0.0, 0.8, 0.0);
        let (end, stm) = propagate_with_stm(&model, &state, 0.0, 1e-12).unwrap();
        assert_eq!(end, state);
        assert_eq!(stm, Matrix6::identity());
    }

    #[test]
    fn stm_is_symplectic_for_both_models() {
        let cases = [
            (earth_two_body(), Vector6::new(1.6, 0.0, 0.1, 0.0, 0.78, 0.1), 1.5),
            (
                earth_moon_cr3bp(),
                Vector6::new(1.05, 0.0, 0.05, 0.0, -0.1, 0.0),
                1.0,
            ),
        ];
        for (model, state, dt) in cases {
            let (_, stm) = propagate_with_stm(&model, &state, dt, 1e-12).unwrap();
            let j = model.symplectic_form();
            let defect = (stm.transpose() * j * stm - j).amax();
            assert!(defect <= 1e-8, "symplectic defect {defect:.3e}");
        }
    }

    #[test]
    fn cr3bp_conserves_jacobi_constant() {
        let model = earth_moon_cr3bp();
        let state = Vector6::new(0.85, 0.0, 0.02, 0.0, 0.18, 0.0);
        let c0 = jacobi_constant(&model, &state).unwrap();
        let end = propagate(&model, &state, 2.0, 1e-12).unwrap();
        let c1 = jacobi_constant(&model, &end).unwrap();
        assert!((c1 - c0).abs() <= 1e-10, "Jacobi drift {:.3e}", (c1 - c0).abs());
    }

    #[test]
    fn impulse_is_velocity_only_and_invertible() {
        let state = Vector6::new(1.0, 2.0, 3.0, 0.1, 0.2, 0.3);
        let u = Control3::new(0.05, -0.03, 0.01);
        let out = apply_impulse(&state, &u);
        assert_eq!(out.fixed_rows::<3>(0), state.fixed_rows::<3>(0));
        assert_abs_diff_eq!(
            (out.fixed_rows::<3>(3) - state.fixed_rows::<3>(3)).norm(),
            u.norm(),
            epsilon = 1e-16
        );
        let back = apply_impulse(&out, &(-u));
        assert_eq!(back, state);
        assert_eq!(apply_impulse(&state, &Control3::zeros()), state);
    }

    #[test]
    fn linearization_is_exact_at_reference() {
        let model = earth_two_body();
        let x = Vector6::new(1.6, 0.0, 0.2, -0.05, 0.75, 0.2);
        let u = Control3::new(0.01, -0.02, 0.005);
        let lin = linearize_segment(&model, &x, &u, 1.5, 1e-12).unwrap();
        let reproduced = lin.a * x + lin.b * u + lin.c;
        assert!((reproduced - lin.endpoint).amax() <= 1e-10);
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let model = earth_moon_cr3bp();
        let x = Vector6::new(1.05, 0.01, 0.03, 0.02, -0.09, 0.01);
        let u = Control3::new(0.001, 0.0, -0.002);
        let dt = 0.8;
        let lin = linearize_segment(&model, &x, &u, dt, 1e-12).unwrap();
        let h = 1e-7;
        let flow = |x: &State6, u: &Control3| {
            propagate(&model, &apply_impulse(x, u), dt, 1e-12).unwrap()
        };
        for col in 0..6 {
            let mut xp = x;
            xp[col] += h;
            let mut xm = x;
            xm[col] -= h;
            let fd = (flow(&xp, &u) - flow(&xm, &u)) / (2.0 * h);
            let rel = (fd - lin.a.column(col)).norm() / lin.a.column(col).norm().max(1.0);
            assert!(rel <= 1e-5, "A column {col}: relative error {rel:.3e}");
        }
        for col in 0..3 {
            let mut up = u;
            up[col] += h;
            let mut um = u;
            um[col] -= h;
            let fd = (flow(&x, &up) - flow(&x, &um)) / (2.0 * h);
            let rel = (fd - lin.b.column(col)).norm() / lin.b.column(col).norm().max(1.0);
            assert!(rel <= 1e-5, "B column {col}: relative error {rel:.3e}");
        }
    }

    #[test]
    fn grid_validation() {
        assert!(NodeGrid::new(vec![0.0]).is_err());
        assert!(NodeGrid::new(vec![0.0, 0.0]).is_err());
        assert!(NodeGrid::new(vec![0.0, 1.0, 0.5]).is_err());
        let g = NodeGrid::uniform(0.0, 2.0, 5).unwrap();
        assert_eq!(g.node_count(), 5);
        assert_abs_diff_eq!(g.dt(0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn model_parameter_validation() {
        assert!(DynamicsModel::two_body(-1.0, 5000.0).is_err());
        assert!(DynamicsModel::cr3bp(0.0, 1.0, 1.0).is_err());
        assert!(DynamicsModel::cr3bp(0.6, 1.0, 1.0).is_err());
    }
}
