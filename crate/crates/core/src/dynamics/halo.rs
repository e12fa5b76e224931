//! Periodic-orbit utilities for the CR3BP: differential correction of
//! perpendicular plane crossings, monodromy matrices and the instability
//! time constant.

use super::{propagate, propagate_with_stm, DynamicsError, DynamicsModel, ModelKind, State6};

/// A closed periodic orbit: initial state and period in scaled time.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicOrbit {
    pub initial_state: State6,
    pub period: f64,
}

/// Locate the next y = 0 crossing after t_min by coarse stepping followed by
/// bisection on the propagation span. Returns (crossing time, state there).
fn find_plane_crossing(
    model: &DynamicsModel,
    state: &State6,
    t_min: f64,
    t_max: f64,
    tol: f64,
) -> Result<(f64, State6), DynamicsError> {
    let coarse = 0.02_f64;
    let mut t_a = t_min;
    let mut x_a = propagate(model, state, t_min, tol)?;
    let mut bracket = None;
    let mut t = t_min;
    let mut x = x_a;
    while t < t_max {
        let dt = coarse.min(t_max - t);
        let x_next = propagate(model, &x, dt, tol)?;
        if x[1].signum() != x_next[1].signum() && x[1] != 0.0 {
            t_a = t;
            x_a = x;
            bracket = Some((t + dt, x_next));
            break;
        }
        t += dt;
        x = x_next;
    }
    let (mut t_b, _) = bracket.ok_or_else(|| DynamicsError::CorrectionFailed {
        detail: format!("no y = 0 crossing found in ({t_min}, {t_max})"),
    })?;
    // Bisect the span from the bracket start state.
    let mut lo = 0.0_f64;
    let mut hi = t_b - t_a;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let x_mid = propagate(model, &x_a, mid, tol)?;
        if x_mid[1].abs() <= 1e-13 {
            return Ok((t_a + mid, x_mid));
        }
        if x_a[1].signum() == x_mid[1].signum() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    let x_mid = propagate(model, &x_a, mid, tol)?;
    t_b = t_a + mid;
    Ok((t_b, x_mid))
}

/// Differentially correct a perpendicular-crossing guess
/// `[x, 0, z, 0, vy, 0]` into a closed periodic orbit, holding z fixed and
/// adjusting (x, vy) so the half-period crossing is again perpendicular.
///
/// `period_tol` bounds the full-period return residual of the corrected
/// orbit.
pub fn correct_periodic_orbit(
    model: &DynamicsModel,
    guess: &State6,
    tol: f64,
    period_tol: f64,
) -> Result<PeriodicOrbit, DynamicsError> {
    if !matches!(model.kind, ModelKind::Cr3bp { .. }) {
        return Err(DynamicsError::CorrectionFailed {
            detail: "periodic-orbit correction is defined for the CR3BP model".into(),
        });
    }
    let mut x0 = *guess;
    x0[1] = 0.0;
    x0[3] = 0.0;
    x0[5] = 0.0;

    let mut half_period = 0.0;
    let mut converged = false;
    for _ in 0..40 {
        let (t_half, _) = find_plane_crossing(model, &x0, 0.05, 10.0, tol)?;
        let (x_c, stm) = propagate_with_stm(model, &x0, t_half, tol)?;
        half_period = t_half;
        let res_vx = x_c[3];
        let res_vz = x_c[5];
        if res_vx.abs().max(res_vz.abs()) <= 1e-12 {
            converged = true;
            break;
        }
        let f_c = model.derivative(&x_c);
        let vy = x_c[4];
        if vy.abs() < 1e-12 {
            return Err(DynamicsError::CorrectionFailed {
                detail: "crossing is tangent to the plane (vy ~ 0)".into(),
            });
        }
        let j11 = stm[(3, 0)] - f_c[3] * stm[(1, 0)] / vy;
        let j12 = stm[(3, 4)] - f_c[3] * stm[(1, 4)] / vy;
        let j21 = stm[(5, 0)] - f_c[5] * stm[(1, 0)] / vy;
        let j22 = stm[(5, 4)] - f_c[5] * stm[(1, 4)] / vy;
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-14 {
            return Err(DynamicsError::CorrectionFailed {
                detail: "singular correction Jacobian".into(),
            });
        }
        let mut dx = (j22 * res_vx - j12 * res_vz) / det;
        let mut dvy = (-j21 * res_vx + j11 * res_vz) / det;
        // Step limiting keeps the iterate near the halo family.
        let cap = 0.05;
        let scale = (dx.abs().max(dvy.abs()) / cap).max(1.0);
        dx /= scale;
        dvy /= scale;
        x0[0] -= dx;
        x0[4] -= dvy;
    }
    if !converged {
        return Err(DynamicsError::CorrectionFailed {
            detail: "perpendicular-crossing iteration did not converge".into(),
        });
    }
    let period = 2.0 * half_period;
    let back = propagate(model, &x0, period, tol)?;
    let residual = (back - x0).norm();
    if residual > period_tol {
        return Err(DynamicsError::PeriodicityViolation { residual });
    }
    Ok(PeriodicOrbit {
        initial_state: x0,
        period,
    })
}

/// State-transition matrix over one full period.
pub fn monodromy(
    model: &DynamicsModel,
    orbit: &PeriodicOrbit,
    tol: f64,
) -> Result<nalgebra::Matrix6<f64>, DynamicsError> {
    let (_, stm) = propagate_with_stm(model, &orbit.initial_state, orbit.period, tol)?;
    Ok(stm)
}

/// Instability time constant in revolutions:
/// `tau = 1 / (Re[Ln(lambda_max)] * T)`, infinite for stable orbits
/// (largest eigenvalue magnitude on or inside the unit circle).
pub fn time_constant_from_monodromy(m: &nalgebra::Matrix6<f64>, period: f64) -> f64 {
    let eigenvalues = m.complex_eigenvalues();
    let lambda_max = eigenvalues
        .iter()
        .map(|l| l.norm())
        .fold(0.0_f64, f64::max);
    let log_real = lambda_max.ln();
    if log_real <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / (log_real * period)
    }
}

/// Time constant of an orbit, validating periodicity first (period-return
/// residual must be within 1e-8).
pub fn time_constant(
    model: &DynamicsModel,
    orbit: &PeriodicOrbit,
    tol: f64,
) -> Result<f64, DynamicsError> {
    let back = propagate(model, &orbit.initial_state, orbit.period, tol)?;
    let residual = (back - orbit.initial_state).norm();
    if residual > 1e-8 {
        return Err(DynamicsError::PeriodicityViolation { residual });
    }
    let m = monodromy(model, orbit, tol)?;
    Ok(time_constant_from_monodromy(&m, orbit.period))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix6, Vector6};

    fn earth_moon() -> DynamicsModel {
        DynamicsModel::cr3bp(0.0121505856, 384400.0, 375699.81).unwrap()
    }

    #[test]
    fn stable_monodromy_gives_infinite_time_constant() {
        // All eigenvalues on the unit circle.
        let m = Matrix6::identity();
        assert!(time_constant_from_monodromy(&m, 3.0).is_infinite());
        let mut rot = Matrix6::identity();
        let (s, c) = (0.3_f64.sin(), 0.3_f64.cos());
        rot[(0, 0)] = c;
        rot[(0, 1)] = -s;
        rot[(1, 0)] = s;
        rot[(1, 1)] = c;
        assert!(time_constant_from_monodromy(&rot, 3.0).is_infinite());
    }

    #[test]
    fn time_constant_scales_inversely_with_period() {
        let mut m = Matrix6::identity();
        m[(0, 0)] = 50.0;
        m[(1, 1)] = 1.0 / 50.0;
        let t1 = time_constant_from_monodromy(&m, 2.0);
        let t2 = time_constant_from_monodromy(&m, 4.0);
        assert!((t1 / t2 - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn non_periodic_state_rejected() {
        let model = earth_moon();
        let orbit = PeriodicOrbit {
            initial_state: Vector6::new(1.1, 0.0, -0.1, 0.0, -0.2, 0.0),
            period: 3.0,
        };
        assert!(matches!(
            time_constant(&model, &orbit, 1e-12),
            Err(DynamicsError::PeriodicityViolation { .. })
        ));
    }

    #[test]
    fn examined_halo_corrects_and_is_unstable() {
        let model = earth_moon();
        let guess = Vector6::new(1.1600, 0.0, -0.1247, 0.0, -0.2087, 0.0);
        let orbit = correct_periodic_orbit(&model, &guess, 1e-12, 1e-10).unwrap();
        // Differential correction stays near the table guess and the stated
        // two-period simulation time of 6.5379.
        assert!((orbit.initial_state[0] - 1.16).abs() < 5e-3);
        assert!((2.0 * orbit.period - 6.5379).abs() < 5e-2);
        let tau = time_constant(&model, &orbit, 1e-12).unwrap();
        assert!(tau.is_finite());
        assert!(tau < 1.0, "examined halo should be unstable, tau = {tau}");
    }
}
