//! Cartesian state <-> classical orbital element conversion for elliptic,
//! non-equatorial two-body orbits.
//!
//! Circular inclined orbits are handled by reporting the argument of
//! periapsis as zero and folding the argument of latitude into the true
//! anomaly. Equatorial geometries (RAAN undefined) and non-elliptic energies
//! are rejected.

use nalgebra::Vector3;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KeplerError {
    #[error("orbit is not elliptic: eccentricity {ecc:.6e}")]
    NonElliptic { ecc: f64 },
    #[error("element set is singular: {detail}")]
    SingularGeometry { detail: String },
}

/// Eccentricity below which the orbit is treated as circular.
const ECC_FLOOR: f64 = 1e-11;
/// sin(inclination) below which the node line (RAAN) is undefined.
const SIN_INCL_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeplerianElements {
    pub semi_major_axis: f64,
    pub eccentricity: f64,
    pub inclination: f64,
    pub raan: f64,
    pub argument_of_periapsis: f64,
    pub true_anomaly: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a < 0.0 {
        a += TAU;
    }
    a
}

pub fn state_to_elements(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    mu: f64,
) -> Result<KeplerianElements, KeplerError> {
    let rn = r.norm();
    let h = r.cross(v);
    let hn = h.norm();
    let energy = v.norm_squared() / 2.0 - mu / rn;
    if energy >= 0.0 {
        return Err(KeplerError::NonElliptic {
            ecc: (1.0 + 2.0 * energy * hn * hn / (mu * mu)).max(0.0).sqrt(),
        });
    }
    let a = -mu / (2.0 * energy);
    let e_vec = ((v.norm_squared() - mu / rn) * r - r.dot(v) * v) / mu;
    let e = e_vec.norm();
    if e >= 1.0 - 1e-12 {
        return Err(KeplerError::NonElliptic { ecc: e });
    }
    let inclination = (h[2] / hn).clamp(-1.0, 1.0).acos();
    if inclination.sin() < SIN_INCL_FLOOR {
        return Err(KeplerError::SingularGeometry {
            detail: format!(
                "near-equatorial orbit (inclination {:.3e} rad): RAAN undefined",
                inclination
            ),
        });
    }
    // Node vector z-hat x h.
    let node = Vector3::new(-h[1], h[0], 0.0);
    let nn = node.norm();
    let raan = wrap_angle(node[1].atan2(node[0]));

    let (argument_of_periapsis, true_anomaly) = if e > ECC_FLOOR {
        let mut argp = (node.dot(&e_vec) / (nn * e)).clamp(-1.0, 1.0).acos();
        if e_vec[2] < 0.0 {
            argp = TAU - argp;
        }
        let mut nu = (e_vec.dot(r) / (e * rn)).clamp(-1.0, 1.0).acos();
        if r.dot(v) < 0.0 {
            nu = TAU - nu;
        }
        (wrap_angle(argp), wrap_angle(nu))
    } else {
        // Circular inclined: anomaly measured from the ascending node.
        let mut u = (node.dot(r) / (nn * rn)).clamp(-1.0, 1.0).acos();
        if r[2] < 0.0 {
            u = TAU - u;
        }
        (0.0, wrap_angle(u))
    };

    Ok(KeplerianElements {
        semi_major_axis: a,
        eccentricity: e,
        inclination,
        raan,
        argument_of_periapsis,
        true_anomaly,
    })
}

pub fn elements_to_state(el: &KeplerianElements, mu: f64) -> (Vector3<f64>, Vector3<f64>) {
    let p = el.semi_major_axis * (1.0 - el.eccentricity * el.eccentricity);
    let (s_nu, c_nu) = el.true_anomaly.sin_cos();
    let rn = p / (1.0 + el.eccentricity * c_nu);
    let r_pqw = Vector3::new(rn * c_nu, rn * s_nu, 0.0);
    let coef = (mu / p).sqrt();
    let v_pqw = Vector3::new(-coef * s_nu, coef * (el.eccentricity + c_nu), 0.0);

    let (s_o, c_o) = el.raan.sin_cos();
    let (s_i, c_i) = el.inclination.sin_cos();
    let (s_w, c_w) = el.argument_of_periapsis.sin_cos();
    let rot = nalgebra::Matrix3::new(
        c_o * c_w - s_o * s_w * c_i,
        -c_o * s_w - s_o * c_w * c_i,
        s_o * s_i,
        s_o * c_w + c_o * s_w * c_i,
        -s_o * s_w + c_o * c_w * c_i,
        -c_o * s_i,
        s_w * s_i,
        c_w * s_i,
        c_i,
    );
    (rot * r_pqw, rot * v_pqw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const MU_EARTH: f64 = 398600.0;

    fn roundtrip(r: Vector3<f64>, v: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let el = state_to_elements(&r, &v, MU_EARTH).unwrap();
        elements_to_state(&el, MU_EARTH)
    }

    #[test]
    fn target_table_state_roundtrips() {
        // r = 9000 km circular at 60 degrees inclination.
        let r = Vector3::new(9000.0, 0.0, 0.0);
        let v = Vector3::new(0.0, 3.327, 5.763);
        let (r2, v2) = roundtrip(r, v);
        assert!((r2 - r).norm() / r.norm() <= 1e-9);
        assert!((v2 - v).norm() / v.norm() <= 1e-9);
    }

    #[test]
    fn circular_inclined_velocity_matches_pre_initial_table() {
        // a = 8000 km, i = 30 deg circular at the ascending node.
        let el = KeplerianElements {
            semi_major_axis: 8000.0,
            eccentricity: 0.0,
            inclination: 30f64.to_radians(),
            raan: 0.0,
            argument_of_periapsis: 0.0,
            true_anomaly: 0.0,
        };
        let (r, v) = elements_to_state(&el, MU_EARTH);
        assert_abs_diff_eq!(r[0], 8000.0, epsilon = 1e-6);
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(v[1], 6.1130, epsilon = 5e-5);
        assert_abs_diff_eq!(v[2], 3.5293, epsilon = 5e-5);
    }

    #[test]
    fn generic_elliptic_roundtrip() {
        let r = Vector3::new(7200.0, -1500.0, 2100.0);
        let v = Vector3::new(1.2, 6.9, 2.3);
        let (r2, v2) = roundtrip(r, v);
        assert!((r2 - r).norm() / r.norm() <= 1e-9);
        assert!((v2 - v).norm() / v.norm() <= 1e-9);
    }

    #[test]
    fn circular_equatorial_rejected() {
        let r = Vector3::new(8000.0, 0.0, 0.0);
        let vc = (MU_EARTH / 8000.0).sqrt();
        let v = Vector3::new(0.0, vc, 0.0);
        assert!(matches!(
            state_to_elements(&r, &v, MU_EARTH),
            Err(KeplerError::SingularGeometry { .. })
        ));
    }

    #[test]
    fn hyperbolic_rejected() {
        let r = Vector3::new(8000.0, 0.0, 0.0);
        let v = Vector3::new(0.0, 12.0, 3.0);
        assert!(matches!(
            state_to_elements(&r, &v, MU_EARTH),
            Err(KeplerError::NonElliptic { .. })
        ));
    }
}
