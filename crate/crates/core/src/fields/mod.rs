//! Magnetic fields: the 2D quadrupole guide, the circular deceleration loop,
//! and their superposition with the gradient of |B|.

mod elliptic;

pub use elliptic::{complete_elliptic_pair, elliptic_e};

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::FieldError;
use crate::model::constants::MU_0;
use crate::model::{GuideConfig, LoopConfig};

pub type Vec3 = Vector3<f64>;

/// Points closer than this to the loop conductor are rejected.
pub const WIRE_EXCLUSION_RADIUS: f64 = 1e-5;

/// Below this |B| (tesla) the gradient of |B| is reported as zero.
pub const DEGENERATE_FIELD: f64 = 1e-10;

// Below rho^2 = NEAR_AXIS * (R^2 + z^2) the loop field comes from the
// paraxial expansion of the on-axis field instead of the elliptic form,
// which loses digits to cancellation as m -> 0.
const NEAR_AXIS: f64 = 1e-6;

/// Field value plus its Jacobian dB_i/dx_j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldWithJacobian {
    pub b: Vec3,
    pub jacobian: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    /// T
    pub b: Vec3,
    /// |B| in T
    pub norm: f64,
    /// grad |B| in T/m; zero when `degenerate`.
    pub grad_norm: Vec3,
    /// |B| below [`DEGENERATE_FIELD`].
    pub degenerate: bool,
}

/// Quadrupole guide field b' (-x, y, 0).
pub fn guide_field(r: &Vec3, guide: &GuideConfig) -> Vec3 {
    guide.gradient * Vec3::new(-r.x, r.y, 0.0)
}

fn guide_jacobian(guide: &GuideConfig) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vec3::new(-guide.gradient, guide.gradient, 0.0))
}

/// Field of the circular filament of radius R in the z = 0 plane, centred
/// on the axis, current positive about +z.
pub fn loop_field(r: &Vec3, coil: &LoopConfig) -> Result<Vec3, FieldError> {
    loop_field_with_jacobian(r, coil).map(|f| f.b)
}

/// Cylindrical pieces of the loop field. The radial quantities are divided by
/// rho so they stay finite on the axis.
struct Cylindrical {
    b_rho_over_rho: f64,
    b_z: f64,
    db_z_drho_over_rho: f64,
    db_z_dz: f64,
}

fn loop_cylindrical(rho: f64, z: f64, radius: f64, current: f64) -> Result<Cylindrical, FieldError> {
    let r2 = radius * radius;
    let z2 = z * z;
    let rho2 = rho * rho;
    let q = r2 + z2;
    if rho2 < NEAR_AXIS * q {
        // On-axis field b(z) = b0 (R^2 + z^2)^(-3/2) and its z-derivatives;
        // B_z = b - rho^2/4 b'' + rho^4/64 b'''', B_rho = -rho/2 b' + rho^3/16 b'''.
        let b0 = 0.5 * MU_0 * current * r2;
        let qi = 1.0 / q;
        let q32 = qi * qi.sqrt();
        let q52 = q32 * qi;
        let q72 = q52 * qi;
        let q92 = q72 * qi;
        let q112 = q92 * qi;
        let q132 = q112 * qi;
        let f0 = q32;
        let f1 = -3.0 * z * q52;
        let f2 = 3.0 * (4.0 * z2 - r2) * q72;
        let f3 = 15.0 * z * (3.0 * r2 - 4.0 * z2) * q92;
        let f4 = 45.0 * (r2 * r2 - 12.0 * r2 * z2 + 8.0 * z2 * z2) * q112;
        let f5 = -315.0 * z * (5.0 * r2 * r2 - 20.0 * r2 * z2 + 8.0 * z2 * z2) * q132;
        return Ok(Cylindrical {
            b_rho_over_rho: b0 * (-0.5 * f1 + rho2 / 16.0 * f3),
            b_z: b0 * (f0 - 0.25 * rho2 * f2 + rho2 * rho2 / 64.0 * f4),
            db_z_drho_over_rho: b0 * (-0.5 * f2 + rho2 / 16.0 * f4),
            db_z_dz: b0 * (f1 - 0.25 * rho2 * f3 + rho2 * rho2 / 64.0 * f5),
        });
    }

    let s = (radius + rho).powi(2) + z2;
    let d = (radius - rho).powi(2) + z2;
    let m = 4.0 * radius * rho / s;
    let (k, e) = complete_elliptic_pair(m)?;
    let c = MU_0 * current / (2.0 * PI);
    let sq = s.sqrt();
    let a = rho2 + z2;

    let b_z = c / sq * (k + (r2 - a) / d * e);
    let b_rho = c * z / (rho * sq) * (-k + (r2 + a) / d * e);
    let denom = d * d * s * sq;
    let db_z_dz = c * z
        * ((r2 - a) * d * k + (a * a + 6.0 * r2 * (rho2 - z2) - 7.0 * r2 * r2) * e)
        / denom;
    let k_coeff = -d * (r2 * r2 - 2.0 * r2 * rho2 + r2 * z2 + rho2 * rho2 + rho2 * z2);
    let e_coeff = r2 * r2 * r2 - r2 * r2 * rho2 + 2.0 * r2 * r2 * z2 - r2 * rho2 * rho2
        - 12.0 * r2 * rho2 * z2
        + r2 * z2 * z2
        + rho2 * a * a;
    let db_z_drho = c * (k_coeff * k + e_coeff * e) / (rho * denom);
    Ok(Cylindrical {
        b_rho_over_rho: b_rho / rho,
        b_z,
        db_z_drho_over_rho: db_z_drho / rho,
        db_z_dz,
    })
}

/// Loop field and its Jacobian, from the elliptic-integral solution for a
/// circular filament.
pub fn loop_field_with_jacobian(r: &Vec3, coil: &LoopConfig) -> Result<FieldWithJacobian, FieldError> {
    let rho2 = r.x * r.x + r.y * r.y;
    let rho = rho2.sqrt();
    let radius = coil.radius;
    if (rho - radius).powi(2) + r.z * r.z < WIRE_EXCLUSION_RADIUS * WIRE_EXCLUSION_RADIUS {
        return Err(FieldError::WireProximity { x: r.x, y: r.y, z: r.z });
    }
    if coil.current == 0.0 {
        return Ok(FieldWithJacobian { b: Vec3::zeros(), jacobian: Matrix3::zeros() });
    }
    let cyl = loop_cylindrical(rho, r.z, radius, coil.current)?;
    let bor = cyl.b_rho_over_rho;
    let b = Vec3::new(bor * r.x, bor * r.y, cyl.b_z);

    // curl B = 0 gives dB_rho/dz = dB_z/drho; div B = 0 gives
    // dB_rho/drho = -dB_z/dz - B_rho/rho.
    let db_rho_drho = -cyl.db_z_dz - bor;
    let (c2, s2, cs) = if rho2 > 0.0 {
        (r.x * r.x / rho2, r.y * r.y / rho2, r.x * r.y / rho2)
    } else {
        (1.0, 0.0, 0.0)
    };
    let gz = cyl.db_z_drho_over_rho;
    let jxy = (db_rho_drho - bor) * cs;
    let jacobian = Matrix3::new(
        db_rho_drho * c2 + bor * s2, jxy, gz * r.x,
        jxy, db_rho_drho * s2 + bor * c2, gz * r.y,
        gz * r.x, gz * r.y, cyl.db_z_dz,
    );
    Ok(FieldWithJacobian { b, jacobian })
}

/// B_a + B_c with |B| and grad |B| = J^T B / |B|.
pub fn total_field(r: &Vec3, guide: &GuideConfig, coil: &LoopConfig) -> Result<FieldSample, FieldError> {
    let lf = loop_field_with_jacobian(r, coil)?;
    let b = guide_field(r, guide) + lf.b;
    let jacobian = guide_jacobian(guide) + lf.jacobian;
    let norm = b.norm();
    if norm < DEGENERATE_FIELD {
        return Ok(FieldSample { b, norm, grad_norm: Vec3::zeros(), degenerate: true });
    }
    Ok(FieldSample {
        b,
        norm,
        grad_norm: jacobian.transpose() * b / norm,
        degenerate: false,
    })
}
