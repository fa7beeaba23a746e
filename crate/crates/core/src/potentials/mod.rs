//! Zeeman + dipole potential landscape for a given m_J, the barrier-matching
//! loop current, and maps of the potential.

mod map;
mod trap;

pub use map::{potential_map, MapPlane, PotentialMap};
pub use trap::{
    characterize_trap, characterize_trap_with, BasinMask, GridSpec, PrincipalPlane, TrapAnalysis,
    TrapCharacterization,
};

use crate::error::FieldError;
use crate::fields::{total_field, FieldSample, Vec3};
use crate::model::constants::{G_N, MU_0};
use crate::model::{barrier_current, Configuration, OdtConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSample {
    /// Total potential energy, J.
    pub energy: f64,
    /// -grad U, N.
    pub force: Vec3,
    /// mu_B g_J m_J |B|, J.
    pub magnetic: f64,
    /// Dipole potential U_d, J.
    pub optical: f64,
    /// m g y when gravity is enabled, else 0.
    pub gravitational: f64,
    /// |B| at the point, T.
    pub field_norm: f64,
}

/// Gaussian-beam dipole potential and its gradient.
pub fn optical_potential(r: &Vec3, odt: &OdtConfig) -> (f64, Vec3) {
    let amplitude = odt.amplitude();
    if amplitude == 0.0 {
        return (0.0, Vec3::zeros());
    }
    let w02 = odt.waist * odt.waist;
    let zr2 = odt.rayleigh * odt.rayleigh;
    let rho2 = r.x * r.x + r.y * r.y;
    let inv = 1.0 / (1.0 + r.z * r.z / zr2);
    let u = amplitude * inv * (-2.0 * rho2 * inv / w02).exp();
    let radial = -4.0 * inv / w02;
    let axial = -2.0 * r.z * inv / zr2 * (1.0 - 2.0 * rho2 * inv / w02);
    (u, Vec3::new(u * radial * r.x, u * radial * r.y, u * axial))
}

/// Potential energy and force for an atom in Zeeman level `mj` at `r`.
pub fn potential(r: &Vec3, mj: i32, config: &Configuration) -> Result<PotentialSample, FieldError> {
    let field = total_field(r, &config.guide, &config.coil)?;
    Ok(assemble(r, mj, &field, config))
}

pub(crate) fn assemble(r: &Vec3, mj: i32, field: &FieldSample, config: &Configuration) -> PotentialSample {
    assert!(
        mj.abs() <= config.species.mj_max,
        "m_J = {mj} outside the ground-state manifold"
    );
    let moment = config.species.moment(mj);
    let (optical, optical_grad) = optical_potential(r, &config.odt);
    let magnetic = moment * field.norm;
    let mut force = -(moment * field.grad_norm + optical_grad);
    let mut gravitational = 0.0;
    if config.options.gravity {
        gravitational = config.species.mass * G_N * r.y;
        force.y -= config.species.mass * G_N;
    }
    PotentialSample {
        energy: magnetic + optical + gravitational,
        force,
        magnetic,
        optical,
        gravitational,
        field_norm: field.norm,
    }
}

/// Loop current that raises the m_J = +m_J,max potential at the origin to
/// exactly the mean axial kinetic energy m v_b^2 / 2.
pub fn required_loop_current(v_b: f64, config: &Configuration) -> f64 {
    let kinetic = 0.5 * config.species.mass * v_b * v_b;
    barrier_current(kinetic, config.odt.depth, config.coil.radius, &config.species)
}

/// Peak field mu0 I / 2R at the loop centre.
pub fn loop_centre_field(config: &Configuration) -> f64 {
    MU_0 * config.coil.current / (2.0 * config.coil.radius)
}
