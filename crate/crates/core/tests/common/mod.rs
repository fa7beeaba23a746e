//! Oracles shared by the field tests and the acceptance suite.
#![allow(dead_code)]

use std::f64::consts::PI;

use odtload::fields::Vec3;
use odtload::model::constants::MU_0;
use odtload::model::LoopConfig;

pub const R: f64 = 0.5e-3;

/// Biot–Savart by the trapezoidal rule in the azimuth on the exact circle;
/// the integrand is smooth and periodic, so the rule converges geometrically
/// away from the conductor.
pub fn biot_savart(r: &Vec3, coil: &LoopConfig, nodes: usize) -> Vec3 {
    let mut b = Vec3::zeros();
    let dphi = 2.0 * PI / nodes as f64;
    for i in 0..nodes {
        let phi = i as f64 * dphi;
        let (s, c) = phi.sin_cos();
        let src = Vec3::new(coil.radius * c, coil.radius * s, 0.0);
        let dl = Vec3::new(-s, c, 0.0) * coil.radius * dphi;
        let d = r - src;
        b += dl.cross(&d) / d.norm().powi(3);
    }
    b * MU_0 * coil.current / (4.0 * PI)
}

pub fn wire_distance(r: &Vec3) -> f64 {
    let rho = (r.x * r.x + r.y * r.y).sqrt();
    ((rho - R).powi(2) + r.z * r.z).sqrt()
}

/// Fourth-order central difference of a vector field along axis k.
pub fn diff4<F: Fn(&Vec3) -> Vec3>(f: F, r: &Vec3, k: usize, h: f64) -> Vec3 {
    let at = |s: f64| {
        let mut p = *r;
        p[k] += s * h;
        f(&p)
    };
    (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
}

