use std::f64::consts::PI;

use odtload::fields::{complete_elliptic_pair, loop_field, loop_field_with_jacobian, total_field, Vec3};
use odtload::model::constants::MU_0;
use odtload::model::{Configuration, CurrentSource, LoopConfig};
use odtload::potentials::potential;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{biot_savart, diff4, wire_distance, R};

fn coil(current: f64) -> LoopConfig {
    LoopConfig { radius: R, current, source: CurrentSource::Fixed }
}

fn random_point(rng: &mut ChaCha8Rng, min_wire_distance: f64) -> Vec3 {
    loop {
        let rho = rng.random_range(1e-6..3.0 * R);
        let phi = rng.random_range(0.0..2.0 * PI);
        let z = rng.random_range(-3.0 * R..3.0 * R);
        if ((rho - R).powi(2) + z * z).sqrt() > min_wire_distance {
            return Vec3::new(rho * phi.cos(), rho * phi.sin(), z);
        }
    }
}

#[test]
fn matches_quadrature_off_axis() {
    let c = coil(7.3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let r = random_point(&mut rng, 0.1 * R);
        let want = biot_savart(&r, &c, 512);
        let got = loop_field(&r, &c).unwrap();
        let err = (got - want).norm() / want.norm();
        assert!(err < 1e-6, "at {r:?}: {got:?} vs {want:?} ({err:e})");
    }
}

#[test]
fn on_axis_closed_form() {
    let c = coil(3.0);
    for z in [-5e-2, -2e-3, -R, -1e-5, 0.0, 3e-6, 2e-4, R, 1e-2] {
        let b = loop_field(&Vec3::new(0.0, 0.0, z), &c).unwrap();
        let want = MU_0 * c.current * R * R / (2.0 * (R * R + z * z).powf(1.5));
        assert!((b.z / want - 1.0).abs() < 1e-10, "z = {z}: {} vs {want}", b.z);
        assert_eq!(b.x, 0.0);
        assert_eq!(b.y, 0.0);
    }
}

#[test]
fn divergence_and_curl_from_jacobian() {
    let c = coil(11.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let r = random_point(&mut rng, 0.02 * R);
        let j = loop_field_with_jacobian(&r, &c).unwrap().jacobian;
        let scale = j.norm();
        assert!(j.trace().abs() < 1e-12 * scale, "div at {r:?}");
        assert!((j - j.transpose()).norm() < 1e-12 * scale, "curl at {r:?}");
    }
}

#[test]
fn divergence_and_curl_by_differences() {
    // Independent of the analytic Jacobian: central differences of B.
    let c = coil(11.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let r = random_point(&mut rng, 0.05 * R);
        let h = 1e-3 * wire_distance(&r);
        let mut d = [[0.0; 3]; 3];
        for (k, row) in d.iter_mut().enumerate() {
            let g = diff4(|p| loop_field(p, &c).unwrap(), &r, k, h);
            row.copy_from_slice(g.as_slice());
        }
        // d[k][i] = dB_i / dx_k
        let scale = d.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let div = d[0][0] + d[1][1] + d[2][2];
        let curl = Vec3::new(d[1][2] - d[2][1], d[2][0] - d[0][2], d[0][1] - d[1][0]);
        assert!(div.abs() < 1e-6 * scale, "div {div:e} at {r:?}");
        assert!(curl.norm() < 1e-6 * scale, "curl {curl:?} at {r:?}");
    }
}

#[test]
fn jacobian_matches_differences() {
    let c = coil(4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..300 {
        let r = random_point(&mut rng, 0.05 * R);
        let j = loop_field_with_jacobian(&r, &c).unwrap().jacobian;
        let h = 1e-3 * wire_distance(&r);
        for k in 0..3 {
            let fd = diff4(|p| loop_field(p, &c).unwrap(), &r, k, h);
            let col = j.column(k).into_owned();
            assert!((col - fd).norm() < 1e-6 * j.norm(), "column {k} at {r:?}: {col:?} vs {fd:?}");
        }
    }
}

#[test]
fn far_field_is_a_dipole() {
    let c = coil(2.0);
    let m = c.current * PI * R * R;
    for dir in [Vec3::new(0.3, -0.2, 0.9), Vec3::new(1.0, 0.0, 0.0), Vec3::new(-0.5, 0.5, -0.1)] {
        let n = dir.normalize();
        let r = n * 400.0 * R;
        let d = r.norm();
        let want = MU_0 / (4.0 * PI) * (3.0 * n * (m * n.z) - Vec3::new(0.0, 0.0, m)) / d.powi(3);
        let got = loop_field(&r, &c).unwrap();
        // Next multipole is down by (R/d)^2.
        assert!((got - want).norm() < 1e-4 * want.norm(), "{got:?} vs {want:?}");
    }
}

#[test]
fn symmetry() {
    let c = coil(5.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let r = random_point(&mut rng, 0.05 * R);
        let b = loop_field(&r, &c).unwrap();
        // Mirror in z = 0 flips the radial part.
        let m = loop_field(&Vec3::new(r.x, r.y, -r.z), &c).unwrap();
        assert!((m.z - b.z).abs() <= 1e-13 * b.norm());
        assert!((m.x + b.x).abs() <= 1e-13 * b.norm());
        // Rotation about the axis.
        let rot = Vec3::new(-r.y, r.x, r.z);
        let br = loop_field(&rot, &c).unwrap();
        assert!((br - Vec3::new(-b.y, b.x, b.z)).norm() <= 1e-12 * b.norm());
    }
}

#[test]
fn legendre_relation() {
    for m in [1e-6, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.999] {
        let (k, e) = complete_elliptic_pair(m).unwrap();
        let (k1, e1) = complete_elliptic_pair(1.0 - m).unwrap();
        let lhs = e * k1 + e1 * k - k * k1;
        assert!((lhs - PI / 2.0).abs() < 1e-12, "m = {m}: {lhs}");
    }
}

#[test]
fn grad_norm_matches_differences() {
    let cfg = Configuration::reference_defaults();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..300 {
        let r = random_point(&mut rng, 0.05 * R);
        if (r.x * r.x + r.y * r.y).sqrt() < 1e-5 {
            continue;
        }
        let f = total_field(&r, &cfg.guide, &cfg.coil).unwrap();
        let h = 1e-3 * (r.x * r.x + r.y * r.y).sqrt().min(wire_distance(&r));
        let norm = |p: &Vec3| Vec3::repeat(total_field(p, &cfg.guide, &cfg.coil).unwrap().norm);
        for k in 0..3 {
            let fd = diff4(norm, &r, k, h).x;
            assert!((f.grad_norm[k] - fd).abs() < 1e-6 * f.grad_norm.norm(), "{k} at {r:?}");
        }
    }
}

/// Fourth-order central difference of U along axis k.
fn fd4(r: &Vec3, k: usize, h: f64, mj: i32, c: &Configuration) -> f64 {
    let u = |s: f64| {
        let mut p = *r;
        p[k] += s * h;
        potential(&p, mj, c).unwrap().energy
    };
    (-u(2.0) + 8.0 * u(1.0) - 8.0 * u(-1.0) + u(-2.0)) / (12.0 * h)
}

#[test]
fn force_is_minus_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let configs = [
        Configuration::reference_defaults(),
        Configuration::reference_defaults().with_beam_velocity(1.5).unwrap(),
    ];
    let mut checked = 0;
    while checked < 1000 {
        let c = &configs[checked % 2];
        let rho = rng.random_range(2e-6..1.5e-3);
        let phi = rng.random_range(0.0..2.0 * PI);
        let z = rng.random_range(-3e-3..3e-3);
        let wire = ((rho - R).powi(2) + z * z).sqrt();
        if wire < 2e-5 {
            continue;
        }
        let r = Vec3::new(rho * phi.cos(), rho * phi.sin(), z);
        let h = 2e-3 * rho.min(wire).min(c.odt.waist);
        for mj in [3, -3] {
            let s = potential(&r, mj, c).unwrap();
            let fd = -Vec3::new(fd4(&r, 0, h, mj, c), fd4(&r, 1, h, mj, c), fd4(&r, 2, h, mj, c));
            assert!((s.force - fd).norm() <= 1e-6 * s.force.norm(), "mJ {mj} at {r:?}: {:?} vs {fd:?}", s.force);
        }
        checked += 1;
    }
}
