//! Reproducible per-trajectory random streams and the thermal beam sampler.

use std::f64::consts::TAU;
use std::io::{self, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::fields::Vec3;
use crate::model::constants::K_B;
use crate::model::Configuration;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomState {
    /// s
    pub t: f64,
    /// m
    pub position: Vec3,
    /// m/s
    pub velocity: Vec3,
    pub mj: i32,
}

impl AtomState {
    pub fn kinetic_energy(&self, mass: f64) -> f64 {
        0.5 * mass * self.velocity.norm_squared()
    }
}

/// Counter-based stream: ChaCha8 keyed by the master seed, with the
/// trajectory index as the stream id. Each stream has 2^64 blocks of its own.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }
}

pub fn make_rng_stream(master_seed: u64, stream_index: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_index);
    RngStream { master_seed, stream_index, rng }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// A sampled initial state and how many axial draws were rejected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialSample {
    pub state: AtomState,
    pub resampled: u32,
}

/// Draw an atom at the start plane of the guided beam, in the guided level.
///
/// rho follows the Gamma(2, β) profile of a thermal cloud in a linear
/// potential, sampled as β (E1 + E2); transverse velocities are Maxwellian
/// at T_r; v_z is Gaussian around v_b at T_z and redrawn until positive.
pub fn sample_initial_state<R: Rng + ?Sized>(rng: &mut R, config: &Configuration) -> InitialSample {
    let beam = &config.beam;
    let mass = config.species.mass;

    let e1: f64 = rng.sample(Exp1);
    let e2: f64 = rng.sample(Exp1);
    let rho = beam.beta * (e1 + e2);
    let theta = TAU * rng.random::<f64>();

    let sigma_r = (K_B * beam.t_r / mass).sqrt();
    let vx = sigma_r * rng.sample::<f64, _>(StandardNormal);
    let vy = sigma_r * rng.sample::<f64, _>(StandardNormal);

    let sigma_z = (K_B * beam.t_z / mass).sqrt();
    let v_cap = beam.v_b + 10.0 * sigma_z;
    let mut resampled = 0;
    let vz = loop {
        let v = beam.v_b + sigma_z * rng.sample::<f64, _>(StandardNormal);
        let accept = v > 0.0
            && (!config.options.flux_weighted || rng.random::<f64>() * v_cap < v);
        if accept {
            break v;
        }
        resampled += 1;
    };

    InitialSample {
        state: AtomState {
            t: 0.0,
            position: Vec3::new(rho * theta.cos(), rho * theta.sin(), beam.z_start),
            velocity: Vec3::new(vx, vy, vz),
            mj: config.species.mj_max,
        },
        resampled,
    }
}

/// Sampled states as `x,y,z,vx,vy,vz` rows after a header line.
pub fn write_samples_csv<W: Write>(states: &[AtomState], mut out: W) -> io::Result<()> {
    writeln!(out, "x,y,z,vx,vy,vz")?;
    for s in states {
        let (p, v) = (s.position, s.velocity);
        writeln!(out, "{:e},{:e},{:e},{:e},{:e},{:e}", p.x, p.y, p.z, v.x, v.y, v.z)?;
    }
    Ok(())
}
