//! Trajectories in the guided level up to the pump event, the instantaneous
//! m_J flip, and the capture test.

mod dopri;

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{DynamicsError, FieldError};
use crate::fields::Vec3;
use crate::model::Configuration;
use crate::potentials::{potential, TrapCharacterization};
use crate::sampling::AtomState;

use dopri::{Controller, Deriv, ErrorScale, State};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    /// m
    pub atol_position: f64,
    /// m/s
    pub atol_velocity: f64,
    /// |z| allowed at a BarrierTop event, m.
    pub event_position: f64,
    /// |v_z| allowed at an AxialStop event, m/s.
    pub event_velocity: f64,
    /// Bracket width of the event bisection, s.
    pub event_time: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-8,
            atol_position: 1e-9,
            atol_velocity: 1e-9,
            event_position: 1e-9,
            event_velocity: 1e-6,
            event_time: 1e-9,
        }
    }
}

impl Tolerances {
    fn scale(&self) -> ErrorScale {
        ErrorScale {
            rtol: self.rtol,
            atol_position: self.atol_position,
            atol_velocity: self.atol_velocity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Trigger {
    /// v_z fell through zero before the barrier.
    AxialStop,
    /// The atom reached z = 0 still moving forward.
    BarrierTop,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::AxialStop => "AxialStop",
            Trigger::BarrierTop => "BarrierTop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpEvent {
    /// State at the event, still in the guided level.
    pub state: AtomState,
    pub trigger: Trigger,
    /// Total energy before the flip, J.
    pub e_before: f64,
    /// Total energy after the flip, J.
    pub e_after: f64,
    /// |B| at the event, T.
    pub field_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum OutcomeKind {
    Captured,
    EnergyTooHigh,
    OutsideWell,
    LostRadially,
    Timeout,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 5] = [
        OutcomeKind::Captured,
        OutcomeKind::EnergyTooHigh,
        OutcomeKind::OutsideWell,
        OutcomeKind::LostRadially,
        OutcomeKind::Timeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Captured => "Captured",
            OutcomeKind::EnergyTooHigh => "EnergyTooHigh",
            OutcomeKind::OutsideWell => "OutsideWell",
            OutcomeKind::LostRadially => "LostRadially",
            OutcomeKind::Timeout => "Timeout",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntegrationStats {
    pub steps: u64,
    pub rejected: u64,
    pub evaluations: u64,
    /// max |E(t) - E(0)| / |E(0)| over accepted steps.
    pub max_energy_drift_rel: f64,
    /// s
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOutcome {
    pub kind: OutcomeKind,
    /// Present for Captured, EnergyTooHigh and OutsideWell.
    pub pump_event: Option<PumpEvent>,
    pub stats: IntegrationStats,
}

/// How the flight in the guided level ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Flight {
    Event(PumpEvent, IntegrationStats),
    Ended(TrajectoryOutcome),
}

/// Kinetic plus potential energy in the state's own level.
pub fn total_energy(state: &AtomState, config: &Configuration) -> Result<f64, FieldError> {
    let u = potential(&state.position, state.mj, config)?.energy;
    Ok(state.kinetic_energy(config.species.mass) + u)
}

fn pack(s: &AtomState) -> State {
    let (p, v) = (s.position, s.velocity);
    [p.x, p.y, p.z, v.x, v.y, v.z]
}

fn unpack(y: &State, t: f64, mj: i32) -> AtomState {
    AtomState {
        t,
        position: Vec3::new(y[0], y[1], y[2]),
        velocity: Vec3::new(y[3], y[4], y[5]),
        mj,
    }
}

fn kinetic(y: &State, mass: f64) -> f64 {
    0.5 * mass * (y[3] * y[3] + y[4] * y[4] + y[5] * y[5])
}

/// Equations of motion for a fixed level, counting evaluations.
struct Motion<'a> {
    config: &'a Configuration,
    mj: i32,
    evaluations: u64,
}

impl Motion<'_> {
    fn eval(&mut self, y: &State) -> Result<Deriv, DynamicsError> {
        self.evaluations += 1;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { t: f64::NAN, x: y[0], y: y[1], z: y[2] });
        }
        let s = potential(&Vec3::new(y[0], y[1], y[2]), self.mj, self.config)?;
        let m = self.config.species.mass;
        Ok(Deriv {
            dy: [y[3], y[4], y[5], s.force.x / m, s.force.y / m, s.force.z / m],
            potential: s.energy,
            field_norm: s.field_norm,
        })
    }
}

/// Adaptive propagation state shared by the event search and fixed spans.
struct Propagator<'a> {
    motion: Motion<'a>,
    tol: Tolerances,
    ctrl: Controller,
    y: State,
    k: Deriv,
    t: f64,
    h: f64,
    e0: f64,
    stats: IntegrationStats,
}

/// Smallest step before giving up, s.
const MIN_STEP: f64 = 1e-16;
const INITIAL_STEP: f64 = 1e-6;

impl<'a> Propagator<'a> {
    fn new(initial: &AtomState, config: &'a Configuration, tol: Tolerances) -> Result<Self, DynamicsError> {
        let mut motion = Motion { config, mj: initial.mj, evaluations: 0 };
        let y = pack(initial);
        let k = motion.eval(&y).map_err(|e| with_time(e, initial.t))?;
        let e0 = kinetic(&y, config.species.mass) + k.potential;
        Ok(Propagator {
            motion,
            tol,
            ctrl: Controller::new(),
            y,
            k,
            t: initial.t,
            h: INITIAL_STEP,
            e0,
            stats: IntegrationStats::default(),
        })
    }

    fn trial(&mut self, y: &State, k: &Deriv, h: f64) -> Result<dopri::Step, DynamicsError> {
        let scale = self.tol.scale();
        let motion = &mut self.motion;
        dopri::step(y, k, h, &scale, &mut |s: &State| motion.eval(s)).map_err(|e| with_time(e, self.t))
    }

    /// Take one accepted step no longer than `h_cap`. Returns the state,
    /// derivative and time at the start of that step.
    fn advance(&mut self, h_cap: f64) -> Result<(State, Deriv, f64), DynamicsError> {
        loop {
            let h = self.h.min(h_cap);
            if h < MIN_STEP {
                return Err(DynamicsError::StepUnderflow { t: self.t });
            }
            let (y, k) = (self.y, self.k);
            let step = self.trial(&y, &k, h)?;
            let (accepted, next) = self.ctrl.propose(h, step.err);
            if !accepted {
                self.stats.rejected += 1;
                self.h = next;
                continue;
            }
            // A capped step says nothing about the natural step size.
            self.h = if h < self.h { self.h.max(next) } else { next };
            let start = (self.y, self.k, self.t);
            self.y = step.y;
            self.k = step.end;
            self.t += h;
            self.stats.steps += 1;
            self.note_energy(&step.y, &step.end);
            return Ok(start);
        }
    }

    fn note_energy(&mut self, y: &State, k: &Deriv) {
        let e = kinetic(y, self.motion.config.species.mass) + k.potential;
        let drift = ((e - self.e0) / self.e0).abs();
        if drift > self.stats.max_energy_drift_rel {
            self.stats.max_energy_drift_rel = drift;
        }
    }

    fn finish(&mut self, started: Instant) -> IntegrationStats {
        self.stats.evaluations = self.motion.evaluations;
        self.stats.wall_time = started.elapsed().as_secs_f64();
        self.stats
    }
}

fn with_time(e: DynamicsError, t: f64) -> DynamicsError {
    match e {
        DynamicsError::NonFinite { x, y, z, .. } => DynamicsError::NonFinite { t, x, y, z },
        other => other,
    }
}

fn crossed(trigger: Trigger, y: &State) -> bool {
    match trigger {
        Trigger::BarrierTop => y[2] >= 0.0,
        Trigger::AxialStop => y[5] <= 0.0,
    }
}

/// Event function and its time derivative.
fn event_value(trigger: Trigger, y: &State, k: &Deriv) -> (f64, f64) {
    match trigger {
        Trigger::BarrierTop => (y[2], y[5]),
        Trigger::AxialStop => (y[5], k.dy[5]),
    }
}

/// Longest flight before giving up, s.
pub fn time_limit(config: &Configuration) -> f64 {
    5.0 * config.beam.z_start.abs() / config.beam.v_b
}

/// Integrate in the guided level until the first axial stop or arrival at
/// the barrier top, whichever comes first.
pub fn integrate_until_pump_event(initial: &AtomState, config: &Configuration) -> Result<Flight, DynamicsError> {
    integrate_until_pump_event_with(initial, config, Tolerances::default())
}

pub fn integrate_until_pump_event_with(
    initial: &AtomState,
    config: &Configuration,
    tol: Tolerances,
) -> Result<Flight, DynamicsError> {
    let started = Instant::now();
    let mut p = Propagator::new(initial, config, tol)?;
    let t_max = initial.t + time_limit(config);
    let rho_max = 4.0 * config.coil.radius;
    let mj = initial.mj;

    loop {
        let (y0, k0, t0) = p.advance(f64::INFINITY)?;
        let y1 = p.y;
        let barrier = y0[2] < 0.0 && crossed(Trigger::BarrierTop, &y1);
        let stop = y0[5] > 0.0 && crossed(Trigger::AxialStop, &y1);
        if barrier || stop {
            let (y, k, t, trigger) = locate_event(&mut p, &y0, &k0, t0)?;
            let state = unpack(&y, t, mj);
            let e_before = kinetic(&y, config.species.mass) + k.potential;
            let flip = 2.0 * config.species.moment(config.species.mj_max) * k.field_norm;
            let event = PumpEvent {
                state,
                trigger,
                e_before,
                e_after: e_before - flip,
                field_norm: k.field_norm,
            };
            return Ok(Flight::Event(event, p.finish(started)));
        }
        let rho = (y1[0] * y1[0] + y1[1] * y1[1]).sqrt();
        let kind = if rho > rho_max {
            OutcomeKind::LostRadially
        } else if p.t > t_max {
            OutcomeKind::Timeout
        } else {
            continue;
        };
        return Ok(Flight::Ended(TrajectoryOutcome { kind, pump_event: None, stats: p.finish(started) }));
    }
}

/// Localize the first event inside the last accepted step by re-stepping
/// from its start: bisection down to the time tolerance, then Newton on the
/// event function until the state tolerance holds.
fn locate_event(
    p: &mut Propagator,
    y0: &State,
    k0: &Deriv,
    t0: f64,
) -> Result<(State, Deriv, f64, Trigger), DynamicsError> {
    let mut lo = 0.0;
    let mut hi = p.t - t0;
    let mut best = (p.y, p.k, hi);
    let any_crossed = |y: &State| crossed(Trigger::BarrierTop, y) || crossed(Trigger::AxialStop, y);

    while hi - lo > p.tol.event_time {
        let mid = 0.5 * (lo + hi);
        let s = p.trial(y0, k0, mid)?;
        if any_crossed(&s.y) {
            hi = mid;
            best = (s.y, s.end, mid);
        } else {
            lo = mid;
        }
    }

    // z >= 0 wins ties so an axial stop is never reported past the barrier.
    let trigger = if crossed(Trigger::BarrierTop, &best.0) { Trigger::BarrierTop } else { Trigger::AxialStop };
    let tolerance = match trigger {
        Trigger::BarrierTop => p.tol.event_position,
        Trigger::AxialStop => p.tol.event_velocity,
    };

    let mut current = best;
    for _ in 0..100 {
        let (g, dg) = event_value(trigger, &current.0, &current.1);
        if g.abs() <= 1e-3 * tolerance {
            break;
        }
        let mut h = current.2 - g / dg;
        if !(h > lo && h < hi) {
            h = 0.5 * (lo + hi);
        }
        if h == current.2 {
            break;
        }
        let s = p.trial(y0, k0, h)?;
        if crossed(trigger, &s.y) {
            hi = h;
        } else {
            lo = h;
        }
        current = (s.y, s.end, h);
    }
    let (g, _) = event_value(trigger, &current.0, &current.1);
    if g.abs() > tolerance {
        // Newton stalled; fall back to the crossed side of the bracket.
        current = best;
    }
    let (y, k, h) = current;
    Ok((y, k, t0 + h, trigger))
}

/// Integrate for a fixed span `duration` > 0 without event detection.
pub fn integrate_for(
    initial: &AtomState,
    duration: f64,
    config: &Configuration,
) -> Result<(AtomState, IntegrationStats), DynamicsError> {
    let started = Instant::now();
    let mut p = Propagator::new(initial, config, Tolerances::default())?;
    let t_end = initial.t + duration;
    while t_end - p.t > 0.0 {
        let remaining = t_end - p.t;
        // Absorb a sliver at the end rather than take a vanishing step.
        let cap = if remaining < 2.0 * MIN_STEP { remaining.max(MIN_STEP) } else { remaining };
        p.advance(cap)?;
    }
    let stats = p.finish(started);
    Ok((unpack(&p.y, t_end, initial.mj), stats))
}

/// Instantaneous transfer to the fully stretched high-field seeking level.
pub fn apply_pump(event: &PumpEvent, config: &Configuration) -> AtomState {
    AtomState { mj: -config.species.mj_max, ..event.state }
}

/// Mean number of photons scattered while pumping from +m_J,max to -m_J,max.
pub const PUMP_PHOTONS: f64 = 6.2;

/// Pump with isotropic recoil kicks: six photons plus a seventh with
/// probability 0.2, one recoil velocity each.
pub fn apply_pump_with_recoil<R: Rng + ?Sized>(event: &PumpEvent, config: &Configuration, rng: &mut R) -> AtomState {
    let mut state = apply_pump(event, config);
    let whole = PUMP_PHOTONS.floor();
    let extra = rng.random::<f64>() < PUMP_PHOTONS - whole;
    let kicks = whole as u32 + u32::from(extra);
    let v_rec = config.species.recoil_velocity();
    for _ in 0..kicks {
        let d = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        state.velocity += v_rec * d / d.norm();
    }
    state
}

/// Capture margin below U_esc, as a fraction of the ODT depth.
pub const CAPTURE_MARGIN: f64 = 1e-3;

/// Outcome of a pumped atom. A pump outside the basin is rejected first,
/// then the energy test with its margin applies.
pub fn classify_capture(
    state: &AtomState,
    trap: &TrapCharacterization,
    config: &Configuration,
) -> Result<OutcomeKind, FieldError> {
    if !trap.in_basin(&state.position) {
        return Ok(OutcomeKind::OutsideWell);
    }
    let energy = total_energy(state, config)?;
    if energy >= trap.escape_energy - CAPTURE_MARGIN * config.odt.depth {
        Ok(OutcomeKind::EnergyTooHigh)
    } else {
        Ok(OutcomeKind::Captured)
    }
}

/// Full trajectory: flight, pump, classification.
pub fn simulate_atom<R: Rng + ?Sized>(
    initial: &AtomState,
    trap: &TrapCharacterization,
    config: &Configuration,
    rng: &mut R,
) -> Result<TrajectoryOutcome, DynamicsError> {
    match integrate_until_pump_event(initial, config)? {
        Flight::Ended(outcome) => Ok(outcome),
        Flight::Event(event, stats) => {
            let after = if config.options.recoil {
                apply_pump_with_recoil(&event, config, rng)
            } else {
                apply_pump(&event, config)
            };
            let kind = classify_capture(&after, trap, config)?;
            Ok(TrajectoryOutcome { kind, pump_event: Some(event), stats })
        }
    }
}
