//! Escape threshold and basin of the high-field-seeking trap.
//!
//! The potential of the m_J = -m_J,max level is tabulated on two principal
//! half-planes (phi = 0 and phi = pi/2) on (rho, z) grids clustered around
//! the axis and the focal plane. For a level L the sublevel component of the
//! well is grown by flood fill; it has escaped once it
//!
//! * reaches an outer grid edge whose continuation to infinity never rises
//!   above L, or
//! * reaches a node lower than the well minimum (another, deeper basin,
//!   including the neighbourhood of the conductor).
//!
//! The escape level is the smallest such L, found by bisection.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::FieldError;
use crate::fields::Vec3;
use crate::model::constants::K_B;
use crate::model::Configuration;

use super::potential;

/// Half-plane the (rho, z) grid lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PrincipalPlane {
    /// y = 0, x >= 0 (the x < 0 half is its mirror image).
    XZ,
    /// x = 0, y >= 0.
    YZ,
}

impl PrincipalPlane {
    fn point(self, rho: f64, z: f64) -> Vec3 {
        match self {
            PrincipalPlane::XZ => Vec3::new(rho, 0.0, z),
            PrincipalPlane::YZ => Vec3::new(0.0, rho, z),
        }
    }

    fn outward(self) -> Vec3 {
        self.point(1.0, 0.0)
    }
}

/// Geometric grid parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    /// Spacing of the first cell next to the axis / focal plane, m.
    pub finest: f64,
    /// Growth factor between neighbouring cells.
    pub ratio: f64,
    /// Maximum number of resolution doublings.
    pub max_refinements: usize,
}

impl GridSpec {
    pub fn for_config(config: &Configuration) -> Self {
        GridSpec { finest: config.odt.waist / 10.0, ratio: 1.05, max_refinements: 3 }
    }

    fn refined(self) -> Self {
        GridSpec { finest: self.finest / 2.0, ratio: self.ratio.sqrt(), ..self }
    }
}

/// Nodes of the connected sublevel region of the well, on one half-plane.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinMask {
    pub plane: PrincipalPlane,
    pub rho: Vec<f64>,
    pub z: Vec<f64>,
    /// Row-major over z: index `iz * rho.len() + irho`.
    pub inside: Vec<bool>,
}

impl BasinMask {
    /// Nearest-node lookup; points off the grid are outside.
    pub fn contains(&self, rho: f64, z: f64) -> bool {
        match (nearest(&self.rho, rho), nearest(&self.z, z)) {
            (Some(i), Some(j)) => self.inside[j * self.rho.len() + i],
            _ => false,
        }
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }
}

fn nearest(axis: &[f64], v: f64) -> Option<usize> {
    let (first, last) = (*axis.first()?, *axis.last()?);
    if !(v >= first && v <= last) {
        return None;
    }
    let i = axis.partition_point(|&a| a < v);
    if i == 0 {
        return Some(0);
    }
    Some(if v - axis[i - 1] <= axis[i] - v { i - 1 } else { i })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrapCharacterization {
    /// Escape threshold U_esc, J, zero at infinity along the axis.
    pub escape_energy: f64,
    /// Lowest pass out of the well.
    pub saddle: Vec3,
    /// Potential at the bottom of the well, J.
    pub well_minimum: f64,
    /// Masks for the x-z and y-z half-planes.
    pub masks: [BasinMask; 2],
    /// Grid that produced the result.
    pub grid: GridSpec,
    /// Change of U_esc in the last doubling, J.
    pub last_change: f64,
    pub converged: bool,
}

impl TrapCharacterization {
    /// Is the point inside the basin, judged on the nearer principal plane.
    pub fn in_basin(&self, r: &Vec3) -> bool {
        let rho = (r.x * r.x + r.y * r.y).sqrt();
        let mask = if r.x.abs() >= r.y.abs() { &self.masks[0] } else { &self.masks[1] };
        mask.contains(rho, r.z)
    }

    /// Effective depth U_esc - well minimum.
    pub fn effective_depth(&self) -> f64 {
        self.escape_energy - self.well_minimum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TrapAnalysis {
    Bound(TrapCharacterization),
    /// No bound state at the origin.
    Untrappable { well_minimum: f64, escape_energy: f64 },
}

impl TrapAnalysis {
    pub fn bound(&self) -> Option<&TrapCharacterization> {
        match self {
            TrapAnalysis::Bound(t) => Some(t),
            TrapAnalysis::Untrappable { .. } => None,
        }
    }

    pub fn escape_energy(&self) -> f64 {
        match self {
            TrapAnalysis::Bound(t) => t.escape_energy,
            TrapAnalysis::Untrappable { escape_energy, .. } => *escape_energy,
        }
    }

    pub fn well_minimum(&self) -> f64 {
        match self {
            TrapAnalysis::Bound(t) => t.well_minimum,
            TrapAnalysis::Untrappable { well_minimum, .. } => *well_minimum,
        }
    }
}

/// Characterize the trap seen after pumping, converging the grid.
pub fn characterize_trap(config: &Configuration) -> Result<TrapAnalysis, FieldError> {
    characterize_trap_with(config, GridSpec::for_config(config))
}

pub fn characterize_trap_with(config: &Configuration, spec: GridSpec) -> Result<TrapAnalysis, FieldError> {
    let mut spec = spec;
    let mut current = analyse(config, spec)?;
    for _ in 0..spec.max_refinements {
        let finer_spec = spec.refined();
        let finer = analyse(config, finer_spec)?;
        let (prev, next) = match (&current, finer) {
            (Analysed::Bound(p), Analysed::Bound(n)) => (p.clone(), n),
            (_, other) => {
                // A trap that (dis)appears under refinement: trust the finer grid.
                current = other;
                spec = finer_spec;
                continue;
            }
        };
        let change = (next.escape_energy - prev.escape_energy).abs();
        let mut next = next;
        next.last_change = change;
        next.converged = change < 0.01 * next.effective_depth();
        spec = finer_spec;
        let done = next.converged;
        current = Analysed::Bound(next);
        if done {
            break;
        }
    }
    Ok(match current {
        Analysed::Bound(t) => TrapAnalysis::Bound(t),
        Analysed::Untrappable { well_minimum, escape_energy } => {
            TrapAnalysis::Untrappable { well_minimum, escape_energy }
        }
    })
}

enum Analysed {
    Bound(TrapCharacterization),
    Untrappable { well_minimum: f64, escape_energy: f64 },
}

/// 0, h, h(1+q), ... up to `max` (last node clamped to `max`).
fn geometric_axis(max: f64, finest: f64, ratio: f64) -> Vec<f64> {
    let mut nodes = vec![0.0];
    let mut step = finest;
    let mut x = 0.0;
    while x < max {
        x = (x + step).min(max);
        if max - x < 0.25 * step {
            x = max;
        }
        nodes.push(x);
        step *= ratio;
    }
    nodes
}

struct PlaneGrid {
    plane: PrincipalPlane,
    rho: Vec<f64>,
    z: Vec<f64>,
    /// U at each node; -inf inside the conductor exclusion.
    u: Vec<f64>,
    /// Level needed to leave the grid outward from an edge node, else +inf.
    exit_cost: Vec<f64>,
    origin: usize,
}

impl PlaneGrid {
    fn build(config: &Configuration, plane: PrincipalPlane, spec: GridSpec) -> Result<Self, FieldError> {
        let mj = -config.species.mj_max;
        let rho_max = 4.0 * config.coil.radius;
        let z_max = 4.0 * config.coil.radius.max(config.odt.rayleigh);
        let rho = geometric_axis(rho_max, spec.finest, spec.ratio);
        let half = geometric_axis(z_max, spec.finest, spec.ratio);
        let z: Vec<f64> = half.iter().rev().map(|v| -v).chain(half.iter().skip(1).copied()).collect();
        let (nr, nz) = (rho.len(), z.len());
        let eval = |p: Vec3| -> Result<f64, FieldError> {
            match potential(&p, mj, config) {
                Ok(s) => Ok(s.energy),
                Err(FieldError::WireProximity { .. }) => Ok(f64::NEG_INFINITY),
                Err(e) => Err(e),
            }
        };
        let mut u = Vec::with_capacity(nr * nz);
        for &zj in &z {
            for &ri in &rho {
                u.push(eval(plane.point(ri, zj))?);
            }
        }
        let mut exit_cost = vec![f64::INFINITY; nr * nz];
        for j in 0..nz {
            for i in 0..nr {
                let on_rho_edge = i == nr - 1;
                let on_z_edge = j == 0 || j == nz - 1;
                if !(on_rho_edge || on_z_edge) {
                    continue;
                }
                let here = u[j * nr + i];
                let mut cost = f64::INFINITY;
                if on_rho_edge {
                    cost = cost.min(ray_cost(&eval, plane.point(rho[i], z[j]), plane.outward())?);
                }
                if on_z_edge {
                    let dir = Vec3::new(0.0, 0.0, z[j].signum());
                    cost = cost.min(ray_cost(&eval, plane.point(rho[i], z[j]), dir)?);
                }
                exit_cost[j * nr + i] = cost.max(here);
            }
        }
        Ok(PlaneGrid { plane, origin: (nz / 2) * nr, rho, z, u, exit_cost })
    }

    fn neighbours(&self, idx: usize) -> impl Iterator<Item = usize> {
        let nr = self.rho.len();
        let nz = self.z.len();
        let (i, j) = (idx % nr, idx / nr);
        let mut out = [usize::MAX; 4];
        if i > 0 {
            out[0] = idx - 1;
        }
        if i + 1 < nr {
            out[1] = idx + 1;
        }
        if j > 0 {
            out[2] = idx - nr;
        }
        if j + 1 < nz {
            out[3] = idx + nr;
        }
        out.into_iter().filter(|&n| n != usize::MAX)
    }

    /// Steepest discrete descent from the origin node.
    fn descend(&self) -> usize {
        let mut at = self.origin;
        loop {
            let next = self
                .neighbours(at)
                .min_by(|&a, &b| self.u[a].total_cmp(&self.u[b]))
                .expect("grid has neighbours");
            if self.u[next] < self.u[at] {
                at = next;
            } else {
                return at;
            }
        }
    }

    fn is_edge(&self, idx: usize) -> bool {
        self.exit_cost[idx].is_finite()
    }

    /// Flood fill of {U <= level} from `seed`; returns (escaped, mask).
    fn flood(&self, seed: usize, level: f64, floor: f64) -> (bool, Vec<bool>) {
        let mut inside = vec![false; self.u.len()];
        let mut queue = VecDeque::new();
        inside[seed] = true;
        queue.push_back(seed);
        let mut escaped = false;
        while let Some(idx) = queue.pop_front() {
            if self.u[idx] < floor || self.exit_cost[idx] <= level {
                escaped = true;
            }
            for n in self.neighbours(idx) {
                if !inside[n] && self.u[n] <= level {
                    inside[n] = true;
                    queue.push_back(n);
                }
            }
        }
        (escaped, inside)
    }

    fn mask(&self, inside: Vec<bool>) -> BasinMask {
        BasinMask { plane: self.plane, rho: self.rho.clone(), z: self.z.clone(), inside }
    }

    fn location(&self, idx: usize) -> Vec3 {
        let nr = self.rho.len();
        self.plane.point(self.rho[idx % nr], self.z[idx / nr])
    }
}

// Highest potential met while moving from `start` to (effectively) infinity
// along `dir`.
fn ray_cost<F>(eval: &F, start: Vec3, dir: Vec3) -> Result<f64, FieldError>
where
    F: Fn(Vec3) -> Result<f64, FieldError>,
{
    let mut worst = f64::NEG_INFINITY;
    let scale = start.norm().max(1e-4);
    let mut s = 0.05 * scale;
    while s < 1e3 {
        worst = worst.max(eval(start + dir * s)?);
        s *= 1.25;
    }
    // Everything tends to zero at infinity along the axis.
    if start.x == 0.0 && start.y == 0.0 {
        worst = worst.max(0.0);
    }
    Ok(worst)
}

struct PlaneResult {
    escape: f64,
    below: f64,
    saddle: Vec3,
}

fn analyse(config: &Configuration, spec: GridSpec) -> Result<Analysed, FieldError> {
    let planes = [
        PlaneGrid::build(config, PrincipalPlane::XZ, spec)?,
        PlaneGrid::build(config, PrincipalPlane::YZ, spec)?,
    ];
    let tolerance = if config.odt.depth > 0.0 {
        1e-3 * config.odt.depth
    } else {
        1e-3 * K_B * 1e-6
    };

    let mut well_minimum = f64::INFINITY;
    let mut seeds = [0usize; 2];
    for (k, g) in planes.iter().enumerate() {
        let seed = g.descend();
        seeds[k] = seed;
        if g.is_edge(seed) || !g.u[seed].is_finite() {
            // Descent ran off the grid or into the conductor.
            let u0 = g.u[g.origin];
            return Ok(Analysed::Untrappable { well_minimum: u0, escape_energy: u0 });
        }
        well_minimum = well_minimum.min(g.u[seed]);
    }

    let mut results = Vec::with_capacity(2);
    for (g, &seed) in planes.iter().zip(&seeds) {
        let floor = g.u[seed];
        if g.flood(seed, floor, floor).0 {
            return Ok(Analysed::Untrappable { well_minimum, escape_energy: floor });
        }
        let mut lo = floor;
        let mut hi = g
            .u
            .iter()
            .chain(g.exit_cost.iter())
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if !g.flood(seed, hi, floor).0 {
            // Nothing on the grid leads out; treat the top of the grid as the rim.
            hi += tolerance;
        }
        while hi - lo > tolerance {
            let mid = 0.5 * (lo + hi);
            if g.flood(seed, mid, floor).0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (_, inside) = g.flood(seed, lo, floor);
        // Lowest way out of the component just below threshold.
        let mut best = (f64::INFINITY, g.origin);
        for (idx, _) in inside.iter().enumerate().filter(|(_, &b)| b) {
            if g.is_edge(idx) && g.exit_cost[idx] < best.0 {
                best = (g.exit_cost[idx], idx);
            }
            for n in g.neighbours(idx) {
                if !inside[n] && g.u[n] < best.0 {
                    best = (g.u[n], n);
                }
            }
        }
        results.push(PlaneResult { escape: hi, below: lo, saddle: g.location(best.1) });
    }

    let winner = if results[0].escape <= results[1].escape { 0 } else { 1 };
    let escape_energy = results[winner].escape;
    if escape_energy <= well_minimum {
        return Ok(Analysed::Untrappable { well_minimum, escape_energy });
    }
    let level = results[0].below.min(results[1].below);
    let masks = [0, 1].map(|k| {
        let g = &planes[k];
        let floor = g.u[seeds[k]];
        g.mask(g.flood(seeds[k], level, floor).1)
    });
    Ok(Analysed::Bound(TrapCharacterization {
        escape_energy,
        saddle: results[winner].saddle,
        well_minimum,
        masks,
        grid: spec,
        last_change: f64::NAN,
        converged: false,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_is_clustered_and_bounded() {
        let a = geometric_axis(2e-3, 3e-6, 1.05);
        assert_eq!(a[0], 0.0);
        assert_eq!(*a.last().unwrap(), 2e-3);
        assert!((a[1] - 3e-6).abs() < 1e-18);
        assert!(a.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn nearest_lookup() {
        let axis = [0.0, 1.0, 3.0];
        assert_eq!(nearest(&axis, 0.4), Some(0));
        assert_eq!(nearest(&axis, 1.9), Some(1));
        assert_eq!(nearest(&axis, 2.1), Some(2));
        assert_eq!(nearest(&axis, 3.1), None);
        assert_eq!(nearest(&axis, -0.1), None);
    }
}
