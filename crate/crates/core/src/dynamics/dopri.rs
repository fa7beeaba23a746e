//! Dormand–Prince 5(4) stepping with a PI step-size controller.

use crate::error::DynamicsError;

/// (x, y, z, vx, vy, vz)
pub(crate) type State = [f64; 6];

/// Right-hand side at a state plus the quantities that came for free with it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Deriv {
    pub dy: State,
    pub potential: f64,
    pub field_norm: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Step {
    pub y: State,
    /// Derivative at `y`, reused as the first stage of the next step.
    pub end: Deriv,
    /// Scaled max-norm error estimate; the step is acceptable when <= 1.
    pub err: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ErrorScale {
    pub rtol: f64,
    pub atol_position: f64,
    pub atol_velocity: f64,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th minus embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combine(y: &State, h: f64, terms: &[(f64, &State)]) -> State {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (w, k) in terms {
            acc += w * k[i];
        }
        *o += h * acc;
    }
    out
}

/// One DP5 step of size `h` (either sign) from `y` with `k1 = f(y)`. The
/// system is autonomous so the stage times are not needed.
pub(crate) fn step<F>(y: &State, k1: &Deriv, h: f64, scale: &ErrorScale, rhs: &mut F) -> Result<Step, DynamicsError>
where
    F: FnMut(&State) -> Result<Deriv, DynamicsError>,
{
    let k1 = &k1.dy;
    let k2 = rhs(&combine(y, h, &[(A21, k1)]))?.dy;
    let k3 = rhs(&combine(y, h, &[(A31, k1), (A32, &k2)]))?.dy;
    let k4 = rhs(&combine(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]))?.dy;
    let k5 = rhs(&combine(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?.dy;
    let k6 = rhs(&combine(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?.dy;
    let y_new = combine(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
    let end = rhs(&y_new)?;
    let k7 = &end.dy;

    let mut sum = 0.0;
    for i in 0..6 {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let atol = if i < 3 { scale.atol_position } else { scale.atol_velocity };
        let sc = atol + scale.rtol * y[i].abs().max(y_new[i].abs());
        sum = f64::max(sum, (e / sc).abs());
    }
    Ok(Step { y: y_new, end, err: sum })
}

/// PI controller tuned for DP5.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Controller {
    err_old: f64,
    rejected: bool,
}

const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

impl Controller {
    pub fn new() -> Self {
        Controller { err_old: 1e-4, rejected: false }
    }

    /// Next step size after a trial with error `err`; returns (accepted, h_next).
    pub fn propose(&mut self, h: f64, err: f64) -> (bool, f64) {
        if err <= 1.0 {
            let err = err.max(1e-10);
            let mut fac = SAFETY * err.powf(-ALPHA) * self.err_old.powf(BETA);
            fac = fac.clamp(FAC_MIN, if self.rejected { 1.0 } else { FAC_MAX });
            self.err_old = err;
            self.rejected = false;
            (true, h * fac)
        } else {
            let fac = (SAFETY * err.powf(-ALPHA)).max(FAC_MIN);
            self.rejected = true;
            (false, h * fac)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale() -> ErrorScale {
        ErrorScale { rtol: 1e-10, atol_position: 1e-12, atol_velocity: 1e-12 }
    }

    // Harmonic oscillator x'' = -x in each axis.
    fn oscillator(y: &State) -> Result<Deriv, DynamicsError> {
        Ok(Deriv {
            dy: [y[3], y[4], y[5], -y[0], -y[1], -y[2]],
            potential: 0.5 * (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]),
            field_norm: 0.0,
        })
    }

    #[test]
    fn fifth_order_convergence() {
        let y0 = [1.0, 0.0, 0.5, 0.0, 1.0, 0.0];
        let k1 = oscillator(&y0).unwrap();
        let err_at = |h: f64| {
            let s = step(&y0, &k1, h, &scale(), &mut oscillator).unwrap();
            (s.y[0] - h.cos()).abs()
        };
        // Local error is O(h^6).
        let ratio = err_at(0.1) / err_at(0.05);
        assert!(ratio > 40.0 && ratio < 90.0, "{ratio}");
    }

    #[test]
    fn adaptive_period() {
        let mut y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let mut k = oscillator(&y).unwrap();
        let mut t = 0.0;
        let mut h: f64 = 0.01;
        let mut ctrl = Controller::new();
        let end = std::f64::consts::TAU;
        while t < end {
            let h_try = h.min(end - t);
            let s = step(&y, &k, h_try, &scale(), &mut oscillator).unwrap();
            let (ok, next) = ctrl.propose(h_try, s.err);
            if ok {
                y = s.y;
                k = s.end;
                t += h_try;
            }
            h = next;
        }
        assert!((y[0] - 1.0).abs() < 1e-8);
        assert!((y[4] - 1.0).abs() < 1e-8);
    }
}
