//! N-trajectory experiments, efficiency estimates with Wilson intervals,
//! parameter sweeps and loading rates.

use std::io::{self, Write};

use serde::Serialize;

use crate::dynamics::{simulate_atom, OutcomeKind, PumpEvent, TrajectoryOutcome};
use crate::error::{Error, Result};
use crate::model::Configuration;
use crate::potentials::{characterize_trap, TrapAnalysis, TrapCharacterization};
use crate::sampling::{make_rng_stream, sample_initial_state, RngStream};

/// How trajectories are spread over threads. Results never depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Executor {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel { workers: usize },
}

impl Executor {
    /// `workers` = 0 means one per available core.
    pub fn with_workers(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            if workers != 1 {
                return Executor::Parallel { workers };
            }
        }
        let _ = workers;
        Executor::Sequential
    }

    /// Evaluate `f` at 0..n and return the results in index order.
    pub fn map<T, F>(&self, n: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        match *self {
            Executor::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Executor::Parallel { workers } => {
                use rayon::prelude::*;
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .expect("thread pool");
                pool.install(|| (0..n).into_par_iter().map(f).collect())
            }
        }
    }
}

/// Outcome counts by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OutcomeHistogram {
    #[serde(rename = "Captured")]
    pub captured: u64,
    #[serde(rename = "EnergyTooHigh")]
    pub energy_too_high: u64,
    #[serde(rename = "OutsideWell")]
    pub outside_well: u64,
    #[serde(rename = "LostRadially")]
    pub lost_radially: u64,
    #[serde(rename = "Timeout")]
    pub timeout: u64,
}

impl OutcomeHistogram {
    pub fn add(&mut self, kind: OutcomeKind) {
        *self.slot(kind) += 1;
    }

    pub fn get(&self, kind: OutcomeKind) -> u64 {
        let mut copy = *self;
        *copy.slot(kind)
    }

    fn slot(&mut self, kind: OutcomeKind) -> &mut u64 {
        match kind {
            OutcomeKind::Captured => &mut self.captured,
            OutcomeKind::EnergyTooHigh => &mut self.energy_too_high,
            OutcomeKind::OutsideWell => &mut self.outside_well,
            OutcomeKind::LostRadially => &mut self.lost_radially,
            OutcomeKind::Timeout => &mut self.timeout,
        }
    }

    pub fn total(&self) -> u64 {
        OutcomeKind::ALL.iter().map(|&k| self.get(k)).sum()
    }

    pub fn from_kinds<I: IntoIterator<Item = OutcomeKind>>(kinds: I) -> Self {
        let mut h = OutcomeHistogram::default();
        for k in kinds {
            h.add(k);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyEstimate {
    pub lambda: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_total: u64,
    pub n_captured: u64,
    pub outcome_histogram: OutcomeHistogram,
    pub config_fingerprint: String,
    pub master_seed: u64,
    /// Escape threshold used for the capture test, J.
    pub escape_energy: f64,
    /// Loop current, A.
    pub loop_current: f64,
    /// Rejected v_z draws over all v_z draws.
    pub resample_fraction: f64,
    /// Largest relative energy drift over all flights.
    pub max_energy_drift_rel: f64,
}

impl EfficiencyEstimate {
    pub fn from_histogram(histogram: OutcomeHistogram, fingerprint: String, master_seed: u64) -> Result<Self> {
        let n = histogram.total();
        let k = histogram.captured;
        let (ci_low, ci_high) = wilson_interval(k, n, 0.95)?;
        Ok(EfficiencyEstimate {
            lambda: k as f64 / n as f64,
            ci_low,
            ci_high,
            n_total: n,
            n_captured: k,
            outcome_histogram: histogram,
            config_fingerprint: fingerprint,
            master_seed,
            escape_energy: f64::NAN,
            loop_current: f64::NAN,
            resample_fraction: 0.0,
            max_energy_drift_rel: 0.0,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serializes")
    }
}

/// One trajectory's result, as kept for dumps and reductions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub index: u64,
    pub outcome: TrajectoryOutcome,
    /// Rejected v_z draws for this atom.
    pub resampled: u32,
}

impl TrajectoryRecord {
    pub fn kind(&self) -> OutcomeKind {
        self.outcome.kind
    }

    pub fn pump_event(&self) -> Option<&PumpEvent> {
        self.outcome.pump_event.as_ref()
    }
}

/// Sample, fly, pump and classify the trajectory `index` of a run.
pub fn run_trajectory(
    config: &Configuration,
    trap: &TrapCharacterization,
    master_seed: u64,
    index: u64,
) -> Result<TrajectoryRecord> {
    let mut rng = make_rng_stream(master_seed, index);
    let sample = sample_initial_state(&mut rng, config);
    let outcome = simulate_atom(&sample.state, trap, config, &mut rng)?;
    Ok(TrajectoryRecord { index, outcome, resampled: sample.resampled })
}

/// Count outcomes from a per-index classifier on its own stream. The
/// physics pipeline and test stubs share this path.
pub fn tally<F>(n: u64, master_seed: u64, executor: Executor, classify: F) -> OutcomeHistogram
where
    F: Fn(u64, &mut RngStream) -> OutcomeKind + Sync + Send,
{
    let kinds = executor.map(n, |i| {
        let mut rng = make_rng_stream(master_seed, i);
        classify(i, &mut rng)
    });
    OutcomeHistogram::from_kinds(kinds)
}

/// Full result of a run, with every trajectory kept.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub estimate: EfficiencyEstimate,
    pub records: Vec<TrajectoryRecord>,
}

/// Characterize the trap, then run `n` trajectories.
pub fn run_experiment(config: &Configuration, n: u64, master_seed: u64, workers: usize) -> Result<EfficiencyEstimate> {
    let trap = bound_trap(config)?;
    run_experiment_on(config, &trap, n, master_seed, Executor::with_workers(workers)).map(|r| r.estimate)
}

/// Trap characterization that refuses configurations without a well.
pub fn bound_trap(config: &Configuration) -> Result<TrapCharacterization> {
    match characterize_trap(config)? {
        TrapAnalysis::Bound(t) => Ok(t),
        TrapAnalysis::Untrappable { well_minimum, escape_energy } => {
            Err(Error::Untrappable { well_minimum, escape_level: escape_energy })
        }
    }
}

/// Run `n` trajectories against an already characterized trap.
pub fn run_experiment_on(
    config: &Configuration,
    trap: &TrapCharacterization,
    n: u64,
    master_seed: u64,
    executor: Executor,
) -> Result<ExperimentRun> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one trajectory".into()));
    }
    let results = executor.map(n, |i| run_trajectory(config, trap, master_seed, i));
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;

    let histogram = OutcomeHistogram::from_kinds(records.iter().map(TrajectoryRecord::kind));
    let mut estimate = EfficiencyEstimate::from_histogram(histogram, config.fingerprint(), master_seed)?;
    estimate.escape_energy = trap.escape_energy;
    estimate.loop_current = config.coil.current;
    let resampled: u64 = records.iter().map(|r| u64::from(r.resampled)).sum();
    estimate.resample_fraction = resampled as f64 / (resampled + n) as f64;
    estimate.max_energy_drift_rel =
        records.iter().map(|r| r.outcome.stats.max_energy_drift_rel).fold(0.0, f64::max);
    Ok(ExperimentRun { estimate, records })
}

/// `index,outcome,trigger,x,y,z,vx,vy,vz,E_after`; event columns are empty
/// for atoms that never reached a pump event.
pub fn write_trajectory_csv<W: Write>(records: &[TrajectoryRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "index,outcome,trigger,x,y,z,vx,vy,vz,E_after")?;
    for r in records {
        write!(out, "{},{}", r.index, r.kind().as_str())?;
        match r.pump_event() {
            Some(ev) => {
                let (p, v) = (ev.state.position, ev.state.velocity);
                writeln!(
                    out,
                    ",{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                    ev.trigger.as_str(),
                    p.x,
                    p.y,
                    p.z,
                    v.x,
                    v.y,
                    v.z,
                    ev.e_after
                )?;
            }
            None => writeln!(out, ",,,,,,,,")?,
        }
    }
    Ok(())
}

/// Two-sided standard normal quantile for a central `confidence`.
fn z_score(confidence: f64) -> f64 {
    normal_quantile(0.5 + 0.5 * confidence)
}

/// Inverse standard normal CDF, Acklam's rational approximation
/// (relative error below 1.2e-9).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InvalidArgument("Wilson interval needs n >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence {confidence} outside (0, 1)")));
    }
    let z = z_score(confidence);
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2n = z * z / n_f;
    let centre = (p + 0.5 * z2n) / (1.0 + z2n);
    let half = z / (1.0 + z2n) * (p * (1.0 - p) / n_f + 0.25 * z2n / n_f).sqrt();
    // The bounds are exactly 0 and 1 at the boundaries; avoid rounding past them.
    let low = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let high = if k == n { 1.0 } else { (centre + half).min(1.0) };
    Ok((low, high))
}

/// Loaded atoms per second for an incident flux; unavailable without a flux.
pub fn loading_rate(lambda: f64, flux: Option<f64>) -> Option<f64> {
    flux.filter(|f| *f > 0.0).map(|f| lambda * f)
}

/// Values to scan. An empty list keeps the configuration's own value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub v_b: Vec<f64>,
    pub t_r: Vec<f64>,
}

impl SweepGrid {
    /// Points in grid order: v_b outer, T_r inner.
    pub fn points(&self, base: &Configuration) -> Vec<(f64, f64)> {
        let vs = if self.v_b.is_empty() { vec![base.beam.v_b] } else { self.v_b.clone() };
        let ts = if self.t_r.is_empty() { vec![base.beam.t_r] } else { self.t_r.clone() };
        vs.iter().flat_map(|&v| ts.iter().map(move |&t| (v, t))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub v_b: f64,
    pub t_r: f64,
    pub t_z: f64,
    pub loop_current: f64,
    /// None when the trap analysis gave no finite threshold.
    pub escape_energy: Option<f64>,
    pub n_total: u64,
    pub n_captured: u64,
    /// None for untrappable points.
    pub lambda: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub seed: u64,
}

/// Seed for grid point `index`. Point 0 runs on the master seed itself.
pub fn point_seed(master_seed: u64, index: usize) -> u64 {
    master_seed.wrapping_add(index as u64)
}

/// Resolve the configuration at one grid point.
pub fn point_config(base: &Configuration, v_b: f64, t_r: f64) -> Result<Configuration> {
    let c = base.with_override("beam.T_r", &format!("{t_r:e} K"))?;
    Ok(c.with_beam_velocity(v_b)?)
}

/// One experiment per grid point, in grid order. Untrappable points become
/// rows without an estimate.
pub fn sweep(grid: &SweepGrid, base: &Configuration, n: u64, master_seed: u64, workers: usize) -> Result<Vec<SweepRow>> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty sweep grid".into()));
    }
    let executor = Executor::with_workers(workers);
    let mut rows = Vec::with_capacity(points.len());
    for (i, (v_b, t_r)) in points.into_iter().enumerate() {
        let config = point_config(base, v_b, t_r)?;
        let seed = point_seed(master_seed, i);
        let analysis = characterize_trap(&config)?;
        let u_esc = analysis.escape_energy();
        let mut row = SweepRow {
            v_b,
            t_r,
            t_z: config.beam.t_z,
            loop_current: config.coil.current,
            escape_energy: u_esc.is_finite().then_some(u_esc),
            n_total: 0,
            n_captured: 0,
            lambda: None,
            ci_low: None,
            ci_high: None,
            seed,
        };
        if let TrapAnalysis::Bound(trap) = analysis {
            let est = run_experiment_on(&config, &trap, n, seed, executor)?.estimate;
            row.n_total = est.n_total;
            row.n_captured = est.n_captured;
            row.lambda = Some(est.lambda);
            row.ci_low = Some(est.ci_low);
            row.ci_high = Some(est.ci_high);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "v_b_mps,T_r_K,T_z_K,I_c_A,U_esc_J,N,captured,lambda,ci_low,ci_high,seed";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{:e},{:e},{:e},{:e},{},{},{},{},{},{},{}",
            r.v_b,
            r.t_r,
            r.t_z,
            r.loop_current,
            opt(r.escape_energy),
            r.n_total,
            r.n_captured,
            opt(r.lambda),
            opt(r.ci_low),
            opt(r.ci_high),
            r.seed
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn quantile_values() {
        assert_relative_eq!(normal_quantile(0.975), 1.959963984540054, max_relative = 2e-9);
        assert_relative_eq!(normal_quantile(0.5), 0.0);
        assert_relative_eq!(normal_quantile(0.01), -2.326347874040841, max_relative = 2e-9);
        assert_relative_eq!(normal_quantile(0.999), 3.090232306167814, max_relative = 2e-9);
    }

    #[test]
    fn wilson_boundaries() {
        assert_eq!(wilson_interval(0, 100, 0.95).unwrap().0, 0.0);
        assert_eq!(wilson_interval(100, 100, 0.95).unwrap().1, 1.0);
        assert!(wilson_interval(1, 0, 0.95).is_err());
        assert!(wilson_interval(5, 4, 0.95).is_err());
    }

    #[test]
    fn wilson_small_fraction_width() {
        // Closed form at k = 175, n = 5e4: half-width about z sqrt(p(1-p)/n).
        let (lo, hi) = wilson_interval(175, 50_000, 0.95).unwrap();
        let p: f64 = 175.0 / 50_000.0;
        let wald = 1.959964 * (p * (1.0 - p) / 50_000.0).sqrt();
        assert!(((hi - lo) / 2.0 / wald - 1.0).abs() < 0.02, "{lo} {hi}");
        assert!(((hi - lo) / 2.0 - 0.0005).abs() < 0.0001);
        assert!(lo < p && p < hi);
    }

    #[test]
    fn stub_all_captured() {
        let h = tally(100, 1, Executor::Sequential, |_, _| OutcomeKind::Captured);
        let e = EfficiencyEstimate::from_histogram(h, "stub".into(), 1).unwrap();
        assert_eq!(e.lambda, 1.0);
        assert_eq!(e.ci_high, 1.0);
        assert_eq!(e.n_captured, 100);
    }

    #[test]
    fn stub_independent_of_workers() {
        let stub = |_: u64, rng: &mut RngStream| {
            if rng.random::<f64>() < 0.3 { OutcomeKind::Captured } else { OutcomeKind::OutsideWell }
        };
        let a = tally(5000, 9, Executor::with_workers(1), stub);
        let b = tally(5000, 9, Executor::with_workers(4), stub);
        assert_eq!(a, b);
    }

    #[test]
    fn rates() {
        let r = loading_rate(0.0035, Some(1.14e9)).unwrap();
        assert!((r / 4e6 - 1.0).abs() < 0.05);
        assert_eq!(loading_rate(0.0, Some(1e9)), Some(0.0));
        assert_eq!(loading_rate(1.0, Some(1e9)), Some(1e9));
        assert_eq!(loading_rate(0.5, None), None);
    }

    #[test]
    fn grid_order() {
        let base = Configuration::reference_defaults();
        let g = SweepGrid { v_b: vec![2.0, 5.0], t_r: vec![1e-3, 2e-3] };
        assert_eq!(g.points(&base), vec![(2.0, 1e-3), (2.0, 2e-3), (5.0, 1e-3), (5.0, 2e-3)]);
        assert_eq!(SweepGrid::default().points(&base), vec![(base.beam.v_b, base.beam.t_r)]);
    }

    #[test]
    fn sweep_csv_header_and_empty_lambda() {
        let row = SweepRow {
            v_b: 5.0,
            t_r: 1e-3,
            t_z: 1e-3,
            loop_current: 16.1,
            escape_energy: None,
            n_total: 0,
            n_captured: 0,
            lambda: None,
            ci_low: None,
            ci_high: None,
            seed: 4,
        };
        let mut buf = Vec::new();
        write_sweep_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER);
        assert_eq!(lines[1], "5e0,1e-3,1e-3,1.61e1,,0,0,,,,4");
    }
}
