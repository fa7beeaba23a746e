use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use odtload::dynamics::OutcomeKind;
use odtload::error::{ConfigError, Error};
use odtload::model::constants::K_B;
use odtload::model::units::{parse_quantity, Quantity};
use odtload::model::{build_configuration, Configuration, Settings, KEYS, REFERENCE_SETTINGS};
use odtload::montecarlo::{
    bound_trap, loading_rate, run_experiment_on, sweep, write_sweep_csv, write_trajectory_csv, EfficiencyEstimate,
    Executor, SweepGrid,
};
use odtload::potentials::{characterize_trap, potential_map, MapPlane, TrapAnalysis};
use odtload::sampling::{make_rng_stream, sample_initial_state, write_samples_csv};

#[derive(Parser, Debug)]
#[command(name = "odtload", version, about = "Loading of a magnetically guided atomic beam into an optical dipole trap")]
struct Cli {
    /// Configuration file of `key = value` lines. The built-in reference settings when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one key after the file is read, e.g. `--set beam.v_b=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Same as `--set sim.flux_weighted=true`.
    #[arg(long, global = true)]
    flux_weighted: bool,

    /// Master seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads, 0 for every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Output file. Standard output when omitted.
    #[arg(long, short, global = true, value_name = "PATH")]
    output: Option<PathBuf>,

    /// Output format. Each subcommand has its own default.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the loop current, trap parameters and escape threshold.
    Characterize,
    /// Run one Monte Carlo experiment and write its summary (JSON by default).
    Simulate {
        /// Number of trajectories.
        #[arg(long, default_value_t = 50_000)]
        n: u64,
        /// Also write every trajectory's outcome and pump event as CSV.
        #[arg(long, value_name = "PATH")]
        dump_trajectories: Option<PathBuf>,
    },
    /// Run one experiment per grid point and write a CSV row for each.
    Sweep {
        /// Trajectories per point.
        #[arg(long, default_value_t = 50_000)]
        n: u64,
        /// Grid axis as `T_r=0.125mK,0.25mK` or `v_b=2,5`. Repeat for both axes.
        #[arg(long = "grid", value_name = "AXIS=V1,V2,...", required = true)]
        grid: Vec<String>,
    },
    /// Tabulate U on a coordinate plane.
    PotentialMap {
        /// xz, yz or xy.
        #[arg(long, default_value = "xz")]
        plane: MapPlane,
        /// Zeeman level.
        #[arg(long, default_value_t = 3, allow_negative_numbers = true)]
        mj: i32,
        /// `a1_min,a1_max,a2_min,a2_max` with length units. Defaults to a few loop radii.
        #[arg(long, value_name = "A1MIN,A1MAX,A2MIN,A2MAX", allow_hyphen_values = true)]
        extent: Option<String>,
        /// Nodes along each axis, `N1xN2`.
        #[arg(long, default_value = "101x201")]
        resolution: String,
    },
    /// Write the initial states the simulation would start from.
    SampleCheck {
        /// Number of samples.
        #[arg(long, default_value_t = 10_000)]
        n: u64,
    },
}

/// Failure classes, one per exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Untrappable(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Untrappable(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Untrappable(m) | Failure::Other(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => Failure::Config(format!("config: {c}")),
            Error::Untrappable { .. } => Failure::Untrappable(e.to_string()),
            Error::Field(f) => Failure::Other(format!("fields: {f}")),
            Error::Dynamics(d) => Failure::Other(format!("dynamics: {d}")),
            Error::InvalidArgument(m) => Failure::Other(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(format!("config: {e}"))
    }
}

impl From<odtload::error::FieldError> for Failure {
    fn from(e: odtload::error::FieldError) -> Self {
        Failure::Other(format!("fields: {e}"))
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Other(format!("io: {e}"))
    }
}

fn keys_help() -> String {
    let mut s = String::from("Configuration keys (a bare number is read in SI units):\n");
    for k in KEYS {
        let _ = writeln!(s, "  {:<24} {}", k.key, k.help);
        let _ = writeln!(s, "  {:<24} units: {}", "", k.quantity.accepted_units());
    }
    s.push_str("\nExit codes: 0 success, 1 runtime failure, 2 configuration error, 3 untrappable configuration.");
    s
}

fn load_configuration(cli: &Cli) -> Result<Configuration, Failure> {
    let mut settings = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("config: cannot read {}: {e}", path.display())))?;
            Settings::parse(&text)?
        }
        None => Settings::parse(REFERENCE_SETTINGS)?,
    };
    for o in &cli.overrides {
        settings.apply_override(o)?;
    }
    if cli.flux_weighted {
        settings.set("sim.flux_weighted", "true")?;
    }
    Ok(build_configuration(&settings)?)
}

/// `#` lines that echo the resolved configuration.
fn header(config: &Configuration, seed: Option<u64>) -> String {
    let mut s = String::new();
    for line in config.to_text().lines() {
        writeln!(s, "# {}", line.trim_start_matches("# ")).unwrap();
    }
    writeln!(s, "# fingerprint: {}", config.fingerprint()).unwrap();
    if let Some(seed) = seed {
        writeln!(s, "# seed: {seed}").unwrap();
    }
    s
}

fn settings_json(config: &Configuration) -> Value {
    let map: Map<String, Value> =
        config.to_settings().iter().map(|(k, v)| (k.to_string(), Value::String(v.to_string()))).collect();
    Value::Object(map)
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, bytes)?,
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn in_mk(energy: f64) -> f64 {
    energy / K_B * 1e3
}

fn characterize(cli: &Cli, config: &Configuration) -> Result<(), Failure> {
    let analysis = characterize_trap(config)?;
    let mut rows: Vec<(&str, String, &str)> = vec![
        ("I_c", format!("{:e}", config.coil.current), "A"),
        ("z_R", format!("{:e}", config.odt.rayleigh), "m"),
        ("kappa", format!("{:e}", config.odt.kappa), "Hz m^2/W"),
        ("depth", format!("{:e}", config.odt.depth), "J"),
        ("depth_mK", format!("{}", in_mk(config.odt.depth)), "mK"),
        ("U_esc", format!("{:e}", analysis.escape_energy()), "J"),
        ("U_esc_mK", format!("{}", in_mk(analysis.escape_energy())), "mK"),
        ("well_minimum", format!("{:e}", analysis.well_minimum()), "J"),
        ("well_minimum_mK", format!("{}", in_mk(analysis.well_minimum())), "mK"),
    ];
    if let TrapAnalysis::Bound(t) = &analysis {
        rows.push(("saddle_x", format!("{:e}", t.saddle.x), "m"));
        rows.push(("saddle_y", format!("{:e}", t.saddle.y), "m"));
        rows.push(("saddle_z", format!("{:e}", t.saddle.z), "m"));
        rows.push(("converged", t.converged.to_string(), ""));
    }

    let text = match cli.format {
        None => {
            let mut s = header(config, None);
            for (name, value, unit) in &rows {
                writeln!(s, "{}", format!("{name:<16} {value} {unit}").trim_end()).unwrap();
            }
            s
        }
        Some(Format::Csv) => {
            let mut s = header(config, None);
            s.push_str("quantity,value,unit\n");
            for (name, value, unit) in &rows {
                writeln!(s, "{name},{value},{unit}").unwrap();
            }
            s
        }
        Some(Format::Json) => {
            let mut obj = Map::new();
            obj.insert("configuration".into(), settings_json(config));
            obj.insert("config_fingerprint".into(), json!(config.fingerprint()));
            obj.insert("bound".into(), json!(analysis.bound().is_some()));
            for (name, value, _) in &rows {
                let v = value.parse::<f64>().map(|x| json!(x)).unwrap_or_else(|_| json!(value == "true"));
                obj.insert(name.to_string(), v);
            }
            pretty(&Value::Object(obj))
        }
    };
    emit(cli.output.as_deref(), text.as_bytes())?;
    match analysis {
        TrapAnalysis::Bound(_) => Ok(()),
        TrapAnalysis::Untrappable { well_minimum, escape_energy } => Err(Error::Untrappable {
            well_minimum,
            escape_level: escape_energy,
        }
        .into()),
    }
}

fn estimate_csv(e: &EfficiencyEstimate) -> String {
    let mut s = String::from("lambda,ci_low,ci_high,N,captured");
    for k in OutcomeKind::ALL {
        write!(s, ",{}", k.as_str()).unwrap();
    }
    s.push_str(",U_esc_J,I_c_A,seed\n");
    write!(s, "{:e},{:e},{:e},{},{}", e.lambda, e.ci_low, e.ci_high, e.n_total, e.n_captured).unwrap();
    for k in OutcomeKind::ALL {
        write!(s, ",{}", e.outcome_histogram.get(k)).unwrap();
    }
    writeln!(s, ",{:e},{:e},{}", e.escape_energy, e.loop_current, e.master_seed).unwrap();
    s
}

fn simulate(cli: &Cli, config: &Configuration, n: u64, dump: Option<&Path>) -> Result<(), Failure> {
    let trap = bound_trap(config)?;
    let run = run_experiment_on(config, &trap, n, cli.seed, Executor::with_workers(cli.workers))?;
    let e = &run.estimate;

    let text = match cli.format.unwrap_or(Format::Json) {
        Format::Json => {
            let mut v = serde_json::to_value(e).expect("estimate serializes");
            let obj = v.as_object_mut().expect("estimate is an object");
            obj.insert("configuration".into(), settings_json(config));
            obj.insert("well_minimum".into(), json!(trap.well_minimum));
            obj.insert("saddle".into(), json!([trap.saddle.x, trap.saddle.y, trap.saddle.z]));
            if let Some(rate) = loading_rate(e.lambda, config.beam.flux) {
                obj.insert("loading_rate".into(), json!(rate));
            }
            pretty(&v)
        }
        Format::Csv => header(config, Some(cli.seed)) + &estimate_csv(e),
    };
    emit(cli.output.as_deref(), text.as_bytes())?;

    if let Some(path) = dump {
        let mut buf = header(config, Some(cli.seed)).into_bytes();
        write_trajectory_csv(&run.records, &mut buf)?;
        fs::write(path, buf)?;
    }
    Ok(())
}

/// Parse `T_r=0.125mK,0.25mK` or `v_b=2,5` into the grid.
fn parse_grid(specs: &[String]) -> Result<SweepGrid, Failure> {
    let mut grid = SweepGrid::default();
    for spec in specs {
        let (axis, values) = spec
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("grid: `{spec}` is not of the form AXIS=V1,V2,...")))?;
        let (target, kind) = match axis.trim().trim_start_matches("beam.") {
            "T_r" => (&mut grid.t_r, Quantity::Temperature),
            "v_b" => (&mut grid.v_b, Quantity::Velocity),
            other => return Err(Failure::Config(format!("grid: unknown axis `{other}` (use T_r or v_b)"))),
        };
        for v in values.split(',') {
            let x = parse_quantity(v, kind).map_err(|e| Failure::Config(format!("grid: {axis}: {e}")))?;
            if !(x > 0.0) {
                return Err(Failure::Config(format!("grid: {axis}: values must be positive, got {v}")));
            }
            target.push(x);
        }
    }
    Ok(grid)
}

fn run_sweep(cli: &Cli, config: &Configuration, n: u64, grid: &[String]) -> Result<(), Failure> {
    let grid = parse_grid(grid)?;
    let rows = sweep(&grid, config, n, cli.seed, cli.workers)?;
    let text = match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut buf = header(config, Some(cli.seed)).into_bytes();
            write_sweep_csv(&rows, &mut buf)?;
            String::from_utf8(buf).expect("csv is utf-8")
        }
        Format::Json => pretty(&json!({
            "configuration": settings_json(config),
            "config_fingerprint": config.fingerprint(),
            "master_seed": cli.seed,
            "rows": rows,
        })),
    };
    emit(cli.output.as_deref(), text.as_bytes())
}

fn parse_extent(text: &str) -> Result<[f64; 4], Failure> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        return Err(Failure::Other(format!("extent `{text}` needs four comma-separated lengths")));
    }
    let mut out = [0.0; 4];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = parse_quantity(p, Quantity::Length).map_err(|e| Failure::Other(format!("extent: {e}")))?;
    }
    Ok(out)
}

fn parse_resolution(text: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::Other(format!("resolution `{text}` is not of the form N1xN2"));
    let (a, b) = text.split_once(['x', ',']).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn run_potential_map(
    cli: &Cli,
    config: &Configuration,
    plane: MapPlane,
    mj: i32,
    extent: Option<&str>,
    resolution: &str,
) -> Result<(), Failure> {
    let r = config.coil.radius;
    let extent = match extent {
        Some(t) => parse_extent(t)?,
        None if plane == MapPlane::XY => [-2.0 * r, 2.0 * r, -2.0 * r, 2.0 * r],
        None => [-2.0 * r, 2.0 * r, -4.0 * r, 4.0 * r],
    };
    let map = potential_map(plane, extent, parse_resolution(resolution)?, mj, config)?;
    let text = match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let (a1, a2) = plane.axis_names();
            let mut buf = header(config, None).into_bytes();
            writeln!(buf, "# plane: {a1}{a2}, mj: {mj}")?;
            map.write_csv(&mut buf)?;
            String::from_utf8(buf).expect("csv is utf-8")
        }
        Format::Json => {
            let mut v = serde_json::to_value(&map).expect("map serializes");
            let obj = v.as_object_mut().expect("map is an object");
            obj.insert("configuration".into(), settings_json(config));
            obj.insert("config_fingerprint".into(), json!(config.fingerprint()));
            pretty(&v)
        }
    };
    emit(cli.output.as_deref(), text.as_bytes())
}

fn sample_check(cli: &Cli, config: &Configuration, n: u64) -> Result<(), Failure> {
    // Same streams as the simulation, so row i is trajectory i's start.
    let samples: Vec<_> = (0..n).map(|i| sample_initial_state(&mut make_rng_stream(cli.seed, i), config)).collect();
    let states: Vec<_> = samples.iter().map(|s| s.state).collect();

    let text = match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut buf = header(config, Some(cli.seed)).into_bytes();
            write_samples_csv(&states, &mut buf)?;
            String::from_utf8(buf).expect("csv is utf-8")
        }
        Format::Json => {
            let m = config.species.mass;
            let slope = config.species.moment(config.species.mj_max) * config.guide.gradient;
            let count = n.max(1) as f64;
            let rho = |p: &odtload::fields::Vec3| p.x.hypot(p.y);
            let mean_rho = states.iter().map(|s| rho(&s.position)).sum::<f64>() / count;
            let mean_et = states
                .iter()
                .map(|s| 0.5 * m * (s.velocity.x.powi(2) + s.velocity.y.powi(2)) + slope * rho(&s.position))
                .sum::<f64>()
                / count;
            let mean_vz = states.iter().map(|s| s.velocity.z).sum::<f64>() / count;
            let resampled: u64 = samples.iter().map(|s| u64::from(s.resampled)).sum();
            pretty(&json!({
                "configuration": settings_json(config),
                "config_fingerprint": config.fingerprint(),
                "master_seed": cli.seed,
                "n": n,
                "mean_rho": mean_rho,
                "two_beta": 2.0 * config.beam.beta,
                "mean_transverse_energy": mean_et,
                "three_k_t_r": 3.0 * K_B * config.beam.t_r,
                "mean_vz": mean_vz,
                "v_b": config.beam.v_b,
                "resampled": resampled,
            }))
        }
    };
    emit(cli.output.as_deref(), text.as_bytes())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config = load_configuration(cli)?;
    match &cli.command {
        Command::Characterize => characterize(cli, &config),
        Command::Simulate { n, dump_trajectories } => simulate(cli, &config, *n, dump_trajectories.as_deref()),
        Command::Sweep { n, grid } => run_sweep(cli, &config, *n, grid),
        Command::PotentialMap { plane, mj, extent, resolution } => {
            run_potential_map(cli, &config, *plane, *mj, extent.as_deref(), resolution)
        }
        Command::SampleCheck { n } => sample_check(cli, &config, *n),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(keys_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
