//! Physical constants, species data and the validated run configuration.

pub mod units;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use units::{parse_flag, parse_quantity, Quantity};

/// SI constants (CODATA 2018).
pub mod constants {
    /// Vacuum permeability, T m / A.
    pub const MU_0: f64 = 1.256_637_062_12e-6;
    /// Bohr magneton, J / T.
    pub const MU_B: f64 = 9.274_010_078_3e-24;
    /// Boltzmann constant, J / K.
    pub const K_B: f64 = 1.380_649e-23;
    /// Planck constant, J s.
    pub const H: f64 = 6.626_070_15e-34;
    /// Atomic mass unit, kg.
    pub const AMU: f64 = 1.660_539_066_60e-27;
    /// Standard gravity, m / s^2.
    pub const G_N: f64 = 9.806_65;
}

use constants::{AMU, H, K_B, MU_0, MU_B};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Species {
    /// kg
    pub mass: f64,
    pub g_j: f64,
    /// Largest |m_J| of the guided ground state.
    pub mj_max: i32,
    /// Wavelength of the pumping transition, used only for recoil kicks.
    pub pump_wavelength: f64,
}

impl Species {
    /// 52Cr in the 7S3 ground state.
    pub fn chromium52() -> Self {
        Species {
            mass: 51.940_507_5 * AMU,
            g_j: 2.0,
            mj_max: 3,
            pump_wavelength: 427.6e-9,
        }
    }

    /// Signed magnetic moment mu_B g_J m_J in J/T.
    pub fn moment(&self, mj: i32) -> f64 {
        MU_B * self.g_j * f64::from(mj)
    }

    pub fn recoil_velocity(&self) -> f64 {
        H / (self.mass * self.pump_wavelength)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GuideConfig {
    /// |grad |B_a|| in T/m.
    pub gradient: f64,
    /// (I_a in A, bar spacing d in m) when the gradient was derived from the bars.
    pub bars: Option<(f64, f64)>,
}

impl GuideConfig {
    pub fn gradient_from_bars(current: f64, spacing: f64) -> f64 {
        4.0 * MU_0 * current / (std::f64::consts::PI * spacing * spacing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdtConfig {
    /// W
    pub power: f64,
    /// 1/e^2 intensity radius at the focus, m.
    pub waist: f64,
    /// m
    pub wavelength: f64,
    /// |U_d(0)| in J.
    pub depth: f64,
    /// pi w0^2 / lambda, m.
    pub rayleigh: f64,
    /// Coupling in Hz m^2 / W; negative for an attractive trap.
    pub kappa: f64,
}

impl OdtConfig {
    /// Potential at the focus, kappa h P0 / w0^2 (= -depth).
    pub fn amplitude(&self) -> f64 {
        self.kappa * H * self.power / (self.waist * self.waist)
    }
}

/// kappa such that the potential at the focus equals -depth.
pub fn kappa_from_depth(depth: f64, power: f64, waist: f64) -> Result<f64, ConfigError> {
    for (key, v) in [("odt.depth", depth), ("odt.power", power), ("odt.waist", waist)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ConfigError::invalid(key, format!("must be positive, got {v}")));
        }
    }
    Ok(-depth * waist * waist / (power * H))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CurrentSource {
    /// Solved from the beam velocity so the barrier matches the beam energy.
    BarrierMatched,
    /// Given explicitly.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoopConfig {
    /// m
    pub radius: f64,
    /// A
    pub current: f64,
    pub source: CurrentSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeamConfig {
    /// m/s
    pub v_b: f64,
    /// K
    pub t_r: f64,
    /// K
    pub t_z: f64,
    /// atoms/s
    pub flux: Option<f64>,
    /// m
    pub z_start: f64,
    /// Radial scale of the thermal profile in the linear guide, m.
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SimOptions {
    /// Add gravity along -y.
    pub gravity: bool,
    /// Add photon recoil kicks at the pump.
    pub recoil: bool,
    /// Weight the sampled axial velocity by v_z.
    pub flux_weighted: bool,
}

/// Fully resolved, immutable configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Configuration {
    pub species: Species,
    pub guide: GuideConfig,
    pub odt: OdtConfig,
    pub coil: LoopConfig,
    pub beam: BeamConfig,
    pub options: SimOptions,
}

/// Loop current whose on-axis barrier for the fully stretched state cancels
/// the ODT well and leaves a peak of `kinetic` at the origin.
pub fn barrier_current(kinetic: f64, depth: f64, radius: f64, species: &Species) -> f64 {
    (kinetic + depth) * 2.0 * radius / (species.moment(species.mj_max) * MU_0)
}

/// β = k_B T_r / (mu_B g_J m_J |grad B|).
pub fn radial_scale(t_r: f64, gradient: f64, species: &Species) -> f64 {
    K_B * t_r / (species.moment(species.mj_max) * gradient)
}

pub struct KeySpec {
    pub key: &'static str,
    pub quantity: Quantity,
    pub help: &'static str,
}

/// Every accepted configuration key.
pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "species.mass", quantity: Quantity::Mass, help: "atomic mass (default 52Cr)" },
    KeySpec { key: "species.g_j", quantity: Quantity::Dimensionless, help: "Lande g-factor (default 2)" },
    KeySpec { key: "species.mj_max", quantity: Quantity::Dimensionless, help: "guided Zeeman level m_J (default 3)" },
    KeySpec { key: "species.pump_wavelength", quantity: Quantity::Length, help: "pump transition wavelength, recoil only (default 427.6 nm)" },
    KeySpec { key: "guide.gradient", quantity: Quantity::Gradient, help: "guide field gradient |grad |B_a||" },
    KeySpec { key: "guide.bar_current", quantity: Quantity::Current, help: "guide bar current I_a (with guide.bar_spacing)" },
    KeySpec { key: "guide.bar_spacing", quantity: Quantity::Length, help: "distance d between neighbouring bars" },
    KeySpec { key: "odt.power", quantity: Quantity::Power, help: "total beam power P0" },
    KeySpec { key: "odt.waist", quantity: Quantity::Length, help: "focal waist w0" },
    KeySpec { key: "odt.wavelength", quantity: Quantity::Length, help: "trap laser wavelength (sets z_R)" },
    KeySpec { key: "odt.depth", quantity: Quantity::Energy, help: "trap depth |U_d(0)|" },
    KeySpec { key: "odt.kappa", quantity: Quantity::Dimensionless, help: "coupling kappa in Hz m^2/W (negative); alternative to odt.depth" },
    KeySpec { key: "loop.radius", quantity: Quantity::Length, help: "deceleration loop radius R" },
    KeySpec { key: "loop.current", quantity: Quantity::Current, help: "fixed loop current; default is barrier-matched to beam.v_b" },
    KeySpec { key: "beam.v_b", quantity: Quantity::Velocity, help: "beam velocity" },
    KeySpec { key: "beam.T_r", quantity: Quantity::Temperature, help: "radial beam temperature" },
    KeySpec { key: "beam.T_z", quantity: Quantity::Temperature, help: "axial beam temperature" },
    KeySpec { key: "beam.flux", quantity: Quantity::Rate, help: "incoming flux Phi0, only for loading-rate reports" },
    KeySpec { key: "beam.z_start", quantity: Quantity::Length, help: "initial axial position (default -0.05 m)" },
    KeySpec { key: "sim.gravity", quantity: Quantity::Flag, help: "include gravity along -y (default false)" },
    KeySpec { key: "sim.recoil", quantity: Quantity::Flag, help: "add pump photon recoil kicks (default false)" },
    KeySpec { key: "sim.flux_weighted", quantity: Quantity::Flag, help: "weight initial v_z by v_z (default false)" },
];

fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

/// Raw `key = value` settings, before unit conversion and validation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    entries: BTreeMap<String, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse the flat config format. `#` starts a comment; later keys win.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut settings = Settings::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            settings.set(key.trim(), value.trim())?;
        }
        Ok(settings)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if key_spec(key).is_none() {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            reason: format!("override `{assignment}` is not of the form key=value"),
        })?;
        self.set(key.trim(), value.trim())
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn quantity(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let spec = key_spec(key).expect("key table covers every lookup");
        self.get(key)
            .map(|v| parse_quantity(v, spec.quantity).map_err(|e| ConfigError::invalid(key, e)))
            .transpose()
    }

    fn required(&self, key: &str) -> Result<f64, ConfigError> {
        self.quantity(key)?
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    fn flag(&self, key: &str) -> Result<bool, ConfigError> {
        self.get(key)
            .map(|v| parse_flag(v).map_err(|e| ConfigError::invalid(key, e)))
            .transpose()
            .map(|v| v.unwrap_or(false))
    }
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::invalid(key, format!("must be positive, got {v}")))
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Resolve and validate raw settings into a [`Configuration`].
pub fn build_configuration(raw: &Settings) -> Result<Configuration, ConfigError> {
    let defaults = Species::chromium52();
    let species = Species {
        mass: positive("species.mass", raw.quantity("species.mass")?.unwrap_or(defaults.mass))?,
        g_j: positive("species.g_j", raw.quantity("species.g_j")?.unwrap_or(defaults.g_j))?,
        mj_max: match raw.quantity("species.mj_max")? {
            None => defaults.mj_max,
            Some(v) if v >= 1.0 && v.fract() == 0.0 && v <= 16.0 => v as i32,
            Some(v) => {
                return Err(ConfigError::invalid("species.mj_max", format!("must be a positive integer, got {v}")))
            }
        },
        pump_wavelength: positive(
            "species.pump_wavelength",
            raw.quantity("species.pump_wavelength")?.unwrap_or(defaults.pump_wavelength),
        )?,
    };

    let bar_current = raw.quantity("guide.bar_current")?;
    let bar_spacing = raw.quantity("guide.bar_spacing")?;
    let bars = match (bar_current, bar_spacing) {
        (Some(i), Some(d)) => Some((positive("guide.bar_current", i)?, positive("guide.bar_spacing", d)?)),
        (None, None) => None,
        (Some(_), None) => return Err(ConfigError::MissingKey("guide.bar_spacing".into())),
        (None, Some(_)) => return Err(ConfigError::MissingKey("guide.bar_current".into())),
    };
    let gradient = match (raw.quantity("guide.gradient")?, bars) {
        (Some(g), None) => positive("guide.gradient", g)?,
        (None, Some((i, d))) => GuideConfig::gradient_from_bars(i, d),
        (Some(g), Some((i, d))) => {
            let from_bars = GuideConfig::gradient_from_bars(i, d);
            if !close(g, from_bars, 1e-9) {
                return Err(ConfigError::Inconsistent(format!(
                    "guide.gradient = {g} T/m but the bars give {from_bars} T/m"
                )));
            }
            positive("guide.gradient", g)?
        }
        (None, None) => return Err(ConfigError::MissingKey("guide.gradient".into())),
    };
    let guide = GuideConfig { gradient, bars };

    let power = positive("odt.power", raw.required("odt.power")?)?;
    let waist = positive("odt.waist", raw.required("odt.waist")?)?;
    let wavelength = positive("odt.wavelength", raw.required("odt.wavelength")?)?;
    let (depth, kappa) = match (raw.quantity("odt.depth")?, raw.quantity("odt.kappa")?) {
        (Some(depth), None) => {
            let depth = positive("odt.depth", depth)?;
            (depth, kappa_from_depth(depth, power, waist)?)
        }
        (None, Some(kappa)) => {
            if !(kappa < 0.0 && kappa.is_finite()) {
                return Err(ConfigError::invalid("odt.kappa", "must be negative (attractive trap)"));
            }
            (-kappa * H * power / (waist * waist), kappa)
        }
        (Some(depth), Some(kappa)) => {
            let depth = positive("odt.depth", depth)?;
            let expected = kappa_from_depth(depth, power, waist)?;
            if !close(kappa, expected, 1e-9) {
                return Err(ConfigError::Inconsistent(format!(
                    "odt.kappa = {kappa} disagrees with odt.depth (expects {expected})"
                )));
            }
            (depth, expected)
        }
        (None, None) => return Err(ConfigError::MissingKey("odt.depth".into())),
    };
    let odt = OdtConfig {
        power,
        waist,
        wavelength,
        depth,
        rayleigh: std::f64::consts::PI * waist * waist / wavelength,
        kappa,
    };

    let v_b = positive("beam.v_b", raw.required("beam.v_b")?)?;
    let t_r = positive("beam.T_r", raw.required("beam.T_r")?)?;
    let t_z = positive("beam.T_z", raw.required("beam.T_z")?)?;
    let flux = raw.quantity("beam.flux")?.map(|f| positive("beam.flux", f)).transpose()?;
    let z_start = raw.quantity("beam.z_start")?.unwrap_or(-0.05);
    if !(z_start < 0.0 && z_start.is_finite()) {
        return Err(ConfigError::invalid("beam.z_start", format!("must be negative, got {z_start}")));
    }
    let beam = BeamConfig {
        v_b,
        t_r,
        t_z,
        flux,
        z_start,
        beta: radial_scale(t_r, gradient, &species),
    };

    let radius = positive("loop.radius", raw.required("loop.radius")?)?;
    let coil = match raw.quantity("loop.current")? {
        Some(i) if i >= 0.0 && i.is_finite() => LoopConfig { radius, current: i, source: CurrentSource::Fixed },
        Some(i) => return Err(ConfigError::invalid("loop.current", format!("must be non-negative, got {i}"))),
        None => LoopConfig {
            radius,
            current: barrier_current(0.5 * species.mass * v_b * v_b, depth, radius, &species),
            source: CurrentSource::BarrierMatched,
        },
    };

    // The start plane has to sit in the pure guide: the loop field there must
    // be negligible against the guide field at the thermal radius.
    let loop_far = MU_0 * coil.current * radius * radius
        / (2.0 * (radius * radius + z_start * z_start).powf(1.5));
    if loop_far >= 1e-3 * gradient * beam.beta {
        return Err(ConfigError::invalid(
            "beam.z_start",
            format!("loop field {loop_far:e} T at the start plane is not negligible against the guide"),
        ));
    }

    Ok(Configuration {
        species,
        guide,
        odt,
        coil,
        beam,
        options: SimOptions {
            gravity: raw.flag("sim.gravity")?,
            recoil: raw.flag("sim.recoil")?,
            flux_weighted: raw.flag("sim.flux_weighted")?,
        },
    })
}

/// Settings used throughout the reference scenario: 300 W, 30 um waist at
/// 1070 nm giving a 3.6 mK deep trap, 350 G/cm guide, 0.5 mm loop.
pub const REFERENCE_SETTINGS: &str = "\
odt.power = 300 W
odt.wavelength = 1070 nm
odt.waist = 30 um
odt.depth = 3.6 mK
guide.gradient = 350 G/cm
loop.radius = 0.5 mm
beam.v_b = 5 m/s
beam.T_r = 1 mK
beam.T_z = 1 mK
beam.z_start = -0.05 m
";

impl Configuration {
    pub fn reference_defaults() -> Self {
        let settings = Settings::parse(REFERENCE_SETTINGS).expect("built-in settings parse");
        build_configuration(&settings).expect("built-in settings are valid")
    }

    /// Settings that rebuild this configuration exactly. Values are written
    /// in SI with shortest round-trip formatting.
    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        let mut put = |key: &str, value: String| {
            s.entries.insert(key.to_string(), value);
        };
        let q = |v: f64, key: &str| {
            let unit = key_spec(key).map(|k| k.quantity.si_unit()).unwrap_or("");
            if unit.is_empty() { format!("{v:e}") } else { format!("{v:e} {unit}") }
        };
        put("species.mass", q(self.species.mass, "species.mass"));
        put("species.g_j", q(self.species.g_j, "species.g_j"));
        put("species.mj_max", self.species.mj_max.to_string());
        put("species.pump_wavelength", q(self.species.pump_wavelength, "species.pump_wavelength"));
        put("guide.gradient", q(self.guide.gradient, "guide.gradient"));
        if let Some((i, d)) = self.guide.bars {
            put("guide.bar_current", q(i, "guide.bar_current"));
            put("guide.bar_spacing", q(d, "guide.bar_spacing"));
        }
        put("odt.power", q(self.odt.power, "odt.power"));
        put("odt.waist", q(self.odt.waist, "odt.waist"));
        put("odt.wavelength", q(self.odt.wavelength, "odt.wavelength"));
        put("odt.depth", q(self.odt.depth, "odt.depth"));
        put("loop.radius", q(self.coil.radius, "loop.radius"));
        if self.coil.source == CurrentSource::Fixed {
            put("loop.current", q(self.coil.current, "loop.current"));
        }
        put("beam.v_b", q(self.beam.v_b, "beam.v_b"));
        put("beam.T_r", q(self.beam.t_r, "beam.T_r"));
        put("beam.T_z", q(self.beam.t_z, "beam.T_z"));
        if let Some(f) = self.beam.flux {
            put("beam.flux", q(f, "beam.flux"));
        }
        put("beam.z_start", q(self.beam.z_start, "beam.z_start"));
        put("sim.gravity", self.options.gravity.to_string());
        put("sim.recoil", self.options.recoil.to_string());
        put("sim.flux_weighted", self.options.flux_weighted.to_string());
        s
    }

    /// Canonical config text, including derived values as comments.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.to_settings().entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "# derived: loop.current = {:e} A ({:?})", self.coil.current, self.coil.source);
        let _ = writeln!(out, "# derived: odt.rayleigh = {:e} m", self.odt.rayleigh);
        let _ = writeln!(out, "# derived: odt.kappa = {:e} Hz m^2/W", self.odt.kappa);
        let _ = writeln!(out, "# derived: beam.beta = {:e} m", self.beam.beta);
        out
    }

    /// Short hash of the canonical settings.
    pub fn fingerprint(&self) -> String {
        let mut text = String::new();
        for (k, v) in &self.to_settings().entries {
            let _ = writeln!(text, "{k}={v}");
        }
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Copy with a different beam velocity; a barrier-matched current follows it.
    pub fn with_beam_velocity(&self, v_b: f64) -> Result<Self, ConfigError> {
        let mut s = self.to_settings();
        s.set("beam.v_b", &format!("{v_b:e}"))?;
        build_configuration(&s)
    }

    pub fn with_override(&self, key: &str, value: &str) -> Result<Self, ConfigError> {
        let mut s = self.to_settings();
        s.set(key, value)?;
        build_configuration(&s)
    }
}

impl std::fmt::Display for Settings {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
