//! Unit-suffixed scalar parsing for configuration values.
//!
//! Values are written as a number followed by an optional unit, with or
//! without a space (`30 um`, `0.125mK`, `-0.05 m`). A bare number is taken
//! to be in SI units for its quantity kind.

use super::constants::K_B;
use super::constants::AMU;

/// Physical dimension of a configuration value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Length,
    Velocity,
    Temperature,
    /// Energy; temperatures are accepted and multiplied by k_B.
    Energy,
    Power,
    Current,
    Gradient,
    Mass,
    Rate,
    Dimensionless,
    Flag,
}

impl Quantity {
    /// SI unit written when serializing.
    pub fn si_unit(self) -> &'static str {
        match self {
            Quantity::Length => "m",
            Quantity::Velocity => "m/s",
            Quantity::Temperature => "K",
            Quantity::Energy => "J",
            Quantity::Power => "W",
            Quantity::Current => "A",
            Quantity::Gradient => "T/m",
            Quantity::Mass => "kg",
            Quantity::Rate => "/s",
            Quantity::Dimensionless | Quantity::Flag => "",
        }
    }

    /// Accepted suffixes, for help text.
    pub fn accepted_units(self) -> &'static str {
        match self {
            Quantity::Length => "m, cm, mm, um, nm",
            Quantity::Velocity => "m/s, cm/s, mm/s",
            Quantity::Temperature => "K, mK, uK, nK",
            Quantity::Energy => "J, or a temperature (K, mK, uK) times k_B",
            Quantity::Power => "W, mW, kW",
            Quantity::Current => "A, mA, kA",
            Quantity::Gradient => "T/m, G/cm, mT/m",
            Quantity::Mass => "kg, u",
            Quantity::Rate => "/s, 1/s, Hz",
            Quantity::Dimensionless => "(none)",
            Quantity::Flag => "true | false",
        }
    }

    fn scale(self, unit: &str) -> Option<f64> {
        let unit = normalize_micro(unit);
        let s = match (self, unit.as_str()) {
            (_, "") => 1.0,
            (Quantity::Length, "m") => 1.0,
            (Quantity::Length, "cm") => 1e-2,
            (Quantity::Length, "mm") => 1e-3,
            (Quantity::Length, "um") => 1e-6,
            (Quantity::Length, "nm") => 1e-9,
            (Quantity::Velocity, "m/s") => 1.0,
            (Quantity::Velocity, "cm/s") => 1e-2,
            (Quantity::Velocity, "mm/s") => 1e-3,
            (Quantity::Temperature, "K") => 1.0,
            (Quantity::Temperature, "mK") => 1e-3,
            (Quantity::Temperature, "uK") => 1e-6,
            (Quantity::Temperature, "nK") => 1e-9,
            (Quantity::Energy, "J") => 1.0,
            (Quantity::Energy, "K") => K_B,
            (Quantity::Energy, "mK") => 1e-3 * K_B,
            (Quantity::Energy, "uK") => 1e-6 * K_B,
            (Quantity::Power, "W") => 1.0,
            (Quantity::Power, "mW") => 1e-3,
            (Quantity::Power, "kW") => 1e3,
            (Quantity::Current, "A") => 1.0,
            (Quantity::Current, "mA") => 1e-3,
            (Quantity::Current, "kA") => 1e3,
            (Quantity::Gradient, "T/m") => 1.0,
            (Quantity::Gradient, "G/cm") => 1e-2,
            (Quantity::Gradient, "mT/m") => 1e-3,
            (Quantity::Mass, "kg") => 1.0,
            (Quantity::Mass, "u") | (Quantity::Mass, "amu") => AMU,
            (Quantity::Rate, "/s") | (Quantity::Rate, "1/s") | (Quantity::Rate, "Hz") => 1.0,
            _ => return None,
        };
        Some(s)
    }
}

fn normalize_micro(unit: &str) -> String {
    unit.trim().replace(['µ', 'μ'], "u")
}

/// Parse `text` as a quantity of the given kind, returning the SI value.
pub fn parse_quantity(text: &str, kind: Quantity) -> Result<f64, String> {
    let text = text.trim();
    if text.is_empty() {
        return Err("empty value".into());
    }
    let (number, unit) = split_number(text);
    let value: f64 = number
        .parse()
        .map_err(|_| format!("`{text}` does not start with a number"))?;
    if !value.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    let scale = kind
        .scale(unit)
        .ok_or_else(|| format!("unit `{}` not accepted here (use {})", unit.trim(), kind.accepted_units()))?;
    Ok(value * scale)
}

pub fn parse_flag(text: &str) -> Result<bool, String> {
    match text.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

// Longest prefix made of number characters. `e`/`E` only counts when it is
// followed by a digit or sign, so a unit never gets swallowed.
fn split_number(text: &str) -> (&str, &str) {
    let bytes = text.as_bytes();
    let mut end = 0;
    while end < bytes.len() {
        let c = bytes[end];
        let take = match c {
            b'0'..=b'9' | b'.' => true,
            b'+' | b'-' => end == 0 || matches!(bytes[end - 1], b'e' | b'E'),
            b'e' | b'E' => bytes
                .get(end + 1)
                .is_some_and(|n| n.is_ascii_digit() || *n == b'-' || *n == b'+'),
            _ => false,
        };
        if !take {
            break;
        }
        end += 1;
    }
    (&text[..end], &text[end..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(parse_quantity("30 um", Quantity::Length).unwrap(), 30.0 * 1e-6);
        assert_eq!(parse_quantity("30µm", Quantity::Length).unwrap(), 30.0 * 1e-6);
        assert_eq!(parse_quantity("350 G/cm", Quantity::Gradient).unwrap(), 3.5);
        assert_eq!(parse_quantity("-0.05 m", Quantity::Length).unwrap(), -0.05);
        assert_eq!(parse_quantity("0.125mK", Quantity::Temperature).unwrap(), 0.125e-3);
        assert_eq!(parse_quantity("1.14e9 /s", Quantity::Rate).unwrap(), 1.14e9);
        assert_eq!(parse_quantity("5", Quantity::Velocity).unwrap(), 5.0);
        let e = parse_quantity("3.6 mK", Quantity::Energy).unwrap();
        assert!((e / (3.6e-3 * K_B) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_wrong_unit() {
        assert!(parse_quantity("3 mK", Quantity::Length).is_err());
        assert!(parse_quantity("m", Quantity::Length).is_err());
        assert!(parse_quantity("", Quantity::Length).is_err());
    }

    #[test]
    fn exponent_vs_unit() {
        assert_eq!(split_number("1e-3 m"), ("1e-3", " m"));
        assert_eq!(split_number("2E5"), ("2E5", ""));
        assert_eq!(split_number("4 eV"), ("4", " eV"));
    }
}
