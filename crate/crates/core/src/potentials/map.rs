use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, FieldError};
use crate::fields::Vec3;
use crate::model::Configuration;

use super::potential;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MapPlane {
    XZ,
    YZ,
    XY,
}

impl MapPlane {
    pub fn axis_names(self) -> (&'static str, &'static str) {
        match self {
            MapPlane::XZ => ("x", "z"),
            MapPlane::YZ => ("y", "z"),
            MapPlane::XY => ("x", "y"),
        }
    }

    fn point(self, a: f64, b: f64) -> Vec3 {
        match self {
            MapPlane::XZ => Vec3::new(a, 0.0, b),
            MapPlane::YZ => Vec3::new(0.0, a, b),
            MapPlane::XY => Vec3::new(a, b, 0.0),
        }
    }
}

impl std::str::FromStr for MapPlane {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '–'], "").as_str() {
            "xz" => Ok(MapPlane::XZ),
            "yz" => Ok(MapPlane::YZ),
            "xy" => Ok(MapPlane::XY),
            other => Err(format!("unknown plane `{other}` (use xz, yz or xy)")),
        }
    }
}

/// Potential sampled on a rectangular grid of a coordinate plane.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialMap {
    pub plane: MapPlane,
    pub mj: i32,
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    /// Row-major over axis1: index `i1 * axis2.len() + i2`. NaN inside the
    /// conductor exclusion.
    pub values: Vec<f64>,
}

impl PotentialMap {
    pub fn at(&self, i1: usize, i2: usize) -> f64 {
        self.values[i1 * self.axis2.len() + i2]
    }

    /// `# axis1,axis2,U_joule` followed by one row per node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# axis1,axis2,U_joule")?;
        for (i1, a) in self.axis1.iter().enumerate() {
            for (i2, b) in self.axis2.iter().enumerate() {
                writeln!(out, "{a:e},{b:e},{:e}", self.at(i1, i2))?;
            }
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Tabulate U for level `mj` over `extent = [a1_min, a1_max, a2_min, a2_max]`.
pub fn potential_map(
    plane: MapPlane,
    extent: [f64; 4],
    resolution: (usize, usize),
    mj: i32,
    config: &Configuration,
) -> Result<PotentialMap, Error> {
    let (n1, n2) = resolution;
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidArgument(format!("map resolution must be positive, got {n1}x{n2}")));
    }
    if !extent.iter().all(|v| v.is_finite()) || extent[1] < extent[0] || extent[3] < extent[2] {
        return Err(Error::InvalidArgument(format!("bad map extent {extent:?}")));
    }
    if mj.abs() > config.species.mj_max {
        return Err(Error::InvalidArgument(format!("m_J = {mj} outside the ground-state manifold")));
    }
    let axis1 = linspace(extent[0], extent[1], n1);
    let axis2 = linspace(extent[2], extent[3], n2);
    let mut values = Vec::with_capacity(n1 * n2);
    for &a in &axis1 {
        for &b in &axis2 {
            values.push(match potential(&plane.point(a, b), mj, config) {
                Ok(s) => s.energy,
                Err(FieldError::WireProximity { .. }) => f64::NAN,
                Err(e) => return Err(e.into()),
            });
        }
    }
    Ok(PotentialMap { plane, mj, axis1, axis2, values })
}
