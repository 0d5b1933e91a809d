//! Bundled test environments.
//!
//! The three simulation maps and the courtyard are reconstructions with the
//! stated circumferences and a similar character (symmetric, curved,
//! apartment-like, courtyard-like). They are not survey data.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::MapError;
use crate::loop_closure::LoopClosureConfig;
use crate::polygon::MapPolygon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BundledMap {
    /// 10 m × 10 m square.
    Square,
    /// Point-symmetric room with two notches, U = 77 m.
    Symmetric,
    /// Smooth blob, U = 52 m.
    Curved,
    /// Rectilinear apartment outline, U = 100 m.
    Apartment,
    /// Irregular lawn with slanted edges, U = 106.8 m.
    Courtyard,
}

impl BundledMap {
    pub const ALL: [BundledMap; 5] = [
        BundledMap::Square,
        BundledMap::Symmetric,
        BundledMap::Curved,
        BundledMap::Apartment,
        BundledMap::Courtyard,
    ];

    /// The three simulation maps.
    pub const SIMULATION: [BundledMap; 3] = [BundledMap::Symmetric, BundledMap::Curved, BundledMap::Apartment];

    pub fn name(self) -> &'static str {
        match self {
            BundledMap::Square => "square",
            BundledMap::Symmetric => "symmetric",
            BundledMap::Curved => "curved",
            BundledMap::Apartment => "apartment",
            BundledMap::Courtyard => "courtyard",
        }
    }

    pub fn circumference(self) -> f64 {
        match self {
            BundledMap::Square => 40.0,
            BundledMap::Symmetric => 77.0,
            BundledMap::Curved => 52.0,
            BundledMap::Apartment => 100.0,
            BundledMap::Courtyard => 106.8,
        }
    }

    pub fn polygon(self) -> MapPolygon {
        let raw: Vec<(f64, f64)> = match self {
            BundledMap::Square => return MapPolygon::rectangle(0.0, 0.0, 10.0, 10.0).unwrap(),
            BundledMap::Symmetric => vec![
                (0.0, 0.0),
                (8.0, 0.0),
                (8.0, 2.0),
                (10.0, 2.0),
                (10.0, 0.0),
                (20.0, 0.0),
                (20.0, 10.0),
                (12.0, 10.0),
                (12.0, 8.0),
                (10.0, 8.0),
                (10.0, 10.0),
                (0.0, 10.0),
            ],
            BundledMap::Curved => {
                let n = 120;
                (0..n)
                    .map(|k| {
                        let t = TAU * k as f64 / n as f64;
                        let r = 1.0 + 0.25 * (2.0 * t).cos() + 0.15 * (3.0 * t + 0.7).sin();
                        (r * t.cos(), r * t.sin())
                    })
                    .collect()
            }
            BundledMap::Apartment => vec![
                (0.0, 0.0),
                (14.0, 0.0),
                (14.0, 6.0),
                (20.0, 6.0),
                (20.0, 16.0),
                (11.0, 16.0),
                (11.0, 12.0),
                (6.0, 12.0),
                (6.0, 16.0),
                (0.0, 16.0),
            ],
            BundledMap::Courtyard => vec![
                (0.0, 0.0),
                (22.0, 0.0),
                (26.0, 5.0),
                (26.0, 18.0),
                (15.0, 18.0),
                (15.0, 23.0),
                (4.0, 23.0),
                (0.0, 14.0),
            ],
        };
        let poly = MapPolygon::new(raw.into_iter().map(|(x, y)| Point2::new(x, y)).collect())
            .expect("bundled polygons are simple");
        let factor = self.circumference() / poly.perimeter();
        poly.scaled(factor)
    }

    /// Hand-tuned detection parameters: `2·L_NH` a little above `U/2`,
    /// `c_min` by map complexity, the feasibility check only where the map
    /// repeats itself within a lap. The square repeats every quarter lap, so
    /// its `φ_cycle` lies above `π/2`.
    pub fn hand_crafted(self) -> LoopClosureConfig {
        match self {
            BundledMap::Square => LoopClosureConfig::new(12.0, 0.5, 2.0),
            BundledMap::Symmetric => LoopClosureConfig::new(20.0, 1.0, FRAC_PI_2),
            BundledMap::Curved => LoopClosureConfig::new(15.0, 0.5, 0.0),
            BundledMap::Apartment => LoopClosureConfig::new(30.0, 0.3, 0.0),
            BundledMap::Courtyard => LoopClosureConfig::new(30.0, 0.3, 0.0),
        }
    }
}

impl fmt::Display for BundledMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BundledMap {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BundledMap::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| MapError::InvalidConfig(format!("unknown map '{s}'")))
    }
}
