//! Incident records, crime-type homogenization, CSV I/O and synthetic streams.

mod csvio;
mod synth;
mod taxonomy;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csvio::{parse_incidents, read_incidents, write_incidents, ColumnSpec, IngestReport};
pub use synth::{generate_synthetic, BoundingBox, Cluster, SynthConfig};
pub use taxonomy::{homogenize, Taxonomy};

/// The homogenized crime categories. Declaration order is the channel order
/// of every incident map; `AllCrimes` is the aggregate of the other ten.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CrimeType {
    Homicide,
    Robbery,
    Arson,
    Vice,
    MotorVehicle,
    Narcotics,
    Assault,
    Theft,
    Burglary,
    Other,
    AllCrimes,
}

impl CrimeType {
    pub const COUNT: usize = 11;
    pub const CONCRETE: usize = 10;

    pub const ALL: [CrimeType; 11] = [
        CrimeType::Homicide,
        CrimeType::Robbery,
        CrimeType::Arson,
        CrimeType::Vice,
        CrimeType::MotorVehicle,
        CrimeType::Narcotics,
        CrimeType::Assault,
        CrimeType::Theft,
        CrimeType::Burglary,
        CrimeType::Other,
        CrimeType::AllCrimes,
    ];

    pub fn channel(self) -> usize {
        self as usize
    }

    pub fn from_channel(ch: usize) -> Option<CrimeType> {
        CrimeType::ALL.get(ch).copied()
    }

    pub fn is_concrete(self) -> bool {
        self != CrimeType::AllCrimes
    }

    pub fn name(self) -> &'static str {
        match self {
            CrimeType::Homicide => "Homicide",
            CrimeType::Robbery => "Robbery",
            CrimeType::Arson => "Arson",
            CrimeType::Vice => "Vice",
            CrimeType::MotorVehicle => "MotorVehicle",
            CrimeType::Narcotics => "Narcotics",
            CrimeType::Assault => "Assault",
            CrimeType::Theft => "Theft",
            CrimeType::Burglary => "Burglary",
            CrimeType::Other => "Other",
            CrimeType::AllCrimes => "AllCrimes",
        }
    }
}

impl fmt::Display for CrimeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CrimeType {
    type Err = Error;

    /// Case-insensitive; spaces, underscores and hyphens are ignored
    /// (`"motor vehicle"`, `"All_Crimes"`).
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        CrimeType::ALL
            .into_iter()
            .find(|t| t.name().to_lowercase() == key)
            .ok_or_else(|| Error::config(format!("unknown crime type `{s}`")))
    }
}

/// One point event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    /// Naive local time; days start at local midnight.
    pub timestamp: NaiveDateTime,
    pub lon: f64,
    pub lat: f64,
    pub crime_type: CrimeType,
}

impl Incident {
    pub fn new(timestamp: NaiveDateTime, lon: f64, lat: f64, crime_type: CrimeType) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::data(format!("coordinates out of range: lon {lon}, lat {lat}")));
        }
        if !crime_type.is_concrete() {
            return Err(Error::data("an incident cannot have the aggregate type AllCrimes"));
        }
        Ok(Incident { timestamp, lon, lat, crime_type })
    }
}
