//! Seeded synthetic incident streams with planted spatial clusters.
//!
//! Each cluster draws a daily count from
//! `Poisson(intensity × weekly(t) × boost(t))`, where the self-excitation boost
//! is `1 + η · E(t) / (intensity · S)`, `E(t) = Σ_{s<t} n_s e^{-(t-s)/τ}` and
//! `S = Σ_{k≥1} e^{-k/τ}`. With `η < 1` the stream is stationary with mean
//! daily count `intensity / (1 - η)`. Locations are Gaussian around the
//! cluster centre, clamped to the bounding box.

use chrono::{Datelike, Duration, NaiveDate, NaiveTime};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{CrimeType, Incident};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl BoundingBox {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lon_min, self.lon_max, self.lat_min, self.lat_max].iter().all(|v| v.is_finite());
        if !finite || self.lon_max <= self.lon_min || self.lat_max <= self.lat_min {
            return Err(Error::config(format!("degenerate bounding box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.lon_max - self.lon_min
    }

    pub fn height(&self) -> f64 {
        self.lat_max - self.lat_min
    }

    /// Roughly central Philadelphia.
    pub fn philadelphia() -> Self {
        BoundingBox { lon_min: -75.28, lon_max: -74.96, lat_min: 39.87, lat_max: 40.14 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub lon: f64,
    pub lat: f64,
    /// Standard deviation of the location scatter, in degrees.
    pub sigma: f64,
    /// Baseline events per day.
    pub intensity: f64,
    /// Per-type weights over the ten concrete types; `None` uses the global mixture.
    pub type_weights: Option<[f64; 10]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub bbox: BoundingBox,
    pub clusters: Vec<Cluster>,
    /// Relative amplitude `A` of `1 + A cos(2π (weekday - 4) / 7)`; peaks on Fridays.
    pub weekly_amplitude: f64,
    /// Branching ratio η of the self-excitation, in `[0, 1)`.
    pub excitation: f64,
    /// Decay constant τ in days.
    pub excitation_decay_days: f64,
    /// Uniformly scattered events per day.
    pub background_rate: f64,
    /// Global mixture over the ten concrete types.
    pub type_weights: [f64; 10],
    pub start: NaiveDate,
    pub days: u32,
    pub seed: u64,
}

/// The three types given dedicated clusters by [`SynthConfig::planted`].
pub const PLANTED_TYPES: [CrimeType; 3] = [CrimeType::Theft, CrimeType::Assault, CrimeType::Burglary];

fn dominant_mix(ty: CrimeType, share: f64, base: &[f64; 10]) -> [f64; 10] {
    let rest: f64 = base.iter().enumerate().filter(|(i, _)| *i != ty.channel()).map(|(_, w)| w).sum();
    let mut w = [0.0; 10];
    for (i, b) in base.iter().enumerate() {
        w[i] = if i == ty.channel() { share } else { (1.0 - share) * b / rest };
    }
    w
}

impl SynthConfig {
    /// Global type mixture loosely following big-city proportions.
    pub const DEFAULT_TYPE_WEIGHTS: [f64; 10] = [0.005, 0.05, 0.01, 0.03, 0.08, 0.07, 0.18, 0.3, 0.1, 0.175];

    /// A seeded layout of `clusters` planted clusters inside `bbox`.
    ///
    /// Clusters alternate between the [`PLANTED_TYPES`]; every third cluster is
    /// a tight high-intensity core, the rest are broader and weaker.
    pub fn planted(bbox: BoundingBox, clusters: usize, days: u32, seed: u64) -> Self {
        let mut r = hotspot_nn::init::rng(hotspot_nn::init::mix_seed(seed, 0x5EED));
        let base = SynthConfig::DEFAULT_TYPE_WEIGHTS;
        let layout = (0..clusters)
            .map(|k| {
                let core = k % 3 == 0;
                let ty = PLANTED_TYPES[k % PLANTED_TYPES.len()];
                let scale = bbox.width().min(bbox.height());
                Cluster {
                    lon: bbox.lon_min + bbox.width() * r.random_range(0.1..0.9),
                    lat: bbox.lat_min + bbox.height() * r.random_range(0.1..0.9),
                    sigma: scale * if core { r.random_range(0.008..0.015) } else { r.random_range(0.03..0.06) },
                    intensity: if core { r.random_range(2.0..4.0) } else { r.random_range(0.4..1.2) },
                    type_weights: Some(dominant_mix(ty, 0.7, &base)),
                }
            })
            .collect();
        SynthConfig {
            bbox,
            clusters: layout,
            weekly_amplitude: 0.3,
            excitation: 0.3,
            excitation_decay_days: 5.0,
            background_rate: 1.0,
            type_weights: base,
            start: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            days,
            seed,
        }
    }

    /// The benchmark stream: 4 years (3 train + 1 test) over a Philadelphia-sized box.
    pub fn benchmark(seed: u64) -> Self {
        SynthConfig::planted(BoundingBox::philadelphia(), 12, 1460, seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        let rates_ok = self.clusters.iter().all(|c| c.intensity >= 0.0 && c.sigma >= 0.0)
            && self.background_rate >= 0.0
            && self.type_weights.iter().all(|w| *w >= 0.0);
        if !rates_ok {
            return Err(Error::config("synthetic rates and weights must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.excitation) {
            return Err(Error::config(format!("excitation must be in [0, 1), got {}", self.excitation)));
        }
        if self.excitation_decay_days <= 0.0 {
            return Err(Error::config("excitation decay must be positive"));
        }
        if !(0.0..1.0).contains(&self.weekly_amplitude) {
            return Err(Error::config("weekly amplitude must be in [0, 1)"));
        }
        Ok(())
    }

    fn weekly_factor(&self, date: NaiveDate) -> f64 {
        let dow = date.weekday().num_days_from_monday() as f64;
        1.0 + self.weekly_amplitude * (2.0 * std::f64::consts::PI * (dow - 4.0) / 7.0).cos()
    }
}

fn pick_type(weights: &[f64; 10], r: &mut impl Rng) -> CrimeType {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return CrimeType::Other;
    }
    let mut u = r.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return CrimeType::ALL[i];
        }
        u -= w;
    }
    CrimeType::Other
}

fn poisson(rate: f64, r: &mut impl Rng) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map(|d| d.sample(r) as u64).unwrap_or(0)
}

fn timestamp(date: NaiveDate, r: &mut impl Rng) -> chrono::NaiveDateTime {
    let secs = r.random_range(0..86_400);
    date.and_time(NaiveTime::MIN) + Duration::seconds(secs)
}

/// Generate the configured stream, sorted by time. Identical configs give identical output.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<Incident>> {
    config.validate()?;
    let mut r = hotspot_nn::init::rng(config.seed);
    let b = config.bbox;
    let decay = (-1.0 / config.excitation_decay_days).exp();
    let norm = decay / (1.0 - decay);
    let mut excitation = vec![0.0; config.clusters.len()];
    let mut out = Vec::new();
    for day in 0..config.days {
        let date = config.start + Duration::days(day.into());
        let weekly = config.weekly_factor(date);
        let mut today = Vec::new();
        for (k, c) in config.clusters.iter().enumerate() {
            let boost = if c.intensity > 0.0 { 1.0 + config.excitation * excitation[k] / (c.intensity * norm) } else { 1.0 };
            let n = poisson(c.intensity * weekly * boost, &mut r);
            excitation[k] = decay * (excitation[k] + n as f64);
            let scatter = Normal::new(0.0, c.sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
            let weights = c.type_weights.as_ref().unwrap_or(&config.type_weights);
            for _ in 0..n {
                let lon = (c.lon + scatter.sample(&mut r)).clamp(b.lon_min, b.lon_max);
                let lat = (c.lat + scatter.sample(&mut r)).clamp(b.lat_min, b.lat_max);
                today.push(Incident { timestamp: timestamp(date, &mut r), lon, lat, crime_type: pick_type(weights, &mut r) });
            }
        }
        for _ in 0..poisson(config.background_rate * weekly, &mut r) {
            let lon = r.random_range(b.lon_min..=b.lon_max);
            let lat = r.random_range(b.lat_min..=b.lat_max);
            today.push(Incident {
                timestamp: timestamp(date, &mut r),
                lon,
                lat,
                crime_type: pick_type(&config.type_weights, &mut r),
            });
        }
        today.sort_by_key(|i| i.timestamp);
        out.extend(today);
    }
    Ok(out)
}
