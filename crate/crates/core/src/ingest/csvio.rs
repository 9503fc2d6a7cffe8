use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{homogenize, CrimeType, Incident, Taxonomy};
use crate::error::{Error, Result};

/// Which CSV columns hold which incident fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    /// Report time is preferred over occurrence time when a source has both.
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    pub category: String,
    /// strftime-style pattern tried after the ISO-8601 forms.
    pub time_format: Option<String>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            timestamp: "timestamp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            category: "category".into(),
            time_format: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Raw label → (canonical type, rows kept with that label).
    pub labels: BTreeMap<String, (CrimeType, usize)>,
}

const ISO_FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];

pub(crate) fn parse_timestamp(raw: &str, fallback: Option<&str>) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    for f in ISO_FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, f) {
            return Some(t);
        }
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        // keep the wall-clock reading, no zone conversion
        return Some(t.naive_local());
    }
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0);
    }
    let f = fallback?;
    NaiveDateTime::parse_from_str(raw, f)
        .ok()
        .or_else(|| NaiveDate::parse_from_str(raw, f).ok().and_then(|d| d.and_hms_opt(0, 0, 0)))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::data(format!("missing column `{name}`")))
}

/// Parse incidents from a headered CSV. Rows with unparseable coordinates or
/// timestamps are dropped and counted; the result is sorted by time (stable).
pub fn parse_incidents(source: impl Read, columns: &ColumnSpec, taxonomy: &Taxonomy) -> Result<(Vec<Incident>, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::data("empty file"));
    }
    let ts_col = column(&headers, &columns.timestamp)?;
    let lat_col = column(&headers, &columns.lat)?;
    let lon_col = column(&headers, &columns.lon)?;
    let cat_col = column(&headers, &columns.category)?;

    let mut report = IngestReport::default();
    let mut incidents = Vec::new();
    for record in reader.records() {
        let record = record?;
        report.rows += 1;
        let field = |i: usize| record.get(i).unwrap_or("");
        let parsed = (|| {
            let ts = parse_timestamp(field(ts_col), columns.time_format.as_deref())?;
            let lat: f64 = field(lat_col).trim().parse().ok()?;
            let lon: f64 = field(lon_col).trim().parse().ok()?;
            let raw = field(cat_col).trim().to_string();
            let ty = homogenize(&raw, taxonomy);
            Incident::new(ts, lon, lat, ty).ok().map(|inc| (inc, raw))
        })();
        match parsed {
            Some((inc, raw)) => {
                report.labels.entry(raw).or_insert((inc.crime_type, 0)).1 += 1;
                incidents.push(inc);
            }
            None => report.dropped += 1,
        }
    }
    if report.rows == 0 {
        return Err(Error::data("empty file: header only"));
    }
    report.kept = incidents.len();
    incidents.sort_by_key(|i| i.timestamp);
    Ok((incidents, report))
}

/// Read a file written by [`write_incidents`] (or any CSV with the default column names).
pub fn read_incidents(source: impl Read) -> Result<Vec<Incident>> {
    Ok(parse_incidents(source, &ColumnSpec::default(), &Taxonomy::identity())?.0)
}

/// Write `timestamp,lat,lon,category` rows. Floats use shortest round-trip formatting.
pub fn write_incidents(sink: impl Write, incidents: &[Incident]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["timestamp", "lat", "lon", "category"])?;
    for inc in incidents {
        w.write_record([
            inc.timestamp.format("%Y-%m-%dT%H:%M:%S%.f").to_string(),
            inc.lat.to_string(),
            inc.lon.to_string(),
            inc.crime_type.name().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
