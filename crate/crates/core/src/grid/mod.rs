//! Daily multi-channel incident maps over a `p×p` grid, and the samples,
//! masks and splits built from them.
//!
//! Row 0 is the northern edge; column 0 the western edge. A "month" is
//! always 30 days.

mod io;
mod samples;

use std::collections::HashSet;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BoundingBox, CrimeType, Incident};

pub use io::{read_stack, write_stack, write_stack_csv, STACK_MAGIC, STACK_VERSION};
pub use samples::{build_samples, samples_at, split_train_test, Sample, Split};

pub const CHANNELS: usize = CrimeType::COUNT;
pub const ALL_CRIMES: usize = CrimeType::AllCrimes as usize;
pub const MONTH_DAYS: usize = 30;
pub const DEFAULT_RESOLUTIONS: [usize; 4] = [16, 24, 32, 40];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BoundingBox,
    /// Cells per side.
    pub p: usize,
}

impl GridSpec {
    pub fn new(bbox: BoundingBox, p: usize) -> Result<Self> {
        bbox.validate()?;
        if p == 0 {
            return Err(Error::config("grid needs at least one cell per side"));
        }
        Ok(GridSpec { bbox, p })
    }

    pub fn cells(&self) -> usize {
        self.p * self.p
    }

    /// `(row, col)` of the cell holding `(lon, lat)`, or `None` outside the box.
    ///
    /// Intervals are half-open except on the south and east edges, which
    /// belong to the last row and column.
    pub fn locate(&self, lon: f64, lat: f64) -> Option<(usize, usize)> {
        let b = &self.bbox;
        if !(b.lon_min..=b.lon_max).contains(&lon) || !(b.lat_min..=b.lat_max).contains(&lat) {
            return None;
        }
        let p = self.p as f64;
        let row = (((b.lat_max - lat) / b.height()) * p).floor() as usize;
        let col = (((lon - b.lon_min) / b.width()) * p).floor() as usize;
        Some((row.min(self.p - 1), col.min(self.p - 1)))
    }

    pub fn assign_cell(&self, incident: &Incident) -> Option<(usize, usize)> {
        self.locate(incident.lon, incident.lat)
    }
}

/// Day-indexed `p×p×11` count grids.
///
/// Layout is `[day][row][col][channel]`, row-major. The `AllCrimes` channel
/// always equals the sum of the ten concrete channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncidentMapStack {
    p: usize,
    days: usize,
    start: NaiveDate,
    counts: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub binned: usize,
    pub out_of_bounds: usize,
    pub out_of_range: usize,
}

impl IncidentMapStack {
    pub fn zeros(p: usize, days: usize, start: NaiveDate) -> Self {
        IncidentMapStack { p, days, start, counts: vec![0; days * p * p * CHANNELS] }
    }

    /// Build from raw counts; the `AllCrimes` channel is recomputed from the others.
    pub fn from_counts(p: usize, days: usize, start: NaiveDate, mut counts: Vec<u32>) -> Result<Self> {
        if counts.len() != days * p * p * CHANNELS {
            return Err(Error::data(format!(
                "{} counts cannot fill {days} days of {p}×{p}×{CHANNELS}",
                counts.len()
            )));
        }
        for px in counts.chunks_exact_mut(CHANNELS) {
            px[ALL_CRIMES] = px[..ALL_CRIMES].iter().sum();
        }
        Ok(IncidentMapStack { p, days, start, counts })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.start + Duration::days(day as i64)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    #[inline]
    pub fn index(&self, day: usize, row: usize, col: usize, channel: usize) -> usize {
        ((day * self.p + row) * self.p + col) * CHANNELS + channel
    }

    pub fn get(&self, day: usize, row: usize, col: usize, ty: CrimeType) -> u32 {
        self.counts[self.index(day, row, col, ty.channel())]
    }

    /// One day's `p×p×11` block.
    pub fn day(&self, day: usize) -> &[u32] {
        let n = self.p * self.p * CHANNELS;
        &self.counts[day * n..(day + 1) * n]
    }

    /// Per-cell totals of `ty` over days `[from, to)`, row-major.
    pub fn window_totals(&self, from: usize, to: usize, ty: CrimeType) -> Vec<u32> {
        let cells = self.p * self.p;
        let mut totals = vec![0u32; cells];
        for d in from..to {
            let block = self.day(d);
            for (cell, t) in totals.iter_mut().enumerate() {
                *t += block[cell * CHANNELS + ty.channel()];
            }
        }
        totals
    }

    /// True when every pixel's `AllCrimes` channel equals its concrete sum.
    pub fn all_crimes_consistent(&self) -> bool {
        self.counts
            .chunks_exact(CHANNELS)
            .all(|px| px[ALL_CRIMES] == px[..ALL_CRIMES].iter().sum::<u32>())
    }

    /// Shift the stack start by a whole number of days, keeping the counts.
    pub fn with_start(mut self, start: NaiveDate) -> Self {
        self.start = start;
        self
    }
}

/// Bin incidents into daily maps for `days` days starting at `start`.
pub fn aggregate(incidents: &[Incident], spec: &GridSpec, start: NaiveDate, days: usize) -> (IncidentMapStack, AggregateReport) {
    let mut stack = IncidentMapStack::zeros(spec.p, days, start);
    let mut report = AggregateReport::default();
    for inc in incidents {
        let day = (inc.timestamp.date() - start).num_days();
        if day < 0 || day >= days as i64 {
            report.out_of_range += 1;
            continue;
        }
        let Some((row, col)) = spec.assign_cell(inc) else {
            report.out_of_bounds += 1;
            continue;
        };
        let base = stack.index(day as usize, row, col, 0);
        stack.counts[base + inc.crime_type.channel()] += 1;
        stack.counts[base + ALL_CRIMES] += 1;
        report.binned += 1;
    }
    (stack, report)
}

/// Cells that saw at least one incident of any type over the whole stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyAreaMask {
    pub p: usize,
    /// Row-major flags.
    pub cells: Vec<bool>,
}

impl StudyAreaMask {
    pub fn full(p: usize) -> Self {
        StudyAreaMask { p, cells: vec![true; p * p] }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.p + col]
    }

    /// Row-major indices of masked-in cells.
    pub fn indices(&self) -> Vec<usize> {
        self.cells.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i).collect()
    }

    pub fn as_set(&self) -> HashSet<usize> {
        self.indices().into_iter().collect()
    }
}

pub fn study_area(stack: &IncidentMapStack) -> StudyAreaMask {
    let totals = stack.window_totals(0, stack.days(), CrimeType::AllCrimes);
    StudyAreaMask { p: stack.p(), cells: totals.iter().map(|&t| t >= 1).collect() }
}
