use std::sync::Arc;

use chrono::NaiveDate;
use hotspot_nn::Tensor;
use serde::{Deserialize, Serialize};

use super::{IncidentMapStack, CHANNELS, MONTH_DAYS};
use crate::error::{Error, Result};
use crate::ingest::CrimeType;

/// One forecasting example: the `input_days` maps before `anchor` and the
/// per-cell totals over the `horizon_days` starting at `anchor`.
///
/// Input tensors are materialized on demand from the shared stack.
#[derive(Clone, Debug)]
pub struct Sample {
    stack: Arc<IncidentMapStack>,
    /// Day index of the first horizon day.
    pub anchor: usize,
    pub input_days: usize,
    pub horizon_days: usize,
    pub target: CrimeType,
    horizon: Vec<u32>,
}

impl Sample {
    fn new(stack: &Arc<IncidentMapStack>, anchor: usize, input_days: usize, horizon_days: usize, target: CrimeType) -> Result<Self> {
        if anchor < input_days || anchor + horizon_days > stack.days() {
            return Err(Error::data(format!(
                "anchor day {anchor} needs {input_days} input and {horizon_days} horizon days in a {}-day stack",
                stack.days()
            )));
        }
        let cells = stack.p() * stack.p();
        let mut horizon = vec![0u32; cells * CHANNELS];
        for d in anchor..anchor + horizon_days {
            for (h, c) in horizon.iter_mut().zip(stack.day(d)) {
                *h += c;
            }
        }
        Ok(Sample { stack: Arc::clone(stack), anchor, input_days, horizon_days, target, horizon })
    }

    pub fn p(&self) -> usize {
        self.stack.p()
    }

    pub fn anchor_date(&self) -> NaiveDate {
        self.stack.date_of(self.anchor)
    }

    /// Raw daily counts, flattened `[day][row][col][ch]`.
    pub fn input_counts(&self) -> &[u32] {
        let n = self.p() * self.p() * CHANNELS;
        &self.stack.counts()[(self.anchor - self.input_days) * n..self.anchor * n]
    }

    /// `input_days×p×p×11` counts as floats.
    pub fn input(&self) -> Tensor {
        let p = self.p();
        let data = self.input_counts().iter().map(|&c| c as f64).collect();
        Tensor::from_vec(&[self.input_days, p, p, CHANNELS], data).expect("shape matches stack slice")
    }

    /// Horizon totals of `ty` per cell, row-major.
    pub fn counts_for(&self, ty: CrimeType) -> Vec<u32> {
        self.horizon.chunks_exact(CHANNELS).map(|px| px[ty.channel()]).collect()
    }

    pub fn labels_for(&self, ty: CrimeType) -> Vec<bool> {
        self.counts_for(ty).into_iter().map(|c| c >= 1).collect()
    }

    pub fn target_counts(&self) -> Vec<u32> {
        self.counts_for(self.target)
    }

    pub fn target_labels(&self) -> Vec<bool> {
        self.labels_for(self.target)
    }

    /// Horizon totals for all channels, `[row][col][ch]`.
    pub fn horizon_counts(&self) -> &[u32] {
        &self.horizon
    }

    pub fn stack(&self) -> &Arc<IncidentMapStack> {
        &self.stack
    }
}

/// Samples anchored at `input_days`, `input_days + stride`, … while the horizon fits.
pub fn build_samples(
    stack: &Arc<IncidentMapStack>,
    target: CrimeType,
    input_days: usize,
    horizon_days: usize,
    stride: usize,
) -> Result<Vec<Sample>> {
    if stride == 0 || input_days == 0 || horizon_days == 0 {
        return Err(Error::config("input, horizon and stride must all be at least one day"));
    }
    if stack.days() < input_days + horizon_days {
        return Err(Error::data(format!(
            "a {}-day stack cannot hold {input_days} input plus {horizon_days} horizon days",
            stack.days()
        )));
    }
    let anchors: Vec<usize> = (input_days..=stack.days() - horizon_days).step_by(stride).collect();
    samples_at(stack, target, &anchors, input_days, horizon_days)
}

/// Samples at explicit anchors; every anchor must have full input and horizon.
pub fn samples_at(
    stack: &Arc<IncidentMapStack>,
    target: CrimeType,
    anchors: &[usize],
    input_days: usize,
    horizon_days: usize,
) -> Result<Vec<Sample>> {
    anchors.iter().map(|&a| Sample::new(stack, a, input_days, horizon_days, target)).collect()
}

/// Day-index layout of a train/test split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    /// First day of the test period; no training horizon reaches it.
    pub train_end: usize,
    pub train_anchors: Vec<usize>,
    pub test_anchors: Vec<usize>,
}

/// Years are 365 days. Training anchors step by `stride` from `input_days`
/// while their 30-day horizon ends by `train_end`; test anchors sit on
/// consecutive 30-day boundaries from `train_end`, twelve per test year.
pub fn split_train_test(
    stack: &IncidentMapStack,
    train_years: usize,
    test_years: usize,
    input_days: usize,
    stride: usize,
) -> Result<Split> {
    if train_years == 0 || test_years == 0 || stride == 0 {
        return Err(Error::config("split needs at least one train year, one test year and a positive stride"));
    }
    let train_end = train_years * 365;
    let months = test_years * 12;
    let needed = train_end + months * MONTH_DAYS;
    if stack.days() < needed {
        return Err(Error::data(format!(
            "{train_years}+{test_years} year split needs {needed} days, stack has {}",
            stack.days()
        )));
    }
    if train_end < input_days + MONTH_DAYS {
        return Err(Error::data("training period shorter than one input window plus horizon"));
    }
    let train_anchors = (input_days..=train_end - MONTH_DAYS).step_by(stride).collect();
    let test_anchors = (0..months).map(|k| train_end + k * MONTH_DAYS).collect();
    Ok(Split { train_end, train_anchors, test_anchors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ALL_CRIMES;

    fn stack(days: usize) -> Arc<IncidentMapStack> {
        let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        Arc::new(IncidentMapStack::zeros(2, days, start))
    }

    #[test]
    fn sample_counts() {
        assert_eq!(build_samples(&stack(60), CrimeType::Theft, 30, 30, 30).unwrap().len(), 1);
        assert_eq!(build_samples(&stack(61), CrimeType::Theft, 30, 30, 1).unwrap().len(), 2);
        assert!(build_samples(&stack(59), CrimeType::Theft, 30, 30, 1).is_err());
    }

    #[test]
    fn horizon_label_and_count() {
        let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let mut counts = vec![0u32; 60 * 4 * CHANNELS];
        for day in [30, 41, 59] {
            counts[(day * 4 + 3) * CHANNELS + CrimeType::Theft.channel()] = 1;
        }
        // input-window incidents do not count towards the target
        counts[(29 * 4 + 3) * CHANNELS + CrimeType::Theft.channel()] = 5;
        let s = Arc::new(IncidentMapStack::from_counts(2, 60, start, counts).unwrap());
        let sample = &build_samples(&s, CrimeType::Theft, 30, 30, 30).unwrap()[0];
        assert_eq!(sample.target_counts(), vec![0, 0, 0, 3]);
        assert_eq!(sample.target_labels(), vec![false, false, false, true]);
        assert_eq!(sample.counts_for(CrimeType::AllCrimes), vec![0, 0, 0, 3]);
        let input = sample.input();
        assert_eq!(input.shape(), &[30, 2, 2, CHANNELS]);
        assert_eq!(input.data()[(29 * 4 + 3) * CHANNELS + ALL_CRIMES], 5.0);
        assert_eq!(sample.anchor_date(), NaiveDate::from_ymd_opt(2015, 1, 31).unwrap());
    }

    #[test]
    fn four_year_split() {
        let s = stack(1460);
        let split = split_train_test(&s, 3, 1, 30, 1).unwrap();
        assert_eq!(split.train_end, 1095);
        assert_eq!(split.train_anchors.first(), Some(&30));
        assert_eq!(split.train_anchors.last(), Some(&1065));
        assert_eq!(split.test_anchors.len(), 12);
        assert_eq!(split.test_anchors[0], 1095);
        assert_eq!(*split.test_anchors.last().unwrap() + 30, 1455);
        assert!(split.train_anchors.iter().all(|a| a + 30 <= split.train_end));
        assert!(split_train_test(&stack(1400), 3, 1, 30, 1).is_err());
    }
}
