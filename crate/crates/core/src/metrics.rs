//! Imbalance-aware evaluation of per-cell hotspot scores: F1, ROC and PR
//! curves with their areas, and the predictive accuracy index (PAI).

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Result;
use crate::grid::StudyAreaMask;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no cells to score")]
    Empty,
    #[error("metric needs at least one hot and one cold cell")]
    SingleClass,
    #[error("metric needs at least one hot cell")]
    NoPositives,
    #[error("no crimes in the horizon; PAI is undefined")]
    NoCrimes,
    #[error("{0}")]
    Invalid(String),
}

pub type MetricResult<T> = std::result::Result<T, MetricError>;

/// Parallel per-cell scores, labels, future counts and `(row, col)` ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCells {
    scores: Vec<f64>,
    labels: Vec<bool>,
    counts: Vec<u32>,
    cells: Vec<(usize, usize)>,
}

impl ScoredCells {
    pub fn new(scores: Vec<f64>, counts: Vec<u32>, cells: Vec<(usize, usize)>) -> MetricResult<Self> {
        if scores.len() != counts.len() || scores.len() != cells.len() {
            return Err(MetricError::Invalid(format!(
                "length mismatch: {} scores, {} counts, {} cells",
                scores.len(),
                counts.len(),
                cells.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(MetricError::Invalid(format!("non-finite score {s}")));
        }
        let labels = counts.iter().map(|&c| c >= 1).collect();
        Ok(ScoredCells { scores, labels, counts, cells })
    }

    /// Binary labels only; counts are the labels as 0/1 and cells are `(0, i)`.
    pub fn from_labels(scores: Vec<f64>, labels: &[bool]) -> MetricResult<Self> {
        let counts = labels.iter().map(|&l| l as u32).collect();
        let cells = (0..labels.len()).map(|i| (0, i)).collect();
        ScoredCells::new(scores, counts, cells)
    }

    /// Keep the masked-in cells of row-major `p×p` score and count grids.
    pub fn from_grid(scores: &[f64], counts: &[u32], mask: &StudyAreaMask) -> MetricResult<Self> {
        let n = mask.p * mask.p;
        if scores.len() != n || counts.len() != n {
            return Err(MetricError::Invalid(format!("grids must have {n} cells")));
        }
        let idx = mask.indices();
        ScoredCells::new(
            idx.iter().map(|&i| scores[i]).collect(),
            idx.iter().map(|&i| counts[i]).collect(),
            idx.iter().map(|&i| (i / mask.p, i % mask.p)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// `(hot, cold)` counts for each distinct score, highest score first.
    fn tie_groups(&self) -> Vec<(f64, u64, u64)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups: Vec<(f64, u64, u64)> = Vec::new();
        for i in order {
            let s = self.scores[i];
            match groups.last_mut() {
                Some(g) if g.0 == s => {}
                _ => groups.push((s, 0, 0)),
            }
            let g = groups.last_mut().expect("just pushed");
            if self.labels[i] {
                g.1 += 1;
            } else {
                g.2 += 1;
            }
        }
        groups
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.r#fn) as f64
        }
    }

    /// Zero when there are no true positives.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let (p, r) = (self.precision(), self.recall());
        2.0 * p * r / (p + r)
    }
}

/// A cell is predicted hot when its score is at least `threshold`.
pub fn confusion(scored: &ScoredCells, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &l) in scored.scores.iter().zip(&scored.labels) {
        match (s >= threshold, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.r#fn += 1,
        }
    }
    c
}

pub fn f1(scored: &ScoredCells, threshold: f64) -> f64 {
    confusion(scored, threshold).f1()
}

/// Highest F1 over all distinct score thresholds, with the threshold that
/// attains it (the largest one on ties). `(0, +inf)` for an empty set.
pub fn best_f1(scored: &ScoredCells) -> (f64, f64) {
    let total_pos = scored.positives() as f64;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best = (0.0, f64::INFINITY);
    for (s, hot, cold) in scored.tie_groups() {
        tp += hot;
        fp += cold;
        if tp == 0 {
            continue;
        }
        let f = 2.0 * tp as f64 / (tp as f64 + fp as f64 + total_pos);
        if f > best.0 {
            best = (f, s);
        }
    }
    best
}

/// Parametric curve; point `i` is reached at threshold `thresholds[i]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Strictly decreasing; the first is `+inf` (nothing predicted hot).
    pub thresholds: Vec<f64>,
}

impl Curve {
    fn push(&mut self, threshold: f64, x: f64, y: f64) {
        self.thresholds.push(threshold);
        self.x.push(x);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `threshold,x,y` rows.
    pub fn write_csv(&self, sink: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["threshold", "x", "y"])?;
        for i in 0..self.len() {
            w.write_record([self.thresholds[i].to_string(), self.x[i].to_string(), self.y[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ROC curve (x = FPR, y = TPR) and its area.
///
/// The area is accumulated in integers, so it equals the Mann-Whitney
/// statistic `P(hot > cold) + ½·P(hot = cold)` up to one final division.
pub fn roc_auc(scored: &ScoredCells) -> MetricResult<(Curve, f64)> {
    let pos = scored.positives() as u64;
    let neg = scored.len() as u64 - pos;
    if scored.is_empty() {
        return Err(MetricError::Empty);
    }
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut curve = Curve::default();
    curve.push(f64::INFINITY, 0.0, 0.0);
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    for (s, hot, cold) in scored.tie_groups() {
        twice_area += cold as u128 * (2 * tp as u128 + hot as u128);
        tp += hot;
        fp += cold;
        curve.push(s, fp as f64 / neg as f64, tp as f64 / pos as f64);
    }
    let auc = twice_area as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok((curve, auc))
}

/// Precision-recall curve (x = recall, y = precision) and its step-wise
/// area; precision at recall 0 repeats the first threshold's precision.
pub fn pr_auc(scored: &ScoredCells) -> MetricResult<(Curve, f64)> {
    if scored.is_empty() {
        return Err(MetricError::Empty);
    }
    let pos = scored.positives() as u64;
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let groups = scored.tie_groups();
    let mut curve = Curve::default();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area = 0.0;
    let mut last_recall = 0.0;
    for (s, hot, cold) in groups {
        tp += hot;
        fp += cold;
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        if curve.is_empty() {
            curve.push(f64::INFINITY, 0.0, precision);
        }
        area += (recall - last_recall) * precision;
        last_recall = recall;
        curve.push(s, recall, precision);
    }
    Ok((curve, area))
}

pub const DEFAULT_PAI_FRACTION: f64 = 0.05;

/// Cells flagged by PAI at `area_fraction`: the top `n` by score, ties
/// broken by row then column.
pub fn pai_selection(scored: &ScoredCells, area_fraction: f64) -> MetricResult<Vec<usize>> {
    if scored.is_empty() {
        return Err(MetricError::Empty);
    }
    if !(area_fraction > 0.0 && area_fraction <= 1.0) {
        return Err(MetricError::Invalid(format!("area fraction {area_fraction} outside (0, 1]")));
    }
    let total = scored.len();
    // the epsilon keeps 0.05 × 20 from flooring to 0
    let n = ((area_fraction * total as f64 + 1e-9).floor() as usize).clamp(1, total);
    let mut order = rank_order(&scored.scores, &scored.cells);
    order.truncate(n);
    Ok(order)
}

/// Indices sorted by score descending, then row, then column.
pub fn rank_order(scores: &[f64], cells: &[(usize, usize)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| cells[a].cmp(&cells[b])));
    order
}

pub fn pai_at(scored: &ScoredCells, area_fraction: f64) -> MetricResult<f64> {
    let crimes: u64 = scored.counts.iter().map(|&c| c as u64).sum();
    if scored.is_empty() {
        return Err(MetricError::Empty);
    }
    if crimes == 0 {
        return Err(MetricError::NoCrimes);
    }
    let picked = pai_selection(scored, area_fraction)?;
    let captured: u64 = picked.iter().map(|&i| scored.counts[i] as u64).sum();
    Ok((captured as f64 / crimes as f64) / (picked.len() as f64 / scored.len() as f64))
}

/// Every metric for one forecast. Undefined metrics are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub f1: f64,
    pub best_f1: f64,
    pub best_threshold: f64,
    pub auroc: Option<f64>,
    pub aucpr: Option<f64>,
    pub pai5: Option<f64>,
}

pub fn evaluate(scored: &ScoredCells) -> MetricSet {
    let (best_f1, best_threshold) = best_f1(scored);
    MetricSet {
        f1: f1(scored, 0.5),
        best_f1,
        best_threshold,
        auroc: roc_auc(scored).ok().map(|r| r.1),
        aucpr: pr_auc(scored).ok().map(|r| r.1),
        pai5: pai_at(scored, DEFAULT_PAI_FRACTION).ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(scores: &[f64], labels: &[bool]) -> ScoredCells {
        ScoredCells::from_labels(scores.to_vec(), labels).unwrap()
    }

    #[test]
    fn confusion_examples() {
        let s = sc(&[0.9, 0.4], &[true, false]);
        assert_eq!(confusion(&s, 0.5), Confusion { tp: 1, fp: 0, tn: 1, r#fn: 0 });
        let all_hot = confusion(&s, 0.0);
        assert_eq!((all_hot.r#fn, all_hot.tn), (0, 0));
        let all_cold = confusion(&s, 0.9 + 1e-12);
        assert_eq!((all_cold.tp, all_cold.fp), (0, 0));
    }

    #[test]
    fn f1_examples() {
        let c = Confusion { tp: 2, fp: 1, tn: 0, r#fn: 1 };
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1(&sc(&[0.9, 0.1], &[true, false]), 0.5), 1.0);
        assert_eq!(f1(&sc(&[0.2, 0.1], &[true, false]), 0.5), 0.0);
    }

    #[test]
    fn best_f1_finds_separating_threshold() {
        let s = sc(&[0.3, 0.2, 0.1, 0.05], &[true, true, false, false]);
        assert_eq!(best_f1(&s), (1.0, 0.2));
    }

    #[test]
    fn roc_examples() {
        let (curve, auc) = roc_auc(&sc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false])).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!((curve.x[0], curve.y[0]), (0.0, 0.0));
        assert_eq!((*curve.x.last().unwrap(), *curve.y.last().unwrap()), (1.0, 1.0));
        assert_eq!(roc_auc(&sc(&[0.3; 5], &[true, false, true, false, false])).unwrap().1, 0.5);
        assert_eq!(roc_auc(&sc(&[0.3, 0.2], &[true, true])).unwrap_err(), MetricError::SingleClass);
    }

    #[test]
    fn pr_examples() {
        assert_eq!(pr_auc(&sc(&[0.9, 0.8, 0.2], &[true, true, false])).unwrap().1, 1.0);
        let (_, a) = pr_auc(&sc(&[0.5; 4], &[true, false, false, false])).unwrap();
        assert_eq!(a, 0.25);
        assert_eq!(pr_auc(&sc(&[0.5], &[false])).unwrap_err(), MetricError::NoPositives);
    }

    #[test]
    fn pai_examples() {
        // 20 cells, top 1 (5%) holds 2 of 10 crimes
        let mut counts = vec![0u32; 20];
        counts[0] = 2;
        counts[1] = 8;
        let scores: Vec<f64> = (0..20).map(|i| 1.0 - i as f64 / 20.0).collect();
        let cells = (0..20).map(|i| (i / 5, i % 5)).collect();
        let s = ScoredCells::new(scores, counts, cells).unwrap();
        assert!((pai_at(&s, 0.05).unwrap() - 4.0).abs() < 1e-12);
        assert!((pai_at(&s, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let none = ScoredCells::new(vec![0.1; 3], vec![0; 3], vec![(0, 0), (0, 1), (0, 2)]).unwrap();
        assert_eq!(pai_at(&none, 0.05).unwrap_err(), MetricError::NoCrimes);
    }

    #[test]
    fn pai_ties_prefer_low_row_then_col() {
        let s = ScoredCells::new(vec![0.5, 0.5, 0.5], vec![1, 0, 0], vec![(1, 0), (0, 1), (0, 0)]).unwrap();
        assert_eq!(pai_selection(&s, 0.01).unwrap(), vec![2]);
    }

    #[test]
    fn curve_csv() {
        let (curve, _) = roc_auc(&sc(&[0.9, 0.1], &[true, false])).unwrap();
        let mut out = Vec::new();
        curve.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "threshold,x,y\ninf,0,0\n0.9,0,1\n0.1,1,1\n");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ScoredCells::from_labels(vec![f64::NAN], &[true]).is_err());
        assert!(ScoredCells::new(vec![0.1], vec![1, 2], vec![(0, 0)]).is_err());
    }
}
