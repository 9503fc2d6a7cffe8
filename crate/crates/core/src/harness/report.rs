use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::StudyAreaMask;
use crate::ingest::CrimeType;
use crate::metrics::{evaluate, pai_at, pr_auc, rank_order, roc_auc, MetricResult, MetricSet, ScoredCells, DEFAULT_PAI_FRACTION};
use crate::models::EpochLosses;

/// Raw forecast for one anchor, row-major over the `p×p` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrediction {
    /// Hotspot probabilities; masked-out cells are 0.
    pub scores: Vec<f64>,
    /// Ranking used for PAI when it differs from `scores` (a count forecast).
    pub rank_scores: Option<Vec<f64>>,
    /// Observed horizon counts of the scored type.
    pub counts: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorResult {
    pub anchor: usize,
    pub date: NaiveDate,
    pub metrics: MetricSet,
    pub prediction: AnchorPrediction,
}

/// Arithmetic means over anchors. Optional metrics average the anchors where
/// they are defined and are `None` when none is.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub f1: f64,
    pub best_f1: f64,
    pub auroc: Option<f64>,
    pub aucpr: Option<f64>,
    pub pai5: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MeanMetrics {
    pub fn of(anchors: &[AnchorResult]) -> Self {
        let m = || anchors.iter().map(|a| &a.metrics);
        MeanMetrics {
            f1: mean(m().map(|x| x.f1)).unwrap_or(0.0),
            best_f1: mean(m().map(|x| x.best_f1)).unwrap_or(0.0),
            auroc: mean(m().filter_map(|x| x.auroc)),
            aucpr: mean(m().filter_map(|x| x.aucpr)),
            pai5: mean(m().filter_map(|x| x.pai5)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub method: String,
    pub target: CrimeType,
    pub multi_label: bool,
    pub anchors: Vec<AnchorResult>,
    pub mean: MeanMetrics,
    pub losses: Vec<EpochLosses>,
}

impl SeriesReport {
    pub fn stem(&self, p: usize) -> String {
        let suffix = if self.multi_label { "_multi" } else { "" };
        format!("p{p}_{}_{}{suffix}", self.method, self.target.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionReport {
    pub p: usize,
    pub mask: StudyAreaMask,
    pub train_samples: usize,
    pub series: Vec<SeriesReport>,
}

impl ResolutionReport {
    pub fn find(&self, method: &str, target: CrimeType, multi_label: bool) -> Option<&SeriesReport> {
        self.series.iter().find(|s| s.method == method && s.target == target && s.multi_label == multi_label)
    }
}

/// Wall-clock seconds; never part of a digest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub p: usize,
    pub method: String,
    pub target: CrimeType,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// The config with its output directory cleared.
    pub config: ExperimentConfig,
    pub config_digest: String,
    pub resolutions: Vec<ResolutionReport>,
    pub timings: Vec<Timing>,
    /// SHA-256 over the config digest and every resolution report.
    pub digest: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the canonical config text, output directory excluded.
pub fn config_digest(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.output = None;
    hex(&Sha256::digest(c.to_text().as_bytes()))
}

impl EvalReport {
    pub fn new(config: &ExperimentConfig, resolutions: Vec<ResolutionReport>, timings: Vec<Timing>) -> Self {
        let mut config = config.clone();
        config.output = None;
        let config_digest = config_digest(&config);
        let mut report = EvalReport { config, config_digest, resolutions, timings, digest: String::new() };
        report.digest = report.compute_digest();
        report
    }

    pub fn compute_digest(&self) -> String {
        let body = serde_json::to_vec(&(&self.config_digest, &self.resolutions)).expect("report serializes");
        hex(&Sha256::digest(&body))
    }

    pub fn resolution(&self, p: usize) -> Option<&ResolutionReport> {
        self.resolutions.iter().find(|r| r.p == p)
    }
}

/// Metrics of one persisted forecast, computed from scratch.
pub fn score_anchor(prediction: &AnchorPrediction, mask: &StudyAreaMask) -> MetricResult<MetricSet> {
    let scored = ScoredCells::from_grid(&prediction.scores, &prediction.counts, mask)?;
    let mut m = evaluate(&scored);
    if let Some(rank) = &prediction.rank_scores {
        m.pai5 = pai_at(&ScoredCells::from_grid(rank, &prediction.counts, mask)?, DEFAULT_PAI_FRACTION).ok();
    }
    Ok(m)
}

/// Recompute every metric, mean and the digest from the persisted forecasts.
pub fn rederive(report: &EvalReport) -> Result<EvalReport> {
    let mut out = report.clone();
    for r in &mut out.resolutions {
        for s in &mut r.series {
            for a in &mut s.anchors {
                a.metrics = score_anchor(&a.prediction, &r.mask)?;
            }
            s.mean = MeanMetrics::of(&s.anchors);
        }
    }
    out.config_digest = config_digest(&out.config);
    out.digest = out.compute_digest();
    Ok(out)
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let file = File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Every anchor's masked-in cells as one scored set.
fn pooled(r: &ResolutionReport, s: &SeriesReport) -> MetricResult<ScoredCells> {
    let idx = r.mask.indices();
    let (mut scores, mut counts, mut cells) = (Vec::new(), Vec::new(), Vec::new());
    for a in &s.anchors {
        for &i in &idx {
            scores.push(a.prediction.scores[i]);
            counts.push(a.prediction.counts[i]);
            cells.push((i / r.p, i % r.p));
        }
    }
    ScoredCells::new(scores, counts, cells)
}

/// Files written so far; removed again if emission fails part-way.
struct Written(Vec<PathBuf>);

impl Written {
    fn create(&mut self, path: PathBuf) -> Result<BufWriter<File>> {
        let f = File::create(&path)?;
        self.0.push(path);
        Ok(BufWriter::new(f))
    }
}

/// Write `report.json`, `summary.csv`, pooled ROC/PR curves under `curves/`
/// and a heatmap of the last anchor of every series under `heatmaps/`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Written(Vec::new());
    let result = emit_into(report, dir, &mut written);
    match result {
        Ok(()) => Ok(written.0),
        Err(e) => {
            for p in written.0.iter().rev() {
                let _ = std::fs::remove_file(p);
            }
            for sub in ["curves", "heatmaps"] {
                let _ = std::fs::remove_dir(dir.join(sub));
            }
            Err(e)
        }
    }
}

fn emit_into(report: &EvalReport, dir: &Path, written: &mut Written) -> Result<()> {
    std::fs::create_dir_all(dir.join("curves"))?;
    std::fs::create_dir_all(dir.join("heatmaps"))?;
    let mut json = written.create(dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut json, report)?;
    json.flush()?;

    let mut summary = csv::Writer::from_writer(written.create(dir.join("summary.csv"))?);
    summary.write_record(["p", "method", "target", "multi_label", "anchors", "f1", "best_f1", "auroc", "aucpr", "pai5"])?;
    for r in &report.resolutions {
        for s in &r.series {
            let m = &s.mean;
            summary.write_record([
                r.p.to_string(),
                s.method.clone(),
                s.target.name().to_string(),
                s.multi_label.to_string(),
                s.anchors.len().to_string(),
                m.f1.to_string(),
                m.best_f1.to_string(),
                opt(m.auroc),
                opt(m.aucpr),
                opt(m.pai5),
            ])?;
        }
    }
    summary.flush()?;
    drop(summary);

    for r in &report.resolutions {
        for s in &r.series {
            let stem = s.stem(r.p);
            let Ok(scored) = pooled(r, s) else { continue };
            if let Ok((curve, _)) = roc_auc(&scored) {
                curve.write_csv(written.create(dir.join("curves").join(format!("{stem}_roc.csv")))?)?;
            }
            if let Ok((curve, _)) = pr_auc(&scored) {
                curve.write_csv(written.create(dir.join("curves").join(format!("{stem}_pr.csv")))?)?;
            }
            if let Some(last) = s.anchors.last() {
                let path = dir.join("heatmaps").join(format!("{stem}.csv"));
                let ranked = emit_heatmap(&last.prediction.scores, &last.prediction.counts, &r.mask, &path)?;
                written.0.push(path);
                written.0.push(ranked);
            }
        }
    }
    Ok(())
}

/// Path of the ranked list written next to a heatmap.
pub fn ranked_path(heatmap: &Path) -> PathBuf {
    heatmap.with_extension("ranked.csv")
}

/// Write the `p×p` score grid as CSV (row 0 north, masked-out cells empty)
/// and, next to it, the masked-in cells ranked as PAI ranks them:
/// `rank,row,col,score,count`. Returns the ranked list's path.
pub fn emit_heatmap(scores: &[f64], counts: &[u32], mask: &StudyAreaMask, path: &Path) -> Result<PathBuf> {
    let p = mask.p;
    if scores.len() != p * p || counts.len() != p * p {
        return Err(Error::data(format!("heatmap needs {} scores and counts", p * p)));
    }
    let mut grid = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in 0..p {
        grid.write_record((0..p).map(|col| if mask.contains(row, col) { scores[row * p + col].to_string() } else { String::new() }))?;
    }
    grid.flush()?;

    let idx = mask.indices();
    let cells: Vec<(usize, usize)> = idx.iter().map(|&i| (i / p, i % p)).collect();
    let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
    let ranked_file = ranked_path(path);
    let mut ranked = csv::Writer::from_path(&ranked_file)?;
    ranked.write_record(["rank", "row", "col", "score", "count"])?;
    for (rank, k) in rank_order(&s, &cells).into_iter().enumerate() {
        let (row, col) = cells[k];
        ranked.write_record([(rank + 1).to_string(), row.to_string(), col.to_string(), s[k].to_string(), counts[idx[k]].to_string()])?;
    }
    ranked.flush()?;
    Ok(ranked_file)
}
