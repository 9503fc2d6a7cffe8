//! Experiment orchestration: data, grids, splits, training every selected
//! method and scoring it on the monthly test anchors.
//!
//! ```no_run
//! use hotspot::harness::{run_experiment, emit_report, ExperimentConfig};
//!
//! let config = ExperimentConfig::parse("seed = 7\nmethods = sftt, knn\n")?;
//! let report = run_experiment(&config)?;
//! emit_report(&report, "out".as_ref())?;
//! # Ok::<(), hotspot::Error>(())
//! ```

mod config;
mod report;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use chrono::NaiveDate;
use hotspot_nn::init::{mix_seed, rng};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{featurize, Baseline, Classifier, Dataset};
use crate::error::{Error, Result, StageExt};
use crate::grid::{aggregate, samples_at, split_train_test, study_area, GridSpec, IncidentMapStack, Sample, Split, StudyAreaMask, MONTH_DAYS};
use crate::ingest::{generate_synthetic, parse_incidents, BoundingBox, CrimeType, Incident, Taxonomy};
use crate::models::{load_checkpoint, save_checkpoint, Architecture, BodyKind, EpochLosses, Model, ModelConfig};

pub use config::{BaselineSettings, DataSource, ExperimentConfig, Method, SynthSettings, TrainSettings, ALLOWED_RESOLUTIONS};
pub use report::{
    emit_heatmap, emit_report, load_report, rederive, score_anchor, AnchorPrediction, AnchorResult, EvalReport, MeanMetrics,
    ResolutionReport, SeriesReport, Timing,
};

/// Incidents plus the extent and period they are binned over.
pub struct Incidents {
    pub events: Vec<Incident>,
    pub bbox: BoundingBox,
    pub start: NaiveDate,
    pub days: usize,
}

/// Generate or read the configured incidents.
pub fn load_incidents(config: &ExperimentConfig) -> Result<Incidents> {
    match &config.data {
        DataSource::Synthetic(s) => {
            let cfg = s.resolve(config.seed);
            Ok(Incidents { events: generate_synthetic(&cfg)?, bbox: cfg.bbox, start: cfg.start, days: cfg.days as usize })
        }
        DataSource::Csv { path, columns, taxonomy, bbox, start, days } => {
            let taxonomy = match taxonomy {
                Some(t) => Taxonomy::load(t)?,
                None => Taxonomy::identity(),
            };
            let file = File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
            let (events, _) = parse_incidents(BufReader::new(file), columns, &taxonomy)?;
            let (Some(first), Some(last)) = (events.first(), events.last()) else {
                return Err(Error::data(format!("{} holds no usable incidents", path.display())));
            };
            let bbox = match bbox {
                Some(b) => *b,
                None => {
                    let fold = |f: fn(&Incident) -> f64, pick: fn(f64, f64) -> f64| events.iter().map(f).reduce(pick).expect("non-empty");
                    let b = BoundingBox {
                        lon_min: fold(|i| i.lon, f64::min),
                        lon_max: fold(|i| i.lon, f64::max),
                        lat_min: fold(|i| i.lat, f64::min),
                        lat_max: fold(|i| i.lat, f64::max),
                    };
                    b.validate().map_err(|_| Error::data("incidents span no area; set data.bbox"))?;
                    b
                }
            };
            let start = start.unwrap_or(first.timestamp.date());
            let days = match days {
                Some(d) => *d,
                None => (last.timestamp.date() - start).num_days().max(0) as usize + 1,
            };
            Ok(Incidents { events, bbox, start, days })
        }
    }
}

/// One resolution's stack, study area and split.
pub struct Prepared {
    pub p: usize,
    pub stack: Arc<IncidentMapStack>,
    pub mask: StudyAreaMask,
    pub split: Split,
    pub input_days: usize,
}

pub fn input_days(config: &ExperimentConfig) -> usize {
    ModelConfig::preset(config.train.preset, Architecture::Sftt, BodyKind::Vgg, 16).input_days
}

pub fn prepare(config: &ExperimentConfig, incidents: &Incidents, p: usize) -> Result<Prepared> {
    let spec = GridSpec::new(incidents.bbox, p).stage("aggregate")?;
    let (stack, _) = aggregate(&incidents.events, &spec, incidents.start, incidents.days);
    if !stack.all_crimes_consistent() {
        return Err(Error::data("AllCrimes channel disagrees with the type channels").in_stage("aggregate"));
    }
    let mask = study_area(&stack);
    if mask.count() == 0 {
        return Err(Error::data("no incidents fall inside the grid").in_stage("aggregate"));
    }
    let days = input_days(config);
    let split = split_train_test(&stack, config.train_years, config.test_years, days, config.train.stride).stage("split")?;
    Ok(Prepared { p, stack: Arc::new(stack), mask, split, input_days: days })
}

/// What one training job produced.
pub enum Fitted {
    Deep(Box<Model>),
    Baseline(Baseline),
}

pub struct TrainedMethod {
    pub p: usize,
    pub method: Method,
    /// Scored types; several only for a multi-label deep model.
    pub targets: Vec<CrimeType>,
    pub multi_label: bool,
    pub fitted: Fitted,
    pub losses: Vec<EpochLosses>,
    pub train_seconds: f64,
}

impl TrainedMethod {
    /// File stem used for checkpoints and report artifacts.
    pub fn stem(&self) -> String {
        series_stem(self.p, &self.method.name(), &self.targets, self.multi_label)
    }
}

fn series_stem(p: usize, method: &str, targets: &[CrimeType], multi: bool) -> String {
    if multi {
        format!("p{p}_{method}_multi")
    } else {
        format!("p{p}_{method}_{}", targets[0].name())
    }
}

/// `(method, targets, multi_label)` for every job, in report order.
fn jobs(config: &ExperimentConfig) -> Vec<(Method, Vec<CrimeType>, bool)> {
    let mut out = Vec::new();
    for &m in &config.methods {
        if config.multi_label && matches!(m, Method::Deep { .. }) {
            out.push((m, config.targets.clone(), true));
        } else {
            out.extend(config.targets.iter().map(|&t| (m, vec![t], false)));
        }
    }
    out
}

pub fn model_config(config: &ExperimentConfig, architecture: Architecture, body: BodyKind, p: usize, target: CrimeType, multi: bool) -> ModelConfig {
    let t = &config.train;
    let mut mc = ModelConfig::preset(t.preset, architecture, body, p);
    mc.epochs = t.epochs;
    mc.batch_size = t.batch_size;
    mc.learning_rate = t.learning_rate;
    mc.dropout = t.dropout;
    mc.batch_norm = t.batch_norm;
    mc.count_loss_weight = t.count_loss_weight;
    mc.multi_label_loss = t.multi_label_loss;
    mc.multi_label = multi;
    mc.target = if multi { CrimeType::AllCrimes } else { target };
    mc.seed = config.seed;
    mc
}

fn sample_target(targets: &[CrimeType], multi: bool) -> CrimeType {
    if multi {
        CrimeType::AllCrimes
    } else {
        targets[0]
    }
}

/// Per-cell training vectors for a baseline, capped at `max_vectors`.
pub fn baseline_dataset(config: &ExperimentConfig, prep: &Prepared, target: CrimeType) -> Result<Dataset> {
    let last = prep.split.train_end - MONTH_DAYS;
    let anchors: Vec<usize> = (prep.input_days..=last).step_by(config.baseline.stride).collect();
    let samples = samples_at(&prep.stack, target, &anchors, prep.input_days, MONTH_DAYS)?;
    let mut data = Dataset::new(prep.input_days * crate::grid::CHANNELS);
    for s in &samples {
        data.extend(&featurize(s, &prep.mask, target))?;
    }
    let cap = config.baseline.max_vectors;
    if data.len() > cap {
        let mut keep = sample(&mut rng(mix_seed(config.seed, 0xBA5E)), data.len(), cap).into_vec();
        keep.sort_unstable();
        data = data.subset(&keep);
    }
    Ok(data)
}

fn train_one(config: &ExperimentConfig, prep: &Prepared, method: Method, targets: Vec<CrimeType>, multi: bool) -> Result<TrainedMethod> {
    let clock = Instant::now();
    let (fitted, losses) = match method {
        Method::Deep { architecture, body } => {
            let mc = model_config(config, architecture, body, prep.p, targets[0], multi);
            let samples = samples_at(&prep.stack, sample_target(&targets, multi), &prep.split.train_anchors, prep.input_days, MONTH_DAYS)?;
            let mut model = Model::build(mc)?;
            model.train(&samples, &prep.mask)?;
            let losses = model.history.clone();
            (Fitted::Deep(Box::new(model)), losses)
        }
        Method::Baseline(kind) => {
            let data = baseline_dataset(config, prep, targets[0])?;
            (Fitted::Baseline(Baseline::fit(kind, &data, &config.baseline_config())?), Vec::new())
        }
    };
    Ok(TrainedMethod { p: prep.p, method, targets, multi_label: multi, fitted, losses, train_seconds: clock.elapsed().as_secs_f64() })
}

/// Train every configured method for one resolution; jobs run in parallel.
pub fn train_all(config: &ExperimentConfig, prep: &Prepared) -> Result<Vec<TrainedMethod>> {
    jobs(config)
        .into_par_iter()
        .map(|(m, targets, multi)| train_one(config, prep, m, targets, multi))
        .collect::<Result<Vec<_>>>()
        .stage("train")
}

fn predict_baseline(clf: &Baseline, sample: &Sample, mask: &StudyAreaMask, target: CrimeType) -> Vec<f64> {
    let p = mask.p;
    let mut scores = vec![0.0; p * p];
    for v in featurize(sample, mask, target) {
        scores[v.cell.0 * p + v.cell.1] = clf.score(&v.features);
    }
    scores
}

/// Score one trained method on the test anchors: one series per target.
fn evaluate_one(prep: &Prepared, trained: &mut TrainedMethod) -> Result<(Vec<SeriesReport>, f64)> {
    let clock = Instant::now();
    let anchors = &prep.split.test_anchors;
    let mask = &prep.mask;
    let multi = trained.multi_label;
    let test = samples_at(&prep.stack, sample_target(&trained.targets, multi), anchors, prep.input_days, MONTH_DAYS)?;
    let deep = match &mut trained.fitted {
        Fitted::Deep(model) => Some(model.predict_many(&test, mask)?),
        Fitted::Baseline(_) => None,
    };
    let mut series = Vec::new();
    for &ty in &trained.targets {
        let mut results = Vec::with_capacity(test.len());
        for (i, s) in test.iter().enumerate() {
            let prediction = match (&deep, &trained.fitted) {
                (Some(preds), _) => AnchorPrediction {
                    scores: preds[i].scores_for(ty),
                    // the count head estimates this type's intensity only for binary models
                    rank_scores: (!multi).then(|| preds[i].counts.clone()),
                    counts: s.counts_for(ty),
                },
                (None, Fitted::Baseline(clf)) => {
                    AnchorPrediction { scores: predict_baseline(clf, s, mask, ty), rank_scores: None, counts: s.counts_for(ty) }
                }
                (None, Fitted::Deep(_)) => unreachable!("deep models always predict"),
            };
            let metrics = score_anchor(&prediction, mask)?;
            results.push(AnchorResult { anchor: s.anchor, date: s.anchor_date(), metrics, prediction });
        }
        series.push(SeriesReport {
            method: trained.method.name(),
            target: ty,
            multi_label: multi,
            mean: MeanMetrics::of(&results),
            anchors: results,
            losses: trained.losses.clone(),
        });
    }
    Ok((series, clock.elapsed().as_secs_f64()))
}

/// Score trained methods of one resolution; jobs run in parallel.
pub fn evaluate_all(prep: &Prepared, trained: &mut [TrainedMethod]) -> Result<(ResolutionReport, Vec<Timing>)> {
    let scored = trained
        .par_iter_mut()
        .map(|t| evaluate_one(prep, t).map(|(s, secs)| (s, secs, t.train_seconds)))
        .collect::<Result<Vec<_>>>()
        .stage("evaluate")?;
    let mut series = Vec::new();
    let mut timings = Vec::new();
    for (s, eval_seconds, train_seconds) in scored {
        for one in &s {
            timings.push(Timing { p: prep.p, method: one.method.clone(), target: one.target, train_seconds, eval_seconds });
        }
        series.extend(s);
    }
    Ok((ResolutionReport { p: prep.p, mask: prep.mask.clone(), train_samples: prep.split.train_anchors.len(), series }, timings))
}

/// Generate or ingest → aggregate → split → train → evaluate, for every
/// configured resolution. Deterministic for a fixed config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport> {
    config.validate().stage("config")?;
    let incidents = load_incidents(config).stage("ingest")?;
    let mut resolutions = Vec::new();
    let mut timings = Vec::new();
    for &p in &config.resolutions {
        let prep = prepare(config, &incidents, p)?;
        let mut trained = train_all(config, &prep)?;
        let (r, t) = evaluate_all(&prep, &mut trained)?;
        resolutions.push(r);
        timings.extend(t);
    }
    Ok(EvalReport::new(config, resolutions, timings))
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    stem: String,
    method: Method,
    targets: Vec<CrimeType>,
    multi_label: bool,
    losses: Vec<EpochLosses>,
    train_seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config_digest: String,
    p: usize,
    entries: Vec<ManifestEntry>,
}

fn manifest_path(dir: &Path, p: usize) -> std::path::PathBuf {
    dir.join(format!("p{p}_manifest.json"))
}

/// Write checkpoints (`.ckpt` for deep models, `.json` for baselines) and a
/// per-resolution manifest into `dir`.
pub fn save_trained(config: &ExperimentConfig, trained: &mut [TrainedMethod], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let Some(p) = trained.first().map(|t| t.p) else {
        return Ok(());
    };
    let mut entries = Vec::new();
    for t in trained.iter_mut() {
        let stem = t.stem();
        match &mut t.fitted {
            Fitted::Deep(model) => save_checkpoint(std::io::BufWriter::new(File::create(dir.join(format!("{stem}.ckpt")))?), model)?,
            Fitted::Baseline(b) => serde_json::to_writer(std::io::BufWriter::new(File::create(dir.join(format!("{stem}.json")))?), b)?,
        }
        entries.push(ManifestEntry {
            stem,
            method: t.method,
            targets: t.targets.clone(),
            multi_label: t.multi_label,
            losses: t.losses.clone(),
            train_seconds: t.train_seconds,
        });
    }
    let manifest = Manifest { config_digest: report::config_digest(config), p, entries };
    serde_json::to_writer_pretty(File::create(manifest_path(dir, p))?, &manifest)?;
    Ok(())
}

/// Load what [`save_trained`] wrote for resolution `p`; the config must match.
pub fn load_trained(config: &ExperimentConfig, p: usize, dir: &Path) -> Result<Vec<TrainedMethod>> {
    let path = manifest_path(dir, p);
    let file = File::open(&path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_reader(BufReader::new(file))?;
    if manifest.config_digest != report::config_digest(config) {
        return Err(Error::config(format!("{} was trained with a different config", path.display())));
    }
    manifest
        .entries
        .into_iter()
        .map(|e| {
            let fitted = match e.method {
                Method::Deep { architecture, body } => {
                    let mc = model_config(config, architecture, body, p, e.targets[0], e.multi_label);
                    let f = File::open(dir.join(format!("{}.ckpt", e.stem)))?;
                    let mut model = load_checkpoint(BufReader::new(f), mc)?;
                    model.history = e.losses.clone();
                    Fitted::Deep(Box::new(model))
                }
                Method::Baseline(_) => {
                    let f = File::open(dir.join(format!("{}.json", e.stem)))?;
                    Fitted::Baseline(serde_json::from_reader(BufReader::new(f))?)
                }
            };
            Ok(TrainedMethod {
                p,
                method: e.method,
                targets: e.targets,
                multi_label: e.multi_label,
                fitted,
                losses: e.losses,
                train_seconds: e.train_seconds,
            })
        })
        .collect()
}
