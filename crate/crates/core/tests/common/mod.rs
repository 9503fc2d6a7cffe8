//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use hotspot::grid::{IncidentMapStack, Sample, StudyAreaMask};
use hotspot::ingest::{BoundingBox, CrimeType, Incident, SynthConfig};
use hotspot::models::Model;
use hotspot_nn::gradcheck::{central_difference, relative_error};
use hotspot_nn::init::rng;
use hotspot_nn::{Layer, Mode, Tensor};
use rand::Rng;

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2016, 1, 1).unwrap()
}

/// Direct six-loop convolution; `same` pads by half the kernel on each side.
pub fn conv(x: &Tensor, k: &Tensor, b: &Tensor, same: bool) -> Tensor {
    let (n, h, w, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (k1, k2, d) = (k.dim(0), k.dim(1), k.dim(3));
    let (oh, ow) = if same { (h, w) } else { (h + 1 - k1, w + 1 - k2) };
    let (ph, pw) = if same { (k1 as i64 / 2, k2 as i64 / 2) } else { (0, 0) };
    let mut out = Tensor::zeros(&[n, oh, ow, d]);
    for img in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for f in 0..d {
                    let mut s = b.data()[f];
                    for a in 0..k1 {
                        for q in 0..k2 {
                            let (y, z) = (i as i64 + a as i64 - ph, j as i64 + q as i64 - pw);
                            if y < 0 || z < 0 || y >= h as i64 || z >= w as i64 {
                                continue;
                            }
                            for ch in 0..c {
                                let xv = x.data()[((img * h + y as usize) * w + z as usize) * c + ch];
                                s += xv * k.data()[((a * k2 + q) * c + ch) * d + f];
                            }
                        }
                    }
                    out.data_mut()[((img * oh + i) * ow + j) * d + f] = s;
                }
            }
        }
    }
    out
}

/// 2×2, stride 2; odd trailing rows and columns are dropped.
pub fn pool(x: &Tensor, max: bool) -> Tensor {
    let (n, h, w, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let mut out = Tensor::zeros(&[n, h / 2, w / 2, c]);
    for img in 0..n {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                for ch in 0..c {
                    let at = |y: usize, z: usize| x.data()[((img * h + y) * w + z) * c + ch];
                    let win = [at(2 * i, 2 * j), at(2 * i, 2 * j + 1), at(2 * i + 1, 2 * j), at(2 * i + 1, 2 * j + 1)];
                    let v = if max { win.into_iter().fold(f64::MIN, f64::max) } else { win.iter().sum::<f64>() / 4.0 };
                    out.data_mut()[((img * (h / 2) + i) * (w / 2) + j) * c + ch] = v;
                }
            }
        }
    }
    out
}

/// Full sort by (distance, index), then the hot share of the first `k`.
pub fn knn(rows: &[Vec<f64>], labels: &[bool], x: &[f64], k: usize) -> f64 {
    let mut by_dist: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
        .collect();
    by_dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
    by_dist[..k].iter().filter(|(_, i)| labels[*i]).count() as f64 / k as f64
}

/// Posterior from explicit Gaussian densities (no log space).
pub fn naive_bayes(rows: &[Vec<f64>], labels: &[bool], x: &[f64]) -> f64 {
    let mut joint = [0.0; 2];
    for (class, slot) in joint.iter_mut().enumerate() {
        let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &l)| l as usize == class).map(|(r, _)| r).collect();
        let m = members.len() as f64;
        let mut density = m / rows.len() as f64;
        for (j, &xj) in x.iter().enumerate() {
            let mu = members.iter().map(|r| r[j]).sum::<f64>() / m;
            let var = (members.iter().map(|r| (r[j] - mu).powi(2)).sum::<f64>() / m).max(1e-9);
            density *= (-(xj - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        }
        *slot = density;
    }
    joint[1] / (joint[0] + joint[1])
}

/// Mann-Whitney over every hot/cold pair; ties count half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice_wins: u64 = 0;
    let mut pairs: u64 = 0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1;
                twice_wins += if si > sj { 2 } else if si == sj { 1 } else { 0 };
            }
        }
    }
    twice_wins as f64 / (2 * pairs) as f64
}

/// Step-wise area: at every distinct threshold, recall gained times precision.
pub fn aucpr(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let hot = labels.iter().filter(|&&l| l).count() as f64;
    let (mut area, mut last_recall) = (0.0, 0.0);
    for t in thresholds {
        let flagged: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
        let tp = flagged.iter().zip(labels).filter(|(&f, &l)| f && l).count() as f64;
        let predicted = flagged.iter().filter(|&&f| f).count() as f64;
        let recall = tp / hot;
        area += (recall - last_recall) * (tp / predicted);
        last_recall = recall;
    }
    area
}

/// Sort every cell, take the top `percent`% (at least one) and apply the PAI formula.
pub fn pai(scores: &[f64], counts: &[u32], cells: &[(usize, usize)], percent: usize) -> f64 {
    let mut keyed: Vec<(f64, (usize, usize), u32)> =
        scores.iter().zip(cells).zip(counts).map(|((&s, &c), &n)| (s, c, n)).collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let n = (percent * scores.len() / 100).max(1);
    let captured: u32 = keyed[..n].iter().map(|e| e.2).sum();
    let total: u32 = counts.iter().sum();
    (captured as f64 / total as f64) / (n as f64 / scores.len() as f64)
}

/// Scores on a coarse lattice so ties are common.
pub fn lattice_scores(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(0..11) as f64 / 10.0).collect()
}

pub fn random_stack(seed: u64, p: usize, days: usize, density: f64) -> Arc<IncidentMapStack> {
    let mut r = rng(seed);
    let mut counts = vec![0u32; days * p * p * CrimeType::COUNT];
    for px in counts.chunks_exact_mut(CrimeType::COUNT) {
        for c in &mut px[..CrimeType::COUNT - 1] {
            if r.random_bool(density) {
                *c = r.random_range(1..4);
            }
        }
    }
    Arc::new(IncidentMapStack::from_counts(p, days, start(), counts).unwrap())
}

pub fn unit_box() -> BoundingBox {
    BoundingBox { lon_min: -75.3, lon_max: -74.9, lat_min: 39.8, lat_max: 40.2 }
}

/// Incidents scattered over `bbox` grown by `spill` on each side, spread
/// across `days` days starting a week before [`start`].
pub fn scattered(seed: u64, n: usize, bbox: &BoundingBox, spill: f64, days: i64) -> Vec<Incident> {
    let mut r = rng(seed);
    let t0 = (start() - Duration::days(7)).and_hms_opt(0, 0, 0).unwrap();
    (0..n)
        .map(|_| {
            let lon = r.random_range(bbox.lon_min - spill..=bbox.lon_max + spill);
            let lat = r.random_range(bbox.lat_min - spill..=bbox.lat_max + spill);
            let ts: NaiveDateTime = t0 + Duration::seconds(r.random_range(0..(days + 14) * 86_400));
            let ty = CrimeType::from_channel(r.random_range(0..10)).unwrap();
            Incident::new(ts, lon, lat, ty).unwrap()
        })
        .collect()
}

/// A small randomized generator setup for stream-level checks.
pub fn random_synth(seed: u64) -> SynthConfig {
    let mut r = rng(seed ^ 0xA5A5);
    let days = r.random_range(60..150);
    let mut cfg = SynthConfig::planted(unit_box(), r.random_range(1..7), days, seed);
    cfg.background_rate = r.random_range(0.0..3.0);
    cfg.excitation = r.random_range(0.0..0.6);
    cfg.weekly_amplitude = r.random_range(0.0..0.9);
    cfg.start = start();
    cfg
}

/// Step for whole-model checks. Batch-norm over a handful of near-constant
/// activations bends the loss on a 1e-4 scale, so the layer default is too coarse.
pub const MODEL_STEP: f64 = 1e-6;

/// Largest relative error between `compute_gradients` and central differences
/// of the combined loss over `probes` randomly chosen parameter elements.
pub fn probe_model_gradients(
    model: &mut Model,
    batch: &[&Sample],
    mask: &StudyAreaMask,
    mode: Mode,
    seed: u64,
    probes: usize,
) -> (f64, String) {
    model.compute_gradients(batch, mask, mode).unwrap();
    let mut params: Vec<(String, Vec<f64>)> = Vec::new();
    model.net().visit_params(&mut |name, p| {
        if p.trainable {
            params.push((name.to_string(), p.grad.data().to_vec()));
        }
    });
    let mut r = rng(seed);
    let mut worst = (0.0, String::new());
    for _ in 0..probes {
        let (name, grads) = &params[r.random_range(0..params.len())];
        let e = r.random_range(0..grads.len());
        let set = |m: &mut Model, v: Option<f64>| {
            let mut old = 0.0;
            m.net().visit_params(&mut |n, p| {
                if n == name {
                    old = p.value.data()[e];
                    if let Some(v) = v {
                        p.value.data_mut()[e] = v;
                    }
                }
            });
            old
        };
        let x0 = set(model, None);
        let numeric = central_difference(
            |v| {
                set(model, Some(v));
                model.evaluate_loss(batch, mask, mode).unwrap().combined
            },
            x0,
            MODEL_STEP,
        );
        set(model, Some(x0));
        let err = relative_error(grads[e], numeric, 1e-5);
        if err >= worst.0 {
            worst = (err, format!("{name}[{e}]: {} vs {numeric}", grads[e]));
        }
    }
    worst
}
