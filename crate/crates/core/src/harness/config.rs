use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineKind};
use crate::error::{Error, Result};
use crate::ingest::{BoundingBox, ColumnSpec, CrimeType, SynthConfig};
use crate::models::{Architecture, BodyKind, MultiLabelLoss, Preset};

/// Grid sizes the harness accepts.
pub const ALLOWED_RESOLUTIONS: [usize; 8] = [8, 16, 24, 32, 40, 48, 56, 64];

/// Generator knobs; unset values keep the planted-benchmark defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    pub days: u32,
    pub clusters: usize,
    /// Falls back to the experiment seed.
    pub seed: Option<u64>,
    pub excitation: Option<f64>,
    pub weekly_amplitude: Option<f64>,
    pub background_rate: Option<f64>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings { days: 1460, clusters: 12, seed: None, excitation: None, weekly_amplitude: None, background_rate: None }
    }
}

impl SynthSettings {
    pub fn resolve(&self, experiment_seed: u64) -> SynthConfig {
        let mut cfg = SynthConfig::planted(BoundingBox::philadelphia(), self.clusters, self.days, self.seed.unwrap_or(experiment_seed));
        if let Some(v) = self.excitation {
            cfg.excitation = v;
        }
        if let Some(v) = self.weekly_amplitude {
            cfg.weekly_amplitude = v;
        }
        if let Some(v) = self.background_rate {
            cfg.background_rate = v;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SynthSettings),
    Csv {
        path: PathBuf,
        columns: ColumnSpec,
        /// `raw label = Type` lines; identity mapping when absent.
        taxonomy: Option<PathBuf>,
        /// Derived from the incidents when absent.
        bbox: Option<BoundingBox>,
        /// First day of the stack; defaults to the earliest incident.
        start: Option<NaiveDate>,
        days: Option<usize>,
    },
}

/// One entry of the `methods` list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Deep { architecture: Architecture, body: BodyKind },
    Baseline(BaselineKind),
}

impl Method {
    /// `sftt`, `tfts:resnet`, `knn`, ... A bare architecture takes `default_body`.
    pub fn parse(s: &str, default_body: BodyKind) -> Result<Self> {
        let s = s.trim();
        if let Some(kind) = BaselineKind::parse(s) {
            return Ok(Method::Baseline(kind));
        }
        let (arch, body) = match s.split_once(':') {
            Some((a, b)) => (a, BodyKind::parse(b)?),
            None => (s, default_body),
        };
        let architecture = Architecture::parse(arch).map_err(|_| Error::config(format!("unknown method `{s}`")))?;
        Ok(Method::Deep { architecture, body })
    }

    pub fn name(&self) -> String {
        match self {
            Method::Deep { architecture, body } => format!("{}-{}", architecture.name(), body.name()),
            Method::Baseline(kind) => kind.name().to_string(),
        }
    }

    fn key(&self) -> String {
        match self {
            Method::Deep { architecture, body } => format!("{}:{}", architecture.name(), body.name()),
            Method::Baseline(kind) => kind.name().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub preset: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Days between consecutive training anchors.
    pub stride: usize,
    pub dropout: f64,
    pub batch_norm: bool,
    pub count_loss_weight: f64,
    pub multi_label_loss: MultiLabelLoss,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            preset: Preset::Small,
            epochs: 12,
            batch_size: 16,
            learning_rate: 1e-3,
            stride: 7,
            dropout: 0.3,
            batch_norm: true,
            count_loss_weight: 1.0,
            multi_label_loss: MultiLabelLoss::Mcce,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSettings {
    pub config: BaselineConfig,
    /// Days between training anchors for the per-cell vectors.
    pub stride: usize,
    /// Training vectors beyond this are subsampled (seeded, order kept).
    pub max_vectors: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        BaselineSettings { config: BaselineConfig::default(), stride: 30, max_vectors: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    /// One sub-report per entry.
    pub resolutions: Vec<usize>,
    /// Types to forecast and score.
    pub targets: Vec<CrimeType>,
    /// Deep methods train one 11-class model instead of one per target.
    pub multi_label: bool,
    pub methods: Vec<Method>,
    pub train: TrainSettings,
    pub baseline: BaselineSettings,
    pub train_years: usize,
    pub test_years: usize,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Synthetic benchmark, p=16, all crimes, SFTT with a VGG body against kNN.
    pub fn synthetic(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            data: DataSource::Synthetic(SynthSettings::default()),
            resolutions: vec![16],
            targets: vec![CrimeType::AllCrimes],
            multi_label: false,
            methods: vec![
                Method::Deep { architecture: Architecture::Sftt, body: BodyKind::Vgg },
                Method::Baseline(BaselineKind::Knn),
            ],
            train: TrainSettings::default(),
            baseline: BaselineSettings::default(),
            train_years: 3,
            test_years: 1,
            output: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = ExperimentConfig::parse(&text)?;
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Resolve relative data paths against `dir`.
    fn rebase(&mut self, dir: &Path) {
        if let DataSource::Csv { path, taxonomy, .. } = &mut self.data {
            if path.is_relative() {
                *path = dir.join(&*path);
            }
            if let Some(t) = taxonomy.as_mut().filter(|t| t.is_relative()) {
                *t = dir.join(&*t);
            }
        }
        if let Some(out) = self.output.as_mut().filter(|o| o.is_relative()) {
            *out = dir.join(&*out);
        }
    }

    /// Parse `key = value` lines. Blank lines and `#` comments are skipped;
    /// unknown or repeated keys are errors and `seed` is required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find(" #") {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: `{key}` given twice", n + 1)));
            }
        }
        let mut kv = Entries(entries);
        let seed = kv.take("seed").ok_or_else(|| Error::config("`seed` is required"))?;
        let seed = parse_num(&seed, "seed")?;
        let mut cfg = ExperimentConfig::synthetic(seed);

        let source = kv.take("data.source").unwrap_or_else(|| "synthetic".into());
        cfg.data = match source.as_str() {
            "synthetic" => {
                let mut s = SynthSettings::default();
                kv.num("synth.days", &mut s.days)?;
                kv.num("synth.clusters", &mut s.clusters)?;
                kv.opt_num("synth.seed", &mut s.seed)?;
                kv.opt_num("synth.excitation", &mut s.excitation)?;
                kv.opt_num("synth.weekly_amplitude", &mut s.weekly_amplitude)?;
                kv.opt_num("synth.background_rate", &mut s.background_rate)?;
                DataSource::Synthetic(s)
            }
            "csv" => {
                let path = kv.take("data.path").ok_or_else(|| Error::config("`data.path` is required for csv data"))?;
                let mut columns = ColumnSpec::default();
                for (key, slot) in [
                    ("data.columns.timestamp", &mut columns.timestamp),
                    ("data.columns.lat", &mut columns.lat),
                    ("data.columns.lon", &mut columns.lon),
                    ("data.columns.category", &mut columns.category),
                ] {
                    if let Some(v) = kv.take(key) {
                        *slot = v;
                    }
                }
                columns.time_format = kv.take("data.time_format");
                let bbox = kv.take("data.bbox").map(|v| parse_bbox(&v)).transpose()?;
                let start = kv
                    .take("data.start")
                    .map(|v| NaiveDate::parse_from_str(&v, "%Y-%m-%d").map_err(|_| Error::config(format!("bad `data.start` {v}"))))
                    .transpose()?;
                let mut days = None;
                kv.opt_num("data.days", &mut days)?;
                DataSource::Csv { path: path.into(), columns, taxonomy: kv.take("data.taxonomy").map(Into::into), bbox, start, days }
            }
            other => return Err(Error::config(format!("unknown data.source `{other}` (expected synthetic or csv)"))),
        };
        for key in kv.0.keys() {
            let wrong = match cfg.data {
                DataSource::Synthetic(_) => key.starts_with("data."),
                DataSource::Csv { .. } => key.starts_with("synth."),
            };
            if wrong {
                return Err(Error::config(format!("`{key}` does not apply to data.source={source}")));
            }
        }

        if let Some(v) = kv.take("grid.p") {
            cfg.resolutions = list(&v).map(|s| parse_num(s, "grid.p")).collect::<Result<_>>()?;
        }
        if let Some(v) = kv.take("target") {
            cfg.targets = list(&v).map(str::parse).collect::<Result<_>>()?;
        }
        kv.flag("multi_label", &mut cfg.multi_label)?;
        let mut body = BodyKind::Vgg;
        if let Some(v) = kv.take("model.body") {
            body = BodyKind::parse(&v)?;
        }
        if let Some(v) = kv.take("methods") {
            cfg.methods = list(&v).map(|m| Method::parse(m, body)).collect::<Result<_>>()?;
        } else {
            cfg.methods[0] = Method::Deep { architecture: Architecture::Sftt, body };
        }

        let t = &mut cfg.train;
        if let Some(v) = kv.take("model.preset") {
            t.preset = Preset::parse(&v)?;
        }
        kv.num("model.dropout", &mut t.dropout)?;
        kv.flag("model.batch_norm", &mut t.batch_norm)?;
        kv.num("model.count_loss_weight", &mut t.count_loss_weight)?;
        if let Some(v) = kv.take("model.multi_label_loss") {
            t.multi_label_loss = match v.to_lowercase().as_str() {
                "mcce" => MultiLabelLoss::Mcce,
                "bce" => MultiLabelLoss::Bce,
                _ => return Err(Error::config(format!("unknown multi-label loss `{v}` (expected mcce or bce)"))),
            };
        }
        kv.num("train.epochs", &mut t.epochs)?;
        kv.num("train.batch_size", &mut t.batch_size)?;
        kv.num("train.learning_rate", &mut t.learning_rate)?;
        kv.num("train.stride", &mut t.stride)?;

        let b = &mut cfg.baseline;
        kv.num("baseline.k", &mut b.config.k)?;
        kv.num("baseline.trees", &mut b.config.trees)?;
        kv.num("baseline.max_depth", &mut b.config.tree.max_depth)?;
        kv.num("baseline.min_leaf", &mut b.config.tree.min_leaf)?;
        kv.num("baseline.mlp_epochs", &mut b.config.mlp_epochs)?;
        kv.num("baseline.stride", &mut b.stride)?;
        kv.num("baseline.max_vectors", &mut b.max_vectors)?;

        kv.num("split.train_years", &mut cfg.train_years)?;
        kv.num("split.test_years", &mut cfg.test_years)?;
        cfg.output = kv.take("output.dir").map(Into::into);

        if let Some(key) = kv.0.keys().next() {
            return Err(Error::config(format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::config("grid.p lists no resolutions"));
        }
        if let Some(p) = self.resolutions.iter().find(|p| !ALLOWED_RESOLUTIONS.contains(p)) {
            return Err(Error::config(format!("grid.p={p} not in {ALLOWED_RESOLUTIONS:?}")));
        }
        if self.targets.is_empty() || self.methods.is_empty() {
            return Err(Error::config("need at least one target and one method"));
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || t.stride == 0 || self.baseline.stride == 0 {
            return Err(Error::config("epochs, batch size and strides must be positive"));
        }
        if self.baseline.max_vectors == 0 {
            return Err(Error::config("baseline.max_vectors must be positive"));
        }
        if self.train_years == 0 || self.test_years == 0 {
            return Err(Error::config("split needs at least one train and one test year"));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.resolve(self.seed).validate()?;
        }
        Ok(())
    }

    /// Canonical form: every setting, one `key = value` per line, sorted.
    /// Parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out: BTreeMap<&str, String> = BTreeMap::new();
        out.insert("seed", self.seed.to_string());
        match &self.data {
            DataSource::Synthetic(s) => {
                out.insert("data.source", "synthetic".into());
                out.insert("synth.days", s.days.to_string());
                out.insert("synth.clusters", s.clusters.to_string());
                if let Some(v) = s.seed {
                    out.insert("synth.seed", v.to_string());
                }
                for (k, v) in [
                    ("synth.excitation", s.excitation),
                    ("synth.weekly_amplitude", s.weekly_amplitude),
                    ("synth.background_rate", s.background_rate),
                ] {
                    if let Some(v) = v {
                        out.insert(k, format!("{v:?}"));
                    }
                }
            }
            DataSource::Csv { path, columns, taxonomy, bbox, start, days } => {
                out.insert("data.source", "csv".into());
                out.insert("data.path", path.display().to_string());
                out.insert("data.columns.timestamp", columns.timestamp.clone());
                out.insert("data.columns.lat", columns.lat.clone());
                out.insert("data.columns.lon", columns.lon.clone());
                out.insert("data.columns.category", columns.category.clone());
                if let Some(f) = &columns.time_format {
                    out.insert("data.time_format", f.clone());
                }
                if let Some(t) = taxonomy {
                    out.insert("data.taxonomy", t.display().to_string());
                }
                if let Some(b) = bbox {
                    out.insert("data.bbox", format!("{:?},{:?},{:?},{:?}", b.lon_min, b.lat_min, b.lon_max, b.lat_max));
                }
                if let Some(s) = start {
                    out.insert("data.start", s.format("%Y-%m-%d").to_string());
                }
                if let Some(d) = days {
                    out.insert("data.days", d.to_string());
                }
            }
        }
        let join = |it: Vec<String>| it.join(",");
        out.insert("grid.p", join(self.resolutions.iter().map(ToString::to_string).collect()));
        out.insert("target", join(self.targets.iter().map(|t| t.name().to_string()).collect()));
        out.insert("multi_label", self.multi_label.to_string());
        out.insert("methods", join(self.methods.iter().map(Method::key).collect()));
        let t = &self.train;
        out.insert("model.preset", t.preset.name().into());
        out.insert("model.dropout", format!("{:?}", t.dropout));
        out.insert("model.batch_norm", t.batch_norm.to_string());
        out.insert("model.count_loss_weight", format!("{:?}", t.count_loss_weight));
        out.insert(
            "model.multi_label_loss",
            match t.multi_label_loss {
                MultiLabelLoss::Mcce => "mcce",
                MultiLabelLoss::Bce => "bce",
            }
            .into(),
        );
        out.insert("train.epochs", t.epochs.to_string());
        out.insert("train.batch_size", t.batch_size.to_string());
        out.insert("train.learning_rate", format!("{:?}", t.learning_rate));
        out.insert("train.stride", t.stride.to_string());
        let b = &self.baseline;
        out.insert("baseline.k", b.config.k.to_string());
        out.insert("baseline.trees", b.config.trees.to_string());
        out.insert("baseline.max_depth", b.config.tree.max_depth.to_string());
        out.insert("baseline.min_leaf", b.config.tree.min_leaf.to_string());
        out.insert("baseline.mlp_epochs", b.config.mlp_epochs.to_string());
        out.insert("baseline.stride", b.stride.to_string());
        out.insert("baseline.max_vectors", b.max_vectors.to_string());
        out.insert("split.train_years", self.train_years.to_string());
        out.insert("split.test_years", self.test_years.to_string());
        if let Some(o) = &self.output {
            out.insert("output.dir", o.display().to_string());
        }
        out.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Seed every baseline with the experiment seed.
    pub(crate) fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig { seed: self.seed, ..self.baseline.config.clone() }
    }
}

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = parse_num(&v, key)?;
        }
        Ok(())
    }

    fn opt_num<T: std::str::FromStr>(&mut self, key: &str, slot: &mut Option<T>) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = Some(parse_num(&v, key)?);
        }
        Ok(())
    }

    fn flag(&mut self, key: &str, slot: &mut bool) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = match v.to_lowercase().as_str() {
                "true" | "yes" | "1" | "on" => true,
                "false" | "no" | "0" | "off" => false,
                _ => return Err(Error::config(format!("`{key}` expects true or false, got `{v}`"))),
            };
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::config(format!("`{key}`: cannot parse `{v}`")))
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_bbox(v: &str) -> Result<BoundingBox> {
    let parts: Vec<f64> = list(v).map(|s| parse_num(s, "data.bbox")).collect::<Result<_>>()?;
    let [lon_min, lat_min, lon_max, lat_max] = parts[..] else {
        return Err(Error::config("`data.bbox` expects lon_min,lat_min,lon_max,lat_max"));
    };
    let b = BoundingBox { lon_min, lon_max, lat_min, lat_max };
    b.validate()?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::parse("seed = 4\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::synthetic(4));
    }

    #[test]
    fn parses_every_section() {
        let text = "\
# sweep
seed=1
grid.p = 16, 24
target = theft,assault
multi_label = true
model.body = resnet
methods = sftt, tfts:fastmask, knn  # trailing comment
train.epochs = 3
baseline.k = 5
synth.days = 1500
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.resolutions, [16, 24]);
        assert_eq!(cfg.targets, [CrimeType::Theft, CrimeType::Assault]);
        assert!(cfg.multi_label);
        assert_eq!(cfg.methods[0], Method::Deep { architecture: Architecture::Sftt, body: BodyKind::ResNet });
        assert_eq!(cfg.methods[1].name(), "tfts-fastmask");
        assert_eq!(cfg.methods[2], Method::Baseline(BaselineKind::Knn));
        assert_eq!((cfg.train.epochs, cfg.baseline.config.k), (3, 5));
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = "seed=9\ndata.source=csv\ndata.path=/x/y.csv\ndata.bbox=-1,2,3,4.5\ndata.start=2016-01-01\nmethods=parb:fastresmask,random_forest\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let synth = ExperimentConfig::parse("seed=2\nsynth.excitation=0.25\n").unwrap();
        assert_eq!(ExperimentConfig::parse(&synth.to_text()).unwrap(), synth);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "grid.p=16\n",
            "seed=1\nseed=2\n",
            "seed=1\nbogus=3\n",
            "seed=1\ngrid.p=20\n",
            "seed=x\n",
            "seed=1\nmethods=svm\n",
            "seed=1\ndata.path=a.csv\n",
            "seed=1\ndata.source=csv\n",
            "seed=1\nno equals sign\n",
        ] {
            assert!(matches!(ExperimentConfig::parse(bad), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
