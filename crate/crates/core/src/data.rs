//! Rater records, per-sample label bundles, synthetic datasets and splits.
//!
//! File formats:
//!
//! - ratings CSV: `sample_id,rating[,rater_id]`, one row per rater. The
//!   header line is optional on input. When the `rater_id` column is present,
//!   repeated `(sample_id, rater_id)` pairs are rejected.
//! - features CSV: `sample_id,f0,f1,...` with a mandatory header and a
//!   constant width.
//! - synthetic manifest: `key = value` lines recording the generator
//!   configuration, then a `hidden_scores:` section of `sample_id,score`
//!   lines.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dist::{
    build_attractiveness_distribution, build_rating_distribution, AttractivenessDistribution, DistributionGrid, Family,
    RatingDistribution, N_RATINGS,
};
use crate::error::{Error, Result};

/// Convention for the per-sample rating standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StdMode {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1 (zero for a single rater).
    Sample,
}

impl fmt::Display for StdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StdMode::Population => "population",
            StdMode::Sample => "sample",
        })
    }
}

impl FromStr for StdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "population" => Ok(StdMode::Population),
            "sample" => Ok(StdMode::Sample),
            other => Err(Error::InvalidArgument(format!("unknown std mode `{other}`"))),
        }
    }
}

/// Ground-truth targets for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelBundle {
    /// Mean rating.
    pub y: f64,
    /// Standard deviation of the ratings.
    pub sigma: f64,
    pub r: RatingDistribution,
    pub p: AttractivenessDistribution,
}

impl LabelBundle {
    pub fn from_ratings(ratings: &[u8], grid: &DistributionGrid, family: Family, std_mode: StdMode) -> Result<Self> {
        let r = build_rating_distribution(ratings)?;
        // Mean taken through the histogram so that y == sum_m m * r_m bitwise.
        let y = r.mean();
        let n = ratings.len() as f64;
        let var = r.probs().iter().enumerate().map(|(i, &rm)| rm * ((i + 1) as f64 - y).powi(2)).sum::<f64>();
        let sigma = match std_mode {
            StdMode::Population => var.sqrt(),
            StdMode::Sample if ratings.len() > 1 => (var * n / (n - 1.0)).sqrt(),
            StdMode::Sample => 0.0,
        };
        let p = build_attractiveness_distribution(y, sigma, grid, family)?;
        Ok(Self { y, sigma, r, p })
    }
}

/// Raw integer ratings per sample, optionally with feature vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RatingRecordSet {
    pub ratings: BTreeMap<String, Vec<u8>>,
    pub features: Option<BTreeMap<String, Vec<f64>>>,
}

impl RatingRecordSet {
    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ratings.keys().map(String::as_str)
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.features.as_ref()?.values().next().map(Vec::len)
    }

    /// Attaches feature vectors; every rated sample must have one.
    pub fn with_features(mut self, features: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let width = features.values().next().map(Vec::len);
        if features.values().any(|f| Some(f.len()) != width) {
            return Err(Error::Shape("feature vectors differ in width".into()));
        }
        if let Some(missing) = self.ratings.keys().find(|id| !features.contains_key(*id)) {
            return Err(Error::Shape(format!("sample `{missing}` has ratings but no features")));
        }
        self.features = Some(features);
        Ok(self)
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader)
}

fn csv_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

pub fn parse_ratings<R: Read>(reader: R) -> Result<RatingRecordSet> {
    let mut ratings: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (i, record) in csv_reader(reader).records().enumerate() {
        let record = record.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = csv_line(&record);
        if i == 0 && record.get(0) == Some("sample_id") {
            continue;
        }
        if !(2..=3).contains(&record.len()) {
            return Err(Error::Parse { line, msg: format!("expected `sample_id,rating[,rater_id]`, found {} fields", record.len()) });
        }
        let id = &record[0];
        if id.is_empty() {
            return Err(Error::Parse { line, msg: "empty sample_id".into() });
        }
        let rating: i64 = record[1]
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("rating `{}` is not an integer", &record[1]) })?;
        if !(1..=N_RATINGS as i64).contains(&rating) {
            return Err(Error::InvalidRating { rating, line: Some(line) });
        }
        if let Some(rater) = record.get(2) {
            if !seen.insert((id.to_owned(), rater.to_owned())) {
                return Err(Error::Parse { line, msg: format!("duplicate rating by rater `{rater}` for sample `{id}`") });
            }
        }
        ratings.entry(id.to_owned()).or_default().push(rating as u8);
    }
    if ratings.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(RatingRecordSet { ratings, features: None })
}

pub fn load_ratings(path: impl AsRef<Path>) -> Result<RatingRecordSet> {
    let path = path.as_ref();
    parse_ratings(fs::File::open(path).map_err(|e| Error::io(path, e))?)
}

pub fn parse_features<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    let mut width = None;
    for (i, record) in csv_reader(reader).records().enumerate() {
        let record = record.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = csv_line(&record);
        if i == 0 {
            if record.get(0) != Some("sample_id") || record.len() < 2 {
                return Err(Error::Parse { line, msg: "expected header `sample_id,f0,f1,...`".into() });
            }
            width = Some(record.len() - 1);
            continue;
        }
        if Some(record.len() - 1) != width {
            return Err(Error::Parse { line, msg: format!("expected {} features, found {}", width.unwrap_or(0), record.len() - 1) });
        }
        let values = record
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse { line, msg: format!("`{v}` is not a finite number") })
            })
            .collect::<Result<Vec<_>>>()?;
        if out.insert(record[0].to_owned(), values).is_some() {
            return Err(Error::Parse { line, msg: format!("duplicate sample `{}`", &record[0]) });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<f64>>> {
    let path = path.as_ref();
    parse_features(fs::File::open(path).map_err(|e| Error::io(path, e))?)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_ratings(path: impl AsRef<Path>, records: &RatingRecordSet) -> Result<()> {
    write_file(path.as_ref(), |w| {
        writeln!(w, "sample_id,rating")?;
        for (id, ratings) in &records.ratings {
            for r in ratings {
                writeln!(w, "{id},{r}")?;
            }
        }
        Ok(())
    })
}

pub fn write_features(path: impl AsRef<Path>, features: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let width = features.values().next().map_or(0, Vec::len);
    write_file(path.as_ref(), |w| {
        write!(w, "sample_id")?;
        for i in 0..width {
            write!(w, ",f{i}")?;
        }
        writeln!(w)?;
        for (id, f) in features {
            write!(w, "{id}")?;
            for x in f {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

/// Label bundle for every sample in `records`.
pub fn build_labels(
    records: &RatingRecordSet,
    grid: &DistributionGrid,
    family: Family,
    std_mode: StdMode,
) -> Result<BTreeMap<String, LabelBundle>> {
    records
        .ratings
        .iter()
        .map(|(id, ratings)| Ok((id.clone(), LabelBundle::from_ratings(ratings, grid, family, std_mode)?)))
        .collect()
}

/// Writes `sample_id,y,sigma,r1..r5,p0..p{n-1}` rows.
pub fn write_labels(path: impl AsRef<Path>, labels: &BTreeMap<String, LabelBundle>) -> Result<()> {
    let width = labels.values().next().map_or(0, |l| l.p.len());
    write_file(path.as_ref(), |w| {
        write!(w, "sample_id,y,sigma")?;
        for m in 1..=N_RATINGS {
            write!(w, ",r{m}")?;
        }
        for j in 0..width {
            write!(w, ",p{j}")?;
        }
        writeln!(w)?;
        for (id, l) in labels {
            write!(w, "{id},{},{}", l.y, l.sigma)?;
            for x in l.r.probs().iter().chain(l.p.as_slice()) {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

/// Features and label bundles aligned by row, ready for training.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<LabelBundle>,
}

impl Dataset {
    pub fn from_records(records: &RatingRecordSet, grid: &DistributionGrid, family: Family, std_mode: StdMode) -> Result<Self> {
        let features = records.features.as_ref().ok_or_else(|| Error::Config("dataset has no feature vectors".into()))?;
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut labels = build_labels(records, grid, family, std_mode)?;
        let ids: Vec<String> = records.ratings.keys().cloned().collect();
        let feats = ids
            .iter()
            .map(|id| features.get(id).cloned().ok_or_else(|| Error::Shape(format!("sample `{id}` has no features"))))
            .collect::<Result<Vec<_>>>()?;
        let labels = ids.iter().map(|id| labels.remove(id).expect("label per id")).collect();
        Ok(Self { ids, features: feats, labels })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.y).collect()
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            features: rows.iter().map(|&i| self.features[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }
}

/// One train/test split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded partition of `ids` into `k` test folds whose sizes differ by at
/// most one. Each fold's training set is the complement of its test set;
/// both keep the original relative order of `ids`.
pub fn split_kfold<T: Clone>(ids: &[T], k: usize, seed: u64) -> Result<Vec<Fold<T>>> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be >= 2, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::Config(format!("cannot split {} samples into {k} folds", ids.len())));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0usize; ids.len()];
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &order[pos..pos + size] {
            assignment[i] = fold;
        }
        pos += size;
    }
    Ok((0..k)
        .map(|fold| {
            let (test, train): (Vec<_>, Vec<_>) = ids.iter().zip(&assignment).partition(|(_, &a)| a == fold);
            Fold { train: train.into_iter().map(|(x, _)| x.clone()).collect(), test: test.into_iter().map(|(x, _)| x.clone()).collect() }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub feature_dim: usize,
    pub raters_per_sample: usize,
    /// Standard deviation of each rater's Laplace-distributed deviation.
    pub rater_noise: f64,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_samples: 500, feature_dim: 16, raters_per_sample: 60, rater_noise: 0.6, feature_noise: 0.1, seed: 7 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.feature_dim == 0 || self.raters_per_sample == 0 {
            return Err(Error::Config(format!("synthetic counts must be >= 1: {self:?}")));
        }
        if !(self.rater_noise >= 0.0 && self.rater_noise.is_finite() && self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::Config(format!("synthetic noise levels must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

pub const HIDDEN_SCORE_RANGE: (f64, f64) = (1.2, 4.8);

/// A generated dataset with the hidden scores that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub config: SynthConfig,
    pub records: RatingRecordSet,
    pub hidden: BTreeMap<String, f64>,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Laplace draw with the given standard deviation, by inverse CDF.
fn laplace_noise(rng: &mut impl Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    let b = std / std::f64::consts::SQRT_2;
    let u: f64 = rng.gen_range(-0.5..0.5);
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Nonlinear basis the synthetic features are built from.
fn score_basis(score: f64) -> [f64; 3] {
    let t = (score - 3.0) / 1.8;
    [t, t * t, score.sin()]
}

/// Mean and covariance of [`score_basis`] for a score uniform on
/// [`HIDDEN_SCORE_RANGE`], by the midpoint rule.
fn basis_moments() -> ([f64; 3], [[f64; 3]; 3]) {
    const N: usize = 4096;
    let (lo, hi) = HIDDEN_SCORE_RANGE;
    let h = (hi - lo) / N as f64;
    let mut mean = [0.0; 3];
    let mut second = [[0.0; 3]; 3];
    for i in 0..N {
        let b = score_basis(lo + (i as f64 + 0.5) * h);
        for a in 0..3 {
            mean[a] += b[a] / N as f64;
            for c in 0..3 {
                second[a][c] += b[a] * b[c] / N as f64;
            }
        }
    }
    let cov = std::array::from_fn(|a| std::array::from_fn(|c| second[a][c] - mean[a] * mean[c]));
    (mean, cov)
}

/// Generates a synthetic rated dataset with informative features.
///
/// Each sample draws a hidden score uniformly on [1.2, 4.8]. Every rater
/// reports `clamp(round(score + noise), 1, 5)` with Laplace noise. Features
/// are a fixed random affine embedding of `(score, score^2, sin(score))`,
/// centered and scaled so each clean feature has zero mean and unit variance
/// over the hidden-score distribution, plus Gaussian noise.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut embed_rng = rng_stream(config.seed, 0);
    let mut score_rng = rng_stream(config.seed, 1);
    let mut rater_rng = rng_stream(config.seed, 2);
    let mut noise_rng = rng_stream(config.seed, 3);

    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (basis_mean, basis_cov) = basis_moments();
    let embedding: Vec<([f64; 3], f64)> = (0..config.feature_dim)
        .map(|_| {
            let row: [f64; 3] = std::array::from_fn(|_| std_normal.sample(&mut embed_rng));
            let var: f64 = (0..3).map(|a| (0..3).map(|c| row[a] * basis_cov[a][c] * row[c]).sum::<f64>()).sum();
            let shift: f64 = row.iter().zip(&basis_mean).map(|(a, m)| a * m).sum();
            let scale = 1.0 / var.sqrt();
            (row.map(|a| a * scale), shift * scale)
        })
        .collect();

    let width = (config.n_samples - 1).to_string().len().max(4);
    let (lo, hi) = HIDDEN_SCORE_RANGE;
    let mut ratings = BTreeMap::new();
    let mut features = BTreeMap::new();
    let mut hidden = BTreeMap::new();
    for i in 0..config.n_samples {
        let id = format!("s{i:0width$}");
        let score: f64 = score_rng.gen_range(lo..hi);
        let panel: Vec<u8> = (0..config.raters_per_sample)
            .map(|_| (score + laplace_noise(&mut rater_rng, config.rater_noise)).round().clamp(1.0, 5.0) as u8)
            .collect();
        let basis = score_basis(score);
        let feats: Vec<f64> = embedding
            .iter()
            .map(|(row, shift)| {
                let clean: f64 = row.iter().zip(&basis).map(|(a, b)| a * b).sum::<f64>() - shift;
                if config.feature_noise > 0.0 {
                    clean + config.feature_noise * std_normal.sample(&mut noise_rng)
                } else {
                    clean
                }
            })
            .collect();
        ratings.insert(id.clone(), panel);
        features.insert(id.clone(), feats);
        hidden.insert(id, score);
    }
    Ok(SyntheticData { config: config.clone(), records: RatingRecordSet { ratings, features: Some(features) }, hidden })
}

impl SyntheticData {
    /// Mean absolute gap between each sample's mean rating and its hidden
    /// score: the error of a predictor that knows the hidden scores exactly.
    pub fn rater_noise_floor(&self) -> f64 {
        let total: f64 = self
            .records
            .ratings
            .iter()
            .map(|(id, r)| {
                let mean = r.iter().map(|&x| x as f64).sum::<f64>() / r.len() as f64;
                (mean - self.hidden[id]).abs()
            })
            .sum();
        total / self.records.len() as f64
    }

    /// Writes `ratings.csv`, `features.csv` and `manifest.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_ratings(dir.join(RATINGS_FILE), &self.records)?;
        if let Some(f) = &self.records.features {
            write_features(dir.join(FEATURES_FILE), f)?;
        }
        write_manifest(dir.join(MANIFEST_FILE), &self.config, &self.hidden)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let records = load_ratings(dir.join(RATINGS_FILE))?.with_features(load_features(dir.join(FEATURES_FILE))?)?;
        let (config, hidden) = read_manifest(dir.join(MANIFEST_FILE))?;
        Ok(Self { config, records, hidden })
    }
}

pub const RATINGS_FILE: &str = "ratings.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn write_manifest(path: impl AsRef<Path>, config: &SynthConfig, hidden: &BTreeMap<String, f64>) -> Result<()> {
    write_file(path.as_ref(), |w| {
        writeln!(w, "# synthetic dataset manifest; hidden scores are for oracle checks only")?;
        writeln!(w, "n_samples = {}", config.n_samples)?;
        writeln!(w, "feature_dim = {}", config.feature_dim)?;
        writeln!(w, "raters_per_sample = {}", config.raters_per_sample)?;
        writeln!(w, "rater_noise = {}", config.rater_noise)?;
        writeln!(w, "feature_noise = {}", config.feature_noise)?;
        writeln!(w, "seed = {}", config.seed)?;
        writeln!(w, "hidden_scores:")?;
        for (id, s) in hidden {
            writeln!(w, "{id},{s}")?;
        }
        Ok(())
    })
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<(SynthConfig, BTreeMap<String, f64>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    let mut hidden = BTreeMap::new();
    let mut in_hidden = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "hidden_scores:" {
            in_hidden = true;
        } else if in_hidden {
            let (id, score) = line.split_once(',').ok_or(Error::Parse { line: line_no, msg: "expected `sample_id,score`".into() })?;
            let score = score.trim().parse().map_err(|_| Error::Parse { line: line_no, msg: format!("bad score `{score}`") })?;
            hidden.insert(id.trim().to_owned(), score);
        } else {
            let (k, v) = line.split_once('=').ok_or(Error::Parse { line: line_no, msg: "expected `key = value`".into() })?;
            fields.insert(k.trim(), v.trim());
        }
    }
    fn get<T: FromStr>(fields: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
        fields
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("manifest field `{key}` missing or malformed") })
    }
    let config = SynthConfig {
        n_samples: get(&fields, "n_samples")?,
        feature_dim: get(&fields, "feature_dim")?,
        raters_per_sample: get(&fields, "raters_per_sample")?,
        rater_noise: get(&fields, "rater_noise")?,
        feature_noise: get(&fields, "feature_noise")?,
        seed: get(&fields, "seed")?,
    };
    Ok((config, hidden))
}
