//! Minibatch training under the joint loss, training logs, and k-fold
//! cross-validation.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{split_kfold, Dataset, RatingRecordSet, StdMode};
use crate::dist::{DistributionGrid, Family};
use crate::error::{Error, Result};
use crate::losses::{JointLoss, LossBreakdown, LossWeights, ScoreReduction};
use crate::metrics::{evaluate, EvalReport};
use crate::net::{NetConfig, PredictorNet};
use crate::optim::{lr_at, AdamW, AdamWConfig};

/// Which learning modules contribute to the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Modules {
    /// Attractiveness distribution learning.
    pub ad: bool,
    /// Rating distribution learning.
    pub rd: bool,
    /// Score regression learning.
    pub sr: bool,
}

impl Modules {
    pub const ALL: Modules = Modules { ad: true, rd: true, sr: true };
    pub const AD_ONLY: Modules = Modules { ad: true, rd: false, sr: false };

    pub fn is_empty(&self) -> bool {
        !(self.ad || self.rd || self.sr)
    }

    /// Weights with the excluded modules zeroed.
    pub fn mask(&self, w: LossWeights) -> LossWeights {
        LossWeights {
            lambda_ad: if self.ad { w.lambda_ad } else { 0.0 },
            lambda_rd: if self.rd { w.lambda_rd } else { 0.0 },
            lambda_score: if self.sr { w.lambda_score } else { 0.0 },
        }
    }
}

impl Default for Modules {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for Modules {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.ad, "ad"), (self.rd, "rd"), (self.sr, "sr")].iter().filter(|(on, _)| *on).map(|(_, n)| *n).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for Modules {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = Modules { ad: false, rd: false, sr: false };
        for part in s.split(',').map(|p| p.trim().to_ascii_lowercase()).filter(|p| !p.is_empty()) {
            match part.as_str() {
                "ad" => m.ad = true,
                "rd" => m.rd = true,
                "sr" => m.sr = true,
                other => return Err(Error::InvalidArgument(format!("unknown module `{other}` (expected ad, rd, sr)"))),
            }
        }
        if m.is_empty() {
            return Err(Error::Config("at least one module is required".into()));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub family: Family,
    pub modules: Modules,
    pub score_reduction: ScoreReduction,
    pub delta_l: f64,
    pub std_mode: StdMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 90,
            batch_size: 256,
            seed: 0,
            weights: LossWeights::default(),
            family: Family::Laplace,
            modules: Modules::ALL,
            score_reduction: ScoreReduction::Sum,
            delta_l: 0.1,
            std_mode: StdMode::Population,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("epochs and batch size must be >= 1 (got {} and {})", self.epochs, self.batch_size)));
        }
        if self.modules.is_empty() {
            return Err(Error::Config("at least one module is required".into()));
        }
        LossWeights::new(self.weights.lambda_ad, self.weights.lambda_rd, self.weights.lambda_score)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<DistributionGrid> {
        DistributionGrid::new(self.delta_l)
    }

    /// Loss weights after masking out disabled modules.
    pub fn effective_weights(&self) -> LossWeights {
        self.modules.mask(self.weights)
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 0-based epoch index.
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the epoch's minibatch loss breakdowns.
    pub loss: LossBreakdown,
    pub val: Option<EvalReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

pub const LOG_HEADER: &str = "# epoch,lr,l_ad,l_rd,l_score,total,val_pc,val_mae,val_rmse";

impl TrainLog {
    /// Line-delimited text, one record per epoch after a `#` header line.
    /// Floats use the shortest representation that round-trips; missing
    /// validation metrics are empty fields and an undefined PC is `undef`.
    pub fn to_text(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let LossBreakdown { l_ad, l_rd, l_score, total } = r.loss;
            write!(out, "{},{},{l_ad},{l_rd},{l_score},{total}", r.epoch, r.lr).unwrap();
            match &r.val {
                Some(v) => {
                    let pc = v.pc.map_or_else(|| "undef".to_owned(), |pc| pc.to_string());
                    writeln!(out, ",{pc},{},{}", v.mae, v.rmse).unwrap();
                }
                None => out.push_str(",,,\n"),
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut epochs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i as u64 + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 9 {
                return Err(err(format!("expected 9 fields, found {}", fields.len())));
            }
            let num = |i: usize| fields[i].parse::<f64>().map_err(|_| err(format!("field {} `{}` is not a number", i + 1, fields[i])));
            let epoch = fields[0].parse().map_err(|_| err(format!("bad epoch `{}`", fields[0])))?;
            let loss = LossBreakdown { l_ad: num(2)?, l_rd: num(3)?, l_score: num(4)?, total: num(5)? };
            let val = if fields[6..].iter().all(|f| f.is_empty()) {
                None
            } else {
                let pc = if fields[6] == "undef" { None } else { Some(num(6)?) };
                Some(EvalReport { pc, mae: num(7)?, rmse: num(8)?, n: 0 })
            };
            epochs.push(EpochRecord { epoch, lr: num(1)?, loss, val });
        }
        Ok(Self { epochs })
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Trains `net` in place. Each epoch shuffles the training rows with a
/// generator seeded from `config.seed`, walks them in minibatches (the last
/// one may be short) and takes one AdamW step per minibatch.
pub fn train(
    dataset: &Dataset,
    net: &mut PredictorNet,
    config: &TrainConfig,
    optim: &AdamWConfig,
    validation: Option<&Dataset>,
) -> Result<TrainLog> {
    config.validate()?;
    optim.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.feature_dim() != net.config().input_dim {
        return Err(Error::Config(format!(
            "dataset has {} features, network expects {}",
            dataset.feature_dim(),
            net.config().input_dim
        )));
    }
    let grid = config.grid()?;
    if grid.n_bins() != net.config().output_dim {
        return Err(Error::Config(format!("grid has {} bins, network emits {}", grid.n_bins(), net.config().output_dim)));
    }
    let objective = JointLoss::new(&grid, config.effective_weights()).with_reduction(config.score_reduction);
    let mut optimizer = AdamW::new(*optim, net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, optim);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for (step, rows) in order.chunks(config.batch_size).enumerate() {
            let diverged = |term: String| Error::Diverged { epoch, step, term };
            let features: Vec<&[f64]> = rows.iter().map(|&i| dataset.features[i].as_slice()).collect();
            let targets: Vec<_> = rows.iter().map(|&i| &dataset.labels[i]).collect();
            let cache = net.forward_logits(&features).map_err(|e| match e {
                Error::Numeric { term } => diverged(term),
                e => e,
            })?;
            let (loss, grad_logits) = objective.backward(&cache.logits, &targets).map_err(|e| match e {
                Error::Numeric { term } => diverged(term),
                e => e,
            })?;
            let grads = net.backward_logits(&cache, &grad_logits)?;
            optimizer.step(net, &grads, lr)?;
            sum.l_ad += loss.l_ad;
            sum.l_rd += loss.l_rd;
            sum.l_score += loss.l_score;
            sum.total += loss.total;
            batches += 1;
        }
        let b = batches as f64;
        let loss = LossBreakdown { l_ad: sum.l_ad / b, l_rd: sum.l_rd / b, l_score: sum.l_score / b, total: sum.total / b };
        let val = validation.map(|v| evaluate_net(net, v, &grid)).transpose()?;
        log.epochs.push(EpochRecord { epoch, lr, loss, val });
    }
    Ok(log)
}

/// Scores `net` on `dataset` against its label means.
pub fn evaluate_net(net: &PredictorNet, dataset: &Dataset, grid: &DistributionGrid) -> Result<EvalReport> {
    let pred = net.predict_scores(&dataset.features, grid)?;
    evaluate(&pred, &dataset.scores())
}

/// Outcome of one cross-validation fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub test_predictions: Vec<f64>,
    pub report: EvalReport,
    pub log: TrainLog,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossValReport {
    pub folds: Vec<FoldResult>,
    pub mean: EvalReport,
}

impl CrossValReport {
    pub fn fold_reports(&self) -> Vec<EvalReport> {
        self.folds.iter().map(|f| f.report).collect()
    }
}

/// k-fold cross-validation. The split is seeded by `train.seed`; fold `i`
/// initializes its network with `net.seed + i`. Folds train concurrently and
/// results are ordered by fold index.
pub fn cross_validate(
    records: &RatingRecordSet,
    k: usize,
    net: &NetConfig,
    train_config: &TrainConfig,
    optim: &AdamWConfig,
) -> Result<CrossValReport> {
    train_config.validate()?;
    optim.validate()?;
    let grid = train_config.grid()?;
    let dataset = Dataset::from_records(records, &grid, train_config.family, train_config.std_mode)?;
    let rows: Vec<usize> = (0..dataset.len()).collect();
    let folds = split_kfold(&rows, k, train_config.seed)?;
    let net_config = NetConfig { input_dim: dataset.feature_dim(), output_dim: grid.n_bins(), ..net.clone() };

    let folds = folds
        .into_par_iter()
        .enumerate()
        .map(|(i, fold)| {
            let train_set = dataset.subset(&fold.train);
            let test_set = dataset.subset(&fold.test);
            let mut model = PredictorNet::init(NetConfig { seed: net_config.seed.wrapping_add(i as u64), ..net_config.clone() })?;
            let log = train(&train_set, &mut model, train_config, optim, None)?;
            let test_predictions = model.predict_scores(&test_set.features, &grid)?;
            let report = evaluate(&test_predictions, &test_set.scores())?;
            Ok(FoldResult { fold: i, train_ids: train_set.ids, test_ids: test_set.ids, test_predictions, report, log })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = EvalReport::mean(&folds.iter().map(|f| f.report).collect::<Vec<_>>()).expect("k >= 2 folds");
    Ok(CrossValReport { folds, mean })
}
