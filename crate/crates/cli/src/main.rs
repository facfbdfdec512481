//! `dldl`: synthesize rated datasets, build label distributions, train and
//! cross-validate the predictor, evaluate predictions and check gradients.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dldl::data::{self, generate_synthetic, Dataset, RatingRecordSet, StdMode, SynthConfig};
use dldl::dist::{DistributionGrid, Family};
use dldl::gradcheck::{self, GradCheckConfig};
use dldl::losses::{LossWeights, ScoreReduction};
use dldl::metrics::{evaluate, report_table};
use dldl::net::{NetConfig, PredictorNet};
use dldl::optim::AdamWConfig;
use dldl::train::{self, cross_validate, Modules, TrainConfig, TrainLog};

const MODEL_FILE: &str = "model.dldl";
const LOG_FILE: &str = "train_log.csv";
const LABELS_FILE: &str = "labels.csv";
const CROSSVAL_REPORT_FILE: &str = "crossval_report.txt";
const CROSSVAL_PREDICTIONS_FILE: &str = "crossval_predictions.csv";
const EVAL_REPORT_FILE: &str = "eval_report.txt";

#[derive(Parser, Debug)]
#[command(name = "dldl", version, about = "Dual-label-distribution learning for attractiveness score prediction")]
struct Cli {
    /// Seed for data synthesis, initialization, shuffling and splits.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory that receives every file a command writes.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Print progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic rated dataset with informative features.
    Synth(SynthArgs),
    /// Build per-sample label bundles (y, sigma, r, p) from a ratings CSV.
    BuildDist(BuildDistArgs),
    /// Train one model and save it with its training log.
    Train(TrainCmdArgs),
    /// k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Summarize a training log.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    /// Raters per sample.
    #[arg(long, default_value_t = 60)]
    raters: usize,
    /// Standard deviation of each rater's Laplace deviation.
    #[arg(long, default_value_t = 0.6)]
    rater_noise: f64,
    #[arg(long, default_value_t = 0.1)]
    feature_noise: f64,
}

#[derive(Args, Debug, Clone)]
struct LabelArgs {
    /// Distribution family used to discretize scores: laplace or gaussian.
    #[arg(long, default_value = "laplace")]
    family: Family,
    /// Width of each score interval.
    #[arg(long, default_value_t = 0.1)]
    delta_l: f64,
    /// Rating standard deviation convention: population or sample.
    #[arg(long, default_value = "population")]
    std_mode: StdMode,
}

#[derive(Args, Debug)]
struct BuildDistArgs {
    #[arg(long)]
    ratings: PathBuf,
    #[command(flatten)]
    labels: LabelArgs,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    features: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 120)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-2)]
    weight_decay: f64,
    /// Epochs between learning-rate drops.
    #[arg(long, default_value_t = 30)]
    step_every: usize,
    /// Learning-rate multiplier applied at each drop.
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    hidden: Vec<usize>,
    /// Learning modules to enable, any of ad,rd,sr.
    #[arg(long, default_value = "ad,rd,sr")]
    modules: Modules,
    /// Loss weights for the ad, rd and score terms.
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "1,1,1")]
    lambda: Vec<f64>,
    /// Reduction of the per-sample score terms: sum or mean.
    #[arg(long, default_value = "sum")]
    score_reduction: ScoreReduction,
    #[command(flatten)]
    labels: LabelArgs,
}

#[derive(Args, Debug)]
struct TrainCmdArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Fraction of samples held out for per-epoch validation.
    #[arg(long, default_value_t = 0.0)]
    val_fraction: f64,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value_t = 5)]
    k: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted scores, `sample_id,score` with a header row.
    #[arg(long, requires = "truth", conflicts_with = "model")]
    pred: Option<PathBuf>,
    /// Ground-truth scores, `sample_id,score` with a header row.
    #[arg(long, requires = "pred")]
    truth: Option<PathBuf>,
    /// Saved model to run over `--features`; truth comes from `--ratings`.
    #[arg(long, requires_all = ["features", "ratings"])]
    model: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    ratings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = GradCheckConfig::default().cases)]
    cases: usize,
    /// Corrupt the analytic gradients to confirm the check fails.
    #[arg(long)]
    perturb_analytic: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    log: PathBuf,
    /// Print every n-th epoch (the last epoch is always printed).
    #[arg(long, default_value_t = 1)]
    every: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a)?,
        Command::BuildDist(a) => build_dist(cli, a)?,
        Command::Train(a) => train_cmd(cli, a)?,
        Command::Crossval(a) => crossval(cli, a)?,
        Command::Eval(a) => eval(cli, a)?,
        Command::Gradcheck(a) => return grad_check(cli, a),
        Command::Report(a) => report(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_samples: a.n,
        feature_dim: a.feature_dim,
        raters_per_sample: a.raters,
        rater_noise: a.rater_noise,
        feature_noise: a.feature_noise,
        seed: cli.seed,
    };
    config.validate()?;
    let synthetic = generate_synthetic(&config)?;
    create_out(&cli.out)?;
    synthetic.save(&cli.out)?;
    println!("wrote {} samples to {}", config.n_samples, cli.out.display());
    println!("rater_noise_floor = {:.6}", synthetic.rater_noise_floor());
    Ok(())
}

fn build_dist(cli: &Cli, a: &BuildDistArgs) -> Result<()> {
    let grid = DistributionGrid::new(a.labels.delta_l)?;
    let records = data::load_ratings(&a.ratings)?;
    let labels = data::build_labels(&records, &grid, a.labels.family, a.labels.std_mode)?;
    create_out(&cli.out)?;
    let path = cli.out.join(LABELS_FILE);
    data::write_labels(&path, &labels)?;
    println!("wrote {} label bundles ({} bins) to {}", labels.len(), grid.n_bins(), path.display());
    Ok(())
}

struct Configs {
    train: TrainConfig,
    optim: AdamWConfig,
    net: NetConfig,
}

fn configs(cli: &Cli, a: &TrainArgs) -> Result<Configs> {
    let [lambda_ad, lambda_rd, lambda_score] = a.lambda[..] else {
        bail!("--lambda takes exactly three weights");
    };
    let train = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: cli.seed,
        weights: LossWeights::new(lambda_ad, lambda_rd, lambda_score)?,
        family: a.labels.family,
        modules: a.modules,
        score_reduction: a.score_reduction,
        delta_l: a.labels.delta_l,
        std_mode: a.labels.std_mode,
    };
    train.validate()?;
    let grid = train.grid()?;
    let optim = AdamWConfig {
        lr: a.lr,
        weight_decay: a.weight_decay,
        step_every: a.step_every,
        step_gamma: a.gamma,
        ..AdamWConfig::default()
    };
    optim.validate()?;
    // The input width is filled in once the features are loaded.
    let net = NetConfig::new(1, a.hidden.clone(), cli.seed).with_output_dim(grid.n_bins());
    net.validate()?;
    Ok(Configs { train, optim, net })
}

fn load_records(a: &DataArgs) -> Result<RatingRecordSet> {
    let features = data::load_features(&a.features)?;
    Ok(data::load_ratings(&a.ratings)?.with_features(features)?)
}

fn train_cmd(cli: &Cli, a: &TrainCmdArgs) -> Result<()> {
    let Configs { train: train_config, optim, net } = configs(cli, &a.train)?;
    ensure!((0.0..1.0).contains(&a.val_fraction), "--val-fraction must be in [0, 1), got {}", a.val_fraction);
    let grid = train_config.grid()?;
    let records = load_records(&a.data)?;
    let dataset = Dataset::from_records(&records, &grid, train_config.family, train_config.std_mode)?;

    let mut rows: Vec<usize> = (0..dataset.len()).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(cli.seed));
    let n_val = (a.val_fraction * dataset.len() as f64).round() as usize;
    ensure!(n_val < dataset.len(), "--val-fraction leaves no training samples");
    let (val_rows, train_rows) = rows.split_at(n_val);
    let (train_set, val_set) = if n_val == 0 {
        (dataset, None)
    } else {
        let mut val_rows = val_rows.to_vec();
        let mut train_rows = train_rows.to_vec();
        val_rows.sort_unstable();
        train_rows.sort_unstable();
        (dataset.subset(&train_rows), Some(dataset.subset(&val_rows)))
    };

    let mut model = PredictorNet::init(NetConfig { input_dim: train_set.feature_dim(), ..net })?;
    let log = train::train(&train_set, &mut model, &train_config, &optim, val_set.as_ref())?;
    if cli.verbose > 0 {
        eprint!("{}", log.to_text());
    }

    create_out(&cli.out)?;
    model.save(cli.out.join(MODEL_FILE))?;
    write_text(&cli.out.join(LOG_FILE), &log.to_text())?;

    let train_report = train::evaluate_net(&model, &train_set, &grid)?;
    let mut reports = vec![train_report];
    let mut labels = vec!["train"];
    if let Some(v) = &val_set {
        reports.push(train::evaluate_net(&model, v, &grid)?);
        labels.push("validation");
    }
    let last = log.last().expect("at least one epoch");
    println!("trained {} epochs on {} samples ({}), final loss {:.6}", log.epochs.len(), train_set.len(), train_config.modules, last.loss.total);
    print!("{}", report_table(&reports, &labels));
    Ok(())
}

fn crossval(cli: &Cli, a: &CrossvalArgs) -> Result<()> {
    let Configs { train: train_config, optim, net } = configs(cli, &a.train)?;
    ensure!(a.k >= 2, "--k must be at least 2, got {}", a.k);
    let records = load_records(&a.data)?;
    let result = cross_validate(&records, a.k, &net, &train_config, &optim)?;

    let labels: Vec<String> = (1..=a.k).map(|i| format!("fold-{i}")).collect();
    let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
    let table = report_table(&result.fold_reports(), &labels);

    let truth: BTreeMap<String, f64> = {
        let grid = train_config.grid()?;
        let dataset = Dataset::from_records(&records, &grid, train_config.family, train_config.std_mode)?;
        dataset.ids.iter().cloned().zip(dataset.scores()).collect()
    };
    let mut predictions = String::from("fold,sample_id,prediction,target\n");
    for fold in &result.folds {
        for (id, p) in fold.test_ids.iter().zip(&fold.test_predictions) {
            writeln!(predictions, "{},{id},{p},{}", fold.fold + 1, truth[id])?;
        }
        if cli.verbose > 0 {
            let last = fold.log.last().expect("at least one epoch");
            eprintln!("fold {}: final loss {:.6}", fold.fold + 1, last.loss.total);
        }
    }

    create_out(&cli.out)?;
    write_text(&cli.out.join(CROSSVAL_REPORT_FILE), &table)?;
    write_text(&cli.out.join(CROSSVAL_PREDICTIONS_FILE), &predictions)?;
    print!("{table}");
    Ok(())
}

/// Reads a `sample_id,score` file with a header row.
fn load_scores(path: &Path) -> Result<BTreeMap<String, f64>> {
    data::load_features(path)?
        .into_iter()
        .map(|(id, v)| match v[..] {
            [score] => Ok((id, score)),
            _ => bail!("{}: expected one score column, found {}", path.display(), v.len()),
        })
        .collect()
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let (pred, truth) = match (&a.pred, &a.truth, &a.model) {
        (Some(pred), Some(truth), None) => {
            let pred = load_scores(pred)?;
            let truth = load_scores(truth)?;
            if let Some(id) = pred.keys().find(|id| !truth.contains_key(*id)) {
                bail!("sample `{id}` has a prediction but no ground truth");
            }
            if let Some(id) = truth.keys().find(|id| !pred.contains_key(*id)) {
                bail!("sample `{id}` has ground truth but no prediction");
            }
            (pred.into_values().collect::<Vec<_>>(), truth.into_values().collect::<Vec<_>>())
        }
        (None, None, Some(model)) => {
            let (features, ratings) = (a.features.as_ref().expect("required by clap"), a.ratings.as_ref().expect("required by clap"));
            let net = PredictorNet::load(model)?;
            let grid = DistributionGrid::new((DistributionGrid::Y_MAX - DistributionGrid::Y_MIN) / net.config().output_dim as f64)?;
            let records = load_records(&DataArgs { ratings: ratings.clone(), features: features.clone() })?;
            let dataset = Dataset::from_records(&records, &grid, Family::default(), StdMode::default())?;
            (net.predict_scores(&dataset.features, &grid)?, dataset.scores())
        }
        _ => bail!("pass either --pred and --truth, or --model with --features and --ratings"),
    };
    let report = evaluate(&pred, &truth)?;
    let table = report_table(&[report], &["eval"]);
    create_out(&cli.out)?;
    write_text(&cli.out.join(EVAL_REPORT_FILE), &table)?;
    print!("{table}");
    Ok(())
}

fn grad_check(cli: &Cli, a: &GradcheckArgs) -> Result<ExitCode> {
    let config = GradCheckConfig { cases: a.cases, seed: cli.seed, perturb_analytic: a.perturb_analytic };
    let report = gradcheck::run(&config)?;
    if cli.verbose > 0 {
        for c in &report.cases {
            eprintln!("case {:>4}  seed {:>20}  {:<10}  {:>5} components  max rel error {:.3e}", c.index, c.seed, c.kind, c.components, c.max_rel_error);
        }
    }
    println!("{} cases, max relative error {:.3e} (tolerance {:.0e})", report.cases.len(), report.max_rel_error(), gradcheck::TOLERANCE);
    if report.passed() {
        println!("gradcheck passed");
        return Ok(ExitCode::SUCCESS);
    }
    for c in report.failures() {
        println!("FAILED case {} ({}) seed {}: max relative error {:.3e}", c.index, c.kind, c.seed, c.max_rel_error);
    }
    Ok(ExitCode::FAILURE)
}

fn report(a: &ReportArgs) -> Result<()> {
    ensure!(a.every >= 1, "--every must be at least 1");
    let text = fs::read_to_string(&a.log).with_context(|| format!("cannot read {}", a.log.display()))?;
    let log = TrainLog::parse(&text).with_context(|| format!("in {}", a.log.display()))?;
    ensure!(!log.epochs.is_empty(), "{} has no epochs", a.log.display());

    println!("{:>5}  {:>9}  {:>10}  {:>10}  {:>10}  {:>10}  {:>8}  {:>8}  {:>8}", "epoch", "lr", "l_ad", "l_rd", "l_score", "total", "val_PC", "val_MAE", "val_RMSE");
    let n = log.epochs.len();
    for (_, r) in log.epochs.iter().enumerate().filter(|(i, _)| i % a.every == 0 || i + 1 == n) {
        let val = match &r.val {
            Some(v) => {
                let pc = v.pc.map_or_else(|| "undef".to_owned(), |pc| format!("{pc:.4}"));
                format!("  {pc:>8}  {:>8.4}  {:>8.4}", v.mae, v.rmse)
            }
            None => String::new(),
        };
        println!(
            "{:>5}  {:>9.2e}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.6}{val}",
            r.epoch, r.lr, r.loss.l_ad, r.loss.l_rd, r.loss.l_score, r.loss.total
        );
    }
    let first = &log.epochs[0];
    let last = &log.epochs[n - 1];
    println!("{n} epochs; total loss {:.6} -> {:.6}", first.loss.total, last.loss.total);
    if let Some(best) = log.epochs.iter().filter_map(|r| r.val.map(|v| (r.epoch, v.mae))).min_by(|a, b| a.1.total_cmp(&b.1)) {
        println!("best validation MAE {:.4} at epoch {}", best.1, best.0);
    }
    Ok(())
}
