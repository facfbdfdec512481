//! Randomized finite-difference verification of every analytic gradient.
//!
//! Each case draws fresh inputs from its own seed and compares the analytic
//! gradient against central differences of the corresponding forward
//! computation. Cases cycle through the loss terms, the joint loss through
//! the output head, the head alone, and every parameter of a tiny network.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{LabelBundle, StdMode};
use crate::dist::{expectation, rating_mass, DistributionGrid, Family};
use crate::error::Result;
use crate::losses::{head_backward, head_forward, loss_ad, loss_rd, loss_score, JointLoss, LossWeights, ScoreReduction};
use crate::net::{NetConfig, PredictorNet};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Maximum accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Magnitude below which gradients are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    LossAd,
    LossRd,
    LossScore,
    JointLoss,
    Head,
    NetParams,
}

impl CheckKind {
    pub const ALL: [CheckKind; 6] =
        [CheckKind::LossAd, CheckKind::LossRd, CheckKind::LossScore, CheckKind::JointLoss, CheckKind::Head, CheckKind::NetParams];
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckKind::LossAd => "loss_ad",
            CheckKind::LossRd => "loss_rd",
            CheckKind::LossScore => "loss_score",
            CheckKind::JointLoss => "joint_loss",
            CheckKind::Head => "head",
            CheckKind::NetParams => "net_params",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradCheckConfig {
    pub cases: usize,
    pub seed: u64,
    /// Deliberately corrupts the analytic gradients, to confirm the harness
    /// notices.
    pub perturb_analytic: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { cases: 120, seed: 0, perturb_analytic: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub index: usize,
    pub seed: u64,
    pub kind: CheckKind,
    pub components: usize,
    pub max_rel_error: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub cases: Vec<CaseResult>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.passed())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let up = f(&x);
            x[i] = orig - STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn random_bundle(rng: &mut ChaCha8Rng, grid: &DistributionGrid, family: Family) -> Result<LabelBundle> {
    let n = rng.gen_range(1..40);
    let center: f64 = rng.gen_range(1.0..5.0);
    let ratings: Vec<u8> = (0..n).map(|_| (center + rng.gen_range(-1.5..1.5)).round().clamp(1.0, 5.0) as u8).collect();
    LabelBundle::from_ratings(&ratings, grid, family, StdMode::Population)
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn case_seed(base: u64, index: usize) -> u64 {
    // splitmix64 finalizer, so neighbouring cases draw unrelated inputs.
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Returns `(analytic, numeric)` gradient vectors for one case.
fn run_case(kind: CheckKind, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = DistributionGrid::default();
    let bins = grid.n_bins();
    let family = if rng.gen_bool(0.5) { Family::Laplace } else { Family::Gaussian };
    let n = rng.gen_range(1..=4);
    let targets = (0..n).map(|_| random_bundle(&mut rng, &grid, family)).collect::<Result<Vec<_>>>()?;
    let reduction = if rng.gen_bool(0.5) { ScoreReduction::Sum } else { ScoreReduction::Mean };

    match kind {
        CheckKind::LossAd | CheckKind::LossRd | CheckKind::LossScore => {
            let probs: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(&mut rng, bins)).collect();
            let weights = match kind {
                CheckKind::LossAd => LossWeights::new(1.0, 0.0, 0.0)?,
                CheckKind::LossRd => LossWeights::new(0.0, 1.0, 0.0)?,
                _ => LossWeights::new(0.0, 0.0, 1.0)?,
            };
            let objective = JointLoss::new(&grid, weights).with_reduction(reduction);
            let (_, analytic) = objective.grad_probs(&probs, &targets)?;
            let f = |x: &[f64]| -> f64 {
                let rows: Vec<&[f64]> = x.chunks(bins).collect();
                match kind {
                    CheckKind::LossAd => {
                        let tp: Vec<&[f64]> = targets.iter().map(|t| t.p.as_slice()).collect();
                        loss_ad(&rows, &tp).expect("shapes agree")
                    }
                    CheckKind::LossRd => {
                        let derived: Vec<[f64; 5]> = rows.iter().map(|p| rating_mass(p, &grid)).collect();
                        let tr: Vec<&[f64]> = targets.iter().map(|t| t.r.as_ref()).collect();
                        loss_rd(&derived, &tr).expect("shapes agree")
                    }
                    _ => {
                        let y_hat: Vec<f64> = rows.iter().map(|p| expectation(p, &grid)).collect();
                        let y: Vec<f64> = targets.iter().map(|t| t.y).collect();
                        loss_score(&y_hat, &y, reduction).expect("shapes agree")
                    }
                }
            };
            Ok((analytic.concat(), central_diff(f, &probs.concat())))
        }
        CheckKind::JointLoss => {
            let logits: Vec<Vec<f64>> = (0..n).map(|_| (0..bins).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let weights = LossWeights::new(rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0))?;
            let objective = JointLoss::new(&grid, weights).with_reduction(reduction);
            let (_, analytic) = objective.backward(&logits, &targets)?;
            let f = |x: &[f64]| {
                let rows: Vec<&[f64]> = x.chunks(bins).collect();
                objective.evaluate_logits(&rows, &targets).expect("finite logits").total
            };
            Ok((analytic.concat(), central_diff(f, &logits.concat())))
        }
        CheckKind::Head => {
            let z: Vec<f64> = (0..bins).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let v: Vec<f64> = (0..bins).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let analytic = head_backward(&z, &v)?;
            let f = |x: &[f64]| head_forward(x).expect("finite logits").iter().zip(&v).map(|(p, v)| p * v).sum::<f64>();
            Ok((analytic, central_diff(f, &z)))
        }
        CheckKind::NetParams => {
            let mut net = PredictorNet::init(NetConfig::new(3, vec![4], rng.gen()))?;
            // Random biases keep hidden units away from the rectifier kink.
            for layer in net.layers_mut() {
                layer.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
            }
            let features: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let weights = LossWeights::new(rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0))?;
            let objective = JointLoss::new(&grid, weights).with_reduction(reduction);

            let cache = net.forward_logits(&features)?;
            let (_, grad_logits) = objective.backward(&cache.logits, &targets)?;
            let analytic = net.backward_logits(&cache, &grad_logits)?.tensors().concat();

            let shapes: Vec<usize> = net.tensors_mut().iter().map(|t| t.len()).collect();
            let params: Vec<f64> = net.tensors_mut().iter().flat_map(|t| t.iter().copied()).collect();
            let f = |x: &[f64]| {
                let mut probe = net.clone();
                let mut offset = 0;
                for (t, len) in probe.tensors_mut().into_iter().zip(&shapes) {
                    t.copy_from_slice(&x[offset..offset + len]);
                    offset += len;
                }
                let cache = probe.forward_logits(&features).expect("finite inputs");
                objective.evaluate_logits(&cache.logits, &targets).expect("finite logits").total
            };
            Ok((analytic, central_diff(f, &params)))
        }
    }
}

/// Runs `config.cases` randomized checks, cycling through every
/// [`CheckKind`].
pub fn run(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let cases = (0..config.cases)
        .map(|index| {
            let kind = CheckKind::ALL[index % CheckKind::ALL.len()];
            let seed = case_seed(config.seed, index);
            let (mut analytic, numeric) = run_case(kind, seed)?;
            if config.perturb_analytic {
                analytic.iter_mut().for_each(|g| *g = *g * 1.01 + 1e-3);
            }
            let max_rel_error = analytic.iter().zip(&numeric).map(|(a, n)| relative_error(*a, *n)).fold(0.0, f64::max);
            Ok(CaseResult { index, seed, kind, components: analytic.len(), max_rel_error })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport { cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_passes() {
        let report = run(&GradCheckConfig { cases: 24, seed: 1, perturb_analytic: false }).unwrap();
        assert_eq!(report.cases.len(), 24);
        for kind in CheckKind::ALL {
            assert_eq!(report.cases.iter().filter(|c| c.kind == kind).count(), 4);
        }
        assert!(report.passed(), "max rel error {}", report.max_rel_error());
    }

    #[test]
    fn perturbation_is_detected() {
        let report = run(&GradCheckConfig { cases: 6, seed: 1, perturb_analytic: true }).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 6);
    }

    #[test]
    fn reproducible() {
        let cfg = GradCheckConfig { cases: 5, seed: 3, perturb_analytic: false };
        assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
    }
}
