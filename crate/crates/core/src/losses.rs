//! Loss terms of the joint objective and their analytic gradients.
//!
//! The three terms are
//!
//! ```text
//! L_ad    = 1/n * sum_i ||p_hat_i - p_i||_2
//! L_rd    = 1/n * sum_i ||r_hat_i - r_i||_2
//! L_score = sum_i (exp(|y_hat_i - y_i|) - 1)
//! L       = l1 * L_ad + l2 * L_rd + l3 * L_score
//! ```
//!
//! where `r_hat` sums `p_hat` over each rating's bin range and `y_hat` is the
//! expectation of the bin midpoints. The backward pass returns gradients with
//! respect to the head's pre-activation logits.

use std::borrow::Borrow;
use std::fmt;
use std::str::FromStr;

use crate::data::LabelBundle;
use crate::dist::{expectation, rating_mass, sigmoid, DistributionGrid, N_RATINGS};
use crate::error::{Error, Result};

/// Clamp on the absolute score error inside the exponential.
pub const MAX_SCORE_ERROR: f64 = 30.0;

/// Reduction applied to the per-sample score terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScoreReduction {
    #[default]
    Sum,
    Mean,
}

impl fmt::Display for ScoreReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreReduction::Sum => "sum",
            ScoreReduction::Mean => "mean",
        })
    }
}

impl FromStr for ScoreReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sum" => Ok(ScoreReduction::Sum),
            "mean" => Ok(ScoreReduction::Mean),
            other => Err(Error::InvalidArgument(format!("unknown score reduction `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_ad: f64,
    pub lambda_rd: f64,
    pub lambda_score: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_ad: 1.0, lambda_rd: 1.0, lambda_score: 1.0 }
    }
}

impl LossWeights {
    pub fn new(lambda_ad: f64, lambda_rd: f64, lambda_score: f64) -> Result<Self> {
        let w = Self { lambda_ad, lambda_rd, lambda_score };
        if [lambda_ad, lambda_rd, lambda_score].iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {w:?}")));
        }
        Ok(w)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_ad: f64,
    pub l_rd: f64,
    pub l_score: f64,
    pub total: f64,
}

fn check_batch(n_pred: usize, n_target: usize) -> Result<()> {
    if n_pred != n_target {
        return Err(Error::Shape(format!("prediction batch has {n_pred} rows, target batch has {n_target}")));
    }
    if n_pred == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_euclidean<P: AsRef<[f64]>, T: AsRef<[f64]>>(pred: &[P], target: &[T]) -> Result<f64> {
    check_batch(pred.len(), target.len())?;
    let mut total = 0.0;
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        let (p, t) = (p.as_ref(), t.as_ref());
        if p.len() != t.len() {
            return Err(Error::Shape(format!("row {i}: prediction width {} vs target width {}", p.len(), t.len())));
        }
        total += euclidean(p, t);
    }
    Ok(total / pred.len() as f64)
}

/// Batch-mean Euclidean distance between predicted and target attractiveness
/// distributions.
pub fn loss_ad<P: AsRef<[f64]>, T: AsRef<[f64]>>(pred: &[P], target: &[T]) -> Result<f64> {
    mean_euclidean(pred, target)
}

/// Batch-mean Euclidean distance between predicted and target rating
/// distributions.
pub fn loss_rd<P: AsRef<[f64]>, T: AsRef<[f64]>>(pred: &[P], target: &[T]) -> Result<f64> {
    mean_euclidean(pred, target)
}

/// Exponential score loss, `exp(|e|) - 1` per sample.
pub fn loss_score(pred: &[f64], target: &[f64], reduction: ScoreReduction) -> Result<f64> {
    check_batch(pred.len(), target.len())?;
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs().min(MAX_SCORE_ERROR).exp_m1()).sum();
    Ok(match reduction {
        ScoreReduction::Sum => sum,
        ScoreReduction::Mean => sum / pred.len() as f64,
    })
}

/// Weighted combination of already-computed loss terms.
pub fn joint_loss(l_ad: f64, l_rd: f64, l_score: f64, weights: &LossWeights) -> LossBreakdown {
    let total = weights.lambda_ad * l_ad + weights.lambda_rd * l_rd + weights.lambda_score * l_score;
    LossBreakdown { l_ad, l_rd, l_score, total }
}

/// Sigmoid followed by L1 normalization.
pub fn head_forward(logits: &[f64]) -> Result<Vec<f64>> {
    let mut u: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let total: f64 = u.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::numeric("output head normalizer"));
    }
    u.iter_mut().for_each(|x| *x /= total);
    Ok(u)
}

/// Vector-Jacobian product of the head: given `dL/dp_hat`, returns `dL/dz`.
///
/// With `u = sigmoid(z)`, `S = sum(u)` and `p_hat = u / S`,
/// `dp_hat_a/dz_c = u_c (1 - u_c) / S * (delta_ac - p_hat_a)`.
pub fn head_backward(logits: &[f64], grad_probs: &[f64]) -> Result<Vec<f64>> {
    if logits.len() != grad_probs.len() {
        return Err(Error::Shape(format!("{} logits vs {} output gradients", logits.len(), grad_probs.len())));
    }
    let u: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let total: f64 = u.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::numeric("output head normalizer"));
    }
    let dot: f64 = u.iter().zip(grad_probs).map(|(u, g)| u / total * g).sum();
    Ok(u.iter().zip(grad_probs).map(|(&u, &g)| u * (1.0 - u) / total * (g - dot)).collect())
}

/// The weighted three-term objective over a fixed grid.
#[derive(Clone, Debug)]
pub struct JointLoss<'g> {
    pub grid: &'g DistributionGrid,
    pub weights: LossWeights,
    pub reduction: ScoreReduction,
}

impl<'g> JointLoss<'g> {
    pub fn new(grid: &'g DistributionGrid, weights: LossWeights) -> Self {
        Self { grid, weights, reduction: ScoreReduction::Sum }
    }

    pub fn with_reduction(mut self, reduction: ScoreReduction) -> Self {
        self.reduction = reduction;
        self
    }

    fn check_targets<L: Borrow<LabelBundle>>(&self, width: usize, n: usize, targets: &[L]) -> Result<()> {
        check_batch(n, targets.len())?;
        if width != self.grid.n_bins() {
            return Err(Error::Shape(format!("output width {width} vs grid with {} bins", self.grid.n_bins())));
        }
        for t in targets {
            if t.borrow().p.len() != width {
                return Err(Error::Shape(format!("target distribution width {} vs {width}", t.borrow().p.len())));
            }
        }
        Ok(())
    }

    /// Loss breakdown for already-normalized predicted distributions.
    pub fn evaluate_probs<P: AsRef<[f64]>, L: Borrow<LabelBundle>>(&self, probs: &[P], targets: &[L]) -> Result<LossBreakdown> {
        let width = probs.first().map_or(0, |p| p.as_ref().len());
        self.check_targets(width, probs.len(), targets)?;
        let n = probs.len() as f64;
        let (mut l_ad, mut l_rd, mut l_score) = (0.0, 0.0, 0.0);
        for (p_hat, t) in probs.iter().zip(targets) {
            let (p_hat, t) = (p_hat.as_ref(), t.borrow());
            l_ad += euclidean(p_hat, t.p.as_slice());
            l_rd += euclidean(&rating_mass(p_hat, self.grid), t.r.probs());
            l_score += (expectation(p_hat, self.grid) - t.y).abs().min(MAX_SCORE_ERROR).exp_m1();
        }
        if self.reduction == ScoreReduction::Mean {
            l_score /= n;
        }
        let out = joint_loss(l_ad / n, l_rd / n, l_score, &self.weights);
        check_finite(&out)?;
        Ok(out)
    }

    /// Loss breakdown for raw logits.
    pub fn evaluate_logits<P: AsRef<[f64]>, L: Borrow<LabelBundle>>(&self, logits: &[P], targets: &[L]) -> Result<LossBreakdown> {
        let probs = logits.iter().map(|z| head_forward(z.as_ref())).collect::<Result<Vec<_>>>()?;
        self.evaluate_probs(&probs, targets)
    }

    /// Loss breakdown plus `dL/dp_hat` for each row.
    pub fn grad_probs<P: AsRef<[f64]>, L: Borrow<LabelBundle>>(
        &self,
        probs: &[P],
        targets: &[L],
    ) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        let breakdown = self.evaluate_probs(probs, targets)?;
        let n = probs.len() as f64;
        let score_scale = match self.reduction {
            ScoreReduction::Sum => 1.0,
            ScoreReduction::Mean => 1.0 / n,
        };
        let LossWeights { lambda_ad, lambda_rd, lambda_score } = self.weights;
        let mut grads = Vec::with_capacity(probs.len());
        for (p_hat, t) in probs.iter().zip(targets) {
            let (p_hat, t) = (p_hat.as_ref(), t.borrow());
            let mut g = vec![0.0; p_hat.len()];

            // Euclidean-norm terms; the subgradient at a zero residual is zero.
            let norm = euclidean(p_hat, t.p.as_slice());
            if norm > 0.0 {
                let c = lambda_ad / (n * norm);
                for ((g, a), b) in g.iter_mut().zip(p_hat).zip(t.p.as_slice()) {
                    *g += c * (a - b);
                }
            }
            let r_hat = rating_mass(p_hat, self.grid);
            let norm = euclidean(&r_hat, t.r.probs());
            if norm > 0.0 {
                let c = lambda_rd / (n * norm);
                for m in 0..N_RATINGS {
                    let d = c * (r_hat[m] - t.r.probs()[m]);
                    for gj in &mut g[self.grid.rating_ranges()[m].clone()] {
                        *gj += d;
                    }
                }
            }

            let e = expectation(p_hat, self.grid) - t.y;
            let d_score = lambda_score * score_scale * e.signum() * e.abs().min(MAX_SCORE_ERROR).exp();
            if e != 0.0 {
                for (g, w) in g.iter_mut().zip(self.grid.midpoints()) {
                    *g += d_score * w;
                }
            }
            grads.push(g);
        }
        Ok((breakdown, grads))
    }

    /// Loss breakdown plus `dL/dz` for each row of logits.
    pub fn backward<P: AsRef<[f64]>, L: Borrow<LabelBundle>>(&self, logits: &[P], targets: &[L]) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        let probs = logits.iter().map(|z| head_forward(z.as_ref())).collect::<Result<Vec<_>>>()?;
        let (breakdown, grad_p) = self.grad_probs(&probs, targets)?;
        let grads = logits
            .iter()
            .zip(&grad_p)
            .map(|(z, g)| head_backward(z.as_ref(), g))
            .collect::<Result<Vec<_>>>()?;
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::numeric("logit gradient"));
        }
        Ok((breakdown, grads))
    }
}

/// `dL/dlogits` for the joint objective with sum-reduced score loss.
pub fn joint_loss_backward<P: AsRef<[f64]>, L: Borrow<LabelBundle>>(
    logits: &[P],
    targets: &[L],
    grid: &DistributionGrid,
    weights: LossWeights,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    JointLoss::new(grid, weights).backward(logits, targets)
}

fn check_finite(b: &LossBreakdown) -> Result<()> {
    for (name, v) in [("l_ad", b.l_ad), ("l_rd", b.l_rd), ("l_score", b.l_score), ("total", b.total)] {
        if !v.is_finite() {
            return Err(Error::numeric(name));
        }
    }
    Ok(())
}
