use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dldl::data::{generate_synthetic, Dataset, LabelBundle, StdMode, SynthConfig};
use dldl::dist::{
    build_attractiveness_distribution, derive_rating_distribution, interval_masses, AttractivenessDistribution,
    DistributionGrid, Family, MIN_SCALE,
};
use dldl::losses::{JointLoss, LossWeights, ScoreReduction};
use dldl::net::{NetConfig, PredictorNet};
use dldl::optim::{lr_at, AdamWConfig};
use dldl::train::{train, Modules, TrainConfig};

const DELTAS: [f64; 5] = [0.01, 0.05, 0.1, 0.2, 0.5];

fn density(family: Family, y: f64, sigma: f64) -> impl Fn(f64) -> f64 {
    move |x| match family {
        Family::Laplace => {
            let b = (sigma / 2f64.sqrt()).max(MIN_SCALE);
            (-(x - y).abs() / b).exp() / (2.0 * b)
        }
        Family::Gaussian => {
            let s = sigma.max(MIN_SCALE);
            let z = (x - y) / s;
            (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        }
    }
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (left, right) = (simpson(f, a, m), simpson(f, m, b));
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    adaptive(f, a, m, left, tol, depth - 1) + adaptive(f, m, b, right, tol, depth - 1)
}

/// Integral of `f` over [a, b], split at `kink` when it falls inside.
fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, kink: f64) -> f64 {
    let mut cuts = vec![a];
    if kink > a && kink < b {
        cuts.push(kink);
    }
    cuts.push(b);
    cuts.windows(2)
        .map(|w| {
            let pieces = 16;
            let h = (w[1] - w[0]) / pieces as f64;
            (0..pieces)
                .map(|i| {
                    let (lo, hi) = (w[0] + i as f64 * h, w[0] + (i + 1) as f64 * h);
                    adaptive(f, lo, hi, simpson(f, lo, hi), 1e-13, 40)
                })
                .sum::<f64>()
        })
        .sum()
}

#[test]
fn cdf_differences_match_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let family = if case % 2 == 0 { Family::Laplace } else { Family::Gaussian };
        let grid = DistributionGrid::new(DELTAS[case % DELTAS.len()]).unwrap();
        let y = rng.gen_range(1.0..=5.0);
        let sigma = if case % 10 == 0 { 0.0 } else { 10f64.powf(rng.gen_range(-2.5..0.5)) };
        let masses = interval_masses(y, sigma, &grid, family).unwrap();
        let f = density(family, y, sigma);
        for (j, w) in grid.endpoints().windows(2).enumerate() {
            let q = integrate(&f, w[0], w[1], y);
            assert!((masses[j] - q).abs() < 1e-8, "{family} y={y} sigma={sigma} bin {j}: {} vs {q}", masses[j]);
        }
    }
}

#[test]
fn rating_ranges_at_default_grid() {
    let grid = DistributionGrid::default();
    let ranges: Vec<(usize, usize)> = grid.rating_ranges().iter().map(|r| (r.start, r.end - 1)).collect();
    assert_eq!(ranges, [(0, 4), (5, 14), (15, 24), (25, 34), (35, 39)]);
}

#[test]
fn rating_ranges_partition_every_grid() {
    for delta in DELTAS {
        let grid = DistributionGrid::new(delta).unwrap();
        let mut owner = vec![None; grid.n_bins()];
        for (m, range) in grid.rating_ranges().iter().enumerate() {
            for j in range.clone() {
                assert!(owner[j].is_none(), "bin {j} claimed twice at delta {delta}");
                owner[j] = Some(m + 1);
            }
        }
        for (j, o) in owner.iter().enumerate() {
            // Independent rule: rating m owns midpoints in [m - 0.5, m + 0.5), clipped to [1, 5].
            let w = 1.0 + (j as f64 + 0.5) * delta;
            let expected = (1..=5).find(|&m| w >= m as f64 - 0.5 && w < m as f64 + 0.5).unwrap_or(5);
            assert_eq!(*o, Some(expected), "bin {j} at delta {delta}");
        }
    }
}

#[test]
fn rating_derivation_preserves_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = DistributionGrid::default();
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..grid.n_bins()).map(|_| rng.gen::<f64>().powi(3)).collect();
        let total: f64 = raw.iter().sum();
        let p = AttractivenessDistribution::new(raw.iter().map(|x| x / total).collect()).unwrap();
        let r = derive_rating_distribution(&p, &grid).unwrap();
        let p_sum: f64 = p.as_slice().iter().sum();
        let r_sum: f64 = r.probs().iter().sum();
        assert!((p_sum - r_sum).abs() <= 8.0 * f64::EPSILON, "{p_sum} vs {r_sum}");
    }
}

#[test]
fn attractiveness_distributions_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let family = if rng.gen() { Family::Laplace } else { Family::Gaussian };
        let grid = DistributionGrid::new(DELTAS[case % DELTAS.len()]).unwrap();
        let p = build_attractiveness_distribution(rng.gen_range(1.0..=5.0), rng.gen_range(0.0..2.5), &grid, family).unwrap();
        assert_eq!(p.len(), grid.n_bins());
        assert!(p.as_slice().iter().all(|&x| x >= 0.0));
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

fn loss_at(net: &PredictorNet, x: &[Vec<f64>], targets: &[LabelBundle], objective: &JointLoss) -> f64 {
    let cache = net.forward_logits(x).unwrap();
    objective.evaluate_logits(&cache.logits, targets).unwrap().total
}

#[test]
fn full_pipeline_gradient_matches_finite_differences() {
    let grid = DistributionGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for (reduction, seed) in [(ScoreReduction::Sum, 1), (ScoreReduction::Mean, 2), (ScoreReduction::Sum, 3)] {
        let mut net = PredictorNet::init(NetConfig::new(3, vec![5, 4], seed)).unwrap();
        for t in net.tensors_mut() {
            t.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
        let x: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<LabelBundle> = (0..4)
            .map(|_| {
                let ratings: Vec<u8> = (0..7).map(|_| rng.gen_range(1..=5)).collect();
                LabelBundle::from_ratings(&ratings, &grid, Family::Laplace, StdMode::Population).unwrap()
            })
            .collect();
        let weights = LossWeights::new(rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)).unwrap();
        let objective = JointLoss::new(&grid, weights).with_reduction(reduction);

        let cache = net.forward_logits(&x).unwrap();
        let (_, grad_logits) = objective.backward(&cache.logits, &targets).unwrap();
        let grads = net.backward_logits(&cache, &grad_logits).unwrap();
        let analytic: Vec<f64> = grads.tensors().into_iter().flatten().copied().collect();

        let h = 1e-5;
        let mut k = 0;
        let n_tensors = net.tensors_mut().len();
        for t in 0..n_tensors {
            let len = net.tensors_mut()[t].len();
            for i in 0..len {
                let orig = net.tensors_mut()[t][i];
                net.tensors_mut()[t][i] = orig + h;
                let up = loss_at(&net, &x, &targets, &objective);
                net.tensors_mut()[t][i] = orig - h;
                let down = loss_at(&net, &x, &targets, &objective);
                net.tensors_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "{reduction} tensor {t} index {i}: analytic {} numeric {numeric}", analytic[k]);
                k += 1;
            }
        }
        assert_eq!(k, analytic.len());
    }
}

fn overfit_set() -> Dataset {
    let data = generate_synthetic(&SynthConfig {
        n_samples: 50,
        raters_per_sample: 10,
        rater_noise: 0.0,
        feature_noise: 0.0,
        ..Default::default()
    })
    .unwrap();
    Dataset::from_records(&data.records, &DistributionGrid::default(), Family::Laplace, StdMode::Population).unwrap()
}

#[test]
fn loss_descends_on_overfit_set() {
    let ds = overfit_set();
    let mut net = PredictorNet::init(NetConfig::new(ds.feature_dim(), vec![64, 64], 0)).unwrap();
    let cfg = TrainConfig { epochs: 50, batch_size: 8, ..Default::default() };
    let log = train(&ds, &mut net, &cfg, &AdamWConfig { step_every: 100, ..Default::default() }, None).unwrap();
    assert!(log.epochs[49].loss.total < log.epochs[0].loss.total, "{:?} vs {:?}", log.epochs[49].loss, log.epochs[0].loss);
}

#[test]
fn ad_only_matches_zeroed_weights_bitwise() {
    let ds = overfit_set();
    let optim = AdamWConfig::default();
    let run = |cfg: TrainConfig| {
        let mut net = PredictorNet::init(NetConfig::new(ds.feature_dim(), vec![16], 4)).unwrap();
        let log = train(&ds, &mut net, &cfg, &optim, None).unwrap();
        (net.to_bytes(), log.to_text())
    };
    let base = TrainConfig { epochs: 4, batch_size: 16, ..Default::default() };
    let modules = run(TrainConfig { modules: Modules::AD_ONLY, ..base.clone() });
    let weights = run(TrainConfig { weights: LossWeights::new(1.0, 0.0, 0.0).unwrap(), ..base });
    assert_eq!(modules, weights);
}

#[test]
fn schedule_over_a_ninety_epoch_run() {
    let cfg = AdamWConfig::default();
    let rates: Vec<f64> = (0..90).map(|e| lr_at(e, &cfg)).collect();
    let drops = rates.windows(2).filter(|w| w[1] < w[0]).count();
    assert_eq!(drops, 2);
    assert_eq!(rates[0], 1e-3);
    assert!((rates[30] - 1e-4).abs() < 1e-18);
    assert!((rates[89] - 1e-5).abs() < 1e-18);
    assert!(rates.windows(2).all(|w| w[1] <= w[0]));
}
