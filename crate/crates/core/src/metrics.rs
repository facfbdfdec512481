//! Pearson correlation, MAE and RMSE over predicted scores.

use std::fmt::Write;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    /// `None` when either vector has zero variance (or n < 2).
    pub pc: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

impl EvalReport {
    pub fn pc(&self) -> Result<f64> {
        self.pc.ok_or(Error::UndefinedCorrelation("prediction or truth"))
    }

    /// Column-wise arithmetic mean. The mean PC is undefined if any input
    /// report's PC is undefined.
    pub fn mean(reports: &[EvalReport]) -> Option<EvalReport> {
        if reports.is_empty() {
            return None;
        }
        let k = reports.len() as f64;
        let pc = reports.iter().map(|r| r.pc).sum::<Option<f64>>().map(|s| s / k);
        Some(EvalReport {
            pc,
            mae: reports.iter().map(|r| r.mae).sum::<f64>() / k,
            rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / k,
            n: reports.iter().map(|r| r.n).sum(),
        })
    }
}

/// Scores predictions against ground truth.
pub fn evaluate(pred: &[f64], truth: &[f64]) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions vs {} ground-truth scores", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Shape("no scores to evaluate".into()));
    }
    if pred.iter().chain(truth).any(|x| !x.is_finite()) {
        return Err(Error::numeric("evaluation input"));
    }
    let n = pred.len() as f64;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let rmse = (pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n).sqrt();

    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_t = truth.iter().sum::<f64>() / n;
    let (mut cov, mut var_p, mut var_t) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mean_p, t - mean_t);
        cov += dp * dt;
        var_p += dp * dp;
        var_t += dt * dt;
    }
    let pc = (var_p > 0.0 && var_t > 0.0).then(|| (cov / (var_p.sqrt() * var_t.sqrt())).clamp(-1.0, 1.0));

    debug_assert!(rmse >= mae * (1.0 - 1e-12), "power-mean inequality violated: rmse {rmse} < mae {mae}");
    Ok(EvalReport { pc, mae, rmse, n: pred.len() })
}

/// Plain-text table with one row per report and a trailing mean row.
///
/// ```text
/// model           PC       MAE      RMSE
/// fold-1      0.9276    0.1964    0.2585
/// mean        0.9276    0.1964    0.2585
/// ```
///
/// Empty labels are replaced by the row index. An undefined PC prints as
/// `undef`.
pub fn report_table(reports: &[EvalReport], labels: &[&str]) -> String {
    let names: Vec<String> = (0..reports.len())
        .map(|i| match labels.get(i) {
            Some(l) if !l.is_empty() => (*l).to_owned(),
            _ => i.to_string(),
        })
        .collect();
    let width = names.iter().map(String::len).chain(["model".len(), "mean".len()]).max().unwrap_or(5);

    let mut out = String::new();
    let mut row = |name: &str, r: &EvalReport| {
        let pc = r.pc.map_or_else(|| "undef".to_owned(), |pc| format!("{pc:.4}"));
        writeln!(out, "{name:<width$}  {pc:>8}  {:>8.4}  {:>8.4}", r.mae, r.rmse).unwrap();
    };
    let header = format!("{:<width$}  {:>8}  {:>8}  {:>8}\n", "model", "PC", "MAE", "RMSE");
    for (name, r) in names.iter().zip(reports) {
        row(name, r);
    }
    if let Some(mean) = EvalReport::mean(reports) {
        row("mean", &mean);
    }
    header + &out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let r = evaluate(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(r.pc().unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!((r.mae, r.rmse, r.n), (0.0, 0.0, 3));
    }

    #[test]
    fn constant_offset() {
        let r = evaluate(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(r.pc().unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.mae, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.rmse, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn anti_correlated() {
        let r = evaluate(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(r.pc().unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.mae, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.rmse, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn undefined_correlation_keeps_errors() {
        let r = evaluate(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(r.pc(), Err(Error::UndefinedCorrelation(_))));
        assert_abs_diff_eq!(r.mae, 1.0, epsilon = 1e-12);
        assert!(evaluate(&[1.0], &[2.0]).unwrap().pc.is_none());
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(evaluate(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(evaluate(&[], &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn table_layout() {
        let a = EvalReport { pc: Some(0.9276), mae: 0.1964, rmse: 0.2585, n: 10 };
        let b = EvalReport { pc: Some(0.9), mae: 0.2, rmse: 0.3, n: 10 };
        let golden = "\
model         PC       MAE      RMSE
fold-1    0.9276    0.1964    0.2585
mean      0.9276    0.1964    0.2585
";
        assert_eq!(report_table(&[a], &["fold-1"]), golden);

        let golden = "\
model        PC       MAE      RMSE
0        0.9276    0.1964    0.2585
b        0.9000    0.2000    0.3000
mean     0.9138    0.1982    0.2792
";
        assert_eq!(report_table(&[a, b], &["", "b"]), golden);

        let undef = EvalReport { pc: None, ..a };
        let table = report_table(&[undef, b], &["x", "y"]);
        assert!(table.lines().nth(1).unwrap().contains("undef"));
        assert!(table.lines().last().unwrap().starts_with("mean") && table.lines().last().unwrap().contains("undef"));
    }

    proptest! {
        #[test]
        fn pc_translation_and_scale(
            pairs in prop::collection::vec((1.0f64..5.0, 1.0f64..5.0), 3..50),
            shift in -3.0f64..3.0,
            scale in 0.1f64..10.0,
        ) {
            let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let base = evaluate(&pred, &truth).unwrap();
            prop_assert!(base.rmse >= base.mae * (1.0 - 1e-12));
            if let Some(pc) = base.pc {
                let shifted: Vec<f64> = pred.iter().map(|p| p + shift).collect();
                let scaled: Vec<f64> = pred.iter().map(|p| p * scale).collect();
                let flipped: Vec<f64> = pred.iter().map(|p| -p * scale).collect();
                prop_assert!((evaluate(&shifted, &truth).unwrap().pc.unwrap() - pc).abs() < 1e-9);
                prop_assert!((evaluate(&scaled, &truth).unwrap().pc.unwrap() - pc).abs() < 1e-9);
                prop_assert!((evaluate(&flipped, &truth).unwrap().pc.unwrap() + pc).abs() < 1e-9);
            }
        }
    }
}
