//! Score functions for predictions against ground truth.

use crate::data::Metric;
use crate::error::{Error, Result};

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::InvalidArgument("cannot score zero predictions".into()));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

fn f1_for(pred: &[usize], truth: &[usize], class: usize) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 of one designated positive class.
pub fn f1(pred: &[usize], truth: &[usize], positive: usize) -> Result<f64> {
    check_len(pred.len(), truth.len())?;
    Ok(f1_for(pred, truth, positive))
}

/// Unweighted mean of per-class F1 over every label seen in either vector.
pub fn macro_f1(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(pred.len(), truth.len())?;
    let mut labels: Vec<usize> = pred.iter().chain(truth).copied().collect();
    labels.sort_unstable();
    labels.dedup();
    Ok(labels.iter().map(|&c| f1_for(pred, truth, c)).sum::<f64>() / labels.len() as f64)
}

/// F1 from globally pooled counts. For single-label data this is accuracy.
pub fn micro_f1(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_len(pred.len(), truth.len())?;
    // pooled tp = hits; pooled fp = pooled fn = misses
    let tp = pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64;
    let miss = truth.len() as f64 - tp;
    Ok(2.0 * tp / (2.0 * tp + 2.0 * miss))
}

pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_len(pred.len(), truth.len())?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Dispatches a classification metric. `positive` is only read by F1.
pub fn classification_score(metric: Metric, pred: &[usize], truth: &[usize], positive: usize) -> Result<f64> {
    match metric {
        Metric::Accuracy => accuracy(pred, truth),
        Metric::F1 => f1(pred, truth, positive),
        Metric::MacroF1 => macro_f1(pred, truth),
        Metric::MicroF1 => micro_f1(pred, truth),
        Metric::R2 => Err(Error::InvalidArgument("r2 needs a regression target".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 1, 2];
        assert_eq!(accuracy(&y, &y).unwrap(), 1.0);
        assert_eq!(f1(&y, &y, 1).unwrap(), 1.0);
        assert_eq!(macro_f1(&y, &y).unwrap(), 1.0);
        let v = [0.5, -1.0, 3.0];
        assert_eq!(r2(&v, &v).unwrap(), 1.0);
    }

    #[test]
    fn hand_computed_confusion() {
        let pred = [1, 1, 0, 0];
        let truth = [1, 0, 1, 0];
        assert_eq!(accuracy(&pred, &truth).unwrap(), 0.5);
        assert_eq!(f1(&pred, &truth, 1).unwrap(), 0.5);
        assert_eq!(macro_f1(&pred, &truth).unwrap(), 0.5);
    }

    #[test]
    fn mean_prediction_scores_zero_r2() {
        let truth = [1.0, 2.0, 3.0, 6.0];
        assert!(r2(&[3.0; 4], &truth).unwrap().abs() < 1e-15);
    }

    #[test]
    fn micro_equals_accuracy() {
        let pred = [0, 2, 1, 1, 0, 2, 2];
        let truth = [0, 1, 1, 2, 0, 2, 0];
        assert_eq!(micro_f1(&pred, &truth).unwrap(), accuracy(&pred, &truth).unwrap());
    }

    #[test]
    fn constant_prediction_has_zero_minority_f1() {
        assert_eq!(f1(&[0; 5], &[0, 0, 1, 0, 1], 1).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(accuracy(&[1], &[1, 0]).is_err());
        assert!(r2(&[], &[]).is_err());
    }
}
