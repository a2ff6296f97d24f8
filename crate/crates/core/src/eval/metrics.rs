use crate::error::{contract, Result};
use crate::losses::LOG_EPS;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of predicted classes equal to the labels.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return contract(format!("{} predictions for {} labels", predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return contract("accuracy of an empty set");
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Error rate computed so that `accuracy + error_rate == 1` exactly.
pub fn error_rate(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    Ok(1.0 - accuracy(predictions, labels)?)
}

/// Mean natural-log cross-entropy with the probability floor used in training.
pub fn cross_entropy(probabilities: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return contract(format!("{} probability rows for {} labels", probabilities.len(), labels.len()));
    }
    if labels.is_empty() {
        return contract("cross-entropy of an empty set");
    }
    let mut total = 0.0;
    for (row, &y) in probabilities.iter().zip(labels) {
        let Some(&p) = row.get(y) else {
            return contract(format!("label {y} out of range for {} classes", row.len()));
        };
        total -= p.max(LOG_EPS).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Accuracy of probability rows against labels.
pub fn prob_accuracy(probabilities: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let preds: Vec<usize> = probabilities.iter().map(|r| argmax(r)).collect();
    accuracy(&preds, labels)
}

/// Sample mean and (unbiased) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
