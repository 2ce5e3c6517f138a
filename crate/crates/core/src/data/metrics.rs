//! Evaluation metrics. F1 scores are reported in percent, accuracy as a fraction.

use crate::error::{Error, Result};

/// A prediction is correct when it matches any label in the instance's gold set.
pub fn accuracy_multigold(predictions: &[usize], gold: &[Vec<usize>]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold instances",
            predictions.len(),
            gold.len()
        )));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let correct = predictions
        .iter()
        .zip(gold)
        .filter(|(p, g)| g.contains(p))
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// True-positive, false-positive and false-negative tallies for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    pub fn tally(predictions: &[usize], gold: &[usize], class: usize) -> Self {
        assert_eq!(predictions.len(), gold.len(), "prediction/gold length mismatch");
        let mut c = ClassCounts::default();
        for (&p, &g) in predictions.iter().zip(gold) {
            match (p == class, g == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        c
    }

    /// `2PR/(P+R)` in percent; 0 when undefined.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 || denom == 0 {
            0.0
        } else {
            // 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN)
            100.0 * (2 * self.tp) as f64 / denom as f64
        }
    }
}

/// F1 of class 1 against everything else.
pub fn f1_binary(predictions: &[usize], gold: &[usize]) -> f64 {
    ClassCounts::tally(predictions, gold, 1).f1()
}

/// Unweighted mean of per-class one-vs-rest F1 over `num_classes` classes.
pub fn macro_f1(predictions: &[usize], gold: &[usize], num_classes: usize) -> f64 {
    if num_classes == 0 {
        return 0.0;
    }
    (0..num_classes)
        .map(|c| ClassCounts::tally(predictions, gold, c).f1())
        .sum::<f64>()
        / num_classes as f64
}

pub fn macro_f1_4way(predictions: &[usize], gold: &[usize]) -> f64 {
    macro_f1(predictions, gold, 4)
}

/// Collapses multi-gold sets to one label per instance for F1 scoring: the
/// prediction itself when it is in the gold set, otherwise the first gold label.
pub fn resolve_gold(predictions: &[usize], gold: &[Vec<usize>]) -> Vec<usize> {
    predictions
        .iter()
        .zip(gold)
        .map(|(p, g)| if g.contains(p) { *p } else { g[0] })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multigold_accuracy() {
        assert_eq!(accuracy_multigold(&[1], &[vec![0, 1]]).unwrap(), 1.0);
        assert_eq!(accuracy_multigold(&[1], &[vec![0]]).unwrap(), 0.0);
        let gold = vec![vec![0], vec![1], vec![2, 3], vec![1]];
        assert_eq!(accuracy_multigold(&[0, 1, 3, 2], &gold).unwrap(), 0.75);
        assert!(matches!(accuracy_multigold(&[0], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn binary_f1_cases() {
        assert_eq!(f1_binary(&[1, 0, 1], &[1, 0, 1]), 100.0);
        assert_eq!(f1_binary(&[0, 0, 0], &[1, 0, 1]), 0.0);
        // TP=2, FP=1, FN=1
        let f = f1_binary(&[1, 1, 1, 0], &[1, 1, 0, 1]);
        assert!((f - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_cases() {
        assert_eq!(macro_f1_4way(&[0, 1, 2, 3], &[0, 1, 2, 3]), 100.0);
        // class 3 never predicted: its F1 is 0, the rest are perfect
        assert_eq!(macro_f1_4way(&[0, 1, 2, 2], &[0, 1, 2, 3]), (100.0 + 100.0 + 200.0 / 3.0) / 4.0);
        // per-class F1 (100, 0, 66.67, 50)
        let gold = [0, 0, 0, 2, 1, 3, 3, 1];
        let pred = [0, 0, 0, 2, 2, 3, 1, 3];
        let f = macro_f1_4way(&pred, &gold);
        assert!((f - 54.166_666_666_666_664).abs() < 1e-9, "{f}");
    }

    #[test]
    fn gold_resolution() {
        assert_eq!(resolve_gold(&[2, 0], &[vec![1, 2], vec![3, 1]]), vec![2, 3]);
    }
}
