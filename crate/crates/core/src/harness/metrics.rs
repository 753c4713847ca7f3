use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Seen accuracy, unseen accuracy and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GzslScores {
    pub seen: f64,
    pub unseen: f64,
    pub harmonic: f64,
}

/// `2SU / (S + U)`, defined as 0 when both are 0.
pub fn harmonic_mean(seen: f64, unseen: f64) -> f64 {
    if seen + unseen <= 0.0 {
        0.0
    } else {
        2.0 * seen * unseen / (seen + unseen)
    }
}

pub fn gzsl_metrics(
    correct_seen: usize,
    total_seen: usize,
    correct_unseen: usize,
    total_unseen: usize,
) -> Result<GzslScores> {
    if total_seen == 0 || total_unseen == 0 {
        return Err(Error::validation(
            "GZSL metrics need at least one seen and one unseen sample",
        ));
    }
    if correct_seen > total_seen || correct_unseen > total_unseen {
        return Err(Error::validation("correct count exceeds total"));
    }
    let seen = correct_seen as f64 / total_seen as f64;
    let unseen = correct_unseen as f64 / total_unseen as f64;
    Ok(GzslScores {
        seen,
        unseen,
        harmonic: harmonic_mean(seen, unseen),
    })
}

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes()).map(|j| self.counts[j][j]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }

    /// Per-class recall; `None` for classes without samples.
    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        let support = self.support(class);
        (support > 0).then(|| self.counts[class][class] as f64 / support as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_cases() {
        assert_eq!(harmonic_mean(0.5, 0.5), 0.5);
        assert_eq!(harmonic_mean(0.7, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert!((harmonic_mean(0.6228, 0.7080) - 0.6627).abs() < 1e-4);
    }

    #[test]
    fn counts_to_scores() {
        let s = gzsl_metrics(1, 2, 3, 4).unwrap();
        assert_eq!((s.seen, s.unseen), (0.5, 0.75));
        assert!((s.harmonic - 0.6).abs() < 1e-12);
        assert!(gzsl_metrics(0, 0, 1, 1).is_err());
        assert!(gzsl_metrics(3, 2, 1, 1).is_err());
        assert_eq!(gzsl_metrics(0, 3, 2, 2).unwrap().harmonic, 0.0);
    }

    #[test]
    fn confusion_bookkeeping() {
        let mut m = ConfusionMatrix::new(3);
        for (t, p) in [(0, 0), (0, 1), (1, 1), (2, 1)] {
            m.record(t, p);
        }
        assert_eq!(m.total(), 4);
        assert_eq!(m.support(0), 2);
        assert_eq!(m.accuracy(), 0.5);
        assert_eq!(m.class_accuracy(0), Some(0.5));
        assert_eq!(m.class_accuracy(2), Some(0.0));
        assert_eq!(ConfusionMatrix::new(2).class_accuracy(1), None);
    }
}
