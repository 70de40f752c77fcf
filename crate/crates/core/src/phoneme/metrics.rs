use rayon::prelude::*;

use super::{classify_frames, ClassifierModel, LabeledFrames};
use crate::error::{shape_err, Result};
use crate::neural::Real;

/// `K × K` frame counts: entry `(i, j)` is frames of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: &[usize], predicted: &[usize]) {
        for (&t, &p) in truth.iter().zip(predicted) {
            self.counts[t][p] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            0.0
        } else {
            self.trace() as f64 / n as f64
        }
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Unordered pair `(i, j)`, `i < j`, with the largest `counts[i][j] + counts[j][i]`.
    pub fn most_confused_pair(&self) -> Option<((usize, usize), u64)> {
        let k = self.classes();
        let mut best: Option<((usize, usize), u64)> = None;
        for i in 0..k {
            for j in i + 1..k {
                let m = self.counts[i][j] + self.counts[j][i];
                if best.is_none_or(|(_, b)| m > b) {
                    best = Some(((i, j), m));
                }
            }
        }
        best
    }

    /// Mutual confusion mass of the pair `(i, j)`.
    pub fn pair_mass(&self, i: usize, j: usize) -> u64 {
        self.counts[i][j] + self.counts[j][i]
    }

    pub fn to_csv(&self, symbols: &[String]) -> String {
        let mut s = format!("true\\pred,{}\n", symbols.join(","));
        for (i, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            s.push_str(&format!("{},{}\n", symbols[i], cells.join(",")));
        }
        s
    }
}

pub fn confusion_matrix<T: Real>(model: &ClassifierModel<T>, dataset: &[LabeledFrames]) -> Result<ConfusionMatrix> {
    let preds: Vec<Vec<usize>> = dataset
        .par_iter()
        .map(|u| {
            if u.mel.frames != u.labels.len() {
                return Err(shape_err("confusion_matrix", u.mel.frames, u.labels.len()));
            }
            Ok(classify_frames(model, &u.mel)?.argmax())
        })
        .collect::<Result<_>>()?;
    let mut cm = ConfusionMatrix::new(model.classes());
    for (u, p) in dataset.iter().zip(&preds) {
        cm.add(&u.labels.indices, p);
    }
    Ok(cm)
}

/// Argmax-match fraction over every frame of `dataset`.
pub fn top1_accuracy<T: Real>(model: &ClassifierModel<T>, dataset: &[LabeledFrames]) -> Result<f64> {
    Ok(confusion_matrix(model, dataset)?.accuracy())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_identities() {
        let mut cm = ConfusionMatrix::new(3);
        cm.add(&[0, 0, 1, 2, 2, 2], &[0, 1, 1, 2, 0, 2]);
        assert_eq!(cm.row_sum(0), 2);
        assert_eq!(cm.row_sum(2), 3);
        assert_eq!(cm.trace(), 4);
        assert_eq!(cm.accuracy(), 4.0 / 6.0);
        assert_eq!(cm.most_confused_pair(), Some(((0, 1), 1)));
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let mut cm = ConfusionMatrix::new(3);
        cm.add(&[0, 1, 2, 1], &[0, 1, 2, 1]);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(cm.counts[i][j], 0);
                }
            }
        }
        assert_eq!(cm.accuracy(), 1.0);
    }
}
