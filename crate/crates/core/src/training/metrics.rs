use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[truth][predicted]`, zero-based classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<usize>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Data(
                "confusion matrix must be square and non-empty".into(),
            ));
        }
        Ok(Self { counts })
    }

    pub fn from_pairs(
        classes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut cm = Self::new(classes);
        for (truth, pred) in pairs {
            if truth >= classes || pred >= classes {
                return Err(Error::LabelOutOfRange {
                    label: truth.max(pred) + 1,
                    classes,
                });
            }
            cm.counts[truth][pred] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Recall per class; `None` for classes without samples.
    pub per_class_accuracy: Vec<Option<f64>>,
}

/// OA, AA (mean recall over classes that occur) and Cohen's kappa.
/// Kappa is 1 when chance agreement is already perfect.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Data("cannot score an empty confusion matrix".into()));
    }
    let total = n as f64;
    let c = cm.classes();
    let diag: usize = (0..c).map(|i| cm.counts[i][i]).sum();
    let oa = diag as f64 / total;
    let per_class_accuracy: Vec<Option<f64>> = cm
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let s: usize = row.iter().sum();
            (s > 0).then(|| row[i] as f64 / s as f64)
        })
        .collect();
    let present: Vec<f64> = per_class_accuracy.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;
    let pe: f64 = (0..c)
        .map(|k| {
            let row: usize = cm.counts[k].iter().sum();
            let col: usize = cm.counts.iter().map(|r| r[k]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (total * total);
    let kappa = if (1.0 - pe).abs() < f64::EPSILON {
        1.0
    } else {
        (oa - pe) / (1.0 - pe)
    };
    Ok(Metrics {
        oa,
        aa,
        kappa,
        per_class_accuracy,
    })
}
