use serde::Serialize;

use crate::{Error, Result};

/// Classification scores for one evaluation.
///
/// Accuracies are percentages; the remaining scores lie in `[0, 1]`
/// (kappa in `[-1, 1]`). Precision, recall and F1 are macro-averaged over
/// every class in the ordering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub acc: f64,
    /// Accuracy over samples whose true class is a cancer class; `None`
    /// when there are no such samples.
    pub acc_c: Option<f64>,
    pub macro_f1: f64,
    pub kappa_quadratic: f64,
    pub precision: f64,
    pub recall: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `table[true][predicted]`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    let mut table = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= n_classes || y >= n_classes {
            return Err(Error::InvalidParameter(format!(
                "class index outside 0..{n_classes}"
            )));
        }
        table[y][p] += 1;
    }
    Ok(table)
}

/// Cohen's kappa with weights `(i - j)^2 / (C - 1)^2` over the class
/// ordering. Returns 1 when the expected disagreement vanishes, which only
/// happens when truth and prediction sit on one shared class.
pub fn quadratic_weighted_kappa(table: &[Vec<usize>]) -> f64 {
    let c = table.len();
    if c < 2 {
        return 1.0;
    }
    let n: usize = table.iter().flatten().sum();
    if n == 0 {
        return 0.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let cols: Vec<f64> = (0..c).map(|j| table.iter().map(|r| r[j]).sum::<usize>() as f64).collect();
    let scale = ((c - 1) * (c - 1)) as f64;
    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..c {
        for j in 0..c {
            let w = ((i as f64) - (j as f64)).powi(2) / scale;
            observed += w * table[i][j] as f64;
            expected += w * rows[i] * cols[j] / n as f64;
        }
    }
    if expected == 0.0 {
        1.0
    } else {
        1.0 - observed / expected
    }
}

/// Scores `predictions` against `labels`; both are indices into the
/// ordinal class ordering.
pub fn evaluate_metrics(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
    cancer_classes: &[usize],
) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let table = confusion_matrix(predictions, labels, n_classes)?;
    let n = labels.len() as f64;
    let correct = (0..n_classes).map(|k| table[k][k]).sum::<usize>() as f64;

    let cancer_total: usize = cancer_classes
        .iter()
        .filter(|&&k| k < n_classes)
        .map(|&k| table[k].iter().sum::<usize>())
        .sum();
    let cancer_correct: usize = cancer_classes
        .iter()
        .filter(|&&k| k < n_classes)
        .map(|&k| table[k][k])
        .sum();
    let acc_c = (cancer_total > 0).then(|| 100.0 * cancer_correct as f64 / cancer_total as f64);

    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut f1 = 0.0;
    for k in 0..n_classes {
        let tp = table[k][k] as f64;
        let actual: usize = table[k].iter().sum();
        let predicted: usize = table.iter().map(|r| r[k]).sum();
        let p = ratio(tp, predicted as f64);
        let r = ratio(tp, actual as f64);
        precision += p;
        recall += r;
        f1 += ratio(2.0 * p * r, p + r);
    }
    let c = n_classes as f64;
    Ok(Metrics {
        acc: 100.0 * correct / n,
        acc_c,
        macro_f1: f1 / c,
        kappa_quadratic: quadratic_weighted_kappa(&table),
        precision: precision / c,
        recall: recall / c,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Standard deviation uses `n - 1`; a single value has std 0.
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedMetrics {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Metrics over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSet {
    pub n_seeds: usize,
    pub per_seed: Vec<SeedMetrics>,
    pub acc: MeanStd,
    /// `None` when any run had no cancer-class samples.
    pub acc_c: Option<MeanStd>,
    pub macro_f1: MeanStd,
    pub kappa_quadratic: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
}

impl MetricSet {
    pub fn aggregate(per_seed: Vec<SeedMetrics>) -> MetricSet {
        let col = |f: fn(&Metrics) -> f64| -> MeanStd {
            MeanStd::of(&per_seed.iter().map(|s| f(&s.metrics)).collect::<Vec<_>>())
        };
        let acc_c: Option<Vec<f64>> = per_seed.iter().map(|s| s.metrics.acc_c).collect();
        MetricSet {
            n_seeds: per_seed.len(),
            acc: col(|m| m.acc),
            acc_c: acc_c.map(|v| MeanStd::of(&v)),
            macro_f1: col(|m| m.macro_f1),
            kappa_quadratic: col(|m| m.kappa_quadratic),
            precision: col(|m| m.precision),
            recall: col(|m| m.recall),
            per_seed,
        }
    }
}
