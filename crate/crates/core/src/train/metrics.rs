use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean of precision at the rank of every positive, ranking by descending
/// score with ties kept in original index order.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "average_precision",
            format!("{} scores, {} labels", scores.len(), labels.len()),
        ));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("no positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAp {
    pub value: f64,
    /// Per-class AP; `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Unweighted mean of per-class AP over classes with at least one positive.
/// `scores` and `labels` are row-major `[n, K]`.
pub fn mean_ap(scores: &[f64], labels: &[u8], classes: usize) -> Result<MeanAp> {
    if classes == 0 || scores.len() != labels.len() || scores.len() % classes != 0 {
        return Err(Error::shape(
            "mean_ap",
            format!("{} scores, {} labels, {classes} classes", scores.len(), labels.len()),
        ));
    }
    let n = scores.len() / classes;
    let mut per_class = Vec::with_capacity(classes);
    for k in 0..classes {
        let s: Vec<f64> = (0..n).map(|i| scores[i * classes + k]).collect();
        let l: Vec<u8> = (0..n).map(|i| labels[i * classes + k]).collect();
        per_class.push(if l.contains(&1) {
            Some(average_precision(&s, &l)?)
        } else {
            None
        });
    }
    let aps: Vec<f64> = per_class.iter().flatten().copied().collect();
    if aps.is_empty() {
        return Err(Error::UndefinedMetric("no class has a positive label".into()));
    }
    Ok(MeanAp {
        value: aps.iter().sum::<f64>() / aps.len() as f64,
        evaluated: aps.len(),
        skipped: classes - aps.len(),
        per_class,
    })
}

/// Fraction of rows whose arg-max score matches the label index.
pub fn accuracy(scores: &[f64], labels: &[usize], classes: usize) -> Result<f64> {
    if labels.is_empty() || scores.len() != labels.len() * classes {
        return Err(Error::shape("accuracy", "scores and labels disagree"));
    }
    let correct = scores
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            best == l
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[1, 0, 1]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn ties_keep_index_order() {
        // tied scores: the negative at index 0 ranks first
        let ap = average_precision(&[0.5, 0.5], &[0, 1]).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn no_positives_is_undefined() {
        assert!(matches!(
            average_precision(&[0.1, 0.2], &[0, 0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            mean_ap(&[0.1, 0.2], &[0, 0], 2),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn empty_classes_skipped() {
        let m = mean_ap(&[0.9, 0.1, 0.2, 0.3], &[1, 0, 0, 0], 2).unwrap();
        assert_eq!(m.evaluated, 1);
        assert_eq!(m.skipped, 1);
        assert_eq!(m.value, 1.0);
        assert_eq!(m.per_class[1], None);
    }

    #[test]
    fn top1_accuracy() {
        let acc = accuracy(&[0.1, 0.9, 0.8, 0.2], &[1, 1], 2).unwrap();
        assert_eq!(acc, 0.5);
    }
}
