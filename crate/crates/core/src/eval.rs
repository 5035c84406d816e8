//! Confusion matrices, classification metrics, one-vs-rest AUC / ROC and the
//! stratified k-fold cross-validation harness.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ExpressionDataset;
use crate::error::{Error, Result};
use crate::proba::ProbabilityMatrix;
use crate::rng;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Array2<u64>) -> Result<Self> {
        if counts.nrows() != counts.ncols() || counts.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "confusion matrix must be square and non-empty, got {:?}",
                counts.dim()
            )));
        }
        Ok(Self { counts })
    }

    pub fn zeros(n_classes: usize) -> Self {
        Self {
            counts: Array2::zeros((n_classes, n_classes)),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[[truth, pred]]
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    pub fn trace(&self) -> u64 {
        self.counts.diag().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        self.counts.columns().into_iter().map(|c| c.sum()).collect()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes() != self.n_classes() {
            return Err(Error::ShapeMismatch("confusion matrices differ in size".into()));
        }
        self.counts += &other.counts;
        Ok(())
    }

    /// Each row divided by its sum (per-class recall on the diagonal); empty
    /// rows stay zero.
    pub fn row_normalized(&self) -> Array2<f64> {
        let mut out = self.counts.mapv(|c| c as f64);
        for mut row in out.rows_mut() {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
        out
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (&t, &p) in truth.iter().zip(pred) {
        if let Some(&code) = [t, p].iter().find(|&&c| c >= n_classes) {
            return Err(Error::LabelOutOfRange { code, n_classes });
        }
        cm.counts[[t, p]] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when nothing was predicted as this class, so precision is 0 by
    /// convention rather than measured.
    pub precision_undefined: bool,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Unweighted mean over classes that occur in the truth or predictions.
    pub macro_avg: Averages,
    /// Support-weighted mean.
    pub weighted_avg: Averages,
    pub kappa: f64,
    pub auc_macro: Option<f64>,
    pub auc_weighted: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
}

/// Cohen's kappa in integer arithmetic:
/// `(N * trace - sum_c row_c * col_c) / (N^2 - sum_c row_c * col_c)`.
/// A fully concentrated matrix (expected agreement 1) scores 1.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> f64 {
    let n = i128::from(cm.total());
    let chance: i128 = cm
        .row_sums()
        .iter()
        .zip(cm.col_sums())
        .map(|(&r, c)| i128::from(r) * i128::from(c))
        .sum();
    let den = n * n - chance;
    if den == 0 {
        return 1.0;
    }
    (n * i128::from(cm.trace()) - chance) as f64 / den as f64
}

/// Summary metrics from a confusion matrix, plus one-vs-rest AUCs when
/// probabilities (rows aligned with `truth`) are given.
pub fn metrics(cm: &ConfusionMatrix, proba: Option<&ProbabilityMatrix>, truth: &[usize]) -> Result<MetricsReport> {
    let k = cm.n_classes();
    let total = cm.total();
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let aucs: Vec<Option<f64>> = match proba {
        Some(p) => {
            if p.n_samples() != truth.len() || p.n_classes() != k {
                return Err(Error::ShapeMismatch(format!(
                    "probabilities {:?} vs {} samples x {k} classes",
                    (p.n_samples(), p.n_classes()),
                    truth.len()
                )));
            }
            (0..k)
                .map(|c| {
                    let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
                    auc(&p.class_scores(c), &pos)
                })
                .collect()
        }
        None => vec![None; k],
    };

    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let precision = if cols[c] == 0 { 0.0 } else { tp / cols[c] as f64 };
            let recall = if rows[c] == 0 { 0.0 } else { tp / rows[c] as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: rows[c],
                precision_undefined: cols[c] == 0,
                auc: aucs[c],
            }
        })
        .collect();

    let active: Vec<usize> = (0..k).filter(|&c| rows[c] > 0 || cols[c] > 0).collect();
    let macro_of = |f: fn(&ClassMetrics) -> f64| {
        active.iter().map(|&c| f(&per_class[c])).sum::<f64>() / active.len().max(1) as f64
    };
    let weighted_of = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|m| f(m) * m.support as f64)
            .sum::<f64>()
            / total.max(1) as f64
    };
    let with_auc: Vec<(f64, u64)> = per_class
        .iter()
        .filter_map(|m| m.auc.map(|a| (a, m.support)))
        .collect();
    let auc_macro = (!with_auc.is_empty())
        .then(|| with_auc.iter().map(|(a, _)| a).sum::<f64>() / with_auc.len() as f64);
    let auc_weighted = (!with_auc.is_empty()).then(|| {
        with_auc.iter().map(|(a, s)| a * *s as f64).sum::<f64>()
            / with_auc.iter().map(|(_, s)| *s as f64).sum::<f64>()
    });

    Ok(MetricsReport {
        accuracy: if total == 0 { 0.0 } else { cm.trace() as f64 / total as f64 },
        macro_avg: Averages {
            precision: macro_of(|m| m.precision),
            recall: macro_of(|m| m.recall),
            f1: macro_of(|m| m.f1),
        },
        weighted_avg: Averages {
            precision: weighted_of(|m| m.precision),
            recall: weighted_of(|m| m.recall),
            f1: weighted_of(|m| m.f1),
        },
        kappa: cohen_kappa(cm),
        auc_macro,
        auc_weighted,
        per_class,
    })
}

/// Area under the ROC curve as the probability that a random positive
/// outscores a random negative (ties count one half), via midranks.
/// `None` when either class is absent.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&s| positive[s]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC polyline `(fpr, tpr)` from (0, 0) to (1, 1), one vertex per distinct
/// score threshold taken in decreasing order.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64)> {
    let n_pos = positive.iter().filter(|&&p| p).count().max(1) as f64;
    let n_neg = positive.iter().filter(|&&p| !p).count().max(1) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    for (idx, &s) in order.iter().enumerate() {
        if positive[s] {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        let last_of_threshold = order.get(idx + 1).is_none_or(|&t| scores[t] != scores[s]);
        if last_of_threshold {
            points.push((fp / n_neg, tp / n_pos));
        }
    }
    points
}

pub fn trapezoid_area(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// TPR of a ROC polyline at `fpr`, linear between vertices; on vertical
/// segments the highest TPR at that FPR is used.
fn tpr_at(curve: &[(f64, f64)], fpr: f64) -> f64 {
    let after = curve.iter().position(|&(x, _)| x > fpr);
    match after {
        None => curve.last().map_or(0.0, |p| p.1),
        Some(0) => curve[0].1,
        Some(j) => {
            let (x0, y0) = curve[j - 1];
            let (x1, y1) = curve[j];
            y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Held-out sample indices per fold, ascending.
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let n = self.folds.iter().map(Vec::len).sum();
        let mut held = vec![false; n];
        for &i in &self.folds[fold] {
            held[i] = true;
        }
        (0..n).filter(|&i| !held[i]).collect()
    }
}

/// Stratified k-fold split: each class is shuffled (seeded per class) and
/// dealt round-robin, with the dealing position carried from one class to
/// the next so fold sizes also stay within one of each other.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64, class_names: &[String]) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(class_names.len());
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0;
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::InsufficientClassSamples {
                class: class_names.get(c).cloned().unwrap_or_else(|| c.to_string()),
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng::stream(seed, &[0xf01d, c as u64]));
        for (j, i) in members.iter().enumerate() {
            folds[(offset + j) % k].push(*i);
        }
        offset = (offset + members.len()) % k;
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan { k, seed, folds })
}

/// What a model produced for one held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPrediction {
    pub labels: Vec<usize>,
    pub proba: Option<ProbabilityMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub test: Vec<usize>,
    pub prediction: FoldPrediction,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub accuracy: f64,
    pub accuracy_sd: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub kappa: f64,
    pub auc_macro: Option<f64>,
    pub auc_weighted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: usize,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldOutcome>,
    /// Unweighted mean of the per-fold metrics.
    pub aggregate: AggregateMetrics,
    /// Sum of the fold confusion matrices.
    pub confusion: ConfusionMatrix,
}

impl CvReport {
    /// Scores the given per-fold predictions against `truth`.
    pub fn from_predictions(
        truth: &[usize],
        n_classes: usize,
        plan: &FoldPlan,
        predictions: Vec<FoldPrediction>,
    ) -> Result<Self> {
        if predictions.len() != plan.k {
            return Err(Error::ShapeMismatch(format!(
                "{} fold predictions for {} folds",
                predictions.len(),
                plan.k
            )));
        }
        let mut total = ConfusionMatrix::zeros(n_classes);
        let mut folds = Vec::with_capacity(plan.k);
        for (fold, prediction) in predictions.into_iter().enumerate() {
            let test = plan.test_indices(fold).to_vec();
            let fold_truth: Vec<usize> = test.iter().map(|&i| truth[i]).collect();
            let cm = confusion(&fold_truth, &prediction.labels, n_classes)?;
            let m = metrics(&cm, prediction.proba.as_ref(), &fold_truth)?;
            total.add(&cm)?;
            folds.push(FoldOutcome {
                fold,
                test,
                prediction,
                confusion: cm,
                metrics: m,
            });
        }
        let kf = folds.len() as f64;
        let mean = |f: &dyn Fn(&MetricsReport) -> f64| folds.iter().map(|o| f(&o.metrics)).sum::<f64>() / kf;
        let mean_opt = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
            let v: Option<Vec<f64>> = folds.iter().map(|o| f(&o.metrics)).collect();
            v.map(|v| v.iter().sum::<f64>() / kf)
        };
        let accuracy = mean(&|m| m.accuracy);
        let accuracy_sd = if folds.len() > 1 {
            (folds.iter().map(|o| (o.metrics.accuracy - accuracy).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt()
        } else {
            0.0
        };
        let aggregate = AggregateMetrics {
            accuracy,
            accuracy_sd,
            macro_avg: Averages {
                precision: mean(&|m| m.macro_avg.precision),
                recall: mean(&|m| m.macro_avg.recall),
                f1: mean(&|m| m.macro_avg.f1),
            },
            weighted_avg: Averages {
                precision: mean(&|m| m.weighted_avg.precision),
                recall: mean(&|m| m.weighted_avg.recall),
                f1: mean(&|m| m.weighted_avg.f1),
            },
            kappa: mean(&|m| m.kappa),
            auc_macro: mean_opt(&|m| m.auc_macro),
            auc_weighted: mean_opt(&|m| m.auc_weighted),
        };
        Ok(Self {
            k: plan.k,
            seed: plan.seed,
            folds,
            aggregate,
            confusion: total,
        })
    }

    /// Per-class ROC curves averaged over folds on an even FPR grid of
    /// `grid_points` points; folds lacking positives or negatives for a class
    /// are skipped for that class.
    pub fn mean_roc(&self, truth: &[usize], grid_points: usize) -> Vec<RocCurve> {
        let grid: Vec<f64> = (0..grid_points)
            .map(|i| i as f64 / (grid_points.max(2) - 1) as f64)
            .collect();
        let n_classes = self.confusion.n_classes();
        (0..n_classes)
            .filter_map(|c| {
                let mut sum = vec![0.0; grid.len()];
                let mut used = 0usize;
                for o in &self.folds {
                    let Some(p) = &o.prediction.proba else { continue };
                    let pos: Vec<bool> = o.test.iter().map(|&i| truth[i] == c).collect();
                    if pos.iter().all(|&b| b) || !pos.iter().any(|&b| b) {
                        continue;
                    }
                    let curve = roc_curve(&p.class_scores(c), &pos);
                    for (s, &x) in sum.iter_mut().zip(&grid) {
                        *s += tpr_at(&curve, x);
                    }
                    used += 1;
                }
                (used > 0).then(|| RocCurve {
                    class: c,
                    fpr: grid.clone(),
                    tpr: sum.iter().map(|s| s / used as f64).collect(),
                })
            })
            .collect()
    }
}

/// Runs `fit_predict(fold, train, test)` on every fold (folds run
/// concurrently) and scores the held-out predictions.
pub fn cross_validate<F>(ds: &ExpressionDataset, plan: &FoldPlan, fit_predict: F) -> Result<CvReport>
where
    F: Fn(usize, &ExpressionDataset, &ExpressionDataset) -> Result<FoldPrediction> + Sync,
{
    let n: usize = plan.folds.iter().map(Vec::len).sum();
    if n != ds.n_samples() {
        return Err(Error::ShapeMismatch(format!(
            "fold plan covers {n} samples, dataset has {}",
            ds.n_samples()
        )));
    }
    let predictions = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let train = ds.select_rows(&plan.train_indices(f))?;
            let test = ds.select_rows(plan.test_indices(f))?;
            let pred = fit_predict(f, &train, &test)?;
            if pred.labels.len() != test.n_samples() {
                return Err(Error::ShapeMismatch("fold prediction length differs from fold size".into()));
            }
            Ok(pred)
        })
        .collect::<Result<Vec<_>>>()?;
    CvReport::from_predictions(ds.labels(), ds.n_classes(), plan, predictions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cm(a: Array2<u64>) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(a).unwrap()
    }

    #[test]
    fn kappa_hand_case_is_exact() {
        let m = cm(array![[20, 5], [10, 15]]);
        assert_eq!(cohen_kappa(&m), 0.4);
        let r = metrics(&m, None, &[]).unwrap();
        assert_eq!(r.accuracy, 0.7);
    }

    #[test]
    fn perfect_two_class() {
        let m = confusion(&[0, 0, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.counts(), &array![[2, 0], [0, 2]]);
        let r = metrics(&m, None, &[]).unwrap();
        assert_eq!((r.accuracy, r.kappa), (1.0, 1.0));
    }

    #[test]
    fn direct_counts_and_errors() {
        let m = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(m.counts(), &array![[1, 1], [0, 1]]);
        assert!(matches!(confusion(&[0, 2], &[0, 0], 2), Err(Error::LabelOutOfRange { code: 2, .. })));
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        let mut a = m.clone();
        a.add(&m).unwrap();
        assert_eq!(a.counts(), &array![[2, 2], [0, 2]]);
        assert_eq!(m.row_normalized(), array![[0.5, 0.5], [0.0, 1.0]]);
    }

    #[test]
    fn precision_without_predictions_is_flagged_zero() {
        let m = confusion(&[0, 1, 1], &[0, 0, 0], 2).unwrap();
        let r = metrics(&m, None, &[]).unwrap();
        assert!(r.per_class[1].precision_undefined);
        assert_eq!(r.per_class[1].precision, 0.0);
        assert!(!r.per_class[0].precision_undefined);
    }

    #[test]
    fn auc_extremes_and_ties() {
        let pos = [false, false, true, true];
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &pos), Some(1.0));
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &pos), Some(0.0));
        assert_eq!(auc(&[0.5; 4], &pos), Some(0.5));
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), None);
    }

    proptest! {
        #[test]
        fn rank_auc_equals_trapezoid(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..60);
            // coarse scores so ties are common
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8)) / 8.0).collect();
            let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            pos[0] = true;
            pos[1] = false;
            let a = auc(&scores, &pos).unwrap();
            let b = trapezoid_area(&roc_curve(&scores, &pos));
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        }

        #[test]
        fn accuracy_is_trace_over_total_and_micro_recall(counts in prop::collection::vec(0u64..20, 9)) {
            let m = cm(Array2::from_shape_vec((3, 3), counts).unwrap());
            prop_assume!(m.total() > 0);
            let r = metrics(&m, None, &[]).unwrap();
            prop_assert_eq!(r.accuracy, m.trace() as f64 / m.total() as f64);
            for c in &r.per_class {
                let lo = c.precision.min(c.recall);
                let hi = c.precision.max(c.recall);
                prop_assert!(c.f1 >= lo - 1e-12 && c.f1 <= hi + 1e-12);
            }
            let off: u64 = m.total() - m.trace();
            if off == 0 {
                prop_assert_eq!(r.kappa, 1.0);
            }
        }
    }

    #[test]
    fn folds_divide_exactly() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let plan = stratified_folds(&labels, 10, 7, &[]).unwrap();
        for f in &plan.folds {
            assert_eq!(f.iter().filter(|&&i| labels[i] == 0).count(), 5);
            assert_eq!(f.iter().filter(|&&i| labels[i] == 1).count(), 5);
        }
    }

    #[test]
    fn small_class_is_rejected_by_name() {
        let mut labels = vec![0; 30];
        labels.extend([1; 4]);
        let names = vec!["BRCA".to_string(), "CHOL".to_string()];
        let err = stratified_folds(&labels, 10, 1, &names).unwrap_err();
        assert!(matches!(err, Error::InsufficientClassSamples { ref class, count: 4, k: 10 } if class == "CHOL"));
    }

    proptest! {
        #[test]
        fn fold_invariants(sizes in prop::collection::vec(10usize..40, 2..8), seed in 0u64..100) {
            let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| vec![c; n]).collect();
            let plan = stratified_folds(&labels, 10, seed, &[]).unwrap();
            let mut seen = vec![0; labels.len()];
            for f in &plan.folds {
                for &i in f { seen[i] += 1; }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
            for c in 0..sizes.len() {
                let per: Vec<usize> = plan.folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == c).count()).collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
            let lens: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            prop_assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
            for f in 0..10 {
                let train = plan.train_indices(f);
                prop_assert!(train.iter().all(|i| !plan.folds[f].contains(i)));
                prop_assert_eq!(train.len() + plan.folds[f].len(), labels.len());
            }
        }
    }

    fn toy(n: usize) -> ExpressionDataset {
        use crate::dataset::{fixtures::dataset, FeatureType};
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let vals = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        dataset(vals, &labels, &[FeatureType::MRna])
    }

    #[test]
    fn constant_classifier_is_at_chance() {
        let ds = toy(100);
        let plan = stratified_folds(ds.labels(), 10, 1, &[]).unwrap();
        let r = cross_validate(&ds, &plan, |_, _, test| {
            Ok(FoldPrediction {
                labels: vec![0; test.n_samples()],
                proba: None,
            })
        })
        .unwrap();
        assert_eq!(r.aggregate.accuracy, 0.5);
        assert_eq!(r.aggregate.kappa, 0.0);
        assert_eq!(r.confusion.total(), 100);
        assert_eq!(r.confusion.counts(), &array![[50, 0], [50, 0]]);
    }

    #[test]
    fn no_test_sample_is_seen_in_training() {
        let ds = toy(60);
        let plan = stratified_folds(ds.labels(), 5, 2, &[]).unwrap();
        let r = cross_validate(&ds, &plan, |f, train, test| {
            let train_ids: std::collections::HashSet<&String> = train.sample_ids().iter().collect();
            assert!(test.sample_ids().iter().all(|s| !train_ids.contains(s)));
            assert_eq!(train.n_samples() + test.n_samples(), 60);
            assert_eq!(test.n_samples(), plan.test_indices(f).len());
            Ok(FoldPrediction {
                labels: test.labels().to_vec(),
                proba: None,
            })
        })
        .unwrap();
        assert_eq!(r.aggregate.accuracy, 1.0);
    }

    #[test]
    fn mean_roc_of_perfect_scores() {
        let ds = toy(40);
        let plan = stratified_folds(ds.labels(), 4, 2, &[]).unwrap();
        let r = cross_validate(&ds, &plan, |_, _, test| {
            let p = Array2::from_shape_fn((test.n_samples(), 2), |(i, c)| f64::from(u8::from(test.labels()[i] == c)));
            Ok(FoldPrediction {
                labels: test.labels().to_vec(),
                proba: Some(ProbabilityMatrix::new(p)?),
            })
        })
        .unwrap();
        assert_eq!(r.aggregate.auc_macro, Some(1.0));
        let curves = r.mean_roc(ds.labels(), 11);
        assert_eq!(curves.len(), 2);
        assert!(curves[0].tpr.iter().all(|&t| t == 1.0));
    }
}
