//! Parallel voting ensembles: every member is trained on the same data and
//! their outputs are fused by majority vote or by averaging probabilities.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{train, ClassifierSpec, TrainedClassifier};
use crate::dataset::ExpressionDataset;
use crate::error::{Error, Result};
use crate::proba::{argmax, ProbabilityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    MaxVote,
    AverageVote,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::MaxVote => "mvEns",
            Fusion::AverageVote => "avEns",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub members: Vec<ClassifierSpec>,
    pub fusion: Fusion,
}

impl EnsembleSpec {
    /// LR + SVM + gradient boosting with the given fusion.
    pub fn standard(fusion: Fusion) -> Self {
        Self {
            members: vec![
                ClassifierSpec::softmax_lr(),
                ClassifierSpec::linear_svm(),
                ClassifierSpec::gradient_boost(),
            ],
            fusion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Config("an ensemble needs at least one member".into()));
        }
        self.members.iter().try_for_each(ClassifierSpec::validate)
    }
}

/// Result of fusing member outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPrediction {
    pub labels: Vec<usize>,
    /// Scores used for ROC analysis: averaged member probabilities for the
    /// average vote, member vote shares for the max vote.
    pub proba: ProbabilityMatrix,
    /// Samples whose vote had more than one modal class (max vote only).
    pub ties: Vec<usize>,
}

fn check_shapes(members: &[ProbabilityMatrix]) -> Result<(usize, usize)> {
    let first = members
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no member predictions to fuse".into()))?;
    let shape = (first.n_samples(), first.n_classes());
    if let Some(m) = members.iter().find(|m| (m.n_samples(), m.n_classes()) != shape) {
        return Err(Error::ShapeMismatch(format!(
            "member shapes differ: {:?} vs {:?}",
            shape,
            (m.n_samples(), m.n_classes())
        )));
    }
    Ok(shape)
}

/// Cell-wise mean of the member probability matrices, then row argmax with
/// the lowest class code winning ties.
pub fn fuse_average_vote(members: &[ProbabilityMatrix]) -> Result<(Vec<usize>, ProbabilityMatrix)> {
    let (n, k) = check_shapes(members)?;
    let mut sum = Array2::<f64>::zeros((n, k));
    for m in members {
        sum += m.values();
    }
    sum /= members.len() as f64;
    let avg = ProbabilityMatrix::new_unchecked(sum);
    Ok((avg.argmax(), avg))
}

/// Per-sample modal class of the member labels. When several classes share
/// the top count the sample is recorded as a tie and resolved by the argmax of
/// `fallback` (normally the averaged member probabilities); without a
/// fallback the lowest tied code wins.
pub fn fuse_max_vote(
    predictions: &[Vec<usize>],
    n_classes: usize,
    fallback: Option<&ProbabilityMatrix>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = predictions
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no member predictions to fuse".into()))?
        .len();
    if predictions.iter().any(|p| p.len() != n) {
        return Err(Error::ShapeMismatch("member prediction lengths differ".into()));
    }
    if let Some(f) = fallback {
        if f.n_samples() != n || f.n_classes() != n_classes {
            return Err(Error::ShapeMismatch("fallback probabilities do not match votes".into()));
        }
    }
    if let Some(&code) = predictions.iter().flatten().find(|&&c| c >= n_classes) {
        return Err(Error::LabelOutOfRange { code, n_classes });
    }
    let mut labels = Vec::with_capacity(n);
    let mut ties = Vec::new();
    let mut counts = vec![0usize; n_classes];
    for i in 0..n {
        counts.iter_mut().for_each(|c| *c = 0);
        for p in predictions {
            counts[p[i]] += 1;
        }
        let top = *counts.iter().max().expect("n_classes > 0");
        let mut modal = (0..n_classes).filter(|&c| counts[c] == top);
        let first = modal.next().expect("some class has the top count");
        if modal.next().is_none() {
            labels.push(first);
        } else {
            ties.push(i);
            labels.push(fallback.map_or(first, |f| argmax(f.row(i).iter().copied())));
        }
    }
    Ok((labels, ties))
}

/// Fuses member probability outputs; member hard labels are their argmaxes.
pub fn fuse(fusion: Fusion, members: &[ProbabilityMatrix]) -> Result<FusedPrediction> {
    let (n, k) = check_shapes(members)?;
    let (avg_labels, avg) = fuse_average_vote(members)?;
    match fusion {
        Fusion::AverageVote => Ok(FusedPrediction {
            labels: avg_labels,
            proba: avg,
            ties: Vec::new(),
        }),
        Fusion::MaxVote => {
            let votes: Vec<Vec<usize>> = members.iter().map(ProbabilityMatrix::argmax).collect();
            let (labels, ties) = fuse_max_vote(&votes, k, Some(&avg))?;
            let mut shares = Array2::<f64>::zeros((n, k));
            for v in &votes {
                for (i, &c) in v.iter().enumerate() {
                    shares[[i, c]] += 1.0;
                }
            }
            shares /= members.len() as f64;
            Ok(FusedPrediction {
                labels,
                proba: ProbabilityMatrix::new_unchecked(shares),
                ties,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEnsemble {
    pub spec: EnsembleSpec,
    pub members: Vec<TrainedClassifier>,
}

/// Trains every member independently (concurrently) on the same dataset.
pub fn train_ensemble(spec: &EnsembleSpec, ds: &ExpressionDataset) -> Result<TrainedEnsemble> {
    spec.validate()?;
    let members = spec
        .members
        .par_iter()
        .map(|m| train(m, ds))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedEnsemble {
        spec: spec.clone(),
        members,
    })
}

impl TrainedEnsemble {
    pub fn member_probas(&self, ds: &ExpressionDataset) -> Result<Vec<ProbabilityMatrix>> {
        self.members.par_iter().map(|m| m.predict_proba(ds)).collect()
    }

    pub fn predict_detailed(&self, ds: &ExpressionDataset) -> Result<FusedPrediction> {
        fuse(self.spec.fusion, &self.member_probas(ds)?)
    }

    pub fn predict(&self, ds: &ExpressionDataset) -> Result<Vec<usize>> {
        Ok(self.predict_detailed(ds)?.labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pm(a: Array2<f64>) -> ProbabilityMatrix {
        ProbabilityMatrix::new(a).unwrap()
    }

    #[test]
    fn worked_max_vote_examples() {
        let (l, t) = fuse_max_vote(&[vec![2], vec![2], vec![1]], 3, None).unwrap();
        assert_eq!((l, t), (vec![2], vec![]));
        let (l, _) = fuse_max_vote(&[vec![5], vec![5], vec![5]], 6, None).unwrap();
        assert_eq!(l, vec![5]);
        let avg = pm(array![[0.2, 0.5, 0.3]]);
        let (l, t) = fuse_max_vote(&[vec![0], vec![1], vec![2]], 3, Some(&avg)).unwrap();
        assert_eq!((l, t), (vec![1], vec![0]));
    }

    #[test]
    fn worked_average_examples() {
        let one = pm(array![[1.0, 0.0]]);
        let (l, avg) = fuse_average_vote(&[one.clone(), one.clone(), one.clone()]).unwrap();
        assert_eq!(l, vec![0]);
        assert_eq!(avg.row(0).to_vec(), vec![1.0, 0.0]);

        let members = [
            pm(array![[0.6, 0.4]]),
            pm(array![[0.5, 0.5]]),
            pm(array![[0.1, 0.9]]),
        ];
        let (l, avg) = fuse_average_vote(&members).unwrap();
        assert_eq!(l, vec![1]);
        assert!((avg.row(0)[0] - 0.4).abs() < 1e-15 && (avg.row(0)[1] - 0.6).abs() < 1e-15);

        let single = pm(array![[0.3, 0.7], [0.9, 0.1]]);
        assert_eq!(fuse_average_vote(std::slice::from_ref(&single)).unwrap().0, single.argmax());
    }

    #[test]
    fn shape_errors() {
        assert!(fuse_max_vote(&[vec![0, 1], vec![0]], 2, None).is_err());
        assert!(fuse_max_vote(&[vec![3]], 2, None).is_err());
        assert!(fuse_average_vote(&[pm(array![[1.0, 0.0]]), pm(array![[1.0, 0.0, 0.0]])]).is_err());
        assert!(fuse_average_vote(&[]).is_err());
    }

    fn random_proba(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ProbabilityMatrix {
        let mut a = Array2::from_shape_fn((n, k), |_| rng.random::<f64>());
        for mut row in a.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        ProbabilityMatrix::new_unchecked(a)
    }

    #[test]
    fn average_vote_matches_explicit_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let k = rng.random_range(2..=33);
            let n = rng.random_range(1..=4);
            let members: Vec<_> = (0..3).map(|_| random_proba(&mut rng, n, k)).collect();
            let (labels, avg) = fuse_average_vote(&members).unwrap();
            for i in 0..n {
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for c in 0..k {
                    let v = (members[0].row(i)[c] + members[1].row(i)[c] + members[2].row(i)[c]) / 3.0;
                    assert_eq!(v, avg.row(i)[c]);
                    if v > best_v {
                        best_v = v;
                        best = c;
                    }
                }
                assert_eq!(labels[i], best);
            }
        }
    }

    proptest! {
        #[test]
        fn max_vote_matches_modal_count(votes in prop::collection::vec(prop::collection::vec(0usize..5, 6), 1..6)) {
            let (labels, ties) = fuse_max_vote(&votes, 5, None).unwrap();
            for i in 0..6 {
                let mut counts = [0; 5];
                for v in &votes { counts[v[i]] += 1; }
                let top = *counts.iter().max().unwrap();
                let modal: Vec<usize> = (0..5).filter(|&c| counts[c] == top).collect();
                if modal.len() == 1 {
                    prop_assert_eq!(labels[i], modal[0]);
                    prop_assert!(!ties.contains(&i));
                } else {
                    prop_assert!(ties.contains(&i));
                }
            }
        }

        #[test]
        fn member_order_does_not_matter(seed in 0u64..1000, k in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m: Vec<_> = (0..3).map(|_| random_proba(&mut rng, 5, k)).collect();
            let rev: Vec<_> = m.iter().rev().cloned().collect();
            for fusion in [Fusion::AverageVote, Fusion::MaxVote] {
                let a = fuse(fusion, &m).unwrap();
                let b = fuse(fusion, &rev).unwrap();
                prop_assert_eq!(&a.labels, &b.labels);
                prop_assert_eq!(a.ties, b.ties);
            }
        }
    }

    #[test]
    fn duplicate_members_collapse_to_the_member() {
        use crate::dataset::{fixtures::dataset, FeatureType};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals = Array2::from_shape_fn((40, 3), |(i, j)| (i % 2) as f64 * (j as f64 + 1.0) + rng.random::<f64>() * 2.0);
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let ds = dataset(vals, &labels, &[FeatureType::MRna; 3]);
        let knn = ClassifierSpec::knn();
        let single = train(&knn, &ds).unwrap().predict(&ds).unwrap();
        for fusion in [Fusion::AverageVote, Fusion::MaxVote] {
            let e = train_ensemble(&EnsembleSpec { members: vec![knn; 3], fusion }, &ds).unwrap();
            assert_eq!(e.predict(&ds).unwrap(), single);
        }
        assert!(EnsembleSpec { members: vec![], fusion: Fusion::MaxVote }.validate().is_err());
    }
}
