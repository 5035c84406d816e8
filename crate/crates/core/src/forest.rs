//! Classification trees and random forests with mean-decrease-impurity
//! importances, plus the across-tree importance z-score used by Boruta.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ExpressionDataset;
use crate::error::{Error, Result};
use crate::proba::ProbabilityMatrix;
use crate::rng;

/// Floor under which an across-tree importance sd is treated as zero.
pub const SD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let m = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(k) => k,
        };
        m.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    Uniform,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub class_weight: ClassWeight,
    pub bootstrap: bool,
    pub criterion: Criterion,
    pub seed: u64,
}

/// Missing fields in a serialized config fall back to the classifier settings.
impl Default for ForestConfig {
    fn default() -> Self {
        Self::classifier_default()
    }
}

impl ForestConfig {
    /// Forest settings used inside Boruta: gini, balanced class weights, no
    /// bootstrap, sqrt feature sampling, split >= 6, leaf >= 3. Depth 60 is
    /// the top of the sweep grid and unbounded in practice at desk scale.
    pub fn boruta_default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 60,
            min_samples_split: 6,
            min_samples_leaf: 3,
            max_features: MaxFeatures::Sqrt,
            class_weight: ClassWeight::Balanced,
            bootstrap: false,
            criterion: Criterion::Gini,
            seed: 1,
        }
    }

    /// The standalone random-forest classifier: 100 entropy trees of depth 12.
    pub fn classifier_default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            class_weight: ClassWeight::Uniform,
            bootstrap: false,
            criterion: Criterion::Entropy,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::Config("n_trees must be >= 1".into()));
        }
        if self.max_depth < 1 {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be >= 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::Config("min_samples_leaf must be >= 1".into()));
        }
        if self.max_features == MaxFeatures::Fixed(0) {
            return Err(Error::Config("max_features must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        /// Position in the forest's feature list.
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        proba: Vec<f64>,
        /// Unweighted training samples reaching the leaf.
        n_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_proba(&self, value_of: impl Fn(usize) -> f64) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if value_of(*feature) <= *threshold { *left } else { *right },
                Node::Leaf { proba, .. } => return proba,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedForest {
    /// Dataset column for each feature position used by the trees.
    pub features: Vec<usize>,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
    /// Tree x feature-position impurity importances, each row normalised.
    pub importances: Vec<Vec<f64>>,
    pub config: ForestConfig,
}

/// Class weights per sample: `n / (n_present_classes * count_c)` when
/// balanced, one otherwise.
fn sample_weights(labels: &[usize], n_classes: usize, rule: ClassWeight) -> Vec<f64> {
    match rule {
        ClassWeight::Uniform => vec![1.0; labels.len()],
        ClassWeight::Balanced => {
            let mut counts = vec![0usize; n_classes];
            for &l in labels {
                counts[l] += 1;
            }
            let present = counts.iter().filter(|&&c| c > 0).count() as f64;
            let n = labels.len() as f64;
            labels
                .iter()
                .map(|&l| n / (present * counts[l] as f64))
                .collect()
        }
    }
}

fn impurity(criterion: Criterion, dist: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    match criterion {
        Criterion::Gini => 1.0 - dist.iter().map(|&w| (w / total) * (w / total)).sum::<f64>(),
        Criterion::Entropy => -dist
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| {
                let p = w / total;
                p * p.log2()
            })
            .sum::<f64>(),
    }
}

struct Builder<'a> {
    cols: &'a [Vec<f64>],
    labels: &'a [usize],
    weights: &'a [f64],
    n_classes: usize,
    cfg: &'a ForestConfig,
    m_try: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    scratch: Vec<(f64, usize)>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn distribution(&self, idx: &[usize]) -> (Vec<f64>, f64) {
        let mut dist = vec![0.0; self.n_classes];
        for &i in idx {
            dist[self.labels[i]] += self.weights[i];
        }
        let total = dist.iter().sum();
        (dist, total)
    }

    fn leaf(&mut self, dist: Vec<f64>, total: f64, n_samples: usize) -> usize {
        let proba = dist.iter().map(|&w| w / total).collect();
        self.nodes.push(Node::Leaf { proba, n_samples });
        self.nodes.len() - 1
    }

    fn best_split(&mut self, idx: &[usize], parent_dist: &[f64], parent_total: f64) -> Option<BestSplit> {
        let n_features = self.cols.len();
        let mut candidates = index::sample(&mut self.rng, n_features, self.m_try).into_vec();
        candidates.sort_unstable();

        let parent_score = parent_total * impurity(self.cfg.criterion, parent_dist, parent_total);
        let min_leaf = self.cfg.min_samples_leaf;
        let n = idx.len();
        let mut best: Option<BestSplit> = None;
        let mut left = vec![0.0; self.n_classes];
        let mut right = vec![0.0; self.n_classes];

        for f in candidates {
            let col = &self.cols[f];
            self.scratch.clear();
            self.scratch.extend(idx.iter().map(|&i| (col[i], i)));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if self.scratch[0].0 == self.scratch[n - 1].0 {
                continue;
            }
            left.iter_mut().for_each(|w| *w = 0.0);
            right.copy_from_slice(parent_dist);
            let (mut wl, mut wr) = (0.0, parent_total);
            for pos in 0..n - 1 {
                let (v, i) = self.scratch[pos];
                let w = self.weights[i];
                left[self.labels[i]] += w;
                right[self.labels[i]] -= w;
                wl += w;
                wr -= w;
                if pos + 1 < min_leaf {
                    continue;
                }
                if n - pos - 1 < min_leaf {
                    break;
                }
                let next = self.scratch[pos + 1].0;
                if v == next {
                    continue;
                }
                let gain = parent_score
                    - wl * impurity(self.cfg.criterion, &left, wl)
                    - wr.max(0.0) * impurity(self.cfg.criterion, &right, wr.max(0.0));
                if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                    let mut threshold = 0.5 * (v + next);
                    if threshold == next {
                        threshold = v;
                    }
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12 * parent_total.max(1.0))
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let (dist, total) = self.distribution(idx);
        let n = idx.len();
        let pure = dist.iter().filter(|&&w| w > 0.0).count() <= 1;
        if pure
            || depth >= self.cfg.max_depth
            || n < self.cfg.min_samples_split
            || n < 2 * self.cfg.min_samples_leaf
        {
            return self.leaf(dist, total, n);
        }
        let Some(split) = self.best_split(idx, &dist, total) else {
            return self.leaf(dist, total, n);
        };
        self.importance[split.feature] += split.gain;

        let col = &self.cols[split.feature];
        let (mut l, mut r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| col[i] <= split.threshold);
        let n_left = l.len();
        idx[..n_left].copy_from_slice(&l);
        idx[n_left..].copy_from_slice(&r);
        l.clear();
        r.clear();

        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            proba: Vec::new(),
            n_samples: 0,
        });
        let (li, ri) = idx.split_at_mut(n_left);
        let left = self.build(li, depth + 1);
        let right = self.build(ri, depth + 1);
        self.nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        at
    }
}

fn build_tree(
    cols: &[Vec<f64>],
    labels: &[usize],
    weights: &[f64],
    n_classes: usize,
    cfg: &ForestConfig,
    tree_index: usize,
) -> (Tree, Vec<f64>) {
    let n = labels.len();
    let mut rng = rng::stream(cfg.seed, &[tree_index as u64]);
    let mut idx: Vec<usize> = if cfg.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut b = Builder {
        cols,
        labels,
        weights,
        n_classes,
        cfg,
        m_try: cfg.max_features.resolve(cols.len()),
        rng,
        nodes: Vec::new(),
        importance: vec![0.0; cols.len()],
        scratch: Vec::with_capacity(n),
    };
    b.build(&mut idx, 0);
    let total: f64 = b.importance.iter().sum();
    if total > 0.0 {
        b.importance.iter_mut().for_each(|v| *v /= total);
    }
    (Tree { nodes: b.nodes }, b.importance)
}

/// Trains a forest on column-major data. Feature positions map to
/// themselves; callers that train on a column subset remap afterwards.
pub fn fit_columns(
    cols: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    cfg: &ForestConfig,
) -> Result<TrainedForest> {
    cfg.validate()?;
    if cols.is_empty() {
        return Err(Error::EmptyFeatureSubset);
    }
    if let Some(c) = cols.iter().find(|c| c.len() != labels.len()) {
        return Err(Error::ShapeMismatch(format!(
            "column of length {} for {} labels",
            c.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::LabelOutOfRange { code: bad, n_classes });
    }
    let mut present = vec![false; n_classes];
    labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::SingleClass);
    }

    let weights = sample_weights(labels, n_classes, cfg.class_weight);
    let (trees, importances): (Vec<Tree>, Vec<Vec<f64>>) = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| build_tree(cols, labels, &weights, n_classes, cfg, t))
        .unzip();
    Ok(TrainedForest {
        features: (0..cols.len()).collect(),
        n_classes,
        trees,
        importances,
        config: *cfg,
    })
}

pub(crate) fn columns_of(ds: &ExpressionDataset, features: &[usize]) -> Vec<Vec<f64>> {
    features.iter().map(|&j| ds.column(j).to_vec()).collect()
}

/// Trains on the listed dataset columns. Deterministic given the seed.
pub fn train_forest(
    ds: &ExpressionDataset,
    features: &[usize],
    cfg: &ForestConfig,
) -> Result<TrainedForest> {
    if features.is_empty() {
        return Err(Error::EmptyFeatureSubset);
    }
    if let Some(&bad) = features.iter().find(|&&j| j >= ds.n_features()) {
        return Err(Error::MissingFeature {
            index: bad,
            n_features: ds.n_features(),
        });
    }
    let cols = columns_of(ds, features);
    let mut forest = fit_columns(&cols, ds.labels(), ds.n_classes(), cfg)?;
    forest.features = features.to_vec();
    Ok(forest)
}

impl TrainedForest {
    /// Mean of the leaf distributions reached in every tree.
    pub fn predict_proba(&self, ds: &ExpressionDataset) -> Result<ProbabilityMatrix> {
        if let Some(&bad) = self.features.iter().find(|&&j| j >= ds.n_features()) {
            return Err(Error::MissingFeature {
                index: bad,
                n_features: ds.n_features(),
            });
        }
        let values = ds.values();
        let rows: Vec<Vec<f64>> = (0..ds.n_samples())
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![0.0; self.n_classes];
                for tree in &self.trees {
                    let p = tree.leaf_proba(|pos| values[[i, self.features[pos]]]);
                    acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
                }
                let n = self.trees.len() as f64;
                acc.iter_mut().for_each(|a| *a /= n);
                acc
            })
            .collect();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(ProbabilityMatrix::new_unchecked(
            ndarray::Array2::from_shape_vec((ds.n_samples(), self.n_classes), flat)
                .expect("row lengths match class count"),
        ))
    }

    /// Mean importance per feature position across trees.
    pub fn mean_importances(&self) -> Vec<f64> {
        let t = self.trees.len() as f64;
        (0..self.features.len())
            .map(|f| self.importances.iter().map(|row| row[f]).sum::<f64>() / t)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Across-tree importance statistics, one entry per forest feature position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreVector {
    pub z: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// z = mean / sample-sd of per-tree importances. When the sd is below
/// [`SD_FLOOR`] the score is 0 for a zero mean and `mean / SD_FLOOR`
/// otherwise.
pub fn z_scores(forest: &TrainedForest) -> Result<ZScoreVector> {
    let t = forest.trees.len();
    if t < 2 {
        return Err(Error::TooFewTrees(t));
    }
    let tf = t as f64;
    let n_features = forest.features.len();
    let mut out = ZScoreVector {
        z: Vec::with_capacity(n_features),
        mean: Vec::with_capacity(n_features),
        sd: Vec::with_capacity(n_features),
    };
    for f in 0..n_features {
        let mean = forest.importances.iter().map(|r| r[f]).sum::<f64>() / tf;
        let ss: f64 = forest.importances.iter().map(|r| (r[f] - mean).powi(2)).sum();
        let sd = (ss / (tf - 1.0)).sqrt();
        let z = if sd < SD_FLOOR {
            if mean < SD_FLOOR {
                0.0
            } else {
                mean / SD_FLOOR
            }
        } else {
            mean / sd
        };
        out.z.push(z);
        out.mean.push(mean);
        out.sd.push(sd);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::dataset;
    use crate::dataset::FeatureType;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn forest_with_importances(rows: Vec<Vec<f64>>) -> TrainedForest {
        let n_features = rows[0].len();
        TrainedForest {
            features: (0..n_features).collect(),
            n_classes: 2,
            trees: vec![
                Tree {
                    nodes: vec![Node::Leaf {
                        proba: vec![0.5, 0.5],
                        n_samples: 1
                    }]
                };
                rows.len()
            ],
            importances: rows,
            config: ForestConfig::boruta_default(),
        }
    }

    #[test]
    fn z_score_hand_values() {
        let f = forest_with_importances(vec![vec![0.2, 0.0, 0.1], vec![0.4, 0.0, 0.1]]);
        let z = z_scores(&f).unwrap();
        assert!((z.mean[0] - 0.3).abs() < 1e-15);
        assert!((z.sd[0] - 0.141_421_356_237_309_5).abs() < 1e-12);
        assert!((z.z[0] - 2.121_320_343_559_642).abs() < 1e-9);
        assert_eq!(z.z[1], 0.0);
        assert!((z.z[2] - 0.1 / SD_FLOOR).abs() < 1.0);
    }

    #[test]
    fn z_scores_need_two_trees() {
        let f = forest_with_importances(vec![vec![1.0]]);
        assert!(matches!(z_scores(&f), Err(Error::TooFewTrees(1))));
    }

    fn blobs(n_per_class: usize, n_classes: usize, n_features: usize, sep: f64, seed: u64) -> ExpressionDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = n_per_class * n_classes;
        let mut vals = Array2::zeros((n, n_features));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % n_classes;
            labels.push(c);
            for j in 0..n_features {
                let shift = if j % n_classes == c { sep } else { 0.0 };
                vals[[i, j]] = (10.0 + shift + normal.sample(&mut rng)).max(0.0);
            }
        }
        dataset(vals, &labels, &vec![FeatureType::MRna; n_features])
    }

    fn accuracy(p: &ProbabilityMatrix, labels: &[usize]) -> f64 {
        let hits = p.argmax().iter().zip(labels).filter(|(a, b)| a == b).count();
        hits as f64 / labels.len() as f64
    }

    #[test]
    fn separable_two_class_fits_perfectly() {
        // class 0 has both features below 1, class 1 both above 2
        let vals = Array2::from_shape_fn((40, 2), |(i, j)| {
            let base = if i < 20 { 0.0 } else { 2.0 };
            base + ((i * 7 + j * 3) % 10) as f64 / 10.0
        });
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let ds = dataset(vals, &labels, &[FeatureType::MRna; 2]);
        let cfg = ForestConfig {
            n_trees: 10,
            max_depth: 2,
            ..ForestConfig::boruta_default()
        };
        let f = train_forest(&ds, &[0, 1], &cfg).unwrap();
        assert_eq!(accuracy(&f.predict_proba(&ds).unwrap(), &labels), 1.0);
    }

    #[test]
    fn three_class_separable() {
        let ds = blobs(40, 3, 6, 6.0, 3);
        let f = train_forest(&ds, &(0..6).collect::<Vec<_>>(), &ForestConfig::classifier_default()).unwrap();
        assert!(accuracy(&f.predict_proba(&ds).unwrap(), ds.labels()) >= 0.99);
    }

    #[test]
    fn single_class_and_empty_subset_fail() {
        let ds = dataset(Array2::ones((4, 2)), &[0, 0, 0, 0], &[FeatureType::MRna; 2]);
        assert!(matches!(
            train_forest(&ds, &[0, 1], &ForestConfig::boruta_default()),
            Err(Error::SingleClass)
        ));
        let ds = blobs(5, 2, 2, 1.0, 1);
        assert!(matches!(
            train_forest(&ds, &[], &ForestConfig::boruta_default()),
            Err(Error::EmptyFeatureSubset)
        ));
    }

    #[test]
    fn stump_passes_leaf_distribution_through() {
        let tree = Tree {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf {
                    proba: vec![0.75, 0.25],
                    n_samples: 4,
                },
                Node::Leaf {
                    proba: vec![0.0, 1.0],
                    n_samples: 4,
                },
            ],
        };
        let f = TrainedForest {
            features: vec![0],
            n_classes: 2,
            trees: vec![tree],
            importances: vec![vec![1.0]],
            config: ForestConfig::boruta_default(),
        };
        let ds = dataset(ndarray::array![[0.0], [1.0]], &[0, 1], &[FeatureType::MRna]);
        let p = f.predict_proba(&ds).unwrap();
        assert_eq!(p.row(0).to_vec(), vec![0.75, 0.25]);
        assert_eq!(p.row(1).to_vec(), vec![0.0, 1.0]);

        let narrow = TrainedForest {
            features: vec![3],
            ..f
        };
        assert!(matches!(narrow.predict_proba(&ds), Err(Error::MissingFeature { index: 3, .. })));
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let ds = blobs(20, 3, 9, 1.5, 7);
        let feats: Vec<usize> = (0..9).collect();
        let cfg10 = ForestConfig {
            n_trees: 10,
            ..ForestConfig::boruta_default()
        };
        let a = train_forest(&ds, &feats, &cfg10).unwrap();
        let b = train_forest(&ds, &feats, &cfg10).unwrap();
        assert_eq!(a, b);
        let c = train_forest(&ds, &feats, &ForestConfig { n_trees: 20, ..cfg10 }).unwrap();
        assert_eq!(&c.trees[..10], &a.trees[..]);
        assert_eq!(&c.importances[..10], &a.importances[..]);
    }

    #[test]
    fn identical_across_thread_counts() {
        let ds = blobs(20, 3, 9, 1.5, 8);
        let feats: Vec<usize> = (0..9).collect();
        let cfg = ForestConfig {
            n_trees: 16,
            ..ForestConfig::boruta_default()
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train_forest(&ds, &feats, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn permuted_columns_give_identical_predictions_after_remap() {
        let ds = blobs(15, 3, 5, 2.0, 11);
        let f = train_forest(&ds, &[0, 1, 2, 3, 4], &ForestConfig::boruta_default()).unwrap();
        let perm = [3, 0, 4, 1, 2]; // new column k holds old column perm[k]
        let permuted = ds.select_columns(&perm).unwrap();
        let mut remapped = f.clone();
        remapped.features = f
            .features
            .iter()
            .map(|&old| perm.iter().position(|&p| p == old).unwrap())
            .collect();
        assert_eq!(
            f.predict_proba(&ds).unwrap(),
            remapped.predict_proba(&permuted).unwrap()
        );
    }

    #[test]
    fn json_round_trip() {
        let ds = blobs(10, 2, 3, 2.0, 2);
        let f = train_forest(&ds, &[0, 1, 2], &ForestConfig { n_trees: 3, ..ForestConfig::boruta_default() }).unwrap();
        let back = TrainedForest::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(f.predict_proba(&ds).unwrap(), back.predict_proba(&ds).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn structural_invariants(
            seed in 0u64..1000,
            max_depth in 1usize..6,
            min_leaf in 1usize..5,
            balanced in any::<bool>(),
            entropy in any::<bool>(),
        ) {
            let ds = blobs(12, 3, 6, 0.8, seed);
            let cfg = ForestConfig {
                n_trees: 6,
                max_depth,
                min_samples_split: 2,
                min_samples_leaf: min_leaf,
                max_features: MaxFeatures::Sqrt,
                class_weight: if balanced { ClassWeight::Balanced } else { ClassWeight::Uniform },
                bootstrap: false,
                criterion: if entropy { Criterion::Entropy } else { Criterion::Gini },
                seed,
            };
            let f = train_forest(&ds, &(0..6).collect::<Vec<_>>(), &cfg).unwrap();
            for (tree, imp) in f.trees.iter().zip(&f.importances) {
                prop_assert!(tree.depth() <= max_depth);
                for node in &tree.nodes {
                    if let Node::Leaf { n_samples, proba } = node {
                        prop_assert!(*n_samples >= min_leaf);
                        prop_assert!((proba.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    }
                }
                prop_assert!(imp.iter().all(|&v| v >= 0.0));
                let s: f64 = imp.iter().sum();
                if tree.n_splits() > 0 {
                    prop_assert!((s - 1.0).abs() < 1e-9);
                } else {
                    prop_assert_eq!(s, 0.0);
                }
            }
            let p = f.predict_proba(&ds).unwrap();
            for i in 0..p.n_samples() {
                prop_assert!((p.row(i).sum() - 1.0).abs() < 1e-9);
            }
        }
    }
}
