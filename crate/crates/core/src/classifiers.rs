//! Base learners behind one train / predict-probability contract:
//! multinomial logistic regression, one-vs-one linear SVM, softmax gradient
//! boosted trees, k-nearest neighbours and the random forest.
//!
//! Every model keeps the list of class codes it saw during training and
//! reports probabilities over the dataset's full class list, with zero mass on
//! classes absent from training.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::ExpressionDataset;
use crate::error::{Error, Result};
use crate::forest::{self, ForestConfig, TrainedForest};
use crate::proba::{softmax_in_place, ProbabilityMatrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrParams {
    pub max_iter: usize,
    /// Inverse L2 strength; the penalty is `||W||^2 / (2C)` on non-bias weights.
    pub c: f64,
    /// Convergence bound on the max-abs gradient entry.
    pub tol: f64,
}

impl Default for LrParams {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            c: 20.0,
            tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    /// Stop when the projected-gradient spread of the dual falls below this.
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-5,
            max_epochs: 1000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 damping on leaf weights.
    pub lambda: f64,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_rounds: 1000,
            max_depth: 4,
            learning_rate: 0.1,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    SoftmaxLr(LrParams),
    LinearSvm(SvmParams),
    GradientBoost(BoostParams),
    Knn(KnnParams),
    RandomForest(ForestConfig),
}

impl ClassifierSpec {
    pub fn softmax_lr() -> Self {
        Self::SoftmaxLr(LrParams::default())
    }

    pub fn linear_svm() -> Self {
        Self::LinearSvm(SvmParams::default())
    }

    pub fn gradient_boost() -> Self {
        Self::GradientBoost(BoostParams::default())
    }

    pub fn knn() -> Self {
        Self::Knn(KnnParams::default())
    }

    pub fn random_forest() -> Self {
        Self::RandomForest(ForestConfig::classifier_default())
    }

    /// All five kinds with their default hyperparameters.
    pub fn all_defaults() -> Vec<Self> {
        vec![
            Self::softmax_lr(),
            Self::linear_svm(),
            Self::gradient_boost(),
            Self::knn(),
            Self::random_forest(),
        ]
    }

    /// Short display name used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            Self::SoftmaxLr(_) => "LR",
            Self::LinearSvm(_) => "SVM",
            Self::GradientBoost(_) => "GB",
            Self::Knn(_) => "KNN",
            Self::RandomForest(_) => "RF",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{}: {m}", self.name())));
        match self {
            Self::SoftmaxLr(p) => {
                if !(p.c > 0.0) || p.max_iter == 0 || !(p.tol > 0.0) {
                    return bad("need c > 0, max_iter >= 1, tol > 0");
                }
            }
            Self::LinearSvm(p) => {
                if !(p.c > 0.0) || p.max_epochs == 0 || !(p.tol > 0.0) {
                    return bad("need c > 0, max_epochs >= 1, tol > 0");
                }
            }
            Self::GradientBoost(p) => {
                if p.max_depth == 0
                    || !(0.0..=1.0).contains(&p.learning_rate)
                    || p.lambda < 0.0
                    || p.min_child_weight < 0.0
                {
                    return bad("need max_depth >= 1, learning_rate in [0, 1], lambda >= 0, min_child_weight >= 0");
                }
            }
            Self::Knn(p) => {
                if p.k == 0 {
                    return bad("k must be >= 1");
                }
            }
            Self::RandomForest(cfg) => cfg.validate()?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMachine {
    /// Local class index voted for by a positive decision.
    pub positive: usize,
    pub negative: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl PairMachine {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                RegNode::Leaf { value } => return *value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[RegNode], at: usize) -> usize {
            match &nodes[at] {
                RegNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                RegNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Row per local class: feature weights followed by the bias.
    Linear { weights: Vec<Vec<f64>> },
    OneVsOne { machines: Vec<PairMachine> },
    Boosted {
        /// `rounds[r][k]` is the tree for local class `k` in round `r`.
        rounds: Vec<Vec<RegTree>>,
        /// Mean training cross-entropy before the first round and after each.
        loss_history: Vec<f64>,
    },
    Neighbors {
        k: usize,
        points: Array2<f64>,
        labels: Vec<usize>,
    },
    Forest(TrainedForest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub spec: ClassifierSpec,
    /// Dataset class codes seen in training; local index -> code.
    pub classes: Vec<usize>,
    pub n_classes: usize,
    pub n_features: usize,
    /// False when an iterative solver stopped at its iteration cap.
    pub converged: bool,
    pub model: Model,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn train(spec: &ClassifierSpec, ds: &ExpressionDataset) -> Result<TrainedClassifier> {
    spec.validate()?;
    let classes = ds.present_classes();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    if ds.n_features() == 0 {
        return Err(Error::EmptyFeatureSubset);
    }
    let mut local_of = vec![usize::MAX; ds.n_classes()];
    for (k, &c) in classes.iter().enumerate() {
        local_of[c] = k;
    }
    let y: Vec<usize> = ds.labels().iter().map(|&c| local_of[c]).collect();
    let ds = &ds.values().as_standard_layout().into_owned();
    let n_local = classes.len();

    let (model, converged) = match spec {
        ClassifierSpec::SoftmaxLr(p) => {
            let (weights, converged) = fit_softmax_lr(ds, &y, n_local, p);
            (Model::Linear { weights }, converged)
        }
        ClassifierSpec::LinearSvm(p) => {
            let (machines, converged) = fit_ovo_svm(ds, &y, n_local, p);
            (Model::OneVsOne { machines }, converged)
        }
        ClassifierSpec::GradientBoost(p) => {
            let (rounds, loss_history) = fit_boost(ds, &y, n_local, p);
            (Model::Boosted { rounds, loss_history }, true)
        }
        ClassifierSpec::Knn(p) => (
            Model::Neighbors {
                k: p.k,
                points: ds.clone(),
                labels: y,
            },
            true,
        ),
        ClassifierSpec::RandomForest(cfg) => {
            let cols: Vec<Vec<f64>> = (0..ds.ncols()).map(|j| ds.column(j).to_vec()).collect();
            let f = forest::fit_columns(&cols, &y, n_local, cfg)?;
            (Model::Forest(f), true)
        }
    };
    Ok(TrainedClassifier {
        spec: *spec,
        classes,
        n_classes: local_of.len(),
        n_features: ds.ncols(),
        converged,
        model,
    })
}

impl TrainedClassifier {
    fn local_proba(&self, x: &[f64]) -> Vec<f64> {
        let n_local = self.classes.len();
        match &self.model {
            Model::Linear { weights } => {
                let mut s: Vec<f64> = weights.iter().map(|w| linear_score(w, x)).collect();
                softmax_in_place(&mut s);
                s
            }
            Model::OneVsOne { machines } => {
                let mut wins = vec![0.0; n_local];
                for m in machines {
                    let d = m.decision(x);
                    if d > 0.0 {
                        wins[m.positive] += 1.0;
                    } else if d < 0.0 {
                        wins[m.negative] += 1.0;
                    } else {
                        wins[m.positive] += 0.5;
                        wins[m.negative] += 0.5;
                    }
                }
                let total = machines.len() as f64;
                wins.iter_mut().for_each(|w| *w /= total);
                wins
            }
            Model::Boosted { rounds, .. } => {
                let mut s = vec![0.0; n_local];
                for round in rounds {
                    for (k, tree) in round.iter().enumerate() {
                        s[k] += tree.predict(x);
                    }
                }
                softmax_in_place(&mut s);
                s
            }
            Model::Neighbors { k, points, labels } => knn_proba(points, labels, n_local, *k, x),
            Model::Forest(f) => f.trees.iter().fold(vec![0.0; n_local], |mut acc, t| {
                let p = t.leaf_proba(|j| x[j]);
                acc.iter_mut().zip(p).for_each(|(a, b)| *a += b / f.trees.len() as f64);
                acc
            }),
        }
    }

    pub fn predict_proba(&self, ds: &ExpressionDataset) -> Result<ProbabilityMatrix> {
        if ds.n_features() != self.n_features {
            return Err(Error::ShapeMismatch(format!(
                "model trained on {} features, got {}",
                self.n_features,
                ds.n_features()
            )));
        }
        let v = ds.values().as_standard_layout().into_owned();
        let mut out = Array2::zeros((ds.n_samples(), self.n_classes));
        for i in 0..ds.n_samples() {
            let p = self.local_proba(v.row(i).to_slice().expect("standard layout"));
            for (k, &c) in self.classes.iter().enumerate() {
                out[[i, c]] = p[k].clamp(0.0, 1.0);
            }
        }
        Ok(ProbabilityMatrix::new_unchecked(out))
    }

    /// Argmax of the probability rows, lowest class code on ties.
    pub fn predict(&self, ds: &ExpressionDataset) -> Result<Vec<usize>> {
        Ok(self.predict_proba(ds)?.argmax())
    }

    /// Pairwise decision values `(code_a, code_b, f(x))` per sample for a
    /// one-vs-one SVM; `f > 0` votes for `code_a`.
    pub fn pairwise_decisions(&self, ds: &ExpressionDataset) -> Option<Vec<Vec<(usize, usize, f64)>>> {
        let Model::OneVsOne { machines } = &self.model else {
            return None;
        };
        let v = ds.values().as_standard_layout();
        Some(
            v.rows()
                .into_iter()
                .map(|x| {
                    let x = x.to_slice().expect("standard layout");
                    machines
                        .iter()
                        .map(|m| (self.classes[m.positive], self.classes[m.negative], m.decision(x)))
                        .collect()
                })
                .collect(),
        )
    }

    /// Training loss per boosting round, when the model is boosted.
    pub fn loss_history(&self) -> Option<&[f64]> {
        match &self.model {
            Model::Boosted { loss_history, .. } => Some(loss_history),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn linear_score(w: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    dot(&w[..d], x) + w[d]
}

// ---------------------------------------------------------------------------
// multinomial logistic regression

/// Objective and gradient of the L2-regularised multinomial cross-entropy,
/// `sum_i CE_i + ||W||^2 / (2C)` (bias columns unpenalised). `w` is row-major
/// `n_classes x (d + 1)`.
pub fn softmax_lr_objective(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    c: f64,
    w: &[f64],
) -> (f64, Vec<f64>) {
    let x = x.as_standard_layout();
    let d = x.ncols();
    let stride = d + 1;
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    let mut s = vec![0.0; n_classes];
    for (i, row) in x.rows().into_iter().enumerate() {
        let row = row.to_slice().expect("standard layout");
        for k in 0..n_classes {
            s[k] = linear_score(&w[k * stride..(k + 1) * stride], row);
        }
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - s[y[i]];
        for k in 0..n_classes {
            let r = (s[k] - lse).exp() - f64::from(u8::from(k == y[i]));
            let g = &mut grad[k * stride..(k + 1) * stride];
            for (gj, xj) in g[..d].iter_mut().zip(row) {
                *gj += r * xj;
            }
            g[d] += r;
        }
    }
    for k in 0..n_classes {
        for j in 0..d {
            let wk = w[k * stride + j];
            loss += wk * wk / (2.0 * c);
            grad[k * stride + j] += wk / c;
        }
    }
    (loss, grad)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Limited-memory BFGS with Armijo backtracking. Returns the point and
/// whether the gradient bound was met within `max_iter` iterations.
fn lbfgs(
    f: impl Fn(&[f64]) -> (f64, Vec<f64>),
    mut x: Vec<f64>,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, bool) {
    const MEMORY: usize = 10;
    let (mut fx, mut g) = f(&x);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    for _ in 0..max_iter {
        if inf_norm(&g) <= tol {
            return (x, true);
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = hist
            .back()
            .map_or(1.0 / inf_norm(&g).max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = f(&trial);
            if ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return (x, inf_norm(&g) <= tol);
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    let done = inf_norm(&g) <= tol;
    (x, done)
}

fn fit_softmax_lr(x: &Array2<f64>, y: &[usize], n_classes: usize, p: &LrParams) -> (Vec<Vec<f64>>, bool) {
    let stride = x.ncols() + 1;
    let (w, converged) = lbfgs(
        |w| softmax_lr_objective(x, y, n_classes, p.c, w),
        vec![0.0; n_classes * stride],
        p.max_iter,
        p.tol,
    );
    (w.chunks(stride).map(<[f64]>::to_vec).collect(), converged)
}

// ---------------------------------------------------------------------------
// one-vs-one linear SVM

/// Binary hinge-loss SVM by dual coordinate descent. The bias is fitted as a
/// weight on a constant 1 feature. `sign` is +1 / -1 per row.
fn fit_binary_svm(rows: &[&[f64]], sign: &[f64], p: &SvmParams, stream: u64) -> (Vec<f64>, f64, bool) {
    let n = rows.len();
    let d = rows[0].len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    let q: Vec<f64> = rows.iter().map(|r| dot(r, r) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(p.seed, &[stream]);
    for _ in 0..p.max_epochs {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let g = sign[i] * (dot(&w, rows[i]) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= p.c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, p.c);
                let delta = (alpha[i] - old) * sign[i];
                w.iter_mut().zip(rows[i]).for_each(|(wj, xj)| *wj += delta * xj);
                b += delta;
            }
        }
        if pg_max - pg_min < p.tol {
            return (w, b, true);
        }
    }
    (w, b, false)
}

fn fit_ovo_svm(x: &Array2<f64>, y: &[usize], n_classes: usize, p: &SvmParams) -> (Vec<PairMachine>, bool) {
    let all: Vec<&[f64]> = (0..x.nrows())
        .map(|i| x.row(i).to_slice().expect("standard layout"))
        .collect();
    let mut machines = Vec::new();
    let mut converged = true;
    for a in 0..n_classes {
        for b in a + 1..n_classes {
            let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == a || y[i] == b).collect();
            let rows: Vec<&[f64]> = idx.iter().map(|&i| all[i]).collect();
            let sign: Vec<f64> = idx.iter().map(|&i| if y[i] == a { 1.0 } else { -1.0 }).collect();
            let (weights, bias, ok) = fit_binary_svm(&rows, &sign, p, (a * n_classes + b) as u64);
            converged &= ok;
            machines.push(PairMachine {
                positive: a,
                negative: b,
                weights,
                bias,
            });
        }
    }
    (machines, converged)
}

// ---------------------------------------------------------------------------
// softmax gradient boosting

struct BoostData<'a> {
    cols: Vec<Vec<f64>>,
    /// Sample indices sorted by each feature's value.
    sorted: Vec<Vec<u32>>,
    p: &'a BoostParams,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl BoostData<'_> {
    /// Level-wise exact greedy regression tree on (gradient, hessian) pairs.
    /// Returns the tree and each sample's leaf value.
    fn fit_tree(&self, g: &[f64], h: &[f64]) -> (RegTree, Vec<f64>) {
        let n = g.len();
        let lambda = self.p.lambda;
        let mcw = self.p.min_child_weight;
        let mut node_of = vec![0u32; n];
        let mut nodes: Vec<RegNode> = vec![RegNode::Leaf { value: 0.0 }];
        let mut sums: Vec<(f64, f64)> = vec![(g.iter().sum(), h.iter().sum())];
        let mut frontier = vec![0usize];
        let score = |gs: f64, hs: f64| gs * gs / (hs + lambda);

        for _depth in 0..self.p.max_depth {
            let splittable: Vec<usize> = frontier
                .iter()
                .copied()
                .filter(|&m| sums[m].1 >= 2.0 * mcw)
                .collect();
            if splittable.is_empty() {
                break;
            }
            let mut slot = vec![usize::MAX; nodes.len()];
            for (s, &m) in splittable.iter().enumerate() {
                slot[m] = s;
            }
            let mut best: Vec<Option<Candidate>> = vec![None; splittable.len()];
            let mut left = vec![(0.0f64, 0.0f64); splittable.len()];
            let mut last = vec![f64::NAN; splittable.len()];
            for (f, order) in self.sorted.iter().enumerate() {
                let col = &self.cols[f];
                left.iter_mut().for_each(|l| *l = (0.0, 0.0));
                last.iter_mut().for_each(|l| *l = f64::NAN);
                for &s in order {
                    let s = s as usize;
                    let k = slot[node_of[s] as usize];
                    if k == usize::MAX {
                        continue;
                    }
                    let v = col[s];
                    let (gl, hl) = left[k];
                    if !last[k].is_nan() && v > last[k] {
                        let (gt, ht) = sums[splittable[k]];
                        let (gr, hr) = (gt - gl, ht - hl);
                        if hl >= mcw && hr >= mcw {
                            let gain = score(gl, hl) + score(gr, hr) - score(gt, ht);
                            if gain > best[k].map_or(0.0, |b| b.gain) {
                                let mut threshold = 0.5 * (last[k] + v);
                                if threshold == v {
                                    threshold = last[k];
                                }
                                best[k] = Some(Candidate {
                                    gain,
                                    feature: f,
                                    threshold,
                                });
                            }
                        }
                    }
                    left[k] = (gl + g[s], hl + h[s]);
                    last[k] = v;
                }
            }

            let mut next = Vec::new();
            let mut child_of = vec![(0usize, 0usize); splittable.len()];
            for (k, &m) in splittable.iter().enumerate() {
                if let Some(c) = best[k] {
                    let l = nodes.len();
                    nodes.push(RegNode::Leaf { value: 0.0 });
                    nodes.push(RegNode::Leaf { value: 0.0 });
                    sums.push((0.0, 0.0));
                    sums.push((0.0, 0.0));
                    nodes[m] = RegNode::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: l,
                        right: l + 1,
                    };
                    child_of[k] = (l, l + 1);
                    next.push(l);
                    next.push(l + 1);
                }
            }
            if next.is_empty() {
                break;
            }
            for s in 0..n {
                let k = slot[node_of[s] as usize];
                if k == usize::MAX || best[k].is_none() {
                    continue;
                }
                let c = best[k].unwrap();
                let child = if self.cols[c.feature][s] <= c.threshold {
                    child_of[k].0
                } else {
                    child_of[k].1
                };
                node_of[s] = child as u32;
                sums[child].0 += g[s];
                sums[child].1 += h[s];
            }
            frontier.retain(|m| slot[*m] == usize::MAX || best[slot[*m]].is_none());
            frontier.extend(next);
        }

        for &m in &frontier {
            let (gs, hs) = sums[m];
            nodes[m] = RegNode::Leaf {
                value: -self.p.learning_rate * gs / (hs + lambda),
            };
        }
        let values = node_of
            .iter()
            .map(|&m| match nodes[m as usize] {
                RegNode::Leaf { value } => value,
                RegNode::Split { .. } => unreachable!("samples end in leaves"),
            })
            .collect();
        (RegTree { nodes }, values)
    }
}

fn mean_cross_entropy(scores: &[Vec<f64>], y: &[usize]) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(s, &c)| {
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - s[c]
        })
        .sum::<f64>()
        / y.len() as f64
}

fn fit_boost(x: &Array2<f64>, y: &[usize], n_classes: usize, p: &BoostParams) -> (Vec<Vec<RegTree>>, Vec<f64>) {
    let n = x.nrows();
    let cols: Vec<Vec<f64>> = (0..x.ncols()).map(|j| x.column(j).to_vec()).collect();
    let sorted = cols
        .iter()
        .map(|c| {
            let mut o: Vec<u32> = (0..n as u32).collect();
            o.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
            o
        })
        .collect();
    let data = BoostData { cols, sorted, p };

    let mut scores = vec![vec![0.0; n_classes]; n];
    let mut history = vec![mean_cross_entropy(&scores, y)];
    let mut rounds = Vec::with_capacity(p.n_rounds);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for _ in 0..p.n_rounds {
        let proba: Vec<Vec<f64>> = scores
            .iter()
            .map(|s| {
                let mut s = s.clone();
                softmax_in_place(&mut s);
                s
            })
            .collect();
        let mut trees = Vec::with_capacity(n_classes);
        let mut updates = Vec::with_capacity(n_classes);
        for k in 0..n_classes {
            for i in 0..n {
                let pk = proba[i][k];
                g[i] = pk - f64::from(u8::from(y[i] == k));
                h[i] = (pk * (1.0 - pk)).max(1e-16);
            }
            let (tree, values) = data.fit_tree(&g, &h);
            trees.push(tree);
            updates.push(values);
        }
        for (k, values) in updates.iter().enumerate() {
            for i in 0..n {
                scores[i][k] += values[i];
            }
        }
        history.push(mean_cross_entropy(&scores, y));
        rounds.push(trees);
    }
    (rounds, history)
}

// ---------------------------------------------------------------------------
// k nearest neighbours

fn knn_proba(points: &Array2<f64>, labels: &[usize], n_classes: usize, k: usize, x: &[f64]) -> Vec<f64> {
    let mut dist: Vec<(f64, usize)> = points
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let d: f64 = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, i)
        })
        .collect();
    let k = k.min(dist.len());
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by);
    }
    let mut counts = vec![0.0; n_classes];
    for &(_, i) in &dist[..k] {
        counts[labels[i]] += 1.0;
    }
    counts.iter_mut().for_each(|c| *c /= k as f64);
    counts
}
