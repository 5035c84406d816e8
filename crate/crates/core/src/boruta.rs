//! The Boruta shadow-feature loop.
//!
//! Each iteration appends a permuted copy of every undecided feature, trains
//! a forest on the doubled matrix and records a hit for each real feature
//! whose importance z-score beats the best shadow. A two-sided binomial test
//! on the hit counts, Bonferroni-corrected over the features under test,
//! confirms or rejects. Decided features leave the matrix; whatever is still
//! undecided after `max_iter` rounds is dropped as tentative.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::dataset::ExpressionDataset;
use crate::error::{Error, Result};
use crate::forest::{self, ForestConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeCount {
    Auto,
    Fixed(usize),
}

impl TreeCount {
    pub fn resolve(self, width: usize) -> usize {
        match self {
            TreeCount::Auto => auto_tree_count(width),
            TreeCount::Fixed(n) => n,
        }
    }
}

/// `clamp(round(100 * sqrt(width) / 10), 50, 500)` where `width` counts real
/// plus shadow columns.
pub fn auto_tree_count(width: usize) -> usize {
    ((100.0 * (width as f64).sqrt() / 10.0).round() as usize).clamp(50, 500)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BorutaConfig {
    pub max_iter: usize,
    pub alpha: f64,
    pub forest: ForestConfig,
    pub n_estimators: TreeCount,
    pub seed: u64,
}

impl Default for BorutaConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            alpha: 0.05,
            forest: ForestConfig::boruta_default(),
            n_estimators: TreeCount::Auto,
            seed: 1,
        }
    }
}

impl BorutaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n_estimators == TreeCount::Fixed(0) || self.n_estimators == TreeCount::Fixed(1) {
            return Err(Error::Config("Boruta forests need at least two trees".into()));
        }
        self.forest.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirmed,
    Rejected,
    TentativeDropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorutaResult {
    pub feature_ids: Vec<String>,
    pub verdicts: Vec<Verdict>,
    pub hit_counts: Vec<usize>,
    /// Iteration at which each feature was confirmed or rejected.
    pub decided_at: Vec<Option<usize>>,
    pub iterations_run: usize,
    /// Confirmed feature ids, in column order.
    pub selected: Vec<String>,
}

impl BorutaResult {
    pub fn confirmed_indices(&self) -> Vec<usize> {
        self.verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == Verdict::Confirmed)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// State after one iteration. `status[j]` is `None` while undecided.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    pub real_columns: Vec<usize>,
    pub shadow_columns: usize,
    pub n_trees: usize,
    pub max_shadow_z: f64,
    pub hit_counts: Vec<usize>,
    pub status: Vec<Option<Verdict>>,
}

/// Independently permuted copy of a column, keyed by (seed, iteration,
/// feature index).
pub fn shadow_column(column: &[f64], seed: u64, iteration: usize, feature: usize) -> Vec<f64> {
    let mut out = column.to_vec();
    out.shuffle(&mut rng::stream(seed, &[0x5ad0, iteration as u64, feature as u64]));
    out
}

/// Two-sided binomial(n, 1/2) p-value for `hits` successes.
pub fn two_sided_p(hits: usize, n: usize) -> f64 {
    let b = Binomial::new(0.5, n as u64).expect("valid binomial");
    let lower = b.cdf(hits as u64);
    let upper = if hits == 0 { 1.0 } else { b.sf(hits as u64 - 1) };
    (2.0 * lower.min(upper)).min(1.0)
}

pub fn run_boruta(ds: &ExpressionDataset, cfg: &BorutaConfig) -> Result<BorutaResult> {
    run_boruta_traced(ds, cfg).map(|(r, _)| r)
}

pub fn run_boruta_traced(
    ds: &ExpressionDataset,
    cfg: &BorutaConfig,
) -> Result<(BorutaResult, Vec<IterationTrace>)> {
    cfg.validate()?;
    let n_features = ds.n_features();
    let columns: Vec<Vec<f64>> = (0..n_features).map(|j| ds.column(j).to_vec()).collect();
    let mut status: Vec<Option<Verdict>> = vec![None; n_features];
    let mut decided_at = vec![None; n_features];
    let mut hits = vec![0usize; n_features];
    let mut trace = Vec::new();
    let mut iterations_run = 0;

    for iteration in 1..=cfg.max_iter {
        let undecided: Vec<usize> = (0..n_features).filter(|&j| status[j].is_none()).collect();
        if undecided.is_empty() {
            break;
        }
        let u = undecided.len();
        let mut cols: Vec<Vec<f64>> = undecided.iter().map(|&j| columns[j].clone()).collect();
        let shadows: Vec<Vec<f64>> = undecided
            .par_iter()
            .map(|&j| shadow_column(&columns[j], cfg.seed, iteration, j))
            .collect();
        cols.extend(shadows);

        let n_trees = cfg.n_estimators.resolve(cols.len());
        let forest_cfg = ForestConfig {
            n_trees,
            seed: rng::derive_seed(cfg.seed, &[iteration as u64]),
            ..cfg.forest
        };
        let forest = forest::fit_columns(&cols, ds.labels(), ds.n_classes(), &forest_cfg)?;
        let z = forest::z_scores(&forest)?.z;
        let max_shadow_z = z[u..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (k, &j) in undecided.iter().enumerate() {
            if z[k] > max_shadow_z {
                hits[j] += 1;
            }
        }
        iterations_run = iteration;

        // Bonferroni over every feature entering the test, not just the ones
        // still undecided: the survivors of early rounds are the strongest
        // chance associations and would otherwise face a looser bar.
        let level = cfg.alpha / n_features as f64;
        for &j in &undecided {
            if two_sided_p(hits[j], iteration) < level {
                status[j] = Some(if 2 * hits[j] > iteration {
                    Verdict::Confirmed
                } else {
                    Verdict::Rejected
                });
                decided_at[j] = Some(iteration);
            }
        }
        trace.push(IterationTrace {
            iteration,
            real_columns: undecided,
            shadow_columns: u,
            n_trees,
            max_shadow_z,
            hit_counts: hits.clone(),
            status: status.clone(),
        });
    }

    let verdicts: Vec<Verdict> = status
        .into_iter()
        .map(|s| s.unwrap_or(Verdict::TentativeDropped))
        .collect();
    let feature_ids = ds.feature_ids();
    let selected = verdicts
        .iter()
        .zip(&feature_ids)
        .filter(|(v, _)| **v == Verdict::Confirmed)
        .map(|(_, id)| id.clone())
        .collect();
    Ok((
        BorutaResult {
            feature_ids,
            verdicts,
            hit_counts: hits,
            decided_at,
            iterations_run,
            selected,
        },
        trace,
    ))
}
