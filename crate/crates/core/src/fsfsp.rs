//! Feature selection by feature-space partitioning, and the max-depth sweep
//! that turns repeated selections into nested ranked feature sets.
//!
//! One selection run splits the columns by feature type, runs Boruta on each
//! partition, keeps the union of confirmed features and runs Boruta once more
//! on that union. The sweep repeats this for a grid of forest depths; a
//! feature belongs to `Rank_N` when at least `N` of the runs selected it.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boruta::{run_boruta, BorutaConfig, BorutaResult};
use crate::dataset::{partition_by_type, ExpressionDataset, FeatureType};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub depths: Vec<usize>,
    pub boruta: BorutaConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            depths: default_depths(),
            boruta: BorutaConfig::default(),
            seed: 1,
        }
    }
}

/// 5, 10, ..., 60.
pub fn default_depths() -> Vec<usize> {
    (1..=12).map(|k| 5 * k).collect()
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() {
            return Err(Error::Config("depths must not be empty".into()));
        }
        if self.depths[0] == 0 || self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "depths must be positive and strictly increasing".into(),
            ));
        }
        self.boruta.validate()
    }
}

/// Intermediate sets of one partitioned selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsfspOutcome {
    pub partitions: Vec<(FeatureType, BorutaResult)>,
    /// Union of the per-partition confirmed sets, in column order.
    pub union: Vec<String>,
    pub merged: BorutaResult,
}

impl FsfspOutcome {
    pub fn selected(&self) -> &[String] {
        &self.merged.selected
    }
}

/// Runs the partitioned selection with every Boruta forest capped at
/// `max_depth` and returns the final confirmed ids in column order.
pub fn fsfsp(ds: &ExpressionDataset, max_depth: usize, cfg: &BorutaConfig) -> Result<Vec<String>> {
    fsfsp_detailed(ds, max_depth, cfg).map(|o| o.merged.selected)
}

pub fn fsfsp_detailed(
    ds: &ExpressionDataset,
    max_depth: usize,
    cfg: &BorutaConfig,
) -> Result<FsfspOutcome> {
    let mut cfg = *cfg;
    cfg.forest.max_depth = max_depth;

    let partitions = partition_by_type(ds)
        .into_iter()
        .map(|(t, part)| run_boruta(&part, &cfg).map(|r| (t, r)))
        .collect::<Result<Vec<_>>>()?;

    let confirmed: HashSet<&str> = partitions
        .iter()
        .flat_map(|(_, r)| r.selected.iter().map(String::as_str))
        .collect();
    let union_cols: Vec<usize> = ds
        .catalog()
        .ids()
        .enumerate()
        .filter(|(_, id)| confirmed.contains(id))
        .map(|(j, _)| j)
        .collect();
    if union_cols.is_empty() {
        return Err(Error::NoInformativeFeatures);
    }
    let merged_ds = ds.select_columns(&union_cols)?;
    let merged = run_boruta(&merged_ds, &cfg)?;
    Ok(FsfspOutcome {
        union: merged_ds.feature_ids(),
        partitions,
        merged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeatureSets {
    pub depths: Vec<usize>,
    /// Selected ids per depth, aligned with `depths`.
    pub per_depth: Vec<Vec<String>>,
    /// `ranks[n - 1]` holds `Rank_n`, for n in 1..=depths.len().
    pub ranks: Vec<Vec<String>>,
    pub membership_count: BTreeMap<String, usize>,
}

impl RankedFeatureSets {
    /// Materializes `Rank_1..Rank_D` from per-run selections. `order` fixes
    /// the id order inside each rank (normally the dataset's column order).
    pub fn from_selections(depths: Vec<usize>, per_depth: Vec<Vec<String>>, order: &[String]) -> Self {
        let mut membership_count: BTreeMap<String, usize> = BTreeMap::new();
        for set in &per_depth {
            let unique: HashSet<&String> = set.iter().collect();
            for id in unique {
                *membership_count.entry(id.clone()).or_default() += 1;
            }
        }
        let ranks = (1..=per_depth.len())
            .map(|n| {
                order
                    .iter()
                    .filter(|id| membership_count.get(*id).is_some_and(|&c| c >= n))
                    .cloned()
                    .collect()
            })
            .collect();
        Self {
            depths,
            per_depth,
            ranks,
            membership_count,
        }
    }

    /// `Rank_n`; `n` counts from 1.
    pub fn rank(&self, n: usize) -> Option<&[String]> {
        n.checked_sub(1)
            .and_then(|i| self.ranks.get(i))
            .map(Vec::as_slice)
    }

    pub fn rank_sizes(&self) -> Vec<usize> {
        self.ranks.iter().map(Vec::len).collect()
    }

    pub fn per_depth_sizes(&self) -> Vec<usize> {
        self.per_depth.iter().map(Vec::len).collect()
    }
}

/// Runs the partitioned selection once per depth (concurrently; each run is
/// seeded by `(seed, depth)`) and ranks features by how many runs kept them.
pub fn ranking_fsfsp(ds: &ExpressionDataset, cfg: &SweepConfig) -> Result<RankedFeatureSets> {
    cfg.validate()?;
    let per_depth = cfg
        .depths
        .par_iter()
        .map(|&depth| {
            let boruta = BorutaConfig {
                seed: rng::derive_seed(cfg.seed, &[depth as u64]),
                ..cfg.boruta
            };
            fsfsp(ds, depth, &boruta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedFeatureSets::from_selections(
        cfg.depths.clone(),
        per_depth,
        &ds.feature_ids(),
    ))
}

/// Keeps the listed features, in the dataset's column order.
pub fn apply_feature_set(ds: &ExpressionDataset, features: &[String]) -> Result<ExpressionDataset> {
    if features.is_empty() {
        return Err(Error::EmptyFeatureSubset);
    }
    let wanted: HashSet<&str> = features.iter().map(String::as_str).collect();
    let cols: Vec<usize> = ds
        .catalog()
        .ids()
        .enumerate()
        .filter(|(_, id)| wanted.contains(id))
        .map(|(j, _)| j)
        .collect();
    if cols.len() != wanted.len() {
        let known: HashSet<&str> = ds.catalog().ids().collect();
        let missing = features.iter().find(|f| !known.contains(f.as_str())).unwrap();
        return Err(Error::UnknownFeature(missing.clone()));
    }
    ds.select_columns(&cols)
}
