//! Synthetic expression data with planted informative features.
//!
//! Each informative feature is a marker for one class: samples of that class
//! get a latent mean shifted by `class_separation` standard deviations.
//! Noise features ignore the label. Latent values are clipped at zero and
//! mapped to `2^g - 1`, so the returned matrix is on a raw, FPKM-like scale
//! and `log2(x + 1)` recovers the latent value.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ExpressionDataset, FeatureCatalog, FeatureEntry, FeatureType};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    pub n_informative: usize,
    pub n_noise: usize,
    /// Proportions over mRNA, miRNA, lncRNA, otherRNA.
    pub feature_type_mix: [f64; 4],
    pub class_separation: f64,
    /// Per-class sample proportions; balanced when absent.
    pub imbalance: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 500,
            n_classes: 3,
            n_informative: 20,
            n_noise: 180,
            feature_type_mix: [0.5, 0.05, 0.25, 0.2],
            class_separation: 4.0,
            imbalance: None,
            seed: 1,
        }
    }
}

/// Generated data plus the planted ground truth.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: ExpressionDataset,
    pub informative: Vec<String>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be >= 2".into()));
        }
        if self.n_samples < self.n_classes {
            return Err(Error::Config("need at least one sample per class".into()));
        }
        if self.n_informative + self.n_noise == 0 {
            return Err(Error::Config("no features requested".into()));
        }
        if self.feature_type_mix.iter().any(|&p| p < 0.0)
            || (self.feature_type_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config("feature_type_mix must be non-negative and sum to 1".into()));
        }
        if !(self.class_separation >= 0.0) {
            return Err(Error::Config("class_separation must be >= 0".into()));
        }
        if let Some(p) = &self.imbalance {
            if p.len() != self.n_classes
                || p.iter().any(|&x| x <= 0.0)
                || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(Error::Config(
                    "imbalance needs one positive proportion per class, summing to 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Splits `total` into integer parts proportional to `weights` using the
/// largest-remainder rule (ties to the lower index).
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = total - parts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        parts[i] += 1;
    }
    parts
}

fn type_counts(n: usize, mix: &[f64; 4], min_types: usize) -> [usize; 4] {
    let parts = apportion(n, mix);
    let mut counts = [parts[0], parts[1], parts[2], parts[3]];
    let nonzero_mix = mix.iter().filter(|&&p| p > 0.0).count();
    let want = min_types.min(nonzero_mix).min(n);
    while counts.iter().filter(|&&c| c > 0).count() < want {
        let donor = (0..4).max_by_key(|&t| (counts[t], std::cmp::Reverse(t))).unwrap();
        let taker = (0..4)
            .filter(|&t| counts[t] == 0 && mix[t] > 0.0)
            .max_by(|&a, &b| mix[a].total_cmp(&mix[b]).then(b.cmp(&a)))
            .unwrap();
        counts[donor] -= 1;
        counts[taker] += 1;
    }
    counts
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let k = spec.n_classes;

    let proportions = spec
        .imbalance
        .clone()
        .unwrap_or_else(|| vec![1.0 / k as f64; k]);
    let per_class = apportion(spec.n_samples, &proportions);
    let mut labels: Vec<usize> = per_class
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    labels.shuffle(&mut rng::stream(spec.seed, &[0]));

    // (informative index, type) per column, then shuffled so planted features
    // are spread across the matrix.
    let inf_types = type_counts(spec.n_informative, &spec.feature_type_mix, 2);
    let noise_types = type_counts(spec.n_noise, &spec.feature_type_mix, 1);
    let mut columns: Vec<(Option<usize>, FeatureType)> = Vec::new();
    let mut q = 0;
    for (t, &n) in FeatureType::ALL.iter().zip(&inf_types) {
        for _ in 0..n {
            columns.push((Some(q), *t));
            q += 1;
        }
    }
    for (t, &n) in FeatureType::ALL.iter().zip(&noise_types) {
        columns.extend(std::iter::repeat_n((None, *t), n));
    }
    columns.shuffle(&mut rng::stream(spec.seed, &[1]));

    let mut base_rng = rng::stream(spec.seed, &[2]);
    let bases: Vec<f64> = columns.iter().map(|_| base_rng.random_range(0.5..3.0)).collect();

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut value_rng = rng::stream(spec.seed, &[3]);
    let n_features = columns.len();
    let mut values = Array2::zeros((spec.n_samples, n_features));
    for (i, &label) in labels.iter().enumerate() {
        for (j, &(marker, _)) in columns.iter().enumerate() {
            let shift = match marker {
                Some(q) if q % k == label => spec.class_separation,
                _ => 0.0,
            };
            let latent: f64 = (bases[j] + shift + normal.sample(&mut value_rng)).max(0.0);
            values[[i, j]] = latent.exp2() - 1.0;
        }
    }

    let width = n_features.to_string().len().max(4);
    let entries: Vec<FeatureEntry> = columns
        .iter()
        .enumerate()
        .map(|(j, &(_, t))| FeatureEntry {
            id: format!("g{j:0width$}"),
            feature_type: t,
        })
        .collect();
    let informative = columns
        .iter()
        .zip(&entries)
        .filter(|((m, _), _)| m.is_some())
        .map(|(_, e)| e.id.clone())
        .collect();
    let class_width = k.to_string().len().max(2);
    let dataset = ExpressionDataset::new(
        values,
        (0..spec.n_samples).map(|i| format!("S{i:05}")).collect(),
        labels,
        (0..k).map(|c| format!("C{c:0class_width$}")).collect(),
        FeatureCatalog::new(entries)?,
    )?;
    Ok(Synthetic {
        dataset,
        informative,
    })
}

impl Synthetic {
    /// Writes `matrix.csv`, `labels.csv`, `feature_types.csv` and
    /// `ground_truth.json` into `dir`.
    pub fn write_to(&self, dir: &Path, spec: &SynthSpec, comment: Option<&str>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.dataset.write_files(
            &dir.join("matrix.csv"),
            &dir.join("labels.csv"),
            &dir.join("feature_types.csv"),
            comment,
        )?;
        let truth = serde_json::json!({
            "spec": spec,
            "informative": self.informative,
        });
        let path = dir.join("ground_truth.json");
        std::fs::write(&path, serde_json::to_string_pretty(&truth)? + "\n")
            .map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_dataset, log_transform};
    use std::collections::BTreeSet;

    fn small() -> SynthSpec {
        SynthSpec {
            n_samples: 60,
            n_informative: 6,
            n_noise: 14,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.informative, b.informative);
        let c = generate(&SynthSpec { seed: 2, ..small() }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn shape_and_ground_truth() {
        let s = generate(&small()).unwrap();
        assert_eq!(s.dataset.n_samples(), 60);
        assert_eq!(s.dataset.n_features(), 20);
        assert_eq!(s.informative.len(), 6);
        let types: BTreeSet<_> = s
            .informative
            .iter()
            .map(|id| {
                let j = s.dataset.catalog().position(id).unwrap();
                s.dataset.catalog().entries()[j].feature_type
            })
            .collect();
        assert!(types.len() >= 2);
        let mut counts = [0; 3];
        s.dataset.labels().iter().for_each(|&l| counts[l] += 1);
        assert_eq!(counts, [20, 20, 20]);
    }

    #[test]
    fn markers_shift_their_class() {
        let s = generate(&SynthSpec {
            n_samples: 300,
            ..small()
        })
        .unwrap();
        let ds = log_transform(&s.dataset).unwrap();
        // informative feature q marks class q % 3; its class mean must exceed
        // the others by roughly the separation
        let j = ds.catalog().position(&s.informative[0]).unwrap();
        let mut sums = [0.0; 3];
        let mut ns = [0.0; 3];
        for (i, &l) in ds.labels().iter().enumerate() {
            sums[l] += ds.values()[[i, j]];
            ns[l] += 1.0;
        }
        let means: Vec<f64> = (0..3).map(|c| sums[c] / ns[c]).collect();
        let top = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let rest: Vec<_> = means.iter().filter(|&&m| m < top).collect();
        assert_eq!(rest.len(), 2);
        assert!(rest.iter().all(|&&m| top - m > 3.0), "{means:?}");
    }

    #[test]
    fn imbalance_is_honoured() {
        let s = generate(&SynthSpec {
            n_samples: 100,
            imbalance: Some(vec![0.7, 0.2, 0.1]),
            ..small()
        })
        .unwrap();
        let mut counts = [0; 3];
        s.dataset.labels().iter().for_each(|&l| counts[l] += 1);
        assert_eq!(counts, [70, 20, 10]);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate(&SynthSpec { n_classes: 1, ..small() }).is_err());
        assert!(generate(&SynthSpec {
            feature_type_mix: [0.5, 0.5, 0.5, 0.0],
            ..small()
        })
        .is_err());
    }

    #[test]
    fn apportion_sums_to_total() {
        assert_eq!(apportion(10, &[0.5, 0.25, 0.25]), vec![5, 3, 2]);
        assert_eq!(apportion(7, &[1.0, 1.0, 1.0]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn files_reload_to_same_dataset() {
        let spec = small();
        let s = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write_to(dir.path(), &spec, Some("seed=1")).unwrap();
        let (back, report) = load_dataset(
            &dir.path().join("matrix.csv"),
            &dir.path().join("labels.csv"),
            &dir.path().join("feature_types.csv"),
        )
        .unwrap();
        assert_eq!(back, s.dataset);
        assert_eq!(report.unmapped_feature_types, 0);
    }
}
