//! Expression matrices: loading, low-expression filtering, the log2(x + 1)
//! transform, vertical partitioning by feature type and per-partition
//! descriptive statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default low-expression cut-off applied to raw column means.
pub const DEFAULT_FILTER_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureType {
    #[serde(rename = "mRNA")]
    MRna,
    #[serde(rename = "miRNA")]
    MiRna,
    #[serde(rename = "lncRNA")]
    LncRna,
    #[serde(rename = "otherRNA")]
    OtherRna,
}

impl FeatureType {
    pub const ALL: [FeatureType; 4] = [
        FeatureType::MRna,
        FeatureType::MiRna,
        FeatureType::LncRna,
        FeatureType::OtherRna,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureType::MRna => "mRNA",
            FeatureType::MiRna => "miRNA",
            FeatureType::LncRna => "lncRNA",
            FeatureType::OtherRna => "otherRNA",
        }
    }
}

impl fmt::Display for FeatureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mrna" | "protein_coding" => Ok(FeatureType::MRna),
            "mirna" => Ok(FeatureType::MiRna),
            "lncrna" => Ok(FeatureType::LncRna),
            "otherrna" | "other" | "other_rna" => Ok(FeatureType::OtherRna),
            other => Err(format!("unknown feature type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub id: String,
    pub feature_type: FeatureType,
}

/// Ordered feature identifiers with their types, one entry per column.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureCatalog {
    entries: Vec<FeatureEntry>,
}

impl FeatureCatalog {
    pub fn new(entries: Vec<FeatureEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate feature id `{}`",
                    e.id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    fn select(&self, columns: &[usize]) -> Self {
        Self {
            entries: columns.iter().map(|&j| self.entries[j].clone()).collect(),
        }
    }
}

/// Dense samples x features matrix with labels and a feature catalog.
///
/// Immutable after construction; every transformation returns a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionDataset {
    values: Array2<f64>,
    sample_ids: Vec<String>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    catalog: FeatureCatalog,
    log_transformed: bool,
}

impl ExpressionDataset {
    /// Builds a dataset from class names per sample. Class codes follow the
    /// sorted order of distinct names.
    pub fn from_class_names(
        values: Array2<f64>,
        sample_ids: Vec<String>,
        sample_classes: &[String],
        catalog: FeatureCatalog,
    ) -> Result<Self> {
        let class_names: Vec<String> = sample_classes
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let code: HashMap<&str, usize> = class_names
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let labels = sample_classes.iter().map(|c| code[c.as_str()]).collect();
        Self::new(values, sample_ids, labels, class_names, catalog)
    }

    pub fn new(
        values: Array2<f64>,
        sample_ids: Vec<String>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        catalog: FeatureCatalog,
    ) -> Result<Self> {
        let ds = Self {
            values,
            sample_ids,
            labels,
            class_names,
            catalog,
            log_transformed: false,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let (rows, cols) = self.values.dim();
        if rows != self.sample_ids.len() || rows != self.labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{rows} rows but {} sample ids and {} labels",
                self.sample_ids.len(),
                self.labels.len()
            )));
        }
        if cols != self.catalog.len() {
            return Err(Error::InvalidDataset(format!(
                "{cols} columns but {} catalog entries",
                self.catalog.len()
            )));
        }
        let mut seen = HashSet::with_capacity(rows);
        for id in &self.sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate sample id `{id}`")));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(Error::LabelOutOfRange {
                code: bad,
                n_classes: self.class_names.len(),
            });
        }
        for ((i, j), &v) in self.values.indexed_iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidDataset(format!(
                    "cell (sample `{}`, feature `{}`) holds {v}; values must be finite and non-negative",
                    self.sample_ids[i], self.catalog.entries[j].id
                )));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// Number of classes known to the dataset, including any absent from a
    /// row subset.
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn catalog(&self) -> &FeatureCatalog {
        &self.catalog
    }

    pub fn feature_ids(&self) -> Vec<String> {
        self.catalog.ids().map(str::to_owned).collect()
    }

    pub fn is_log_transformed(&self) -> bool {
        self.log_transformed
    }

    /// Marks values as already log2(x + 1) scaled, e.g. after reloading a
    /// processed matrix from disk.
    pub fn assume_log_transformed(mut self) -> Self {
        self.log_transformed = true;
        self
    }

    /// Classes that occur at least once among the samples, ascending.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_classes()];
        for &l in &self.labels {
            seen[l] = true;
        }
        (0..self.n_classes()).filter(|&c| seen[c]).collect()
    }

    /// Keeps the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.n_features()) {
            return Err(Error::MissingFeature {
                index: bad,
                n_features: self.n_features(),
            });
        }
        let mut seen = vec![false; self.n_features()];
        for &j in columns {
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidDataset(format!("column {j} selected twice")));
            }
        }
        Ok(Self {
            values: self.values.select(Axis(1), columns),
            sample_ids: self.sample_ids.clone(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            catalog: self.catalog.select(columns),
            log_transformed: self.log_transformed,
        })
    }

    /// Keeps the given rows, in the given order. The class list is kept whole
    /// so class codes stay stable across subsets.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n_samples()) {
            return Err(Error::InvalidDataset(format!(
                "row {bad} out of range for {} samples",
                self.n_samples()
            )));
        }
        Ok(Self {
            values: self.values.select(Axis(0), rows),
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            catalog: self.catalog.clone(),
            log_transformed: self.log_transformed,
        })
    }

    /// Replaces the label vector (same class list). Used by permutation tests.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        let ds = Self {
            labels,
            ..self.clone()
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes the matrix, labels and feature types as three CSV files.
    /// `comment` lines are written first, each prefixed with `# `.
    pub fn write_files(
        &self,
        matrix_path: &Path,
        labels_path: &Path,
        types_path: &Path,
        comment: Option<&str>,
    ) -> Result<()> {
        let header = |w: &mut dyn Write| -> std::io::Result<()> {
            if let Some(c) = comment {
                for line in c.lines() {
                    writeln!(w, "# {line}")?;
                }
            }
            Ok(())
        };

        let mut m = String::new();
        m.push_str("sample_id");
        for id in self.catalog.ids() {
            m.push(',');
            m.push_str(id);
        }
        m.push('\n');
        for (i, row) in self.values.rows().into_iter().enumerate() {
            m.push_str(&self.sample_ids[i]);
            for v in row {
                m.push(',');
                m.push_str(&v.to_string());
            }
            m.push('\n');
        }
        write_with_header(matrix_path, &header, &m)?;

        let mut l = String::from("sample_id,class\n");
        for (id, &c) in self.sample_ids.iter().zip(&self.labels) {
            l.push_str(&format!("{id},{}\n", self.class_names[c]));
        }
        write_with_header(labels_path, &header, &l)?;

        let mut t = String::from("feature_id,feature_type\n");
        for e in self.catalog.entries() {
            t.push_str(&format!("{},{}\n", e.id, e.feature_type));
        }
        write_with_header(types_path, &header, &t)
    }
}

fn write_with_header(
    path: &Path,
    header: &dyn Fn(&mut dyn Write) -> std::io::Result<()>,
    body: &str,
) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    header(&mut f).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Counts gathered while loading; serialized as the load report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub filtered_features: usize,
    pub unmapped_feature_types: usize,
}

fn detect_delimiter(header_line: &str) -> u8 {
    if header_line.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

/// Reads a delimited file into rows of fields, skipping `#` comment lines and
/// blank lines. Each row carries its 1-based line number.
fn read_table(path: &Path) -> Result<Vec<(u64, Vec<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut delimiter = None;
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let d = *delimiter.get_or_insert_with(|| detect_delimiter(line));
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .delimiter(d)
            .from_reader(line.as_bytes());
        let record = rdr
            .records()
            .next()
            .transpose()
            .map_err(|e| Error::Load {
                path: path.to_owned(),
                line: n as u64 + 1,
                message: e.to_string(),
            })?
            .unwrap_or_default();
        rows.push((
            n as u64 + 1,
            record.iter().map(|s| s.trim().to_owned()).collect(),
        ));
    }
    Ok(rows)
}

fn load_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

/// Loads a matrix (first row feature ids, first column sample ids), a
/// two-column sample-to-class file and a two-column feature-to-type file.
/// Comma or tab delimiters are detected per file; a header row in the two
/// mapping files is recognised and skipped.
pub fn load_dataset(
    matrix_path: &Path,
    labels_path: &Path,
    feature_types_path: &Path,
) -> Result<(ExpressionDataset, LoadReport)> {
    let rows = read_table(matrix_path)?;
    let mut rows = rows.into_iter();
    let (_, header) = rows
        .next()
        .ok_or_else(|| load_err(matrix_path, 1, "matrix file is empty"))?;
    if header.len() < 2 {
        return Err(load_err(matrix_path, 1, "header names no features"));
    }
    let feature_ids: Vec<String> = header[1..].to_vec();
    let n_features = feature_ids.len();

    let mut sample_ids = Vec::new();
    let mut data = Vec::new();
    for (line, fields) in rows {
        if fields.len() != n_features + 1 {
            return Err(load_err(
                matrix_path,
                line,
                format!("expected {} fields, found {}", n_features + 1, fields.len()),
            ));
        }
        for (j, cell) in fields[1..].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                load_err(
                    matrix_path,
                    line,
                    format!("column `{}`: non-numeric cell `{cell}`", feature_ids[j]),
                )
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(load_err(
                    matrix_path,
                    line,
                    format!("column `{}`: value {v} must be finite and non-negative", feature_ids[j]),
                ));
            }
            data.push(v);
        }
        sample_ids.push(fields[0].clone());
    }
    if sample_ids.is_empty() {
        return Err(load_err(matrix_path, 1, "matrix holds no samples"));
    }
    let values = Array2::from_shape_vec((sample_ids.len(), n_features), data)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;

    let sample_pos: HashMap<&str, usize> = sample_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    if sample_pos.len() != sample_ids.len() {
        let mut seen = HashSet::new();
        let dup = sample_ids.iter().find(|s| !seen.insert(s.as_str())).unwrap();
        return Err(Error::InvalidDataset(format!("duplicate sample id `{dup}`")));
    }

    let mut classes: Vec<Option<String>> = vec![None; sample_ids.len()];
    for (k, (line, fields)) in read_table(labels_path)?.into_iter().enumerate() {
        if fields.len() != 2 {
            return Err(load_err(labels_path, line, "expected two fields: sample_id, class"));
        }
        match sample_pos.get(fields[0].as_str()) {
            Some(&i) => {
                if classes[i].is_some() {
                    return Err(load_err(
                        labels_path,
                        line,
                        format!("sample `{}` labelled twice", fields[0]),
                    ));
                }
                classes[i] = Some(fields[1].clone());
            }
            None if k == 0 => {} // header row
            None => {
                return Err(load_err(
                    labels_path,
                    line,
                    format!("unknown sample `{}`", fields[0]),
                ))
            }
        }
    }
    let classes: Vec<String> = classes
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| {
                Error::InvalidDataset(format!("sample `{}` has no label", sample_ids[i]))
            })
        })
        .collect::<Result<_>>()?;

    let feature_pos: HashMap<&str, usize> = feature_ids
        .iter()
        .enumerate()
        .map(|(j, f)| (f.as_str(), j))
        .collect();
    let mut types: Vec<Option<FeatureType>> = vec![None; n_features];
    for (k, (line, fields)) in read_table(feature_types_path)?.into_iter().enumerate() {
        if fields.len() != 2 {
            return Err(load_err(
                feature_types_path,
                line,
                "expected two fields: feature_id, feature_type",
            ));
        }
        let Some(&j) = feature_pos.get(fields[0].as_str()) else {
            // Header rows and features absent from the matrix are ignored;
            // type maps are often shared across filtered exports.
            continue;
        };
        let t: FeatureType = match fields[1].parse() {
            Ok(t) => t,
            Err(_) if k == 0 => continue,
            Err(msg) => return Err(load_err(feature_types_path, line, msg)),
        };
        types[j] = Some(t);
    }
    let unmapped = types.iter().filter(|t| t.is_none()).count();
    let entries = feature_ids
        .into_iter()
        .zip(types)
        .map(|(id, t)| FeatureEntry {
            id,
            feature_type: t.unwrap_or(FeatureType::OtherRna),
        })
        .collect();
    let catalog = FeatureCatalog::new(entries)?;

    let ds = ExpressionDataset::from_class_names(values, sample_ids, &classes, catalog)?;
    let report = LoadReport {
        n_samples: ds.n_samples(),
        n_features: ds.n_features(),
        n_classes: ds.n_classes(),
        filtered_features: 0,
        unmapped_feature_types: unmapped,
    };
    Ok((ds, report))
}

/// Drops every feature whose raw column mean is strictly below `threshold`.
pub fn filter_low_expression(ds: &ExpressionDataset, threshold: f64) -> Result<ExpressionDataset> {
    if ds.is_log_transformed() {
        return Err(Error::NotRaw);
    }
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("filter threshold must be positive, got {threshold}")));
    }
    let means = ds.values.mean_axis(Axis(0)).expect("non-empty rows");
    let keep: Vec<usize> = means
        .iter()
        .enumerate()
        .filter(|(_, &m)| !(m < threshold))
        .map(|(j, _)| j)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyFeatureSpace);
    }
    ds.select_columns(&keep)
}

/// Replaces each cell x by log2(x + 1). Refuses a second application.
pub fn log_transform(ds: &ExpressionDataset) -> Result<ExpressionDataset> {
    if ds.log_transformed {
        return Err(Error::AlreadyTransformed);
    }
    let mut out = ds.clone();
    out.values.mapv_inplace(|x| (x + 1.0).log2());
    out.log_transformed = true;
    Ok(out)
}

/// Splits columns by feature type, in the order mRNA, miRNA, lncRNA, other.
/// Types with no features produce no partition.
pub fn partition_by_type(ds: &ExpressionDataset) -> Vec<(FeatureType, ExpressionDataset)> {
    let mut groups: BTreeMap<FeatureType, Vec<usize>> = BTreeMap::new();
    for (j, e) in ds.catalog.entries().iter().enumerate() {
        groups.entry(e.feature_type).or_default().push(j);
    }
    groups
        .into_iter()
        .map(|(t, cols)| (t, ds.select_columns(&cols).expect("indices from catalog")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    /// Feature type name, or `All` for the whole matrix.
    pub group: String,
    pub frequency: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation over all cells of the group.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub groups: Vec<GroupStats>,
}

impl PartitionStats {
    pub fn group(&self, name: &str) -> Option<&GroupStats> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn overall(&self) -> &GroupStats {
        self.groups.last().expect("overall row always present")
    }
}

fn cell_stats(group: String, frequency: usize, cells: impl Iterator<Item = f64> + Clone) -> GroupStats {
    let (mut n, mut sum, mut min, mut max) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for v in cells.clone() {
        n += 1;
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    let mean = if n > 0 { sum / n as f64 } else { 0.0 };
    let ss: f64 = cells.map(|v| (v - mean) * (v - mean)).sum();
    let sd = if n > 0 { (ss / n as f64).sqrt() } else { 0.0 };
    if n == 0 {
        min = 0.0;
        max = 0.0;
    }
    GroupStats {
        group,
        frequency,
        min,
        max,
        mean,
        sd,
    }
}

/// Per feature-type and overall min/max/mean/sd over all cells.
pub fn compute_partition_stats(ds: &ExpressionDataset) -> PartitionStats {
    let mut groups: Vec<GroupStats> = partition_by_type(ds)
        .into_iter()
        .map(|(t, part)| cell_stats(t.to_string(), part.n_features(), part.values.iter().copied()))
        .collect();
    groups.push(cell_stats(
        "All".to_owned(),
        ds.n_features(),
        ds.values.iter().copied(),
    ));
    PartitionStats { groups }
}


#[cfg(test)]
mod tests {
    use super::fixtures::dataset;
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_minimal_input() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(
            dir.path(),
            "m.csv",
            "sample,a,b,c,d\nx,1,2,3,4\ny,0,0,1,1\nz,5,5,5,5\n",
        );
        let l = write(dir.path(), "l.csv", "sample_id,class\nx,BRCA\ny,ACC\nz,BRCA\n");
        let t = write(dir.path(), "t.tsv", "feature_id\tfeature_type\na\tmRNA\nb\tmiRNA\nc\tlncRNA\n");
        let (ds, report) = load_dataset(&m, &l, &t).unwrap();
        assert_eq!(ds.n_samples(), 3);
        assert_eq!(ds.n_features(), 4);
        assert_eq!(ds.class_names(), &["ACC".to_string(), "BRCA".to_string()]);
        assert_eq!(ds.labels(), &[1, 0, 1]);
        assert_eq!(report.unmapped_feature_types, 1);
        assert_eq!(ds.catalog().entries()[3].feature_type, FeatureType::OtherRna);
    }

    #[test]
    fn negative_cell_is_reported_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", "sample,a,b\nx,1,2\ny,0,-3\n");
        let l = write(dir.path(), "l.csv", "x,A\ny,B\n");
        let t = write(dir.path(), "t.csv", "a,mRNA\nb,mRNA\n");
        let err = load_dataset(&m, &l, &t).unwrap_err();
        match err {
            Error::Load { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("`b`"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let t = write(dir.path(), "t.csv", "a,mRNA\nb,mRNA\n");
        let l = write(dir.path(), "l.csv", "x,A\ny,B\n");

        let short = write(dir.path(), "m1.csv", "sample,a,b\nx,1\ny,0,3\n");
        assert!(matches!(load_dataset(&short, &l, &t), Err(Error::Load { line: 2, .. })));

        let text = write(dir.path(), "m2.csv", "sample,a,b\nx,1,abc\ny,0,3\n");
        assert!(matches!(load_dataset(&text, &l, &t), Err(Error::Load { line: 2, .. })));

        let dup = write(dir.path(), "m3.csv", "sample,a,b\nx,1,1\nx,0,3\n");
        assert!(matches!(load_dataset(&dup, &l, &t), Err(Error::InvalidDataset(_))));

        let ok = write(dir.path(), "m4.csv", "sample,a,b\nx,1,1\ny,0,3\n");
        let unknown = write(dir.path(), "l2.csv", "x,A\ny,B\nq,C\n");
        assert!(matches!(load_dataset(&ok, &unknown, &t), Err(Error::Load { line: 3, .. })));

        let dup_feature = write(dir.path(), "m5.csv", "sample,a,a\nx,1,1\ny,0,3\n");
        assert!(matches!(load_dataset(&dup_feature, &l, &t), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn filter_uses_strict_less_than() {
        // column means: 0.04, 0.05, 1.0
        let ds = dataset(
            array![[0.08, 0.1, 1.0], [0.0, 0.0, 1.0]],
            &[0, 1],
            &[FeatureType::MRna; 3],
        );
        let out = filter_low_expression(&ds, 0.05).unwrap();
        assert_eq!(out.feature_ids(), vec!["f1", "f2"]);
        assert_eq!(out.n_samples(), 2);
    }

    #[test]
    fn filter_everything_is_an_error() {
        let ds = dataset(array![[0.0, 0.0], [0.0, 0.0]], &[0, 1], &[FeatureType::MRna; 2]);
        assert!(matches!(filter_low_expression(&ds, 0.05), Err(Error::EmptyFeatureSpace)));
    }

    #[test]
    fn log_transform_values_and_guard() {
        let ds = dataset(array![[0.0, 1.0, 549_980.0]], &[0], &[FeatureType::MRna; 3]);
        let t = log_transform(&ds).unwrap();
        assert_eq!(t.values()[[0, 0]], 0.0);
        assert_eq!(t.values()[[0, 1]], 1.0);
        assert!((t.values()[[0, 2]] - 19.07).abs() < 0.005);
        assert!(matches!(log_transform(&t), Err(Error::AlreadyTransformed)));
        assert!(matches!(filter_low_expression(&t, 0.05), Err(Error::NotRaw)));
    }

    #[test]
    fn partitions_group_by_type() {
        use FeatureType::*;
        let ds = dataset(array![[1.0, 2.0, 3.0]], &[0], &[MRna, MiRna, MRna]);
        let parts = partition_by_type(&ds);
        let widths: Vec<_> = parts.iter().map(|(t, p)| (*t, p.n_features())).collect();
        assert_eq!(widths, vec![(MRna, 2), (MiRna, 1)]);
        assert_eq!(parts[0].1.feature_ids(), vec!["f0", "f2"]);

        let single = dataset(array![[1.0, 2.0]], &[0], &[LncRna, LncRna]);
        let parts = partition_by_type(&single);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].1, single);
    }

    #[test]
    fn stats_constant_and_two_cell() {
        let ds = dataset(array![[2.0, 2.0], [2.0, 2.0]], &[0, 0], &[FeatureType::MRna; 2]);
        let s = compute_partition_stats(&ds);
        let all = s.overall();
        assert_eq!((all.min, all.max, all.mean, all.sd), (2.0, 2.0, 2.0, 0.0));

        // [0; 2]: mean 1, population sd sqrt(((0-1)^2 + (2-1)^2) / 2) = 1
        let ds = dataset(array![[0.0], [2.0]], &[0, 0], &[FeatureType::MiRna]);
        let s = compute_partition_stats(&ds);
        assert_eq!(s.overall().mean, 1.0);
        assert_eq!(s.overall().sd, 1.0);
        assert_eq!(s.group("miRNA").unwrap().frequency, 1);
    }

    fn arb_dataset() -> impl Strategy<Value = ExpressionDataset> {
        (1usize..6, 1usize..9).prop_flat_map(|(rows, cols)| {
            (
                proptest::collection::vec(0.0f64..2.0, rows * cols),
                proptest::collection::vec(0usize..4, cols),
            )
                .prop_map(move |(vals, types)| {
                    let types: Vec<_> = types.into_iter().map(|t| FeatureType::ALL[t]).collect();
                    dataset(
                        Array2::from_shape_vec((rows, cols), vals).unwrap(),
                        &vec![0; rows],
                        &types,
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn partitions_cover_catalog_exactly(ds in arb_dataset()) {
            let mut ids: Vec<String> = partition_by_type(&ds)
                .iter()
                .flat_map(|(_, p)| p.feature_ids())
                .collect();
            ids.sort();
            let mut orig = ds.feature_ids();
            orig.sort();
            prop_assert_eq!(ids, orig);
        }

        #[test]
        fn filter_commutes_with_partition(ds in arb_dataset(), threshold in 0.1f64..1.5) {
            let filtered_first: BTreeSet<String> = match filter_low_expression(&ds, threshold) {
                Ok(f) => partition_by_type(&f).iter().flat_map(|(_, p)| p.feature_ids()).collect(),
                Err(_) => BTreeSet::new(),
            };
            let partitioned_first: BTreeSet<String> = partition_by_type(&ds)
                .iter()
                .filter_map(|(_, p)| filter_low_expression(p, threshold).ok())
                .flat_map(|p| p.feature_ids())
                .collect();
            prop_assert_eq!(filtered_first, partitioned_first);
        }

        #[test]
        fn log_transform_is_strictly_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            prop_assume!(a < b);
            prop_assert!((a + 1.0).log2() < (b + 1.0).log2());
        }

        #[test]
        fn pooled_partition_stats_match_overall(ds in arb_dataset()) {
            let s = compute_partition_stats(&ds);
            let parts = &s.groups[..s.groups.len() - 1];
            let n_rows = ds.n_samples() as f64;
            let total: f64 = parts.iter().map(|g| g.frequency as f64 * n_rows).sum();
            let mean: f64 = parts.iter().map(|g| g.mean * g.frequency as f64 * n_rows).sum::<f64>() / total;
            let var: f64 = parts
                .iter()
                .map(|g| g.frequency as f64 * n_rows * (g.sd * g.sd + (g.mean - mean).powi(2)))
                .sum::<f64>() / total;
            let all = s.overall();
            prop_assert!((mean - all.mean).abs() < 1e-12);
            prop_assert!((var.sqrt() - all.sd).abs() < 1e-9);
            prop_assert_eq!(parts.iter().map(|g| g.min).fold(f64::INFINITY, f64::min), all.min);
            prop_assert_eq!(parts.iter().map(|g| g.max).fold(f64::NEG_INFINITY, f64::max), all.max);
            prop_assert_eq!(parts.iter().map(|g| g.frequency).sum::<usize>(), all.frequency);
        }
    }
}
