//! Tabular datasets: CSV ingestion, stratified splitting, standardisation,
//! synthetic Gaussian clusters and class-balance measurement.
//!
//! Labels are 1-based class indices.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::diffengine::Tensor;
use crate::error::{Error, Result};

/// Fractions of each class sent to the test and validation splits; the rest trains.
pub const TEST_FRACTION: f64 = 0.20;
pub const VAL_FRACTION: f64 = 0.16;

const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Row-major `n × input_dim`.
    pub features: Vec<f64>,
    pub input_dim: usize,
    pub labels: Vec<usize>,
    pub d: usize,
    pub feature_names: Vec<String>,
    /// Original label text for class `k` at index `k - 1`.
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, input_dim: usize, labels: Vec<usize>, d: usize) -> Result<Self> {
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::LengthMismatch { what: "features vs labels × input_dim", left: features.len(), right: labels.len() * input_dim });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y == 0 || y > d) {
            return Err(Error::ClassOutOfRange { index: bad, d });
        }
        Ok(Self {
            features,
            input_dim,
            labels,
            d,
            feature_names: (1..=input_dim).map(|i| format!("x{i}")).collect(),
            class_names: (1..=d).map(|k| k.to_string()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.d];
        for &y in &self.labels {
            counts[y - 1] += 1;
        }
        counts
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            input_dim: self.input_dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            d: self.d,
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// `[len, input_dim]` tensor of the given rows.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::matrix(indices.len(), self.input_dim, data).expect("batch shape"), labels)
    }

    pub fn features_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), self.input_dim, self.features.clone()).expect("dataset shape")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_column);
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            rec.push(self.class_names[self.labels[i] - 1].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a comma-separated file with a header row.
///
/// If every label parses as an integer, classes follow ascending numeric
/// order; otherwise they follow first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Csv { row: 1, column: label_column.to_string(), message: "label column not found in header".into() })?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|(i, _)| *i != label_idx).map(|(_, h)| h.trim().to_string()).collect();
    if feature_names.is_empty() {
        return Err(Error::Csv { row: 1, column: String::new(), message: "no feature columns".into() });
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // header is row 1
        let row = r + 2;
        if record.len() != headers.len() {
            return Err(Error::Csv { row, column: String::new(), message: format!("expected {} fields, found {}", headers.len(), record.len()) });
        }
        for (i, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(Error::Csv { row, column: headers[i].to_string(), message: "missing value".into() });
            }
            if i == label_idx {
                raw_labels.push(field.to_string());
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Csv {
                    row,
                    column: headers[i].to_string(),
                    message: format!("non-numeric feature {field:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Csv { row, column: headers[i].to_string(), message: "non-finite feature".into() });
                }
                features.push(v);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::Empty("csv has no data rows"));
    }

    let class_names = class_order(&raw_labels);
    let index: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i + 1)).collect();
    let labels = raw_labels.iter().map(|l| index[l.as_str()]).collect();
    let mut ds = Dataset::new(features, feature_names.len(), labels, class_names.len())?;
    ds.feature_names = feature_names;
    ds.class_names = class_names;
    Ok(ds)
}

fn class_order(raw: &[String]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for l in raw {
        if !seen.contains(l) {
            seen.push(l.clone());
        }
    }
    let numeric: Option<Vec<i64>> = seen.iter().map(|s| s.parse::<i64>().ok()).collect();
    if let Some(mut nums) = numeric {
        nums.sort_unstable();
        return nums.into_iter().map(|v| v.to_string()).collect();
    }
    seen
}

/// Train/validation/test partition with the row indices taken from the source dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Stratified 64/16/20 shuffle split, rounded per class with the remainder going to train.
pub fn split_indices(ds: &Dataset, seed: u64) -> Result<SplitIndices> {
    if ds.len() < 10 * ds.d {
        return Err(Error::InvalidArgument(format!("split needs n >= 10·d = {}, got {}", 10 * ds.d, ds.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.d];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y - 1].push(i);
    }
    let mut out = SplitIndices { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (k, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() < 3 {
            return Err(Error::InvalidArgument(format!("class {} has {} examples; at least 3 required", k + 1, idx.len())));
        }
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_test = (n * TEST_FRACTION).round() as usize;
        let n_val = (n * VAL_FRACTION).round() as usize;
        out.test.extend_from_slice(&idx[..n_test]);
        out.val.extend_from_slice(&idx[n_test..n_test + n_val]);
        out.train.extend_from_slice(&idx[n_test + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn split(ds: &Dataset, seed: u64) -> Result<SplitData> {
    let idx = split_indices(ds, seed)?;
    Ok(SplitData { train: ds.subset(&idx.train), val: ds.subset(&idx.val), test: ds.subset(&idx.test) })
}

/// Per-feature centring and unit-variance scaling fitted on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population (ddof = 0) statistics; standard deviations floored at 1e-12.
    pub fn fit(ds: &Dataset) -> Self {
        let n = ds.len().max(1) as f64;
        let dim = ds.input_dim;
        let mut mean = vec![0.0; dim];
        for i in 0..ds.len() {
            for (m, &v) in mean.iter_mut().zip(ds.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for i in 0..ds.len() {
            for ((s, &v), &m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        for row in out.features.chunks_mut(ds.input_dim) {
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Fits on `split.train` and transforms all three splits with the training statistics.
pub fn standardize_fit_apply(split: &SplitData) -> (SplitData, Standardizer) {
    let st = Standardizer::fit(&split.train);
    let out = SplitData { train: st.apply(&split.train), val: st.apply(&split.val), test: st.apply(&split.test) };
    (out, st)
}

/// Gaussian clusters in `R^d`: class `k` centred at `separation · e_k`, unit covariance,
/// labels drawn i.i.d. from `class_weights`.
pub fn gen_synthetic(d: usize, n: usize, class_weights: &[f64], separation: f64, seed: u64) -> Result<Dataset> {
    if d < 2 {
        return Err(Error::TooFewClasses(d));
    }
    if class_weights.len() != d {
        return Err(Error::LengthMismatch { what: "class weights vs d", left: class_weights.len(), right: d });
    }
    if class_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || (class_weights.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("class weights {class_weights:?} must be nonnegative and sum to 1")));
    }
    if n < 10 * d {
        return Err(Error::InvalidArgument(format!("n must be >= 10·d = {}, got {n}", 10 * d)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picker = WeightedIndex::new(class_weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = picker.sample(&mut rng);
        labels.push(k + 1);
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(z + if j == k { separation } else { 0.0 });
        }
    }
    Dataset::new(features, d, labels, d)
}

/// Label entropy divided by `ln d`.
pub fn shannon_equitability(labels: &[usize], d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::TooFewClasses(d));
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let mut counts = vec![0usize; d];
    for &y in labels {
        if y == 0 || y > d {
            return Err(Error::ClassOutOfRange { index: y, d });
        }
        counts[y - 1] += 1;
    }
    let n = labels.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / n;
            -q * q.ln()
        })
        .sum();
    Ok(h / (d as f64).ln())
}

/// Provenance record written next to generated or ingested data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: String,
    pub label_column: String,
    /// `class_mapping[k-1]` is the original label of class `k`.
    pub class_mapping: Vec<String>,
    pub split_seed: Option<u64>,
    pub n: usize,
    pub input_dim: usize,
    pub class_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

impl DatasetManifest {
    pub fn describe(ds: &Dataset, source: impl Into<String>, label_column: impl Into<String>, split_seed: Option<u64>) -> Self {
        Self {
            source: source.into(),
            label_column: label_column.into(),
            class_mapping: ds.class_names.clone(),
            split_seed,
            n: ds.len(),
            input_dim: ds.input_dim,
            class_counts: ds.class_counts(),
            generator: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_basic() {
        let f = write("a,b,label\n1.0,2.0,0\n3,4,1\n5,6.5,1\n");
        let ds = load_csv(f.path(), "label").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.input_dim, 2);
        assert_eq!(ds.labels, vec![1, 2, 2]);
        assert_eq!(ds.row(2), &[5.0, 6.5]);
        assert_eq!(ds.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn csv_blank_cell_names_row_and_column() {
        let f = write("a,b,label\n1,2,x\n3,,y\n");
        match load_csv(f.path(), "label") {
            Err(Error::Csv { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_string_labels_first_appearance() {
        let f = write("label,x\nneg,1\npos,2\nneg,3\n");
        let ds = load_csv(f.path(), "label").unwrap();
        assert_eq!(ds.labels, vec![1, 2, 1]);
        assert_eq!(ds.class_names, vec!["neg", "pos"]);
        let f = write("label,x\npos,1\nneg,2\n");
        assert_eq!(load_csv(f.path(), "label").unwrap().class_names, vec!["pos", "neg"]);
    }

    #[test]
    fn csv_errors() {
        let f = write("a,b\n1,2\n");
        assert!(matches!(load_csv(f.path(), "label"), Err(Error::Csv { .. })));
        let f = write("a,label\nhello,1\n");
        assert!(matches!(load_csv(f.path(), "label"), Err(Error::Csv { row: 2, .. })));
        assert!(load_csv("/nonexistent/file.csv", "label").is_err());
    }

    fn balanced(n: usize, d: usize) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| i % d + 1).collect();
        Dataset::new((0..n).map(|i| i as f64).collect(), 1, labels, d).unwrap()
    }

    #[test]
    fn split_sizes() {
        let idx = split_indices(&balanced(100, 2), 1).unwrap();
        assert_eq!((idx.train.len(), idx.val.len(), idx.test.len()), (64, 16, 20));
        assert_eq!(idx, split_indices(&balanced(100, 2), 1).unwrap());
        assert_ne!(idx, split_indices(&balanced(100, 2), 2).unwrap());
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..1000).map(|i| if i % 20 == 0 { 2 } else { 1 }).collect();
        let ds = Dataset::new(vec![0.0; 1000], 1, labels, 2).unwrap();
        let s = split(&ds, 9).unwrap();
        assert_eq!(s.test.class_counts()[1], 10);
        assert_eq!(s.val.class_counts()[1], 8);
        assert_eq!(s.train.class_counts()[1], 32);
    }

    #[test]
    fn split_rejects_tiny_class() {
        let mut labels = vec![1; 40];
        labels[0] = 2;
        labels[1] = 2;
        let ds = Dataset::new(vec![0.0; 40], 1, labels, 2).unwrap();
        assert!(split(&ds, 0).is_err());
    }

    #[test]
    fn standardize_examples() {
        let train = Dataset::new(vec![0.0, 5.0, 2.0, 5.0], 2, vec![1, 2], 2).unwrap();
        let val = Dataset::new(vec![1.0, 5.0], 2, vec![1], 2).unwrap();
        let st = Standardizer::fit(&train);
        let t = st.apply(&train);
        assert_eq!(t.features, vec![-1.0, 0.0, 1.0, 0.0]);
        let v = st.apply(&val);
        assert_eq!(v.features, vec![0.0, 0.0]);
    }

    #[test]
    fn synthetic_counts() {
        let ds = gen_synthetic(2, 5000, &[0.98, 0.02], 3.0, 4).unwrap();
        let pos = ds.class_counts()[1] as f64;
        // binomial(5000, 0.02): mean 100, sd ~9.9
        assert!((pos - 100.0).abs() < 40.0, "{pos}");
        assert_eq!(ds, gen_synthetic(2, 5000, &[0.98, 0.02], 3.0, 4).unwrap());
        assert!(gen_synthetic(2, 100, &[0.5, 0.6], 1.0, 0).is_err());
        assert!(gen_synthetic(2, 100, &[0.5], 1.0, 0).is_err());
        assert!(gen_synthetic(3, 20, &[0.2, 0.3, 0.5], 1.0, 0).is_err());
    }

    #[test]
    fn synthetic_means_follow_separation() {
        let ds = gen_synthetic(3, 30_000, &[0.3, 0.3, 0.4], 4.0, 1).unwrap();
        for k in 1..=3 {
            let rows: Vec<&[f64]> = (0..ds.len()).filter(|&i| ds.labels[i] == k).map(|i| ds.row(i)).collect();
            for j in 0..3 {
                let m: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
                let expected = if j + 1 == k { 4.0 } else { 0.0 };
                assert!((m - expected).abs() < 0.05, "class {k} dim {j}: {m}");
            }
        }
    }

    #[test]
    fn equitability_examples() {
        assert_abs_diff_eq!(shannon_equitability(&[1, 2, 3, 1, 2, 3], 3).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(shannon_equitability(&[2, 2, 2], 3).unwrap(), 0.0);
        let mut labels = vec![1; 90];
        labels.extend(vec![2; 10]);
        let expected = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln()) / 2f64.ln();
        assert_abs_diff_eq!(shannon_equitability(&labels, 2).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.469, epsilon = 1e-3);
        assert!(shannon_equitability(&[1], 1).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions(n in 30usize..300, seed in 0u64..50) {
            let ds = balanced(n, 3);
            let idx = split_indices(&ds, seed).unwrap();
            let mut all: Vec<usize> = idx.train.iter().chain(&idx.val).chain(&idx.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let train = ds.subset(&idx.train);
            prop_assert!(train.class_counts().iter().all(|&c| c > 0));
        }

        #[test]
        fn standardized_train_moments(values in proptest::collection::vec(-100.0f64..100.0, 20)) {
            let ds = Dataset::new(values, 2, vec![1; 10], 1).unwrap();
            let st = Standardizer::fit(&ds);
            let t = st.apply(&ds);
            for j in 0..2 {
                let col: Vec<f64> = (0..10).map(|i| t.row(i)[j]).collect();
                let m = col.iter().sum::<f64>() / 10.0;
                let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 10.0;
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((v - 1.0).abs() < 1e-9 || v == 0.0);
            }
        }

        #[test]
        fn equitability_permutation_invariant(mut labels in proptest::collection::vec(1usize..=4, 1..60), seed in 0u64..10) {
            let base = shannon_equitability(&labels, 4).unwrap();
            labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((shannon_equitability(&labels, 4).unwrap() - base).abs() < 1e-12);
            prop_assert!(base <= 1.0 + 1e-12);
        }
    }
}
