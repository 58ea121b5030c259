//! Labeled real-valued datasets: CSV I/O and the Gaussian-blob generator.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Standard deviation of each synthetic blob.
pub const SYNTH_SPREAD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::domain("feature rows and labels differ in length"));
        }
        if labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::domain(format!("label outside 0..{n_classes}")));
        }
        Ok(Dataset {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Rows with `i % every == every - 1` go to the second (test) part.
    pub fn split_every(&self, every: usize) -> (Dataset, Dataset) {
        if every == 0 {
            return (self.clone(), self.subset(&[]));
        }
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..self.len()).partition(|i| i % every == every - 1);
        (self.subset(&train), self.subset(&test))
    }

    pub fn max_abs_feature(&self) -> f64 {
        self.features.data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_feature(&self) -> f64 {
        self.features.data().iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let feats: Vec<Matrix<f64>> = parts.iter().map(|d| d.features.clone()).collect();
        let n_classes = parts.iter().map(|d| d.n_classes).max().unwrap_or(0);
        Dataset::new(
            Matrix::vstack(&feats)?,
            parts.iter().flat_map(|d| d.labels.iter().copied()).collect(),
            n_classes,
        )
    }
}

/// One Gaussian blob per class, centers uniform in `[0.2, 0.8]^d`, features
/// clipped to `[0, 1]`. Row `i` has label `i % n_classes`.
pub fn gen_synth(n_samples: usize, d_x: usize, n_classes: usize, seed: u64) -> Result<Dataset> {
    if n_samples == 0 || d_x == 0 || n_classes == 0 {
        return Err(Error::config("n, d_x and classes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..d_x).map(|_| rng.gen_range(0.2..0.8)).collect())
        .collect();
    let noise = Normal::new(0.0, SYNTH_SPREAD).expect("valid spread");
    let labels: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
    let features = Matrix::from_fn(n_samples, d_x, |r, c| {
        (centers[labels[r]][c] + noise.sample(&mut rng)).clamp(0.0, 1.0)
    });
    Dataset::new(features, labels, n_classes)
}

/// Writes `f_1..f_d,label`.
pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=ds.dim()).map(|i| format!("f_{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, label) in ds.features.iter_rows().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a header-led CSV whose last column is an integer label.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut cols = None;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let n = rec.len();
        if n < 2 {
            return Err(Error::Format(format!("row {}: need features and a label", line + 2)));
        }
        if *cols.get_or_insert(n) != n {
            return Err(Error::Format(format!("row {}: ragged row", line + 2)));
        }
        for field in rec.iter().take(n - 1) {
            data.push(field.trim().parse::<f64>().map_err(|e| {
                Error::Format(format!("row {}: {e}", line + 2))
            })?);
        }
        labels.push(rec[n - 1].trim().parse::<usize>().map_err(|e| {
            Error::Format(format!("row {}: label: {e}", line + 2))
        })?);
    }
    let cols = cols.ok_or_else(|| Error::Format("empty dataset".into()))? - 1;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Matrix::from_vec(labels.len(), cols, data)?, labels, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_balanced_and_bounded() {
        let ds = gen_synth(200, 8, 2, 1).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 0).count(), 100);
        assert!(ds.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let ten = gen_synth(200, 4, 10, 1).unwrap();
        for c in 0..10 {
            assert_eq!(ten.labels.iter().filter(|&&l| l == c).count(), 20);
        }
        assert_eq!(gen_synth(50, 3, 2, 9).unwrap(), gen_synth(50, 3, 2, 9).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = gen_synth(20, 3, 2, 4).unwrap();
        write_csv(&path, &ds).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f_1,f_2,f_3,label\n"));
        assert_eq!(read_csv(&path).unwrap(), ds);
    }

    #[test]
    fn split_every_fifth() {
        let ds = gen_synth(10, 2, 2, 0).unwrap();
        let (train, test) = ds.split_every(5);
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!(test.labels, vec![0, 1]);
    }
}
