//! Deterministic dataset generation and loading.
//!
//! Two corpora: the synthetic 3-D S-curve and the bundled 8x8 handwritten
//! digits CSV (64 integer pixels in 0..=16 plus a label per line, scaled to
//! [0,1] on load).

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const DIGITS_ROWS: usize = 1797;
pub const DIGITS_FEATURES: usize = 64;
pub const DIGITS_CLASSES: usize = 10;

/// In-memory dataset: features, optional integer labels, optional per-point
/// scalar used for plot coloring, and the declared value range.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
    pub color: Option<Vec<f64>>,
    pub value_range: (f64, f64),
    /// `(channels, height, width)` when samples are images.
    pub image_shape: Option<(usize, usize, usize)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }
}

/// Disjoint train/test index split covering the dataset exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Standard S-curve: `t` uniform in `[-3pi/2, 3pi/2]`, point
/// `(sin t, 2u, sign(t)(cos t - 1))`; `t` is kept as the color value.
pub fn generate_s_curve<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Dataset {
    let mut rows = Vec::with_capacity(n);
    let mut color = Vec::with_capacity(n);
    for _ in 0..n {
        let t = 1.5 * PI * (2.0 * rng.random_range(0.0..1.0f64) - 1.0);
        let u: f64 = rng.random_range(0.0..1.0);
        rows.push(vec![t.sin(), 2.0 * u, t.signum() * (t.cos() - 1.0)]);
        color.push(t);
    }
    Dataset {
        name: "s-curve".into(),
        features: Matrix::from_rows(&rows).expect("finite by construction"),
        labels: None,
        color: Some(color),
        value_range: (-2.0, 2.0),
        image_shape: None,
    }
}

/// Loads the bundled digits CSV: 1797 lines of 64 integers in `0..=16` plus
/// one label in `0..=9`, scaled to `[0,1]`.
pub fn load_digits(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows = Vec::with_capacity(DIGITS_ROWS);
    let mut labels = Vec::with_capacity(DIGITS_ROWS);
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != DIGITS_FEATURES + 1 {
            return Err(perr(
                lineno,
                format!("expected {} fields, got {}", DIGITS_FEATURES + 1, fields.len()),
            ));
        }
        let mut row = Vec::with_capacity(DIGITS_FEATURES);
        for f in &fields[..DIGITS_FEATURES] {
            let v: i64 = f
                .trim()
                .parse()
                .map_err(|e| perr(lineno, format!("bad pixel value {f:?}: {e}")))?;
            if !(0..=16).contains(&v) {
                return Err(perr(lineno, format!("pixel value {v} outside 0..=16")));
            }
            row.push(v as f64 / 16.0);
        }
        let label: usize = fields[DIGITS_FEATURES]
            .trim()
            .parse()
            .map_err(|e| perr(lineno, format!("bad label: {e}")))?;
        if label >= DIGITS_CLASSES {
            return Err(perr(lineno, format!("label {label} outside 0..=9")));
        }
        rows.push(row);
        labels.push(label);
    }

    if rows.len() != DIGITS_ROWS {
        return Err(Error::InvalidConfig(format!(
            "digits file {} has {} rows, descriptor says {DIGITS_ROWS}",
            path.display(),
            rows.len()
        )));
    }
    let color = labels.iter().map(|&l| l as f64).collect();
    Ok(Dataset {
        name: "digits".into(),
        features: Matrix::from_rows(&rows)?,
        labels: Some(labels),
        color: Some(color),
        value_range: (0.0, 1.0),
        image_shape: Some((1, 8, 8)),
    })
}

/// Uniform random disjoint split into `n_train` training rows and the rest.
pub fn split<R: Rng + ?Sized>(dataset: &Dataset, n_train: usize, rng: &mut R) -> Result<Split> {
    let n = dataset.len();
    if n_train < 1 || n_train >= n {
        return Err(Error::InvalidConfig(format!(
            "split requires 1 <= n_train < N, got n_train = {n_train}, N = {n}"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let test = indices.split_off(n_train);
    Ok(Split {
        train: indices,
        test,
    })
}

/// Writes a dataset to the CSV shape used by the loaders: features then the
/// label column when labels exist (or the color value for unlabeled data).
pub fn export_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..dataset.len() {
        let feats: Vec<String> = dataset.features.row(i).iter().map(|v| v.to_string()).collect();
        write!(out, "{}", feats.join(","))?;
        if let Some(labels) = &dataset.labels {
            write!(out, ",{}", labels[i])?;
        } else if let Some(color) = &dataset.color {
            write!(out, ",{}", color[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use std::path::PathBuf;

    fn digits_path() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/digits.csv")
    }

    #[test]
    fn s_curve_shape_and_determinism() {
        let d1 = generate_s_curve(100, &mut seeded_rng(5));
        let d2 = generate_s_curve(100, &mut seeded_rng(5));
        assert_eq!(d1.features.rows(), 100);
        assert_eq!(d1.features.cols(), 3);
        assert_eq!(d1.features, d2.features);
    }

    #[test]
    fn s_curve_lies_on_manifold() {
        // x = sin t and z = sign(t)(cos t - 1) imply x^2 + (z sign(t) + 1)^2 = 1.
        let d = generate_s_curve(500, &mut seeded_rng(2));
        let color = d.color.as_ref().unwrap();
        for i in 0..d.len() {
            let row = d.features.row(i);
            let (x, z) = (row[0], row[2]);
            let s = color[i].signum();
            let residual = (x * x + (z * s + 1.0) * (z * s + 1.0) - 1.0).abs();
            assert!(residual <= 1e-12, "row {i}: residual {residual}");
        }
    }

    #[test]
    fn digits_descriptor_holds() {
        let d = load_digits(&digits_path()).unwrap();
        assert_eq!(d.len(), DIGITS_ROWS);
        assert_eq!(d.dims(), DIGITS_FEATURES);
        assert!(d.features.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let labels = d.labels.as_ref().unwrap();
        let mut hist = [0usize; DIGITS_CLASSES];
        for &l in labels {
            hist[l] += 1;
        }
        assert!(hist.iter().all(|&c| c > 0), "histogram {hist:?}");
    }

    #[test]
    fn split_is_disjoint_cover_and_seeded() {
        let d = generate_s_curve(50, &mut seeded_rng(1));
        let s1 = split(&d, 20, &mut seeded_rng(9)).unwrap();
        let s2 = split(&d, 20, &mut seeded_rng(9)).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.train.len(), 20);
        assert_eq!(s1.test.len(), 30);
        let mut all: Vec<usize> = s1.train.iter().chain(s1.test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_n_train() {
        let d = generate_s_curve(10, &mut seeded_rng(1));
        assert!(split(&d, 0, &mut seeded_rng(0)).is_err());
        assert!(split(&d, 10, &mut seeded_rng(0)).is_err());
        // boundary: N - 1 leaves a single test point
        let s = split(&d, 9, &mut seeded_rng(0)).unwrap();
        assert_eq!(s.test.len(), 1);
    }
}
