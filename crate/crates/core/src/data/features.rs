//! Fixed-length feature vectors for the SVM path.
//!
//! Binary layout (little-endian): `FVS1`, `u32` rows M, `u32` dimension D,
//! `M*D` `f32` values, then `M` `u32` class ids. A CSV form with rows
//! `label,f0,...,f{D-1}` (optional header) is accepted on input.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"FVS1";
pub const DEFAULT_FEATURE_DIM: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    /// `[M, D]`.
    pub vectors: Tensor<f32>,
    pub class_ids: Vec<usize>,
    pub source: String,
}

impl FeatureSet {
    pub fn new(vectors: Tensor<f32>, class_ids: Vec<usize>, source: impl Into<String>) -> Result<Self> {
        match vectors.shape() {
            &[m, _] if m == class_ids.len() => Ok(FeatureSet {
                vectors,
                class_ids,
                source: source.into(),
            }),
            &[m, _] => Err(Error::Data(format!("{m} feature rows but {} labels", class_ids.len()))),
            other => Err(Error::shape(
                "FeatureSet",
                "vectors",
                format!("expected [M,D], got {other:?}"),
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.vectors.outer(i)
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.iter().max().map_or(0, |m| m + 1)
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureSet {
            vectors: Tensor::new([indices.len(), d], data).expect("subset shape"),
            class_ids: indices.iter().map(|&i| self.class_ids[i]).collect(),
            source: self.source.clone(),
        }
    }

    /// Scale every row to unit Euclidean norm (zero rows stay zero).
    pub fn l2_normalized(&self) -> FeatureSet {
        let d = self.dim();
        let mut out = self.clone();
        for row in out.vectors.data_mut().chunks_mut(d) {
            let n = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v = (*v as f64 / n) as f32);
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (m, d) = (self.len(), self.dim());
        let mut out = Vec::with_capacity(12 + 4 * m * (d + 1));
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(m as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in self.vectors.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &c in &self.class_ids {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        for i in 0..self.len() {
            let mut rec = vec![self.class_ids[i].to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn format_err(path: &Path, detail: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        what: "feature file",
        detail,
    }
}

/// Read a binary or CSV feature file; `expected_dim` of `None` accepts the header's D.
pub fn load_feature_set(path: &Path, expected_dim: Option<usize>) -> Result<FeatureSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fs = if bytes.starts_with(FEATURE_MAGIC) {
        parse_binary(path, &bytes)?
    } else {
        parse_csv(path, &bytes, expected_dim)?
    };
    if let Some(d) = expected_dim {
        if fs.dim() != d {
            return Err(format_err(
                path,
                format!("dimension {} in header, expected {d}", fs.dim()),
            ));
        }
    }
    Ok(fs)
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<FeatureSet> {
    if bytes.len() < 12 {
        return Err(format_err(
            path,
            format!("header needs 12 bytes, file has {}", bytes.len()),
        ));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (m, d) = (u32_at(4), u32_at(8));
    if d == 0 {
        return Err(format_err(path, "header declares dimension 0".into()));
    }
    let expected = m
        .checked_mul(d + 1)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| format_err(path, format!("header declares an impossible size {m}x{d}")))?;
    if bytes.len() != expected {
        let payload = bytes.len() - 12;
        return Err(format_err(
            path,
            format!(
                "row/label count mismatch: header declares {m} rows of {d} values plus {m} labels ({} bytes), payload has {payload}",
                expected - 12
            ),
        ));
    }
    let body = &bytes[12..];
    let data: Vec<f32> = body[..4 * m * d]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let class_ids = body[4 * m * d..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    FeatureSet::new(Tensor::new([m, d], data)?, class_ids, path.display().to_string())
}

fn parse_csv(path: &Path, bytes: &[u8], expected_dim: Option<usize>) -> Result<FeatureSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dim = expected_dim;
    let mut row = 0usize;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        let first = rec.get(0).unwrap_or("").trim();
        let label = match first.parse::<usize>() {
            Ok(l) => l,
            Err(_) if line == 0 => continue,
            Err(_) => {
                return Err(format_err(
                    path,
                    format!("row {row}: label {first:?} is not a class id"),
                ))
            }
        };
        let found = rec.len() - 1;
        let d = *dim.get_or_insert(found);
        if found != d {
            return Err(Error::Dimension {
                row,
                expected: d,
                found,
            });
        }
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| format_err(path, format!("row {row}, column {j}: {field:?} is not a number")))?;
            data.push(v);
        }
        labels.push(label);
        row += 1;
    }
    let d = dim.ok_or_else(|| format_err(path, "no feature rows".into()))?;
    if d == 0 {
        return Err(format_err(path, "rows carry no feature values".into()));
    }
    FeatureSet::new(
        Tensor::new([labels.len(), d], data)?,
        labels,
        path.display().to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_set(m: usize, d: usize, seed: u64) -> FeatureSet {
        let mut rng = crate::rng::rng_from(seed);
        let v = Tensor::from_fn([m, d], |_| rng.random_range(-3.0f32..3.0));
        let labels = (0..m).map(|i| i % 5).collect();
        FeatureSet::new(v, labels, "random").unwrap()
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let fs = random_set(7, 4096, 3);
        fs.write(&p).unwrap();
        let back = load_feature_set(&p, Some(DEFAULT_FEATURE_DIM)).unwrap();
        let bits = |f: &FeatureSet| f.vectors.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&fs));
        assert_eq!(back.class_ids, fs.class_ids);
    }

    #[test]
    fn three_row_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let fs = random_set(3, 4096, 4);
        fs.write_csv(&p).unwrap();
        let back = load_feature_set(&p, Some(4096)).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.vectors, fs.vectors);
    }

    #[test]
    fn short_csv_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let mut text = String::from("label,features\n");
        for r in 0..3 {
            let n = if r == 2 { 4095 } else { 4096 };
            text.push_str(&format!("{r}{}\n", ",0.5".repeat(n)));
        }
        fs::write(&p, text).unwrap();
        match load_feature_set(&p, Some(4096)).unwrap_err() {
            Error::Dimension { row, expected, found } => assert_eq!((row, expected, found), (2, 4096, 4095)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn binary_diagnostics_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let fs = random_set(3, 8, 5);

        let mut bytes = fs.to_bytes();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&p, &bytes).unwrap();
        let e = load_feature_set(&p, None).unwrap_err().to_string();
        assert!(e.contains("row/label count mismatch"), "{e}");

        fs.write(&p).unwrap();
        let e = load_feature_set(&p, Some(4096)).unwrap_err().to_string();
        assert!(e.contains("dimension 8"), "{e}");

        std::fs::write(&p, b"FVS1\x01").unwrap();
        let e = load_feature_set(&p, None).unwrap_err().to_string();
        assert!(e.contains("header"), "{e}");
    }
}
