//! On-disk dataset layout.
//!
//! A dataset is a text manifest plus one or more feature matrix files.
//!
//! Manifest: UTF-8, one record per line, `#` starts a comment line:
//!
//! ```text
//! bag_id, video_id, label, feature_file, row_begin, row_count
//! ```
//!
//! `label` is `L`, `H` or `?` (unlabeled). `feature_file` is resolved relative
//! to the manifest's directory. The bag's instances are rows
//! `row_begin .. row_begin + row_count` of that matrix.
//!
//! Feature matrix file, all little-endian:
//!
//! | offset | size       | content                          |
//! |--------|------------|----------------------------------|
//! | 0      | 8          | `rows` as `u64`                  |
//! | 8      | 8          | `cols` as `u64`                  |
//! | 16     | 8·rows·cols| `f64` values, row-major          |
//!
//! No padding and no trailing bytes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::bag::{Bag, Dataset, InstanceVec, Label};
use crate::binio::{read_f64, read_u64, write_f64, write_u64};
use crate::error::{Error, Result};

/// Dense row-major `f64` matrix as stored in a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_u64(w, self.rows as u64)?;
        write_u64(w, self.cols as u64)?;
        for &v in &self.data {
            write_f64(w, v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("matrix size overflow".into()))?;
        let mut data = Vec::with_capacity(n.min(1 << 28));
        for _ in 0..n {
            data.push(read_f64(r)?);
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Format("trailing bytes after feature matrix".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub bag_id: String,
    pub video_id: String,
    pub label: Option<Label>,
    pub feature_file: String,
    pub row_begin: usize,
    pub row_count: usize,
}

impl ManifestRecord {
    fn to_line(&self) -> String {
        let label = self.label.map_or('?', Label::as_char);
        format!(
            "{}, {}, {}, {}, {}, {}",
            self.bag_id, self.video_id, label, self.feature_file, self.row_begin, self.row_count
        )
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!(
                "manifest line {lineno}: expected 6 fields, found {}",
                fields.len()
            )));
        }
        let label = match fields[2] {
            "?" => None,
            s => Some(s.parse::<Label>().map_err(|_| {
                Error::Format(format!("manifest line {lineno}: bad label `{s}`"))
            })?),
        };
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("manifest line {lineno}: bad integer `{s}`")))
        };
        Ok(Self {
            bag_id: fields[0].to_string(),
            video_id: fields[1].to_string(),
            label,
            feature_file: fields[3].to_string(),
            row_begin: num(fields[4])?,
            row_count: num(fields[5])?,
        })
    }
}

pub const MANIFEST_HEADER: &str = "# vascmil dataset manifest v1\n# bag_id, video_id, label, feature_file, row_begin, row_count\n";

pub fn write_manifest<W: Write>(w: &mut W, records: &[ManifestRecord]) -> Result<()> {
    w.write_all(MANIFEST_HEADER.as_bytes())?;
    for r in records {
        writeln!(w, "{}", r.to_line())?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(ManifestRecord::parse(trimmed, i + 1)?);
    }
    Ok(out)
}

/// Writes `dataset` as `<dir>/<name>.manifest` and `<dir>/<name>.f64`.
/// Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let feature_file = format!("{name}.f64");
    let mut rows = Vec::with_capacity(dataset.n_instances());
    let mut records = Vec::with_capacity(dataset.len());
    for bag in dataset.bags() {
        records.push(ManifestRecord {
            bag_id: bag.bag_id.clone(),
            video_id: bag.video_id.clone(),
            label: bag.label,
            feature_file: feature_file.clone(),
            row_begin: rows.len(),
            row_count: bag.len(),
        });
        rows.extend(bag.instances.iter().map(|i| i.values.clone()));
    }
    FeatureMatrix::from_rows(&rows)?.save(&dir.join(&feature_file))?;
    let manifest = dir.join(format!("{name}.manifest"));
    let mut w = BufWriter::new(File::create(&manifest)?);
    write_manifest(&mut w, &records)?;
    w.flush()?;
    Ok(manifest)
}

/// Loads a dataset from its manifest; feature files are read once each.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let records = read_manifest(BufReader::new(File::open(manifest)?))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut matrices: HashMap<String, FeatureMatrix> = HashMap::new();
    let mut bags = Vec::with_capacity(records.len());
    for rec in records {
        if !matrices.contains_key(&rec.feature_file) {
            let m = FeatureMatrix::load(&base.join(&rec.feature_file))?;
            matrices.insert(rec.feature_file.clone(), m);
        }
        let m = &matrices[&rec.feature_file];
        let end = rec.row_begin + rec.row_count;
        if end > m.rows {
            return Err(Error::Format(format!(
                "bag `{}` references rows {}..{end} but `{}` has {} rows",
                rec.bag_id, rec.row_begin, rec.feature_file, m.rows
            )));
        }
        let instances = (rec.row_begin..end)
            .map(|i| InstanceVec::new(m.row(i).to_vec()))
            .collect();
        bags.push(Bag::new(rec.bag_id, rec.video_id, instances, rec.label));
    }
    Dataset::new(bags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_byte_layout() {
        let m = FeatureMatrix::from_rows(&[vec![1.0, -2.5]]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 16);
        assert_eq!(&buf[0..8], &1u64.to_le_bytes());
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&buf[24..32], &(-2.5f64).to_le_bytes());
    }

    #[test]
    fn matrix_rejects_trailing_bytes() {
        let m = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        buf.push(0);
        assert!(FeatureMatrix::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn manifest_parse_errors() {
        assert!(read_manifest("a, b, H, f, 0\n".as_bytes()).is_err());
        assert!(read_manifest("a, b, Q, f, 0, 1\n".as_bytes()).is_err());
        assert!(read_manifest("a, b, H, f, x, 1\n".as_bytes()).is_err());
        let ok = read_manifest("# c\n\na, b, ?, f.f64, 0, 3\n".as_bytes()).unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].label, None);
        assert_eq!(ok[0].row_count, 3);
    }
}
