//! Dataset manifests: the table binding sample ids, image files and the
//! two ground-truth biomarker values consumed by outcome simulation.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: String,
    pub image_path: String,
    pub x_prog: f64,
    pub x_pred: f64,
    pub split: Split,
}

/// Rows of `(sample_id, image_path, x_prog, x_pred, split)` with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for row in &rows {
            if !seen.insert(row.sample_id.as_str()) {
                return Err(Error::DuplicateSampleId(row.sample_id.clone()));
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn split_rows(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer
            .flush()
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// Load a manifest CSV, checking id uniqueness and that every
    /// referenced image file exists.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
        let mut rows: Vec<ManifestRow> = Vec::new();
        for row in reader.deserialize() {
            rows.push(row?);
        }
        let manifest = Self::new(rows)?;
        manifest.check_images()?;
        Ok(manifest)
    }

    pub fn check_images(&self) -> Result<()> {
        for row in &self.rows {
            if !Path::new(&row.image_path).is_file() {
                return Err(Error::MissingImage(row.image_path.clone()));
            }
        }
        Ok(())
    }
}

/// Deterministically relabel splits: shuffle ids with the seed, then cut by
/// `fractions` (largest-remainder rounding, so 100 x (0.8, 0.2) is exactly
/// 80/20). Fractions map in order to train, val, test.
pub fn split_dataset(
    manifest: &DatasetManifest,
    fractions: &[f64],
    seed: u64,
) -> Result<DatasetManifest> {
    if fractions.is_empty() || fractions.len() > 3 {
        return Err(Error::InvalidParameter {
            name: "fractions",
            reason: format!("need 1 to 3 fractions, got {}", fractions.len()),
        });
    }
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "fractions",
                reason: format!("each fraction must lie in (0, 1], got {f}"),
            });
        }
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter {
            name: "fractions",
            reason: format!("must sum to 1, got {total}"),
        });
    }

    let n = manifest.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split", b"dataset"));

    // Largest-remainder apportionment of n over the fractions.
    let mut counts: Vec<usize> = fractions.iter().map(|f| (f * n as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = fractions
        .iter()
        .enumerate()
        .map(|(i, f)| (i, f * n as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..n - assigned {
        counts[remainders[k % remainders.len()].0] += 1;
    }

    let labels = [Split::Train, Split::Val, Split::Test];
    let mut rows = manifest.rows.clone();
    let mut cursor = 0;
    for (slot, &count) in counts.iter().enumerate() {
        for &idx in &order[cursor..cursor + count] {
            rows[idx].split = labels[slot];
        }
        cursor += count;
    }
    DatasetManifest::new(rows)
}

/// Ingest a precomputed feature annotation table.
///
/// Expects a CSV with `sample_id`, `image_path` and the named feature
/// columns; an optional `split` column is honored (rows default to train).
/// With `normalize` set, each feature column is min-max scaled to [0, 1]
/// using statistics of the train split only.
pub fn load_annotation_table(
    path: &Path,
    prog_column: &str,
    pred_column: &str,
    normalize: bool,
) -> Result<DatasetManifest> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_idx = col("sample_id")?;
    let image_idx = col("image_path")?;
    let prog_idx = col(prog_column)?;
    let pred_idx = col(pred_column)?;
    let split_idx = headers.iter().position(|h| h == "split");

    let parse = |field: &str, column: &str, row: usize| -> Result<f64> {
        field.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
            column: column.to_string(),
            value: field.to_string(),
            row,
        })
    };

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let split = match split_idx {
            Some(idx) => record.get(idx).unwrap_or("train").parse()?,
            None => Split::Train,
        };
        rows.push(ManifestRow {
            sample_id: record.get(id_idx).unwrap_or_default().to_string(),
            image_path: record.get(image_idx).unwrap_or_default().to_string(),
            x_prog: parse(record.get(prog_idx).unwrap_or_default(), prog_column, i)?,
            x_pred: parse(record.get(pred_idx).unwrap_or_default(), pred_column, i)?,
            split,
        });
    }
    let mut manifest = DatasetManifest::new(rows)?;
    manifest.check_images()?;

    if normalize {
        normalize_min_max(&mut manifest, prog_column, pred_column)?;
    }
    Ok(manifest)
}

/// Min-max scale both feature columns to [0, 1] in place, using train-split
/// statistics. Idempotent: a second pass sees min 0 / max 1 and is the
/// identity.
pub fn normalize_min_max(
    manifest: &mut DatasetManifest,
    prog_name: &str,
    pred_name: &str,
) -> Result<()> {
    let train: Vec<&ManifestRow> = manifest.split_rows(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::EmptyDataset("no train rows to normalize against".into()));
    }
    let stats = |get: fn(&ManifestRow) -> f64, name: &str| -> Result<(f64, f64)> {
        let min = train.iter().map(|r| get(r)).fold(f64::INFINITY, f64::min);
        let max = train.iter().map(|r| get(r)).fold(f64::NEG_INFINITY, f64::max);
        if max - min <= 0.0 {
            return Err(Error::ConstantColumn(name.to_string()));
        }
        Ok((min, max))
    };
    let (prog_min, prog_max) = stats(|r| r.x_prog, prog_name)?;
    let (pred_min, pred_max) = stats(|r| r.x_pred, pred_name)?;
    for row in &mut manifest.rows {
        row.x_prog = (row.x_prog - prog_min) / (prog_max - prog_min);
        row.x_pred = (row.x_pred - pred_min) / (pred_max - pred_min);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn touch(path: &Path) {
        std::fs::File::create(path).unwrap();
    }

    fn manifest_with_features(values: &[(f64, f64)]) -> DatasetManifest {
        DatasetManifest::new(
            values
                .iter()
                .enumerate()
                .map(|(i, (p, q))| ManifestRow {
                    sample_id: format!("s{i}"),
                    image_path: String::new(),
                    x_prog: *p,
                    x_pred: *q,
                    split: Split::Train,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rows = vec![
            ManifestRow {
                sample_id: "a".into(),
                image_path: String::new(),
                x_prog: 0.0,
                x_pred: 0.0,
                split: Split::Train,
            };
            2
        ];
        assert!(matches!(
            DatasetManifest::new(rows),
            Err(Error::DuplicateSampleId(_))
        ));
    }

    #[test]
    fn split_counts_are_exact() {
        let manifest = manifest_with_features(&vec![(0.0, 0.0); 100]);
        let split = split_dataset(&manifest, &[0.8, 0.2], 3).unwrap();
        assert_eq!(split.split_rows(Split::Train).count(), 80);
        assert_eq!(split.split_rows(Split::Val).count(), 20);

        let one = split_dataset(&manifest, &[1.0], 3).unwrap();
        assert_eq!(one.split_rows(Split::Train).count(), 100);
    }

    #[test]
    fn split_is_deterministic() {
        let manifest = manifest_with_features(&vec![(0.0, 0.0); 37]);
        let a = split_dataset(&manifest, &[0.7, 0.15, 0.15], 9).unwrap();
        let b = split_dataset(&manifest, &[0.7, 0.15, 0.15], 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_fractions_rejected() {
        let manifest = manifest_with_features(&vec![(0.0, 0.0); 10]);
        assert!(split_dataset(&manifest, &[0.5, 0.4], 0).is_err());
        assert!(split_dataset(&manifest, &[1.2], 0).is_err());
        assert!(split_dataset(&manifest, &[0.0, 1.0], 0).is_err());
        assert!(split_dataset(&manifest, &[], 0).is_err());
    }

    #[test]
    fn annotation_table_binary_passthrough_and_minmax() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.png");
        touch(&img);
        let csv_path = dir.path().join("table.csv");
        let mut f = std::fs::File::create(&csv_path).unwrap();
        writeln!(f, "sample_id,image_path,attr_white,tumor_energy,split").unwrap();
        for (i, (w, e, s)) in [
            (0.0, 10.0, "train"),
            (1.0, 30.0, "train"),
            (1.0, 20.0, "train"),
            (0.0, 25.0, "test"),
        ]
        .iter()
        .enumerate()
        {
            writeln!(f, "r{i},{},{w},{e},{s}", img.display()).unwrap();
        }
        drop(f);

        let manifest =
            load_annotation_table(&csv_path, "attr_white", "tumor_energy", true).unwrap();
        // Binary column is left at {0, 1} by min-max.
        let progs: Vec<f64> = manifest.rows.iter().map(|r| r.x_prog).collect();
        assert_eq!(progs, vec![0.0, 1.0, 1.0, 0.0]);
        // Continuous span [10, 30] on train: 20 maps to 0.5, test row 25 to 0.75.
        assert_eq!(manifest.rows[2].x_pred, 0.5);
        assert_eq!(manifest.rows[3].x_pred, 0.75);
    }

    #[test]
    fn annotation_table_missing_column_named() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("table.csv");
        let mut f = std::fs::File::create(&csv_path).unwrap();
        writeln!(f, "sample_id,image_path,a").unwrap();
        writeln!(f, "r0,x,1.0").unwrap();
        drop(f);
        match load_annotation_table(&csv_path, "a", "b", false) {
            Err(Error::MissingColumn(name)) => assert_eq!(name, "b"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn annotation_table_non_numeric_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.png");
        touch(&img);
        let csv_path = dir.path().join("table.csv");
        let mut f = std::fs::File::create(&csv_path).unwrap();
        writeln!(f, "sample_id,image_path,a,b").unwrap();
        writeln!(f, "r0,{},oops,1.0", img.display()).unwrap();
        drop(f);
        assert!(matches!(
            load_annotation_table(&csv_path, "a", "b", false),
            Err(Error::NonNumeric { .. })
        ));
    }

    #[test]
    fn constant_column_under_normalization_rejected() {
        let mut manifest = manifest_with_features(&[(1.0, 0.0), (1.0, 1.0)]);
        assert!(matches!(
            normalize_min_max(&mut manifest, "p", "q"),
            Err(Error::ConstantColumn(name)) if name == "p"
        ));
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut manifest = manifest_with_features(&[(10.0, -1.0), (30.0, 3.0), (20.0, 1.0)]);
        normalize_min_max(&mut manifest, "p", "q").unwrap();
        let once = manifest.clone();
        normalize_min_max(&mut manifest, "p", "q").unwrap();
        assert_eq!(manifest, once);
    }

    #[test]
    fn manifest_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("i.png");
        touch(&img);
        let mut manifest = manifest_with_features(&[(0.25, 1.0), (0.5, 0.0)]);
        for row in &mut manifest.rows {
            row.image_path = img.display().to_string();
        }
        manifest.rows[1].split = Split::Test;
        let path = dir.path().join("manifest.csv");
        manifest.write_csv(&path).unwrap();
        let back = DatasetManifest::read_csv(&path).unwrap();
        assert_eq!(manifest, back);
    }

    #[test]
    fn missing_image_detected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest::new(vec![ManifestRow {
            sample_id: "a".into(),
            image_path: dir.path().join("absent.png").display().to_string(),
            x_prog: 0.0,
            x_pred: 0.0,
            split: Split::Train,
        }])
        .unwrap();
        let path = dir.path().join("manifest.csv");
        manifest.write_csv(&path).unwrap();
        assert!(matches!(
            DatasetManifest::read_csv(&path),
            Err(Error::MissingImage(_))
        ));
    }
}
