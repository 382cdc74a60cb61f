//! Dataset loading, scaling, joint assembly and on-disk formats.
//!
//! Internally every dataset is stored with one realization per column. CSV files default to
//! one realization per row, the usual tabular convention.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PlomError, Result};

/// Orientation of a CSV file on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    #[default]
    RowsAreSamples,
    ColumnsAreSamples,
}

impl std::str::FromStr for Layout {
    type Err = PlomError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows-are-samples" | "rows" => Ok(Layout::RowsAreSamples),
            "columns-are-samples" | "columns" => Ok(Layout::ColumnsAreSamples),
            other => Err(PlomError::Config(format!("unknown layout '{other}'"))),
        }
    }
}

/// `n` features by `N` realizations, all finite, no duplicated realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    points: DMatrix<f64>,
    feature_names: Option<Vec<String>>,
}

impl RawDataset {
    pub fn new(points: DMatrix<f64>, feature_names: Option<Vec<String>>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(PlomError::Shape(format!(
                "dataset must have at least one feature and one realization, got {}x{}",
                points.nrows(),
                points.ncols()
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != points.nrows() {
                return Err(PlomError::Shape(format!(
                    "{} feature names for {} features",
                    names.len(),
                    points.nrows()
                )));
            }
        }
        check_finite(&points)?;
        check_duplicates(&points)?;
        Ok(RawDataset { points, feature_names })
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn into_points(self) -> DMatrix<f64> {
        self.points
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Feature dimension `n`.
    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    /// Number of realizations `N`.
    pub fn n_samples(&self) -> usize {
        self.points.ncols()
    }
}

fn check_finite(points: &DMatrix<f64>) -> Result<()> {
    for (sample, col) in points.column_iter().enumerate() {
        if let Some(feature) = col.iter().position(|v| !v.is_finite()) {
            return Err(PlomError::NonFinite { feature, sample });
        }
    }
    Ok(())
}

fn check_duplicates(points: &DMatrix<f64>) -> Result<()> {
    // Keyed on bit patterns, with -0.0 folded onto 0.0 so equal values collide.
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::with_capacity(points.ncols());
    for (j, col) in points.column_iter().enumerate() {
        let key: Vec<u64> = col.iter().map(|&v| (v + 0.0).to_bits()).collect();
        if let Some(&first) = seen.get(&key) {
            return Err(PlomError::DuplicatePoint { first, second: j });
        }
        seen.insert(key, j);
    }
    Ok(())
}

/// Reads a numeric CSV. A first row that does not parse as numbers is taken as a header.
pub fn load_dataset(path: impl AsRef<Path>, layout: Layout) -> Result<RawDataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(PlomError::MissingInput(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| PlomError::io(path, e))?;
    let (header, rows) = parse_csv(file)?;
    if rows.is_empty() {
        return Err(PlomError::Format { row: 1, col: 1, msg: "no numeric rows".into() });
    }
    let n_rows = rows.len();
    let n_cols = rows[0].len();
    let table = DMatrix::from_fn(n_rows, n_cols, |i, j| rows[i][j]);
    let (points, names) = match layout {
        Layout::RowsAreSamples => (table.transpose(), header),
        Layout::ColumnsAreSamples => (table, None),
    };
    if points.ncols() < 2 {
        return Err(PlomError::Shape(format!(
            "need at least two realizations, found {}",
            points.ncols()
        )));
    }
    RawDataset::new(points, names)
}

type CsvTable = (Option<Vec<String>>, Vec<Vec<f64>>);

fn parse_csv(reader: impl Read) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| PlomError::Format { row: line, col: 1, msg: e.to_string() })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, _>> = record.iter().map(str::parse::<f64>).collect();
        if idx == 0 && parsed.iter().any(|r| r.is_err()) {
            header = Some(record.iter().map(str::to_owned).collect());
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (c, value) in parsed.into_iter().enumerate() {
            let v = value.map_err(|_| PlomError::Format {
                row: line,
                col: c + 1,
                msg: format!("'{}' is not a number", &record[c]),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(PlomError::Format {
                    row: line,
                    col: row.len().min(first.len()) + 1,
                    msg: format!("expected {} fields, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if let (Some(h), Some(first)) = (&header, rows.first()) {
        let h: &Vec<String> = h;
        if h.len() != first.len() {
            return Err(PlomError::Format {
                row: 1,
                col: 1,
                msg: format!("header has {} fields but rows have {}", h.len(), first.len()),
            });
        }
    }
    Ok((header, rows))
}

/// Writes a dataset as CSV with 17 significant digits, which round-trips every `f64`.
pub fn save_dataset(data: &RawDataset, path: impl AsRef<Path>, layout: Layout) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| PlomError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| PlomError::io(path, e);
    let table = match layout {
        Layout::RowsAreSamples => {
            if let Some(names) = data.feature_names() {
                writeln!(w, "{}", names.join(",")).map_err(io)?;
            }
            data.points().transpose()
        }
        Layout::ColumnsAreSamples => data.points().clone(),
    };
    for row in table.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Stacks `q` above `w`: column `j` of the result is `(q^j, w^j)`.
pub fn assemble_joint(q: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<RawDataset> {
    if q.nrows() > 0 && q.ncols() != w.ncols() {
        return Err(PlomError::Shape(format!(
            "q has {} realizations but w has {}",
            q.ncols(),
            w.ncols()
        )));
    }
    let n_samples = w.ncols();
    let nq = q.nrows();
    let joint = DMatrix::from_fn(nq + w.nrows(), n_samples, |i, j| {
        if i < nq {
            q[(i, j)]
        } else {
            w[(i - nq, j)]
        }
    });
    RawDataset::new(joint, None)
}

/// Splits rows `0..n_q` from the rest; inverse of [`assemble_joint`].
pub fn split_joint(data: &RawDataset, n_q: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if n_q > data.n() {
        return Err(PlomError::Shape(format!("split at {n_q} beyond {} features", data.n())));
    }
    let p = data.points();
    Ok((p.rows(0, n_q).into_owned(), p.rows(n_q, data.n() - n_q).into_owned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    #[default]
    MinMax,
    Standardize,
}

impl std::str::FromStr for ScalingMode {
    type Err = PlomError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-max" | "minmax" => Ok(ScalingMode::MinMax),
            "standardize" | "standard" => Ok(ScalingMode::Standardize),
            other => Err(PlomError::Config(format!("unknown scaling mode '{other}'"))),
        }
    }
}

/// Per-feature affine map `x -> (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub mode: ScalingMode,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// Features that were constant on the fitting data (scale forced to 1).
    pub constant: Vec<bool>,
}

impl ScalingSpec {
    pub fn fit(raw: &RawDataset, mode: ScalingMode) -> ScalingSpec {
        let p = raw.points();
        let n_samples = p.ncols() as f64;
        let mut spec = ScalingSpec {
            mode,
            shift: Vec::with_capacity(p.nrows()),
            scale: Vec::with_capacity(p.nrows()),
            constant: Vec::with_capacity(p.nrows()),
        };
        for row in p.row_iter() {
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == min {
                spec.shift.push(min);
                spec.scale.push(1.0);
                spec.constant.push(true);
                continue;
            }
            let (shift, scale) = match mode {
                ScalingMode::MinMax => (min, max - min),
                ScalingMode::Standardize => {
                    let mean = row.iter().sum::<f64>() / n_samples;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                        / (n_samples - 1.0).max(1.0);
                    (mean, var.sqrt())
                }
            };
            spec.shift.push(shift);
            spec.scale.push(scale);
            spec.constant.push(false);
        }
        spec
    }

    pub fn n(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(x)?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.shift[i]) / self.scale[i]))
    }

    pub fn invert(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(x)?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * self.scale[i] + self.shift[i]))
    }

    pub fn apply_dataset(&self, raw: &RawDataset) -> Result<RawDataset> {
        let names = raw.feature_names().map(<[String]>::to_vec);
        RawDataset::new(self.apply(raw.points())?, names)
    }

    fn check_rows(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.n() {
            return Err(PlomError::Shape(format!(
                "scaling fitted on {} features, applied to {}",
                self.n(),
                x.nrows()
            )));
        }
        Ok(())
    }
}

/// Run parameters stored next to a learned archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveMetadata {
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub nu: usize,
    pub m: usize,
    pub eps_dm: f64,
    pub kappa: u32,
    pub f0: f64,
    pub dr: f64,
    pub seed: u64,
    /// Number of stored learned vectors, i.e. archive columns.
    pub n_mc: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedArchive {
    pub samples: DMatrix<f64>,
    pub metadata: ArchiveMetadata,
}

impl LearnedArchive {
    pub fn new(samples: DMatrix<f64>, metadata: ArchiveMetadata) -> Result<Self> {
        if samples.ncols() != metadata.n_mc {
            return Err(PlomError::Consistency(format!(
                "metadata declares n_mc = {} but the archive holds {} columns",
                metadata.n_mc,
                samples.ncols()
            )));
        }
        Ok(LearnedArchive { samples, metadata })
    }
}

const MAGIC: &[u8; 8] = b"PLOMDAT1";

/// Binary matrix file: magic, `u64` rows, `u64` cols, then little-endian `f64` column-major.
pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| PlomError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| PlomError::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.ncols() as u64).to_le_bytes()).map_err(io)?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(PlomError::MissingInput(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| PlomError::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| PlomError::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(PlomError::Format { row: 0, col: 0, msg: "bad magic header".into() });
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word).map_err(io)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(io)?;
    let cols = u64::from_le_bytes(word) as usize;
    let len = rows.checked_mul(cols).ok_or_else(|| PlomError::Format {
        row: 0,
        col: 0,
        msg: "dimension prefix overflows".into(),
    })?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != len * 8 {
        return Err(PlomError::Consistency(format!(
            "{rows}x{cols} matrix needs {} payload bytes, found {}",
            len * 8,
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(DMatrix::from_vec(rows, cols, data))
}

/// `learned.bin` -> `learned.meta.json`.
pub fn metadata_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn save_learned(archive: &LearnedArchive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_matrix(path, &archive.samples)?;
    let meta_path = metadata_path(path);
    let json = serde_json::to_string_pretty(&archive.metadata)
        .map_err(|e| PlomError::Json { path: meta_path.clone(), source: e })?;
    std::fs::write(&meta_path, json).map_err(|e| PlomError::io(&meta_path, e))
}

pub fn load_learned(path: impl AsRef<Path>) -> Result<LearnedArchive> {
    let path = path.as_ref();
    let samples = read_matrix(path)?;
    let meta_path = metadata_path(path);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| PlomError::io(&meta_path, e))?;
    let metadata: ArchiveMetadata =
        serde_json::from_str(&text).map_err(|e| PlomError::Schema(format!("{}: {e}", meta_path.display())))?;
    LearnedArchive::new(samples, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn identity_csv_loads_as_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("id.csv");
        std::fs::write(&path, "1,0\n0,1\n").unwrap();
        let d = load_dataset(&path, Layout::RowsAreSamples).unwrap();
        assert_eq!(d.points(), &DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn rows_layout_transposes_into_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "a,b,c\n1,2,3\n4,5,6\n").unwrap();
        let d = load_dataset(&path, Layout::RowsAreSamples).unwrap();
        assert_eq!((d.n(), d.n_samples()), (3, 2));
        assert_eq!(d.points()[(2, 1)], 6.0);
        assert_eq!(d.feature_names().unwrap(), ["a", "b", "c"]);
        let c = load_dataset(&path, Layout::ColumnsAreSamples).unwrap();
        assert_eq!((c.n(), c.n_samples()), (2, 3));
    }

    #[test]
    fn wide_file_gives_expected_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.csv");
        let mut text = String::new();
        for i in 0..200 {
            let row: Vec<String> = (0..220).map(|j| format!("{}", (i * 220 + j) as f64 * 0.5)).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        std::fs::write(&path, text).unwrap();
        let d = load_dataset(&path, Layout::RowsAreSamples).unwrap();
        assert_eq!((d.n(), d.n_samples()), (220, 200));
    }

    #[test]
    fn duplicate_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.csv");
        std::fs::write(&path, "1,2\n3,4\n1,2\n").unwrap();
        let err = load_dataset(&path, Layout::RowsAreSamples).unwrap_err();
        assert!(matches!(err, PlomError::DuplicatePoint { first: 0, second: 2 }), "{err}");
    }

    #[test]
    fn parse_failure_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2\n3,x\n").unwrap();
        match load_dataset(&path, Layout::RowsAreSamples).unwrap_err() {
            PlomError::Format { row, col, .. } => assert_eq!((row, col), (2, 2)),
            other => panic!("unexpected {other}"),
        }
        std::fs::write(&path, "1,2\n3\n").unwrap();
        assert!(matches!(
            load_dataset(&path, Layout::RowsAreSamples).unwrap_err(),
            PlomError::Format { row: 2, .. }
        ));
    }

    #[test]
    fn non_finite_entries_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        std::fs::write(&path, "1,2\n3,NaN\n").unwrap();
        let err = load_dataset(&path, Layout::RowsAreSamples).unwrap_err();
        assert!(matches!(err, PlomError::NonFinite { feature: 1, sample: 1 }), "{err}");
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_dataset("/nonexistent/data.csv", Layout::RowsAreSamples).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/data.csv"));
    }

    #[test]
    fn joint_assembly_concatenates_blocks() {
        let q = mat(200, 200, &(0..40_000).map(|v| v as f64).collect::<Vec<_>>());
        let w = mat(20, 200, &(0..4_000).map(|v| -(v as f64)).collect::<Vec<_>>());
        assert_eq!(assemble_joint(&q, &w).unwrap().n(), 220);

        let w = mat(3, 5, &(0..15).map(|v| v as f64).collect::<Vec<_>>());
        let joint = assemble_joint(&DMatrix::zeros(0, 5), &w).unwrap();
        assert_eq!(joint.points(), &w);

        let joint = assemble_joint(&mat(2, 1, &[1.0, 2.0]), &mat(1, 1, &[3.0])).unwrap();
        assert_eq!(joint.points().as_slice(), &[1.0, 2.0, 3.0]);

        let err = assemble_joint(&mat(1, 2, &[1.0, 2.0]), &mat(1, 3, &[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, PlomError::Shape(_)));
    }

    #[test]
    fn min_max_maps_midpoint_and_flags_constants() {
        let raw = RawDataset::new(mat(2, 3, &[2.0, 3.0, 4.0, 7.0, 7.0, 7.0]), None).unwrap();
        let spec = ScalingSpec::fit(&raw, ScalingMode::MinMax);
        let scaled = spec.apply(raw.points()).unwrap();
        assert_eq!(scaled[(0, 1)], 0.5);
        assert_eq!((spec.shift[1], spec.scale[1], spec.constant[1]), (7.0, 1.0, true));
        assert_eq!(scaled[(1, 2)], 0.0);
        assert!(scaled.row(0).iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn standardization_gives_unit_sample_variance() {
        let raw = RawDataset::new(mat(1, 4, &[1.0, 2.0, 4.0, 9.0]), None).unwrap();
        let spec = ScalingSpec::fit(&raw, ScalingMode::Standardize);
        let s = spec.apply(raw.points()).unwrap();
        let mean = s.row(0).sum() / 4.0;
        let var = s.row(0).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-15 && (var - 1.0).abs() < 1e-14);
    }

    #[test]
    fn learned_archive_round_trip_and_schema_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("learned.bin");
        let samples = DMatrix::from_fn(3, 100, |i, j| (i as f64 + 1.0).sqrt() * j as f64 - 0.1);
        let metadata = ArchiveMetadata {
            n_samples: 20,
            nu: 2,
            m: 4,
            eps_dm: 3.5,
            kappa: 1,
            f0: 1.5,
            dr: 0.1,
            seed: 42,
            n_mc: 100,
        };
        let archive = LearnedArchive::new(samples, metadata).unwrap();
        save_learned(&archive, &path).unwrap();
        assert_eq!(load_learned(&path).unwrap(), archive);

        let meta_path = dir.path().join("learned.meta.json");
        let mut value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&meta_path).unwrap()).unwrap();
        value.as_object_mut().unwrap().remove("seed");
        std::fs::write(&meta_path, value.to_string()).unwrap();
        assert!(matches!(load_learned(&path).unwrap_err(), PlomError::Schema(_)));
    }

    #[test]
    fn declared_count_must_match_columns() {
        let metadata = ArchiveMetadata {
            n_samples: 200,
            nu: 9,
            m: 10,
            eps_dm: 60.0,
            kappa: 1,
            f0: 1.5,
            dr: 0.1,
            seed: 1,
            n_mc: 320_000,
        };
        let err = LearnedArchive::new(DMatrix::zeros(3, 10), metadata).unwrap_err();
        assert!(matches!(err, PlomError::Consistency(_)));
    }

    #[test]
    fn csv_and_binary_round_trips_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = RawDataset::new(
            DMatrix::from_fn(4, 7, |i, j| ((i * 7 + j) as f64).sin() * 1e3 / 7.0),
            None,
        )
        .unwrap();
        let csv_path = dir.path().join("d.csv");
        save_dataset(&data, &csv_path, Layout::RowsAreSamples).unwrap();
        let back = load_dataset(&csv_path, Layout::RowsAreSamples).unwrap();
        assert_eq!(back.points(), data.points());

        let bin_path = dir.path().join("d.bin");
        write_matrix(&bin_path, data.points()).unwrap();
        let back = read_matrix(&bin_path).unwrap();
        assert_eq!(back.as_slice(), data.points().as_slice());
        let bytes = std::fs::read(&bin_path).unwrap();
        assert_eq!(&bytes[..8], b"PLOMDAT1");
        assert_eq!(bytes.len(), 24 + 8 * 28);
    }

    proptest! {
        #[test]
        fn scaling_round_trip_is_identity(
            values in proptest::collection::vec(-1e6f64..1e6, 50),
            standardize in any::<bool>(),
        ) {
            let x = DMatrix::from_vec(5, 10, values);
            prop_assume!(RawDataset::new(x.clone(), None).is_ok());
            let raw = RawDataset::new(x.clone(), None).unwrap();
            let mode = if standardize { ScalingMode::Standardize } else { ScalingMode::MinMax };
            let spec = ScalingSpec::fit(&raw, mode);
            let back = spec.invert(&spec.apply(&x).unwrap()).unwrap();
            for (a, b) in back.iter().zip(x.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn split_undoes_assembly(nq in 0usize..4, nw in 1usize..4, n in 1usize..6, seed in any::<u32>()) {
            let q = DMatrix::from_fn(nq, n, |i, j| (seed as f64) + (i * 31 + j) as f64);
            let w = DMatrix::from_fn(nw, n, |i, j| -(seed as f64) - (i * 17 + j * 3) as f64 * 0.5);
            let joint = assemble_joint(&q, &w).unwrap();
            let (q2, w2) = split_joint(&joint, nq).unwrap();
            prop_assert_eq!(q2, q);
            prop_assert_eq!(w2, w);
        }
    }
}
