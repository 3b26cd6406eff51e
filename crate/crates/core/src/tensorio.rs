//! File formats: EMB1 embedding matrices, CSV matrices, score tables and
//! dataset manifests.
//!
//! EMB1 layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMB1" (0x45 0x4D 0x42 0x31)
//! 4       4     u32 row count
//! 8       4     u32 column count
//! 12      1     dtype tag (1 = f32, 2 = f64)
//! 13      ...   row-major payload
//! ```
//!
//! Values are always widened to `f64` in memory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
pub const EMB1_HEADER_LEN: usize = 13;

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes at offset 0: expected \"EMB1\", found {found:02x?}")]
    BadMagic { found: Vec<u8> },
    #[error("truncated file: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("unknown dtype tag {tag} at offset 12")]
    UnknownDtype { tag: u8 },
    #[error("trailing data: payload ends at offset {expected}, file has {len} bytes")]
    TrailingBytes { expected: usize, len: usize },
    #[error("non-finite value {value} at row {row}, column {col} (byte offset {offset})")]
    NonFiniteBinary { row: usize, col: usize, offset: usize, value: f64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyShape { rows: usize, cols: usize },
    #[error("shape {rows}x{cols} does not fit the EMB1 u32 header")]
    ShapeOverflow { rows: usize, cols: usize },
    #[error("line {line}: expected {expected} columns, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("line {line}, column {col}: cannot parse {cell:?} as a number")]
    BadCell { line: usize, col: usize, cell: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("score table: missing column {0:?}")]
    MissingColumn(&'static str),
    #[error("score table line {line}: {field} = {value} is outside [0, 1]")]
    ScoreOutOfRange { line: usize, field: &'static str, value: f64 },
    #[error("score table line {line}: invalid split {value:?} (expected train or test)")]
    BadSplit { line: usize, value: String },
    #[error("score table line {line}: duplicate key ({dataset}, {model}, {split})")]
    DuplicateKey { line: usize, dataset: String, model: String, split: Split },
    #[error("row-count mismatch: source has {source_rows} rows, target has {target_rows}")]
    RowCountMismatch { source_rows: usize, target_rows: usize },
    #[error("dimension mismatch: source has {source_cols} columns, target has {target_cols}")]
    DimensionMismatch { source_cols: usize, target_cols: usize },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TensorIoError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Dense `n x d` matrix of row embeddings.
///
/// Values are held as `f64`. A matrix tagged [`Dtype::F32`] is narrowed to
/// `f32` when written, which is lossless for anything that was read from an
/// f32 file.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    values: Array2<f64>,
    dtype: Dtype,
    label: String,
}

impl EmbeddingMatrix {
    pub fn new(values: Array2<f64>, dtype: Dtype, label: impl Into<String>) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows == 0 || cols == 0 {
            return Err(TensorIoError::EmptyShape { rows, cols });
        }
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(TensorIoError::NonFinite { row, col });
        }
        Ok(Self { values, dtype, label: label.into() })
    }

    /// f64 matrix from row-major values.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(TensorIoError::EmptyShape { rows, cols });
        }
        let values = Array2::from_shape_vec((rows, cols), data)
            .map_err(|_| TensorIoError::EmptyShape { rows, cols })?;
        Self::new(values, Dtype::F64, "")
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_dtype(mut self, dtype: Dtype) -> Self {
        self.dtype = dtype;
        self
    }
}

/// Encode a matrix into EMB1 bytes.
pub fn encode_emb1(matrix: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let (rows, cols) = (matrix.rows(), matrix.cols());
    let (r32, c32) = match (u32::try_from(rows), u32::try_from(cols)) {
        (Ok(r), Ok(c)) => (r, c),
        _ => return Err(TensorIoError::ShapeOverflow { rows, cols }),
    };
    let dtype = matrix.dtype();
    let mut out = Vec::with_capacity(EMB1_HEADER_LEN + rows * cols * dtype.width());
    out.extend_from_slice(&EMB1_MAGIC);
    out.extend_from_slice(&r32.to_le_bytes());
    out.extend_from_slice(&c32.to_le_bytes());
    out.push(dtype.tag());
    for &v in matrix.values().iter() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

/// Decode EMB1 bytes. Errors carry the byte offset of the offending field.
pub fn decode_emb1(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let len = bytes.len();
    if len < 4 {
        return Err(TensorIoError::Truncated { offset: 0, needed: 4, len });
    }
    if bytes[..4] != EMB1_MAGIC {
        return Err(TensorIoError::BadMagic { found: bytes[..4].to_vec() });
    }
    if len < EMB1_HEADER_LEN {
        return Err(TensorIoError::Truncated { offset: len, needed: EMB1_HEADER_LEN, len });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let dtype = Dtype::from_tag(bytes[12]).ok_or(TensorIoError::UnknownDtype { tag: bytes[12] })?;
    if rows == 0 || cols == 0 {
        return Err(TensorIoError::EmptyShape { rows, cols });
    }
    let width = dtype.width();
    let payload = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(width))
        .ok_or(TensorIoError::ShapeOverflow { rows, cols })?;
    let expected = EMB1_HEADER_LEN + payload;
    if len < expected {
        return Err(TensorIoError::Truncated { offset: EMB1_HEADER_LEN, needed: payload, len });
    }
    if len > expected {
        return Err(TensorIoError::TrailingBytes { expected, len });
    }

    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes[EMB1_HEADER_LEN..].chunks_exact(width).enumerate() {
        let v = match dtype {
            Dtype::F32 => f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64,
            Dtype::F64 => f64::from_le_bytes(chunk.try_into().expect("8 bytes")),
        };
        if !v.is_finite() {
            return Err(TensorIoError::NonFiniteBinary {
                row: i / cols,
                col: i % cols,
                offset: EMB1_HEADER_LEN + i * width,
                value: v,
            });
        }
        data.push(v);
    }
    let values = Array2::from_shape_vec((rows, cols), data).expect("length checked above");
    Ok(EmbeddingMatrix { values, dtype, label: String::new() })
}

pub fn read_emb1(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TensorIoError::Io { path: path.into(), source })?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(decode_emb1(&bytes)?.with_label(label))
}

pub fn write_emb1(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_emb1(matrix)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Write via a temporary file in the destination directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| TensorIoError::Io { path: path.into(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.flush().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Parse a header-less rectangular CSV of decimal numbers.
pub fn parse_csv_matrix(text: &str) -> Result<EmbeddingMatrix> {
    let mut data = Vec::new();
    let mut cols = 0usize;
    let mut rows = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if rows == 0 {
            cols = cells.len();
        } else if cells.len() != cols {
            return Err(TensorIoError::RaggedRow { line: line_no, expected: cols, found: cells.len() });
        }
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| TensorIoError::BadCell {
                line: line_no,
                col: c + 1,
                cell: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(TensorIoError::NonFinite { row: rows, col: c });
            }
            data.push(v);
        }
        rows += 1;
    }
    EmbeddingMatrix::from_rows(rows, cols, data)
}

pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|source| TensorIoError::Io { path: path.into(), source })?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(parse_csv_matrix(&text)?.with_label(label))
}

/// CSV text with 17 significant digits per value, enough to round-trip f64.
pub fn format_csv_matrix(matrix: &EmbeddingMatrix) -> String {
    let mut out = String::new();
    for row in matrix.values().rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv_matrix(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), format_csv_matrix(matrix).as_bytes())
}

/// Read either format, dispatching on the `.csv` extension.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_csv_matrix(path),
        _ => read_emb1(path),
    }
}

/// Real samples paired row-by-row with their synthetic counterparts.
#[derive(Clone, Debug)]
pub struct PairBatch {
    source: EmbeddingMatrix,
    target: EmbeddingMatrix,
}

impl PairBatch {
    pub fn source(&self) -> &EmbeddingMatrix {
        &self.source
    }

    pub fn target(&self) -> &EmbeddingMatrix {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.source.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.source.cols()
    }
}

pub fn validate_pairing(source: EmbeddingMatrix, target: EmbeddingMatrix) -> Result<PairBatch> {
    if source.rows() != target.rows() {
        return Err(TensorIoError::RowCountMismatch {
            source_rows: source.rows(),
            target_rows: target.rows(),
        });
    }
    if source.cols() != target.cols() {
        return Err(TensorIoError::DimensionMismatch {
            source_cols: source.cols(),
            target_cols: target.cols(),
        });
    }
    Ok(PairBatch { source, target })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub dataset: String,
    pub model: String,
    pub split: Split,
    pub accuracy: f64,
    pub f1: f64,
}

/// Downstream classifier scores, unique per (dataset, model, split).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    records: Vec<ScoreRecord>,
}

impl ScoreTable {
    pub fn new(records: Vec<ScoreRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            let line = i + 2;
            for (field, value) in [("accuracy", r.accuracy), ("f1", r.f1)] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(TensorIoError::ScoreOutOfRange { line, field, value });
                }
            }
            if !seen.insert((r.dataset.clone(), r.model.clone(), r.split)) {
                return Err(TensorIoError::DuplicateKey {
                    line,
                    dataset: r.dataset.clone(),
                    model: r.model.clone(),
                    split: r.split,
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn test_records(&self) -> impl Iterator<Item = &ScoreRecord> {
        self.records.iter().filter(|r| r.split == Split::Test)
    }
}

pub const SCORE_COLUMNS: [&str; 5] = ["dataset", "model", "split", "accuracy", "f1"];

pub fn parse_scores(text: &str) -> Result<ScoreTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut index = [0usize; 5];
    for (slot, name) in index.iter_mut().zip(SCORE_COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or(TensorIoError::MissingColumn(name))?;
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let cell = |k: usize| row.get(index[k]).unwrap_or("");
        let split = match cell(2) {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(TensorIoError::BadSplit { line, value: other.to_string() }),
        };
        let number = |k: usize| -> Result<f64> {
            let s = cell(k);
            s.parse::<f64>().map_err(|_| TensorIoError::BadCell {
                line,
                col: index[k] + 1,
                cell: s.to_string(),
            })
        };
        records.push(ScoreRecord {
            dataset: cell(0).to_string(),
            model: cell(1).to_string(),
            split,
            accuracy: number(3)?,
            f1: number(4)?,
        });
    }
    ScoreTable::new(records)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|source| TensorIoError::Io { path: path.into(), source })?;
    parse_scores(&text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    RealPos,
    RealNeg,
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub embedding_model: String,
    pub roles: BTreeMap<Role, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl DatasetManifest {
    pub fn validate(&self, probe_requested: bool) -> Result<()> {
        let has = |r: Role| self.roles.contains_key(&r);
        if has(Role::Source) != has(Role::Target) {
            return Err(TensorIoError::Manifest(
                "roles source and target must be both present or both absent".into(),
            ));
        }
        if probe_requested && !(has(Role::RealPos) && has(Role::RealNeg)) {
            return Err(TensorIoError::Manifest(
                "probe training needs both real_pos and real_neg".into(),
            ));
        }
        Ok(())
    }

    /// Role path, resolved against `base` when relative.
    pub fn path(&self, role: Role, base: &Path) -> Option<PathBuf> {
        self.roles.get(&role).map(|p| if p.is_relative() { base.join(p) } else { p.clone() })
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|source| TensorIoError::Io { path: path.into(), source })?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest.validate(false)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn decodes_f32_payload() {
        let mut bytes = b"EMB1".to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.push(1);
        for v in 1..=6 {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let m = decode_emb1(&bytes).unwrap();
        assert_eq!(m.values(), &array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(m.dtype(), Dtype::F32);
    }

    #[test]
    fn nan_payload_reports_row_zero() {
        let mut bytes = b"EMB1".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.push(2);
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        bytes.extend_from_slice(&f64::NAN.to_le_bytes());
        match decode_emb1(&bytes) {
            Err(TensorIoError::NonFiniteBinary { row: 0, col: 1, offset: 21, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode_emb1(b"EMB2\0\0\0\0"), Err(TensorIoError::BadMagic { .. })));
        let mut bytes = b"EMB1".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(7);
        assert!(matches!(decode_emb1(&bytes), Err(TensorIoError::UnknownDtype { tag: 7 })));
        bytes[12] = 2;
        bytes.extend_from_slice(&[0u8; 5]);
        assert!(matches!(
            decode_emb1(&bytes),
            Err(TensorIoError::Truncated { offset: 13, needed: 8, len: 18 })
        ));
    }

    #[test]
    fn single_value_f32_file_is_17_bytes() {
        let m = EmbeddingMatrix::new(array![[0.0]], Dtype::F32, "").unwrap();
        assert_eq!(encode_emb1(&m).unwrap().len(), 17);
    }

    #[test]
    fn identity_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eye.emb1");
        let m = EmbeddingMatrix::new(array![[1.0, 0.0], [0.0, 1.0]], Dtype::F64, "eye").unwrap();
        write_emb1(&m, &path).unwrap();
        assert_eq!(read_emb1(&path).unwrap(), m);
    }

    #[test]
    fn csv_parsing() {
        let m = parse_csv_matrix("1,2\n3,4").unwrap();
        assert_eq!(m.values(), &array![[1.0, 2.0], [3.0, 4.0]]);
        assert!(matches!(
            parse_csv_matrix("1,2\n3"),
            Err(TensorIoError::RaggedRow { line: 2, expected: 2, found: 1 })
        ));
        assert!(matches!(
            parse_csv_matrix("1,2\n3,x"),
            Err(TensorIoError::BadCell { line: 2, col: 2, .. })
        ));
    }

    #[test]
    fn scores_parse_and_validate() {
        let t = parse_scores(
            "dataset,model,split,accuracy,f1\npneumonia,resnet18,test,0.6490,0.6392\n",
        )
        .unwrap();
        assert_eq!(t.records()[0].f1, 0.6392);
        assert_eq!(t.records()[0].split, Split::Test);

        let bad = parse_scores("dataset,model,split,accuracy,f1\na,m,test,0.5,1.2\n");
        assert!(matches!(bad, Err(TensorIoError::ScoreOutOfRange { field: "f1", .. })));

        let dup = parse_scores(
            "dataset,model,split,accuracy,f1\na,m,test,0.5,0.5\na,m,test,0.6,0.6\n",
        );
        assert!(matches!(dup, Err(TensorIoError::DuplicateKey { line: 3, .. })));

        let missing = parse_scores("dataset,model,split,accuracy\na,m,test,0.5\n");
        assert!(matches!(missing, Err(TensorIoError::MissingColumn("f1"))));
    }

    #[test]
    fn pairing_checks_shapes() {
        let z = |n, d| EmbeddingMatrix::from_rows(n, d, vec![0.0; n * d]).unwrap();
        let p = validate_pairing(z(10, 512), z(10, 512)).unwrap();
        assert_eq!((p.len(), p.dim()), (10, 512));
        assert!(matches!(
            validate_pairing(z(10, 512), z(9, 512)),
            Err(TensorIoError::RowCountMismatch { source_rows: 10, target_rows: 9 })
        ));
        assert!(matches!(
            validate_pairing(z(10, 512), z(10, 384)),
            Err(TensorIoError::DimensionMismatch { source_cols: 512, target_cols: 384 })
        ));
    }

    #[test]
    fn manifest_role_rules() {
        let json = r#"{"dataset_name":"toy","embedding_model":"clip",
            "roles":{"source":"a.emb1","real_pos":"p.emb1"}}"#;
        let m: DatasetManifest = serde_json::from_str(json).unwrap();
        assert!(m.validate(false).is_err());
        let json = r#"{"dataset_name":"toy","embedding_model":"clip",
            "roles":{"source":"a.emb1","target":"b.emb1","real_pos":"p.emb1"}}"#;
        let m: DatasetManifest = serde_json::from_str(json).unwrap();
        assert!(m.validate(false).is_ok());
        assert!(m.validate(true).is_err());
        assert_eq!(m.path(Role::Target, Path::new("/data")).unwrap(), Path::new("/data/b.emb1"));
    }

    fn matrix_strategy() -> impl Strategy<Value = EmbeddingMatrix> {
        (1usize..6, 1usize..6, any::<bool>()).prop_flat_map(|(n, d, single)| {
            let cells = if single {
                proptest::collection::vec(
                    proptest::num::f32::NORMAL | proptest::num::f32::ZERO,
                    n * d,
                )
                .prop_map(|v| v.into_iter().map(f64::from).collect::<Vec<_>>())
                .boxed()
            } else {
                proptest::collection::vec(
                    proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL,
                    n * d,
                )
                .boxed()
            };
            cells.prop_map(move |v| {
                let dtype = if single { Dtype::F32 } else { Dtype::F64 };
                EmbeddingMatrix::new(Array2::from_shape_vec((n, d), v).unwrap(), dtype, "").unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn emb1_round_trip_is_bit_exact(m in matrix_strategy()) {
            let bytes = encode_emb1(&m).unwrap();
            let back = decode_emb1(&bytes).unwrap();
            prop_assert_eq!(back.dtype(), m.dtype());
            for (a, b) in back.values().iter().zip(m.values().iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(encode_emb1(&back).unwrap(), bytes);
        }

        #[test]
        fn csv_round_trip(v in proptest::collection::vec(-1e12f64..1e12, 6)) {
            let m = EmbeddingMatrix::from_rows(2, 3, v).unwrap();
            let back = parse_csv_matrix(&format_csv_matrix(&m)).unwrap();
            prop_assert_eq!(back.values(), m.values());
        }
    }
}
