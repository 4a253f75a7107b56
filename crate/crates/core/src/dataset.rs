//! Item and query vector storage plus file ingestion.
//!
//! Coordinates are stored as 32-bit floats; every dot product and norm is
//! accumulated in 64-bit. Two on-disk formats are supported:
//!
//! - binary: magic `DKMV`, little-endian u32 `n`, little-endian u32 `d`,
//!   then `n * d` little-endian IEEE-754 f32 values, row-major;
//! - csv: one vector per line, comma-separated decimal literals, no header.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::par;

const BINARY_MAGIC: &[u8; 4] = b"DKMV";

/// On-disk vector layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Binary,
    Csv,
}

impl FileFormat {
    /// Sniffs a file: the binary magic wins, anything else is treated as csv.
    pub fn detect(path: &Path) -> Result<FileFormat> {
        let mut magic = [0u8; 4];
        let data = std::fs::read(path).map_err(|e| io_err(path, e))?;
        if data.len() >= 4 {
            magic.copy_from_slice(&data[..4]);
            if &magic == BINARY_MAGIC {
                return Ok(FileFormat::Binary);
            }
        }
        Ok(FileFormat::Csv)
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(FileFormat::Binary),
            "csv" => Ok(FileFormat::Csv),
            other => Err(Error::Parameter(format!("unknown format `{other}`"))),
        }
    }
}

impl fmt::Display for FileFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FileFormat::Binary => write!(f, "binary"),
            FileFormat::Csv => write!(f, "csv"),
        }
    }
}

/// An immutable set of n d-dimensional item vectors with precomputed norms.
///
/// Safe to share across any number of concurrent query workers.
#[derive(Debug, Clone)]
pub struct ItemMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
    norms: Vec<f64>,
    nonneg_validated: bool,
}

impl ItemMatrix {
    /// Builds a matrix from a flat row-major coordinate array.
    ///
    /// With `validate_nonneg` set (the default everywhere in this crate), any
    /// negative coordinate is rejected; disabling it also voids the BC-Tree
    /// pruning guarantees for the diversity term.
    pub fn from_flat(n: usize, d: usize, data: Vec<f32>, validate_nonneg: bool) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Parameter(format!(
                "item matrix must be non-empty (n={n}, d={d})"
            )));
        }
        if data.len() != n * d {
            return Err(Error::Parameter(format!(
                "coordinate array has {} entries, expected n*d = {}",
                data.len(),
                n * d
            )));
        }
        if validate_nonneg {
            for (idx, &v) in data.iter().enumerate() {
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::Parameter(format!(
                        "negative or non-finite coordinate {v} at item {}, column {}",
                        idx / d,
                        idx % d
                    )));
                }
            }
        }
        let norms = par::map_collect(n, |i| l2_norm(&data[i * d..(i + 1) * d]));
        Ok(ItemMatrix {
            n,
            d,
            data,
            norms,
            nonneg_validated: validate_nonneg,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], validate_nonneg: bool) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(n, d, data, validate_nonneg)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Precomputed l2-norm of row `i`.
    #[inline]
    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    /// Whether coordinates were checked to be non-negative at load time.
    pub fn is_nonneg_validated(&self) -> bool {
        self.nonneg_validated
    }

    /// Inner product between two stored rows, accumulated in 64-bit.
    #[inline]
    pub fn pair_ip(&self, i: usize, j: usize) -> f64 {
        dot(self.row(i), self.row(j))
    }

    /// Inner product between row `i` and a query.
    #[inline]
    pub fn query_ip(&self, i: usize, q: &QueryVector) -> f64 {
        dot(self.row(i), q.coords())
    }

    /// Loads items from a vector file, computing norms eagerly.
    pub fn load(path: &Path, format: FileFormat, validate_nonneg: bool) -> Result<Self> {
        let (n, d, data) = read_vectors(path, format)?;
        Self::from_flat(n, d, data, validate_nonneg).map_err(|e| match e {
            Error::Parameter(reason) => Error::Load {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    /// Writes the matrix in the given format; binary round-trips bit-exactly.
    pub fn write(&self, path: &Path, format: FileFormat) -> Result<()> {
        write_vectors(path, format, self.n, self.d, &self.data)
    }
}

/// A query vector with its precomputed l2-norm.
///
/// Queries, unlike items, may carry negative coordinates: only the item side
/// of the pruning bounds requires non-negativity.
#[derive(Debug, Clone)]
pub struct QueryVector {
    coords: Vec<f32>,
    norm: f64,
}

impl QueryVector {
    pub fn new(coords: Vec<f32>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Parameter("query vector must be non-empty".into()));
        }
        if let Some(v) = coords.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite query coordinate {v}")));
        }
        let norm = l2_norm(&coords);
        Ok(QueryVector { coords, norm })
    }

    pub fn d(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn coords(&self) -> &[f32] {
        &self.coords
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Checks this query against the dimensionality of an item matrix.
    pub fn check_dim(&self, items: &ItemMatrix) -> Result<()> {
        if self.d() != items.d() {
            return Err(Error::Dimension {
                expected: items.d(),
                got: self.d(),
            });
        }
        Ok(())
    }
}

/// Loads a query file in file order.
pub fn load_queries(path: &Path, format: FileFormat) -> Result<Vec<QueryVector>> {
    let (n, d, data) = read_vectors(path, format)?;
    (0..n)
        .map(|i| QueryVector::new(data[i * d..(i + 1) * d].to_vec()))
        .collect()
}

/// Inner product of two equal-length vectors, accumulated in 64-bit.
pub fn inner_product(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(dot(a, b))
}

/// Unchecked hot-path dot product; callers guarantee equal lengths.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        acc += x as f64 * y as f64;
    }
    acc
}

/// Dot product between an f64 vector (e.g. a tree center) and f32 coords.
#[inline]
pub(crate) fn dot_f64_f32(a: &[f64], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        acc += x * y as f64;
    }
    acc
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Reads a raw vector file into (n, d, row-major coordinates).
pub fn read_vectors(path: &Path, format: FileFormat) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.is_empty() {
        return Err(load_err(path, "file is empty"));
    }
    match format {
        FileFormat::Binary => parse_binary(path, &bytes),
        FileFormat::Csv => parse_csv(path, &bytes),
    }
}

/// Writes a raw vector array in the given format.
pub fn write_vectors(
    path: &Path,
    format: FileFormat,
    n: usize,
    d: usize,
    data: &[f32],
) -> Result<()> {
    assert_eq!(data.len(), n * d, "row-major array must be n*d");
    let mut out: Vec<u8> = Vec::with_capacity(16 + data.len() * 4);
    match format {
        FileFormat::Binary => {
            let n32 = u32::try_from(n)
                .map_err(|_| Error::Parameter(format!("n={n} exceeds the binary format limit")))?;
            let d32 = u32::try_from(d)
                .map_err(|_| Error::Parameter(format!("d={d} exceeds the binary format limit")))?;
            out.extend_from_slice(BINARY_MAGIC);
            out.extend_from_slice(&n32.to_le_bytes());
            out.extend_from_slice(&d32.to_le_bytes());
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        FileFormat::Csv => {
            // `{}` on f32 prints the shortest decimal that parses back to the
            // same bits, so csv round-trips exactly too.
            for row in data.chunks(d) {
                let mut line = String::new();
                for (j, v) in row.iter().enumerate() {
                    if j > 0 {
                        line.push(',');
                    }
                    line.push_str(&format!("{v}"));
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&out).map_err(|e| io_err(path, e))?;
    Ok(())
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 12 {
        return Err(load_err(path, "binary header truncated (needs 12 bytes)"));
    }
    if &bytes[..4] != BINARY_MAGIC {
        return Err(load_err(path, "missing DKMV magic bytes"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(load_err(path, &format!("degenerate shape n={n}, d={d}")));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .ok_or_else(|| load_err(path, "n*d overflows"))?;
    let body = &bytes[12..];
    if body.len() != expected {
        return Err(load_err(
            path,
            &format!(
                "payload holds {} bytes, header n={n} d={d} implies {expected}",
                body.len()
            ),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n, d, data))
}

fn parse_csv(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let text = std::str::from_utf8(bytes).map_err(|_| load_err(path, "file is not UTF-8 text"))?;
    let mut data = Vec::new();
    let mut d = 0usize;
    let mut n = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut width = 0usize;
        for field in line.split(',') {
            let v: f32 = field.trim().parse().map_err(|_| {
                load_err(
                    path,
                    &format!("row {}: cannot parse `{}` as a number", lineno + 1, field),
                )
            })?;
            data.push(v);
            width += 1;
        }
        if n == 0 {
            d = width;
        } else if width != d {
            return Err(load_err(
                path,
                &format!("row {}: has {width} columns, expected {d}", lineno + 1),
            ));
        }
        n += 1;
    }
    if n == 0 {
        return Err(load_err(path, "no vectors found"));
    }
    Ok((n, d, data))
}

fn load_err(path: &Path, reason: &str) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
