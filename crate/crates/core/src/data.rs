//! Dataset ingestion: IDX image files, delimited text, and the crate's
//! canonical binary container.
//!
//! Every loader lands in [`DatasetSplit`], a row-per-example matrix of
//! {0,1} bytes with optional integer labels. The canonical on-disk form
//! is documented byte-exactly in `docs/FORMATS.md`.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

const DATA_MAGIC: &[u8; 8] = b"SBMDATA\0";
const DATA_VERSION: u16 = 1;
const FLAG_LABELS: u16 = 1;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A named split of binary examples, one example per row.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    examples: Array2<u8>,
    labels: Option<Vec<u32>>,
    name: String,
    split_tag: String,
}

impl DatasetSplit {
    pub fn new(
        examples: Array2<u8>,
        labels: Option<Vec<u32>>,
        name: &str,
        split_tag: &str,
    ) -> Result<Self> {
        if examples.iter().any(|&x| x > 1) {
            return Err(Error::Domain("dataset entries must be 0 or 1".into()));
        }
        if let Some(ls) = &labels {
            if ls.len() != examples.nrows() {
                return Err(Error::Shape(format!(
                    "{} labels for {} examples",
                    ls.len(),
                    examples.nrows()
                )));
            }
        }
        Ok(DatasetSplit {
            examples,
            labels,
            name: name.to_string(),
            split_tag: split_tag.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixels per example.
    pub fn width(&self) -> usize {
        self.examples.ncols()
    }

    pub fn examples(&self) -> &Array2<u8> {
        &self.examples
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split_tag(&self) -> &str {
        &self.split_tag
    }

    pub fn set_split_tag(&mut self, tag: &str) {
        self.split_tag = tag.to_string();
    }

    pub fn row_f64(&self, i: usize) -> Array1<f64> {
        self.examples.row(i).mapv(|x| x as f64)
    }

    /// Contiguous rows as a float matrix.
    pub fn rows_f64(&self, range: Range<usize>) -> Array2<f64> {
        self.examples.slice(ndarray::s![range, ..]).mapv(|x| x as f64)
    }

    /// Arbitrary rows (e.g. a shuffled minibatch) as a float matrix.
    pub fn gather_f64(&self, rows: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), self.width()));
        for (r, &i) in rows.iter().enumerate() {
            for (c, &x) in self.examples.row(i).iter().enumerate() {
                out[[r, c]] = x as f64;
            }
        }
        out
    }

    /// First `n` rows as a new split (labels carried along).
    pub fn head(&self, n: usize) -> DatasetSplit {
        let n = n.min(self.len());
        DatasetSplit {
            examples: self.examples.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels.as_ref().map(|ls| ls[..n].to_vec()),
            name: self.name.clone(),
            split_tag: self.split_tag.clone(),
        }
    }

    /// Rows `range` as a new split.
    pub fn slice(&self, range: Range<usize>) -> DatasetSplit {
        DatasetSplit {
            examples: self.examples.slice(ndarray::s![range.clone(), ..]).to_owned(),
            labels: self.labels.as_ref().map(|ls| ls[range].to_vec()),
            name: self.name.clone(),
            split_tag: self.split_tag.clone(),
        }
    }

    /// Start row of the deterministic last-5% validation carve-out.
    /// Splits with fewer than 20 rows carve out nothing.
    pub fn validation_start(&self) -> usize {
        self.len() - self.len() / 20
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format {
            path: path.display().to_string(),
            detail: format!("expected at least {} bytes, found {}", end, bytes.len()),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Binarizes raw pixel bytes. Already-binary input (all values ≤ 1) is
/// passed through unchanged; anything else thresholds at half of the
/// byte range (`≥ 128 → 1`).
fn binarize(bytes: &[u8]) -> Vec<u8> {
    if bytes.iter().all(|&x| x <= 1) {
        bytes.to_vec()
    } else {
        bytes.iter().map(|&x| (x >= 128) as u8).collect()
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads an IDX image file (big-endian, magic `0x00000803`) and, when
/// given, the matching IDX label file (magic `0x00000801`). Grayscale
/// pixels are binarized.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<DatasetSplit> {
    let bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let magic = read_u32_be(&bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: images_path.display().to_string(),
            detail: format!("bad image magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        });
    }
    let count = read_u32_be(&bytes, 4, images_path)? as usize;
    let rows = read_u32_be(&bytes, 8, images_path)? as usize;
    let cols = read_u32_be(&bytes, 12, images_path)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: images_path.display().to_string(),
            detail: format!("expected {expected} bytes for {count} {rows}x{cols} images, found {}", bytes.len()),
        });
    }
    let pixels = binarize(&bytes[16..]);
    let examples = Array2::from_shape_vec((count, rows * cols), pixels)
        .expect("shape checked against byte count");

    let labels = match labels_path {
        None => None,
        Some(lp) => {
            let lbytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
            let lmagic = read_u32_be(&lbytes, 0, lp)?;
            if lmagic != IDX_LABELS_MAGIC {
                return Err(Error::Format {
                    path: lp.display().to_string(),
                    detail: format!("bad label magic 0x{lmagic:08x} at offset 0, expected 0x{IDX_LABELS_MAGIC:08x}"),
                });
            }
            let lcount = read_u32_be(&lbytes, 4, lp)? as usize;
            if lbytes.len() != 8 + lcount {
                return Err(Error::Format {
                    path: lp.display().to_string(),
                    detail: format!("expected {} bytes for {lcount} labels, found {}", 8 + lcount, lbytes.len()),
                });
            }
            if lcount != count {
                return Err(Error::Format {
                    path: lp.display().to_string(),
                    detail: format!("{lcount} labels against {count} images"),
                });
            }
            Some(lbytes[8..].iter().map(|&b| b as u32).collect())
        }
    };

    DatasetSplit::new(examples, labels, &file_stem(images_path), "")
}

/// Loads whitespace- or comma-delimited text: one example per line,
/// `width·height` binary fields, plus one trailing integer label field
/// when `has_label` is set.
pub fn load_delimited(
    path: &Path,
    width: usize,
    height: usize,
    has_label: bool,
) -> Result<DatasetSplit> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let pixels_per_row = width * height;
    if pixels_per_row == 0 {
        return Err(Error::Domain("width and height must be positive".into()));
    }
    let mut data = Vec::new();
    let mut labels = if has_label { Some(Vec::new()) } else { None };
    let mut n_rows = 0usize;

    for (line_no, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> =
            trimmed.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty()).collect();
        let expected = pixels_per_row + has_label as usize;
        if fields.len() != expected {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: format!("line {}: expected {expected} fields, found {}", line_no + 1, fields.len()),
            });
        }
        for (col, f) in fields[..pixels_per_row].iter().enumerate() {
            match *f {
                "0" => data.push(0u8),
                "1" => data.push(1u8),
                other => {
                    return Err(Error::Domain(format!(
                        "non-binary field {other:?} at line {}, column {}",
                        line_no + 1,
                        col + 1
                    )))
                }
            }
        }
        if let Some(ls) = labels.as_mut() {
            let f = fields[pixels_per_row];
            let v: u32 = f.parse().map_err(|_| {
                Error::Domain(format!("bad label {f:?} at line {}", line_no + 1))
            })?;
            ls.push(v);
        }
        n_rows += 1;
    }
    let examples = Array2::from_shape_vec((n_rows, pixels_per_row), data)
        .expect("row count tracked during parse");
    DatasetSplit::new(examples, labels, &file_stem(path), "")
}

/// Per-pixel mean of the split, in [0, 1] per coordinate.
pub fn pixel_marginals(split: &DatasetSplit) -> Result<Array1<f64>> {
    if split.is_empty() {
        return Err(Error::Usage("pixel marginals of an empty split".into()));
    }
    let n = split.len() as f64;
    let mut sums = Array1::<f64>::zeros(split.width());
    for row in split.examples.rows() {
        for (acc, &x) in sums.iter_mut().zip(row.iter()) {
            *acc += x as f64;
        }
    }
    Ok(sums / n)
}

/// Writes the canonical container: 16-byte header (magic, version,
/// flags, reserved), u64 rows/width, bit-packed rows (LSB-first within
/// each byte, each row padded to a whole byte), then u32 labels if any.
pub fn save_canonical(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&DATA_VERSION.to_le_bytes());
    let flags = if split.labels.is_some() { FLAG_LABELS } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(split.len() as u64).to_le_bytes());
    out.extend_from_slice(&(split.width() as u64).to_le_bytes());

    let row_bytes = split.width().div_ceil(8);
    for row in split.examples.rows() {
        let mut packed = vec![0u8; row_bytes];
        for (i, &bit) in row.iter().enumerate() {
            packed[i / 8] |= bit << (i % 8);
        }
        out.extend_from_slice(&packed);
    }
    if let Some(ls) = &split.labels {
        for &l in ls {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a file written by [`save_canonical`].
pub fn load_canonical(path: &Path) -> Result<DatasetSplit> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |detail: String| Error::Format { path: path.display().to_string(), detail };
    if bytes.len() < 32 {
        return Err(fail(format!("file too short: {} bytes", bytes.len())));
    }
    if &bytes[0..8] != DATA_MAGIC {
        return Err(fail("bad magic at offset 0".into()));
    }
    let version = u16::from_le_bytes(bytes[8..10].try_into().unwrap());
    if version != DATA_VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let flags = u16::from_le_bytes(bytes[10..12].try_into().unwrap());
    let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let width = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    let row_bytes = width.div_ceil(8);
    let has_labels = flags & FLAG_LABELS != 0;
    let expected = 32 + rows * row_bytes + if has_labels { rows * 4 } else { 0 };
    if bytes.len() != expected {
        return Err(fail(format!("expected {expected} bytes, found {}", bytes.len())));
    }

    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        let base = 32 + r * row_bytes;
        for i in 0..width {
            data.push((bytes[base + i / 8] >> (i % 8)) & 1);
        }
    }
    let labels = if has_labels {
        let base = 32 + rows * row_bytes;
        Some(
            (0..rows)
                .map(|r| u32::from_le_bytes(bytes[base + 4 * r..base + 4 * r + 4].try_into().unwrap()))
                .collect(),
        )
    } else {
        None
    };
    let examples = Array2::from_shape_vec((rows, width), data).expect("sized above");
    DatasetSplit::new(examples, labels, &file_stem(path), "")
}
