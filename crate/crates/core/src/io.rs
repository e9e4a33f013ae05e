//! Matrix file formats.
//!
//! CSV: one matrix row per line, comma-separated decimals, no header.
//!
//! Binary: `b"L1NS"`, version `u32`, rows `u64`, cols `u64`, then
//! `rows * cols` `f64` values in row-major order. All integers and floats are
//! little-endian.
//!
//! Subspace collection: `b"L1NSCOL"`, version `u32`, count `u64`, then each
//! basis as a binary matrix in id order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::subspace::{SubspaceCollection, SubspaceModel};

pub const MATRIX_MAGIC: &[u8; 4] = b"L1NS";
pub const MATRIX_VERSION: u32 = 1;
pub const COLLECTION_MAGIC: &[u8; 7] = b"L1NSCOL";
pub const COLLECTION_VERSION: u32 = 1;

pub fn write_matrix_binary<W: Write>(w: &mut W, m: &DenseMatrix) -> io::Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for x in m.entries() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix_binary<R: Read>(r: &mut R) -> Result<DenseMatrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::format("binary matrix", "bad magic bytes"));
    }
    let version = read_u32(r)?;
    if version != MATRIX_VERSION {
        return Err(Error::format(
            "binary matrix",
            format!("unsupported version {version}"),
        ));
    }
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format("binary matrix", "shape overflows"))?;
    let mut entries = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        entries.push(read_f64(r)?);
    }
    DenseMatrix::from_row_major(rows, cols, entries)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_collection<W: Write>(w: &mut W, c: &SubspaceCollection) -> io::Result<()> {
    w.write_all(COLLECTION_MAGIC)?;
    w.write_all(&COLLECTION_VERSION.to_le_bytes())?;
    w.write_all(&(c.len() as u64).to_le_bytes())?;
    for m in c.models() {
        write_matrix_binary(w, m.basis())?;
    }
    Ok(())
}

pub fn read_collection<R: Read>(r: &mut R) -> Result<SubspaceCollection> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != COLLECTION_MAGIC {
        return Err(Error::format("subspace collection", "bad magic bytes"));
    }
    let version = read_u32(r)?;
    if version != COLLECTION_VERSION {
        return Err(Error::format(
            "subspace collection",
            format!("unsupported version {version}"),
        ));
    }
    let n = read_u64(r)? as usize;
    let models = (0..n)
        .map(|i| SubspaceModel::new(i, read_matrix_binary(r)?))
        .collect::<Result<Vec<_>>>()?;
    SubspaceCollection::new(models)
}

/// Formats a matrix as CSV. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses CSV text. Blank lines are ignored; an empty input is a `0 × 0`
/// matrix.
pub fn matrix_from_csv(text: &str) -> Result<DenseMatrix> {
    let mut cols = None;
    let mut entries = Vec::new();
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format("csv matrix", format!("line {}: bad number {field:?}", lineno + 1))
            })?;
            entries.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(Error::format(
                    "csv matrix",
                    format!("line {} has {count} fields, expected {c}", lineno + 1),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    DenseMatrix::from_row_major(rows, cols.unwrap_or(0), entries)
}

/// Loads a matrix file, choosing the binary reader when the file starts with
/// the binary magic and CSV otherwise.
pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    if bytes.starts_with(MATRIX_MAGIC) {
        read_matrix_binary(&mut bytes.as_slice())
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::format("csv matrix", format!("{} is not UTF-8", path.display())))?;
        matrix_from_csv(&text)
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}
